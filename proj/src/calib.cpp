#include "hslf/calib.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "hslf/error.hpp"

namespace hslf::calib {

using nlohmann::json;

// ---------------------------------------------------------------------------
// BandGrid

BandGrid::BandGrid(std::vector<double> wavelengths_nm) : wavelengths_(std::move(wavelengths_nm)) {
    if (wavelengths_.size() < 2)
        throw data_error("band_grid: at least 2 bands required, got " + std::to_string(wavelengths_.size()));
    for (std::size_t i = 0; i < wavelengths_.size(); ++i) {
        if (!std::isfinite(wavelengths_[i]))
            throw data_error("band_grid[" + std::to_string(i) + "]: not finite");
        if (i > 0 && !(wavelengths_[i] > wavelengths_[i - 1]))
            throw data_error("band_grid[" + std::to_string(i) + "]: wavelengths must be strictly increasing");
    }
}

BandGrid BandGrid::linspace(double first_nm, double last_nm, int count) {
    if (count < 2)
        throw data_error("band_grid: at least 2 bands required");
    std::vector<double> w(static_cast<std::size_t>(count));
    const double step = (last_nm - first_nm) / (count - 1);
    for (int i = 0; i < count; ++i)
        w[static_cast<std::size_t>(i)] = first_nm + step * i;
    w.back() = last_nm;
    return BandGrid(std::move(w));
}

double BandGrid::mean_spacing() const {
    return (max_nm() - min_nm()) / (count() - 1);
}

double BandGrid::local_spacing(int band) const {
    const int n = count();
    if (band <= 0)
        return wavelengths_[1] - wavelengths_[0];
    if (band >= n - 1)
        return wavelengths_[n - 1] - wavelengths_[n - 2];
    return 0.5 * (wavelengths_[band + 1] - wavelengths_[band - 1]);
}

int BandGrid::nearest_band(double nm) const {
    auto it = std::lower_bound(wavelengths_.begin(), wavelengths_.end(), nm);
    if (it == wavelengths_.begin())
        return 0;
    if (it == wavelengths_.end())
        return count() - 1;
    const int hi = static_cast<int>(it - wavelengths_.begin());
    const int lo = hi - 1;
    return (nm - wavelengths_[lo] <= wavelengths_[hi] - nm) ? lo : hi;
}

// ---------------------------------------------------------------------------
// Profiles

void validate(const CameraProfile& p) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw data_error("profile." + field + ": " + why);
    };
    if (p.name.empty())
        fail("name", "must not be empty");
    if (p.lens_count < 1)
        fail("lens_count", "must be >= 1");
    if (p.subimage_width < 1 || p.subimage_height < 1)
        fail("subimage_width", "sub-image dimensions must be positive");
    if (p.sensor_width < 1 || p.sensor_height < 1)
        fail("sensor_width", "sensor dimensions must be positive");
    if (p.bit_depth < 1 || p.bit_depth > 16)
        fail("bit_depth", "must be in [1, 16]");
    if (!(p.max_fps > 0))
        fail("max_fps", "must be positive");
    if (!(p.reference_distance_cm > 0))
        fail("reference_distance_cm", "must be positive");
    if (p.band_grid.count() < 2)
        fail("band_grid", "at least 2 bands required");
    const long long lens_area = static_cast<long long>(p.lens_count) * p.subimage_width * p.subimage_height;
    const long long sensor_area = static_cast<long long>(p.sensor_width) * p.sensor_height;
    if (lens_area > sensor_area)
        fail("lens_count", "lens_count x sub-image area exceeds the sensor area");
    if (p.dense_window_nm && !(p.dense_window_nm->first < p.dense_window_nm->second))
        fail("dense_window_nm", "window must be increasing");
}

CameraProfile s5_profile() {
    CameraProfile p;
    p.name = "s5";
    p.lens_count = 42;
    p.subimage_width = 290;
    p.subimage_height = 275;
    p.sensor_width = 2448;   // 5.0 MP
    p.sensor_height = 2048;
    p.bit_depth = 12;
    p.max_fps = 15;
    p.band_grid = BandGrid::linspace(450, 850, 51);
    p.fov_deg = 30;
    return p;
}

CameraProfile x20_profile() {
    CameraProfile p;
    p.name = "x20";
    p.lens_count = 66;
    p.subimage_width = 410;
    p.subimage_height = 410;
    p.sensor_width = 5120;   // 19.7 MP
    p.sensor_height = 3840;
    p.bit_depth = 12;
    p.max_fps = 8;
    p.band_grid = BandGrid::linspace(350, 1002, 164);
    p.fov_deg = 35;
    p.dense_window_nm = std::pair{450.0, 700.0};
    return p;
}

CameraProfile profile_by_name(std::string_view name) {
    if (name == "s5")
        return s5_profile();
    if (name == "x20")
        return x20_profile();
    throw usage_error("unknown profile '" + std::string(name) + "' (expected s5 or x20)");
}

// ---------------------------------------------------------------------------
// Homography

double Homography::determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::normalized() const {
    if (m[8] == 0.0 || !std::isfinite(m[8]))
        throw data_error("homography bottom-right entry is zero");
    if (m[8] == 1.0)
        return *this;
    Homography h;
    for (int i = 0; i < 9; ++i)
        h.m[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] / m[8];
    h.m[8] = 1.0;
    return h;
}

Homography Homography::inverse() const {
    const double det = determinant();
    if (std::abs(det) <= 1e-12)
        throw data_error("homography is singular");
    if (is_translation())
        return translation(-m[2], -m[5]);
    Homography r;
    r.m = {(m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det, (m[1] * m[5] - m[2] * m[4]) / det,
           (m[5] * m[6] - m[3] * m[8]) / det, (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
           (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det, (m[0] * m[4] - m[1] * m[3]) / det};
    return r.normalized();
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::string format_distance(double d) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), d);
    return std::string(buf, res.ptr);
}

std::string dist_path(const char* group, double d) {
    return std::string(group) + "[\"" + format_distance(d) + "\"]";
}

} // namespace

void validate(const CalibrationSet& c) {
    validate(c.profile);
    const auto& p = c.profile;
    const std::size_t n = static_cast<std::size_t>(p.lens_count);

    if (c.layout.lenses.size() != n)
        throw data_error("layout: expected " + std::to_string(n) + " lens regions, got " + std::to_string(c.layout.lenses.size()));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = c.layout.lenses[i];
        const std::string path = "layout.lenses[" + std::to_string(i) + "]";
        if (r.width != p.subimage_width || r.height != p.subimage_height)
            throw data_error(path + ": region " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                             " differs from sub-image size " + std::to_string(p.subimage_width) + "x" + std::to_string(p.subimage_height));
        if (!r.inside(p.sensor_width, p.sensor_height))
            throw data_error(path + ": region lies outside the sensor");
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (c.layout.lenses[i].intersects(c.layout.lenses[j]))
                throw data_error("layout.lenses[" + std::to_string(i) + "] overlaps layout.lenses[" + std::to_string(j) + "]");

    const auto& d = c.homographies.distances_cm;
    if (d.empty())
        throw data_error("distances_cm: at least one calibrated distance required");
    for (std::size_t k = 0; k < d.size(); ++k) {
        if (!(d[k] > 0) || !std::isfinite(d[k]))
            throw data_error("distances_cm[" + std::to_string(k) + "]: must be positive");
        if (k > 0 && !(d[k] > d[k - 1]))
            throw data_error("distances_cm[" + std::to_string(k) + "]: distances must be strictly ascending");
    }
    if (c.homographies.matrices.size() != d.size())
        throw data_error("homographies: expected one matrix set per calibrated distance");
    for (std::size_t k = 0; k < d.size(); ++k) {
        const auto& set = c.homographies.matrices[k];
        const std::string base = dist_path("homographies", d[k]);
        if (set.size() != n)
            throw data_error(base + ": expected " + std::to_string(n) + " matrices, got " + std::to_string(set.size()));
        for (std::size_t i = 0; i < n; ++i) {
            const std::string path = base + "[" + std::to_string(i) + "]";
            for (double v : set[i].m)
                if (!std::isfinite(v))
                    throw data_error(path + ": non-finite entry");
            if (set[i].m[8] == 0.0)
                throw data_error(path + ": bottom-right entry is zero");
            if (std::abs(set[i].normalized().determinant()) <= 1e-9)
                throw data_error(path + ": matrix is not invertible");
        }
    }

    if (c.dispersion.size() != d.size())
        throw data_error("dispersion: expected one map per calibrated distance");
    const double lo = p.band_grid.min_nm() - 50.0;
    const double hi = p.band_grid.max_nm() + 50.0;
    for (std::size_t k = 0; k < d.size(); ++k) {
        const auto& map = c.dispersion[k];
        const std::string base = dist_path("dispersion", d[k]);
        if (map.distance_cm != d[k])
            throw data_error(base + ": distance does not match distances_cm[" + std::to_string(k) + "]");
        if (map.lenses.size() != n)
            throw data_error(base + ": expected " + std::to_string(n) + " entries, got " + std::to_string(map.lenses.size()));
        for (std::size_t i = 0; i < n; ++i) {
            const auto& ld = map.lenses[i];
            if (!ld.assigned)
                continue;
            const std::string path = base + "[" + std::to_string(i) + "]";
            const double u1 = p.subimage_width - 1;
            const double v1 = p.subimage_height - 1;
            for (double w : {ld.at(0, 0), ld.at(u1, 0), ld.at(0, v1), ld.at(u1, v1)})
                if (!(w >= lo && w <= hi))
                    throw data_error(path + ": wavelength " + format_distance(w) + " nm outside [" + format_distance(lo) +
                                     ", " + format_distance(hi) + "]");
        }
    }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key))
        throw data_error(path + "." + key + ": missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw data_error(path + "." + key + ": wrong type");
    }
}

json profile_to_json(const CameraProfile& p) {
    json j;
    j["name"] = p.name;
    j["lens_count"] = p.lens_count;
    j["subimage_width"] = p.subimage_width;
    j["subimage_height"] = p.subimage_height;
    j["sensor_width"] = p.sensor_width;
    j["sensor_height"] = p.sensor_height;
    j["bit_depth"] = p.bit_depth;
    j["max_fps"] = p.max_fps;
    j["fov_deg"] = p.fov_deg;
    j["reference_distance_cm"] = p.reference_distance_cm;
    j["band_grid_nm"] = p.band_grid.wavelengths();
    if (p.dense_window_nm)
        j["dense_window_nm"] = {p.dense_window_nm->first, p.dense_window_nm->second};
    return j;
}

CameraProfile profile_from_json(const json& j) {
    const std::string path = "profile";
    CameraProfile p;
    p.name = field<std::string>(j, "name", path);
    p.lens_count = field<int>(j, "lens_count", path);
    p.subimage_width = field<int>(j, "subimage_width", path);
    p.subimage_height = field<int>(j, "subimage_height", path);
    p.sensor_width = field<int>(j, "sensor_width", path);
    p.sensor_height = field<int>(j, "sensor_height", path);
    p.bit_depth = field<int>(j, "bit_depth", path);
    p.max_fps = field<double>(j, "max_fps", path);
    p.fov_deg = field<double>(j, "fov_deg", path);
    p.reference_distance_cm = j.contains("reference_distance_cm") ? field<double>(j, "reference_distance_cm", path) : 56.0;
    p.band_grid = BandGrid(field<std::vector<double>>(j, "band_grid_nm", path));
    if (j.contains("dense_window_nm")) {
        auto w = field<std::vector<double>>(j, "dense_window_nm", path);
        if (w.size() != 2)
            throw data_error("profile.dense_window_nm: expected [low, high]");
        p.dense_window_nm = std::pair{w[0], w[1]};
    }
    return p;
}

const json& keyed(const json& group, double d, const char* name) {
    const std::string key = format_distance(d);
    if (group.contains(key))
        return group.at(key);
    // Accept keys written with a different but equivalent decimal spelling.
    for (auto it = group.begin(); it != group.end(); ++it) {
        double v = 0;
        const auto& k = it.key();
        auto res = std::from_chars(k.data(), k.data() + k.size(), v);
        if (res.ec == std::errc() && v == d)
            return it.value();
    }
    throw data_error(std::string(name) + ": no entry for distance " + key);
}

} // namespace

CalibrationSet parse_calibration(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw data_error(std::string("calibration: malformed JSON: ") + e.what());
    }
    if (!j.is_object())
        throw data_error("calibration: top level must be an object");
    if (j.contains("format_version") && j.at("format_version") != 1)
        throw data_error("calibration.format_version: unsupported version " + j.at("format_version").dump());

    CalibrationSet c;
    if (!j.contains("profile"))
        throw data_error("profile: missing");
    c.profile = profile_from_json(j.at("profile"));

    if (!j.contains("layout") || !j.at("layout").is_array())
        throw data_error("layout: missing or not an array");
    const auto& lay = j.at("layout");
    for (std::size_t i = 0; i < lay.size(); ++i) {
        const std::string path = "layout[" + std::to_string(i) + "]";
        c.layout.lenses.push_back({field<int>(lay[i], "x", path), field<int>(lay[i], "y", path),
                                   field<int>(lay[i], "width", path), field<int>(lay[i], "height", path)});
    }

    c.homographies.distances_cm = field<std::vector<double>>(j, "distances_cm", "calibration");
    if (!j.contains("homographies") || !j.at("homographies").is_object())
        throw data_error("homographies: missing or not an object");
    if (!j.contains("dispersion") || !j.at("dispersion").is_object())
        throw data_error("dispersion: missing or not an object");
    for (double d : c.homographies.distances_cm) {
        const json& hs = keyed(j.at("homographies"), d, "homographies");
        if (!hs.is_array())
            throw data_error(dist_path("homographies", d) + ": not an array");
        std::vector<Homography> set;
        for (std::size_t i = 0; i < hs.size(); ++i) {
            const std::string path = dist_path("homographies", d) + "[" + std::to_string(i) + "]";
            std::vector<double> v;
            try {
                v = hs[i].get<std::vector<double>>();
            } catch (const json::exception&) {
                throw data_error(path + ": expected 9 numbers");
            }
            if (v.size() != 9)
                throw data_error(path + ": expected 9 numbers, got " + std::to_string(v.size()));
            Homography h;
            std::copy(v.begin(), v.end(), h.m.begin());
            if (h.m[8] == 0.0)
                throw data_error(path + ": bottom-right entry is zero");
            set.push_back(h.normalized());
        }
        c.homographies.matrices.push_back(std::move(set));

        const json& ds = keyed(j.at("dispersion"), d, "dispersion");
        if (!ds.is_array())
            throw data_error(dist_path("dispersion", d) + ": not an array");
        DispersionMap map;
        map.distance_cm = d;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const std::string path = dist_path("dispersion", d) + "[" + std::to_string(i) + "]";
            LinearDispersion ld;
            if (ds[i].is_null()) {
                ld.assigned = false;
            } else {
                ld.origin_nm = field<double>(ds[i], "origin_nm", path);
                ld.dnm_dx = field<double>(ds[i], "dnm_dx", path);
                ld.dnm_dy = field<double>(ds[i], "dnm_dy", path);
            }
            map.lenses.push_back(ld);
        }
        c.dispersion.push_back(std::move(map));
    }
    validate(c);
    return c;
}

std::string serialize_calibration(const CalibrationSet& c) {
    json j;
    j["format_version"] = 1;
    j["profile"] = profile_to_json(c.profile);
    json lay = json::array();
    for (const auto& r : c.layout.lenses)
        lay.push_back({{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}});
    j["layout"] = std::move(lay);
    j["distances_cm"] = c.homographies.distances_cm;
    json hs = json::object();
    json ds = json::object();
    for (std::size_t k = 0; k < c.homographies.distances_cm.size(); ++k) {
        const std::string key = format_distance(c.homographies.distances_cm[k]);
        json set = json::array();
        for (const auto& h : c.homographies.matrices[k])
            set.push_back(h.m);
        hs[key] = std::move(set);
        json map = json::array();
        for (const auto& ld : c.dispersion[k].lenses) {
            if (!ld.assigned)
                map.push_back(nullptr);
            else
                map.push_back({{"origin_nm", ld.origin_nm}, {"dnm_dx", ld.dnm_dx}, {"dnm_dy", ld.dnm_dy}});
        }
        ds[key] = std::move(map);
    }
    j["homographies"] = std::move(hs);
    j["dispersion"] = std::move(ds);
    return j.dump(1);
}

CalibrationSet load_calibration(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("calibration file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_calibration(ss.str());
}

void save_calibration(const CalibrationSet& c, const std::filesystem::path& path) {
    validate(c);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("cannot write calibration file: " + path.string());
    out << serialize_calibration(c) << '\n';
    if (!out)
        throw data_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Distance resolution

namespace {

double blend(double a, double b, double w) {
    const double v = a + w * (b - a);
    return std::clamp(v, std::min(a, b), std::max(a, b));
}

} // namespace

ResolvedCalibration calibration_at_distance(const CalibrationSet& c, double wd) {
    if (!(wd > 0) || !std::isfinite(wd))
        throw usage_error("working distance must be positive, got " + format_distance(wd));
    const auto& d = c.homographies.distances_cm;
    ResolvedCalibration r;
    r.profile = c.profile;
    r.layout = c.layout;
    r.working_distance_cm = wd;

    auto take = [&](std::size_t k) {
        r.homographies = c.homographies.matrices[k];
        r.dispersion = c.dispersion[k].lenses;
    };

    if (wd <= d.front()) {
        take(0);
        r.extrapolated = wd < d.front();
        return r;
    }
    if (wd >= d.back()) {
        take(d.size() - 1);
        r.extrapolated = wd > d.back();
        return r;
    }
    auto it = std::lower_bound(d.begin(), d.end(), wd);
    const std::size_t hi = static_cast<std::size_t>(it - d.begin());
    if (*it == wd) {
        take(hi);
        return r;
    }
    const std::size_t lo = hi - 1;
    const double w = (wd - d[lo]) / (d[hi] - d[lo]);
    const std::size_t n = c.layout.lenses.size();
    r.homographies.resize(n);
    r.dispersion.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = c.homographies.matrices[lo][i];
        const auto& b = c.homographies.matrices[hi][i];
        for (std::size_t e = 0; e < 9; ++e)
            r.homographies[i].m[e] = blend(a.m[e], b.m[e], w);
        const auto& da = c.dispersion[lo].lenses[i];
        const auto& db = c.dispersion[hi].lenses[i];
        auto& out = r.dispersion[i];
        out.assigned = da.assigned && db.assigned;
        out.origin_nm = blend(da.origin_nm, db.origin_nm, w);
        out.dnm_dx = blend(da.dnm_dx, db.dnm_dx, w);
        out.dnm_dy = blend(da.dnm_dy, db.dnm_dy, w);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic calibration

std::pair<int, int> lens_grid_shape(const CameraProfile& p) {
    const int n = p.lens_count;
    auto fits = [&](int cols, int rows) {
        return static_cast<long long>(cols) * p.subimage_width <= p.sensor_width &&
               static_cast<long long>(rows) * p.subimage_height <= p.sensor_height;
    };
    // Squarest factorisation first, wider-than-tall preferred.
    std::vector<std::pair<int, int>> candidates;
    for (int rows = 1; rows <= n; ++rows)
        if (n % rows == 0)
            candidates.emplace_back(n / rows, rows);
    std::stable_sort(candidates.begin(), candidates.end(), [](auto a, auto b) {
        const int da = std::abs(a.first - a.second), db = std::abs(b.first - b.second);
        if (da != db)
            return da < db;
        return a.first > b.first;
    });
    for (auto [cols, rows] : candidates)
        if (fits(cols, rows))
            return {cols, rows};
    throw data_error("lens grid does not fit the sensor: " + std::to_string(n) + " lenses of " +
                     std::to_string(p.subimage_width) + "x" + std::to_string(p.subimage_height) + " on a " +
                     std::to_string(p.sensor_width) + "x" + std::to_string(p.sensor_height) + " sensor");
}

namespace {

constexpr double kParallaxPx = 0.6;        // lens offset at 2x the reference distance, array corner
constexpr double kDispersionShiftNm = 0.5; // origin drift per reference-distance of defocus

struct LensBand {
    double origin_nm;
    double sweep_nm;   // wavelength span across the sub-image width
};

std::vector<LensBand> plan_lens_wavelengths(const CameraProfile& p) {
    const int n = p.lens_count;
    const double a = p.band_grid.min_nm();
    const double b = p.band_grid.max_nm();
    const double spacing = p.band_grid.mean_spacing();
    std::vector<LensBand> plan;

    if (n < 3) {
        // One sweep across the whole grid per lens.
        plan.assign(static_cast<std::size_t>(n), {a, b - a});
        return plan;
    }

    const double step = (b - a) / (n - 2);
    auto uniform = [&] {
        plan.clear();
        if (step > 50.0) {
            const double s = (b - a) / n;
            for (int i = 0; i < n; ++i)
                plan.push_back({a + i * s, s});
        } else {
            for (int i = 0; i < n; ++i)
                plan.push_back({a - step + i * step, step});
        }
        return plan;
    };

    if (step <= 2.0 * spacing * (1 - 1e-9) || !p.dense_window_nm)
        return uniform();

    const double wl = std::max(a, p.dense_window_nm->first);
    const double wh = std::min(b, p.dense_window_nm->second);
    const double dense = 1.875 * spacing;
    const int n_dense = static_cast<int>(std::ceil((wh - wl) / dense - 1e-9)) + 2;
    const int n_rest = n - n_dense;
    if (wh <= wl || n_rest < 0)
        return uniform();

    const double first = wl - dense;
    const double last = first + (n_dense - 1) * dense;
    const double lo_len = std::max(0.0, first - a);
    const double hi_len = std::max(0.0, b - (last + dense));
    int n_lo = 0;
    if (n_rest > 0 && lo_len + hi_len > 0) {
        n_lo = static_cast<int>(std::lround(n_rest * lo_len / (lo_len + hi_len)));
        if (lo_len > 0)
            n_lo = std::max(n_lo, 1);
        if (hi_len > 0)
            n_lo = std::min(n_lo, n_rest - 1);
        n_lo = std::clamp(n_lo, 0, n_rest);
    }
    const int n_hi = n_rest - n_lo;

    if (n_lo > 0) {
        const double s = (first - a) / n_lo;
        for (int i = 0; i < n_lo; ++i)
            plan.push_back({a + i * s, s});
    }
    for (int i = 0; i < n_dense; ++i)
        plan.push_back({first + i * dense, dense});
    if (n_hi > 0) {
        const double start = last + dense;
        const double s = hi_len > 0 ? (b - start) / n_hi : dense;
        for (int i = 0; i < n_hi; ++i)
            plan.push_back({start + i * s, s});
    }
    return plan;
}

} // namespace

std::vector<double> default_calibration_distances() { return {30.0, 40.0, 50.0, 60.0, 80.0, 100.0}; }

CalibrationSet synthesize_default_calibration(const CameraProfile& profile, const std::vector<double>& distances_cm) {
    validate(profile);
    if (distances_cm.empty())
        throw usage_error("at least one calibration distance required");
    std::vector<double> dist = distances_cm;
    std::sort(dist.begin(), dist.end());
    dist.erase(std::unique(dist.begin(), dist.end()), dist.end());

    CalibrationSet c;
    c.profile = profile;
    const auto [cols, rows] = lens_grid_shape(profile);
    const int w = profile.subimage_width;
    const int h = profile.subimage_height;
    const int gap_x = (profile.sensor_width - cols * w) / (cols + 1);
    const int gap_y = (profile.sensor_height - rows * h) / (rows + 1);
    for (int r = 0; r < rows; ++r)
        for (int col = 0; col < cols; ++col)
            c.layout.lenses.push_back({gap_x + col * (w + gap_x), gap_y + r * (h + gap_y), w, h});

    const auto plan = plan_lens_wavelengths(profile);
    const double half_cols = std::max(1.0, (cols - 1) / 2.0);
    const double half_rows = std::max(1.0, (rows - 1) / 2.0);
    const double dref = profile.reference_distance_cm;

    c.homographies.distances_cm = dist;
    for (double d : dist) {
        const double defocus = (d - dref) / dref;
        std::vector<Homography> set;
        DispersionMap map;
        map.distance_cm = d;
        for (int i = 0; i < profile.lens_count; ++i) {
            const int col = i % cols;
            const int row = i / cols;
            const double ou = cols > 1 ? (col - (cols - 1) / 2.0) / half_cols : 0.0;
            const double ov = rows > 1 ? (row - (rows - 1) / 2.0) / half_rows : 0.0;
            set.push_back(Homography::translation(kParallaxPx * ou * defocus, kParallaxPx * ov * defocus));

            const auto& lb = plan[static_cast<std::size_t>(i)];
            LinearDispersion ld;
            ld.origin_nm = lb.origin_nm + kDispersionShiftNm * defocus;
            ld.dnm_dx = profile.lens_count < 3 ? lb.sweep_nm / std::max(1, w - 1) : lb.sweep_nm / w;
            ld.dnm_dy = 0.0;
            map.lenses.push_back(ld);
        }
        c.homographies.matrices.push_back(std::move(set));
        c.dispersion.push_back(std::move(map));
    }
    validate(c);
    return c;
}

} // namespace hslf::calib
