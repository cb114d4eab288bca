#include "hslf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "hslf/error.hpp"

namespace hslf::sim {

double Illuminant::at(double nm) const {
    if (!(nm >= lo_nm && nm <= hi_nm) || power.empty())
        return 0.0;
    if (power.size() == 1)
        return intensity * power.front();
    const double f = (nm - lo_nm) / (hi_nm - lo_nm) * static_cast<double>(power.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(f), power.size() - 2);
    const double t = f - static_cast<double>(i);
    return intensity * (power[i] + t * (power[i + 1] - power[i]));
}

Illuminant Illuminant::surgical_light() {
    Illuminant l;
    l.lo_nm = 450.0;
    l.hi_nm = 700.0;
    for (int k = 0; k <= 250; ++k)
        l.power.push_back(0.7 + 0.3 * std::sin(std::numbers::pi * k / 250.0));
    return l;
}

Illuminant Illuminant::flat(double lo_nm, double hi_nm) {
    Illuminant l;
    l.lo_nm = lo_nm;
    l.hi_nm = hi_nm;
    l.power = {1.0, 1.0};
    return l;
}

double Material::reflectance(double nm) const {
    if (kind == Kind::flat)
        return base;
    const double z = (nm - center_nm) / sigma_nm;
    return base + peak * std::exp(-0.5 * z * z);
}

// ---------------------------------------------------------------------------

SceneRadiance::SceneRadiance(const PhantomFrame& frame, const ScenePhantom& phantom, const oxy::ReferenceLibrary& lib,
                             const Illuminant& illum)
    : ids_(frame.so2.width, frame.so2.height, 0), grid_(lib.wavelengths_nm), illum_(illum) {
    if (grid_.size() < 2)
        throw data_error("radiance: library grid too small");
    step_ = (grid_.back() - grid_.front()) / static_cast<double>(grid_.size() - 1);
    uniform_grid_ = true;
    for (std::size_t i = 0; i < grid_.size(); ++i)
        if (std::abs(grid_[i] - (grid_.front() + step_ * static_cast<double>(i))) > 1e-9)
            uniform_grid_ = false;

    std::map<double, std::uint16_t> tissue_ids;
    std::map<std::int16_t, std::uint16_t> material_ids;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const std::int16_t m = frame.material.data[i];
        std::uint16_t id;
        if (m < 0) {
            const double s = frame.so2.data[i];
            auto it = tissue_ids.find(s);
            if (it == tissue_ids.end()) {
                id = static_cast<std::uint16_t>(tables_.size());
                tables_.push_back(oxy::spectrum_at(lib, s));
                tissue_ids.emplace(s, id);
            } else {
                id = it->second;
            }
        } else {
            auto it = material_ids.find(m);
            if (it == material_ids.end()) {
                id = static_cast<std::uint16_t>(tables_.size());
                const Material& mat = phantom.materials.at(frame.material_names[static_cast<std::size_t>(m)]);
                std::vector<double> t;
                t.reserve(grid_.size());
                for (double nm : grid_)
                    t.push_back(mat.reflectance(nm));
                tables_.push_back(std::move(t));
                material_ids.emplace(m, id);
            } else {
                id = it->second;
            }
        }
        ids_.data[i] = id;
    }
}

double SceneRadiance::table_at(int id, double nm) const {
    const auto& t = tables_[static_cast<std::size_t>(id)];
    const std::size_t n = grid_.size();
    if (nm <= grid_.front())
        return t.front();
    if (nm >= grid_.back())
        return t.back();
    std::size_t i;
    if (uniform_grid_) {
        i = std::min(static_cast<std::size_t>((nm - grid_.front()) / step_), n - 2);
        if (grid_[i] > nm)
            --i;
        else if (grid_[i + 1] <= nm && i + 2 < n)
            ++i;
    } else {
        i = static_cast<std::size_t>(std::upper_bound(grid_.begin(), grid_.end(), nm) - grid_.begin()) - 1;
    }
    if (grid_[i] == nm)
        return t[i];
    const double f = (nm - grid_[i]) / (grid_[i + 1] - grid_[i]);
    return t[i] + f * (t[i + 1] - t[i]);
}

double SceneRadiance::reflectance(int x, int y, double nm) const { return table_at(ids_.at(x, y), nm); }

SceneRadiance render_scene_radiance(const ScenePhantom& phantom, const oxy::ReferenceLibrary& lib,
                                    const Illuminant& illum, int width, int height, std::uint64_t frame_index) {
    return SceneRadiance(evaluate_phantom(phantom, width, height, frame_index), phantom, lib, illum);
}

Exposure default_exposure(const calib::CameraProfile& profile) {
    Exposure e;
    e.integration_time_ms = profile.name == "x20" ? 2.0 : 5.0;
    e.gain_dn_per_ms = 900.0 / e.integration_time_ms;
    return e;
}

namespace {

constexpr double kSnap = 1e-9;

double snap(double c) {
    const double r = std::nearbyint(c);
    return std::abs(c - r) < kSnap ? r : c;
}

/// Bilinear blend of scene radiance at (qx, qy), coordinates clamped to the scene.
double sample_scene(const SceneRadiance& s, double qx, double qy, double nm) {
    qx = std::clamp(snap(qx), 0.0, static_cast<double>(s.width() - 1));
    qy = std::clamp(snap(qy), 0.0, static_cast<double>(s.height() - 1));
    const int x0 = static_cast<int>(std::floor(qx));
    const int y0 = static_cast<int>(std::floor(qy));
    const double fx = qx - x0;
    const double fy = qy - y0;
    double top = s.radiance(x0, y0, nm);
    if (fx > 0)
        top = (1 - fx) * top + fx * s.radiance(x0 + 1, y0, nm);
    if (!(fy > 0))
        return top;
    double bottom = s.radiance(x0, y0 + 1, nm);
    if (fx > 0)
        bottom = (1 - fx) * bottom + fx * s.radiance(x0 + 1, y0 + 1, nm);
    return (1 - fy) * top + fy * bottom;
}

} // namespace

cube::RawSensorFrame project_to_sensor(const SceneRadiance& radiance, const calib::ResolvedCalibration& resolved,
                                       const Exposure& exposure, const NoiseModel& noise, std::uint64_t frame_id) {
    const auto& profile = resolved.profile;
    cube::RawSensorFrame frame(profile.sensor_width, profile.sensor_height, profile.bit_depth);
    frame.frame_id = frame_id;
    frame.integration_time_ms = static_cast<float>(exposure.integration_time_ms);
    const double scale = exposure.gain_dn_per_ms * exposure.integration_time_ms;
    const double sat = frame.saturation_dn();

    std::mt19937_64 rng(noise.seed ^ (0x9E3779B97F4A7C15ull * (frame_id + 1)));
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (std::size_t i = 0; i < resolved.layout.lenses.size(); ++i) {
        const Rect& r = resolved.layout.lenses[i];
        const auto& disp = resolved.dispersion[i];
        if (!disp.assigned)
            continue;
        const auto& H = resolved.homographies[i];
        const calib::Homography inv = H.inverse();
        const bool translation = H.is_translation();
        for (int v = 0; v < r.height; ++v) {
            std::uint16_t* out = frame.pixels.data() + static_cast<std::size_t>(r.y + v) * frame.width + r.x;
            for (int u = 0; u < r.width; ++u) {
                const double nm = disp.at(u, v);
                double qx, qy;
                if (translation) {
                    qx = u - H.m[2];
                    qy = v - H.m[5];
                } else {
                    const auto q = inv.apply(u, v);
                    qx = q[0];
                    qy = q[1];
                }
                double signal = sample_scene(radiance, qx, qy, nm) * scale;
                if (noise.shot_scale > 0.0)
                    signal += std::sqrt(noise.shot_scale * std::max(signal, 0.0)) * gauss(rng);
                if (noise.read_sigma_dn > 0.0)
                    signal += noise.read_sigma_dn * gauss(rng);
                out[u] = static_cast<std::uint16_t>(std::clamp(std::floor(signal + 0.5), 0.0, sat));
            }
        }
    }
    return frame;
}

// ---------------------------------------------------------------------------

SimOptions default_sim_options(const calib::CameraProfile& profile) {
    SimOptions o;
    o.exposure = default_exposure(profile);
    o.fps = profile.max_fps;
    return o;
}

Simulator::Simulator(calib::CalibrationSet calibration, ScenePhantom phantom, oxy::ReferenceLibrary library,
                     SimOptions options, Illuminant illuminant)
    : calibration_(std::move(calibration)),
      resolved_(calib::calibration_at_distance(calibration_, options.working_distance_cm)),
      phantom_(std::move(phantom)), library_(std::move(library)), options_(options),
      illuminant_(std::move(illuminant)) {
    validate(phantom_);
    oxy::validate(library_);
    if (!(options_.illuminant_scale > 0.0))
        throw usage_error("simulator: illuminant scale must be positive");
    if (!(options_.fps > 0.0))
        throw usage_error("simulator: fps must be positive");
    illuminant_.intensity *= options_.illuminant_scale;
}

PhantomFrame Simulator::truth(std::uint64_t index) const {
    return evaluate_phantom(phantom_, scene_width(), scene_height(), index);
}

cube::RawSensorFrame Simulator::frame(std::uint64_t index) const {
    const SceneRadiance radiance(truth(index), phantom_, library_, illuminant_);
    cube::RawSensorFrame f = project_to_sensor(radiance, resolved_, options_.exposure, options_.noise, index);
    f.timestamp_ms = static_cast<double>(index) * 1000.0 / options_.fps;
    return f;
}

std::optional<Rect> Simulator::white_roi() const { return gauze_roi(phantom_, scene_width(), scene_height()); }

} // namespace hslf::sim
