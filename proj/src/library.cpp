#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/oxy.hpp"

namespace hslf::oxy {

using nlohmann::json;

double Gaussian::operator()(double nm) const {
    const double z = (nm - center_nm) / sigma_nm;
    return amplitude * std::exp(-0.5 * z * z);
}

double EndmemberModel::eps_oxy(double nm) const {
    double e = baseline;
    for (const auto& g : oxy)
        e += g(nm);
    return e;
}

double EndmemberModel::eps_deoxy(double nm) const {
    double e = baseline;
    for (const auto& g : deoxy)
        e += g(nm);
    return e;
}

double EndmemberModel::reflectance(double so2, double nm) const {
    return std::exp(-path_length * (so2 * eps_oxy(nm) + (1.0 - so2) * eps_deoxy(nm)));
}

calib::BandGrid library_grid() { return calib::BandGrid::linspace(300.0, 1100.0, 801); }

void validate(const ReferenceLibrary& lib) {
    if (lib.wavelengths_nm.size() < 2)
        throw data_error("library: wavelengths_nm needs at least two entries");
    for (std::size_t i = 1; i < lib.wavelengths_nm.size(); ++i)
        if (!(lib.wavelengths_nm[i] > lib.wavelengths_nm[i - 1]))
            throw data_error("library: wavelengths_nm[" + std::to_string(i) + "] is not strictly increasing");
    if (lib.entries.size() < 2)
        throw data_error("library: needs at least two entries");
    for (std::size_t e = 0; e < lib.entries.size(); ++e) {
        const auto& en = lib.entries[e];
        const std::string path = "library: entries[" + std::to_string(e) + "]";
        if (!std::isfinite(en.so2) || en.so2 < 0.0 || en.so2 > 1.0)
            throw data_error(path + ".so2 outside [0, 1]");
        if (e > 0 && !(en.so2 > lib.entries[e - 1].so2))
            throw data_error(path + ".so2 levels are not strictly increasing");
        if (en.reflectance.size() != lib.wavelengths_nm.size())
            throw data_error(path + ".reflectance has " + std::to_string(en.reflectance.size()) + " values, expected " +
                             std::to_string(lib.wavelengths_nm.size()));
        for (std::size_t b = 0; b < en.reflectance.size(); ++b)
            if (!(en.reflectance[b] > 0.0) || !std::isfinite(en.reflectance[b]))
                throw data_error(path + ".reflectance[" + std::to_string(b) + "] is not strictly positive");
    }
    if (lib.entries.front().so2 != 0.0 || lib.entries.back().so2 != 1.0)
        throw data_error("library: levels must span [0, 1]");
}

ReferenceLibrary build_synthetic_library(int count, const calib::BandGrid& grid, const EndmemberModel& model) {
    if (count < 2)
        throw usage_error("library: count must be at least 2");
    ReferenceLibrary lib;
    lib.wavelengths_nm = grid.wavelengths();
    lib.provenance = "synthetic";
    lib.entries.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        LibraryEntry e;
        e.so2 = static_cast<double>(k) / (count - 1);
        e.reflectance.reserve(lib.wavelengths_nm.size());
        for (double nm : lib.wavelengths_nm)
            e.reflectance.push_back(model.reflectance(e.so2, nm));
        lib.entries.push_back(std::move(e));
    }
    return lib;
}

std::vector<double> spectrum_at(const ReferenceLibrary& lib, double so2) {
    if (lib.entries.empty())
        throw data_error("library: empty");
    if (so2 <= lib.entries.front().so2)
        return lib.entries.front().reflectance;
    if (so2 >= lib.entries.back().so2)
        return lib.entries.back().reflectance;
    auto it = std::upper_bound(lib.entries.begin(), lib.entries.end(), so2,
                               [](double v, const LibraryEntry& e) { return v < e.so2; });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (lo.so2 == so2)
        return lo.reflectance;
    const double t = (so2 - lo.so2) / (hi.so2 - lo.so2);
    std::vector<double> out(lo.reflectance.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = lo.reflectance[i] + t * (hi.reflectance[i] - lo.reflectance[i]);
    return out;
}

int nearest_level(const ReferenceLibrary& lib, double so2) {
    int best = 0;
    double best_d = std::abs(lib.entries.front().so2 - so2);
    for (int i = 1; i < lib.size(); ++i) {
        const double d = std::abs(lib.entries[static_cast<std::size_t>(i)].so2 - so2);
        if (d < best_d) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

ReferenceLibrary parse_library(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw data_error(std::string("library: malformed JSON: ") + e.what());
    }
    ReferenceLibrary lib;
    try {
        lib.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
        for (const auto& e : j.at("entries"))
            lib.entries.push_back({e.at("so2").get<double>(), e.at("reflectance").get<std::vector<double>>()});
    } catch (const json::exception& e) {
        throw data_error(std::string("library: ") + e.what());
    }
    lib.provenance = "file";
    validate(lib);
    return lib;
}

std::string serialize_library(const ReferenceLibrary& lib) {
    json j;
    j["wavelengths_nm"] = lib.wavelengths_nm;
    json entries = json::array();
    for (const auto& e : lib.entries)
        entries.push_back({{"so2", e.so2}, {"reflectance", e.reflectance}});
    j["entries"] = std::move(entries);
    return j.dump() + "\n";
}

ReferenceLibrary load_library(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("library: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_library(ss.str());
}

void save_library(const ReferenceLibrary& lib, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw data_error("library: cannot write " + path.string());
    out << serialize_library(lib);
    if (!out)
        throw data_error("library: write failed for " + path.string());
}

PreparedLibrary::PreparedLibrary(const ReferenceLibrary& lib, const std::vector<double>& bands, int min_valid_bands) {
    if (lib.entries.empty())
        throw data_error("classify: empty library");
    const auto& wl = lib.wavelengths_nm;
    const std::size_t ne = lib.entries.size();
    levels_.reserve(ne);
    for (const auto& e : lib.entries)
        levels_.push_back(e.so2);
    wavelengths_ = bands;
    band_valid_.assign(bands.size(), 0);
    data_.assign(bands.size() * ne, 0.0);
    int overlap = 0;
    for (std::size_t b = 0; b < bands.size(); ++b) {
        const double nm = bands[b];
        if (!(nm >= wl.front() && nm <= wl.back()))
            continue;
        auto it = std::lower_bound(wl.begin(), wl.end(), nm);
        const std::size_t hi = static_cast<std::size_t>(it - wl.begin());
        double* row = data_.data() + b * ne;
        if (wl[hi] == nm) {
            for (std::size_t e = 0; e < ne; ++e)
                row[e] = lib.entries[e].reflectance[hi];
        } else {
            const std::size_t lo = hi - 1;
            const double t = (nm - wl[lo]) / (wl[hi] - wl[lo]);
            for (std::size_t e = 0; e < ne; ++e) {
                const auto& r = lib.entries[e].reflectance;
                row[e] = r[lo] + t * (r[hi] - r[lo]);
            }
        }
        band_valid_[b] = 1;
        ++overlap;
    }
    if (overlap < min_valid_bands)
        throw data_error("classify: library overlaps the band grid on " + std::to_string(overlap) +
                         " bands, need at least " + std::to_string(min_valid_bands));
}

std::vector<double> PreparedLibrary::spectrum(int entry) const {
    std::vector<double> s(wavelengths_.size());
    for (int b = 0; b < bands(); ++b)
        s[static_cast<std::size_t>(b)] = value(entry, b);
    return s;
}

} // namespace hslf::oxy
