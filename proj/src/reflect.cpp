#include "hslf/reflect.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hslf/error.hpp"

namespace hslf::reflect {

void validate(const RegionOfInterest& roi, int width, int height) {
    const Rect& r = roi.rect;
    if (r.width <= 0 || r.height <= 0)
        throw usage_error("roi must have positive width and height");
    if (!r.inside(width, height))
        throw usage_error("roi (" + std::to_string(r.x) + "," + std::to_string(r.y) + " " + std::to_string(r.width) +
                          "x" + std::to_string(r.height) + ") outside scene " + std::to_string(width) + "x" +
                          std::to_string(height));
    if (r.area() < kMinRoiArea)
        throw usage_error("roi area " + std::to_string(r.area()) + " below minimum " + std::to_string(kMinRoiArea));
}

int WhiteReference::valid_bands() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

namespace {

void check_options(const WhiteOptions& o) {
    if (!(o.gauze_reflectance_factor > 0.0 && o.gauze_reflectance_factor <= 1.0))
        throw usage_error("gauze reflectance factor must lie in (0, 1]");
}

double median(std::vector<float>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (n % 2 == 1)
        return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return (lo + hi) / 2.0;
}

} // namespace

WhiteReference extract_white_reference(const cube::SpectralCube& uniform, const RegionOfInterest& roi,
                                       const WhiteOptions& options) {
    check_options(options);
    validate(roi, uniform.width(), uniform.height());
    if (uniform.stage() != cube::Stage::uniform)
        throw data_error("white reference: expected a uniform-stage cube");

    WhiteReference white;
    white.wavelengths_nm = uniform.wavelengths();
    white.values.assign(static_cast<std::size_t>(uniform.planes()), 0.0f);
    white.valid.assign(static_cast<std::size_t>(uniform.planes()), 0);
    white.gauze_reflectance_factor = options.gauze_reflectance_factor;
    white.roi = roi;
    white.frame_id = roi.frame_id;

    const Rect& r = roi.rect;
    const double needed = options.min_valid_fraction * static_cast<double>(r.area());
    std::vector<float> samples;
    samples.reserve(static_cast<std::size_t>(r.area()));
    for (int b = 0; b < uniform.planes(); ++b) {
        samples.clear();
        const float* v = uniform.plane(b);
        const std::uint8_t* ok = uniform.valid_plane(b);
        for (int y = r.y; y < r.y + r.height; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * uniform.width();
            for (int x = r.x; x < r.x + r.width; ++x)
                if (ok[row + x])
                    samples.push_back(v[row + x]);
        }
        if (samples.empty() || static_cast<double>(samples.size()) < needed)
            continue;
        const double m = median(samples);
        if (!(m > options.epsilon_white))
            continue;
        white.values[static_cast<std::size_t>(b)] = static_cast<float>(m / options.gauze_reflectance_factor);
        white.valid[static_cast<std::size_t>(b)] = 1;
    }
    if (white.valid_bands() == 0)
        throw data_error("white reference: no band has enough valid roi samples above the white floor");
    return white;
}

WhiteReference white_reference_from_flat_field(const cube::SpectralCube& flat_field, const WhiteOptions& options) {
    check_options(options);
    if (flat_field.stage() != cube::Stage::uniform)
        throw data_error("flat field: expected a uniform-stage cube");
    auto spatial = std::make_shared<cube::SpectralCube>(flat_field);
    auto& vals = spatial->values();
    auto& ok = spatial->validity();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (ok[i] && vals[i] > options.epsilon_white)
            vals[i] = static_cast<float>(vals[i] / options.gauze_reflectance_factor);
        else
            ok[i] = 0;
    }

    WhiteReference white;
    white.wavelengths_nm = flat_field.wavelengths();
    white.values.assign(static_cast<std::size_t>(flat_field.planes()), 0.0f);
    white.valid.assign(static_cast<std::size_t>(flat_field.planes()), 0);
    const std::size_t n = spatial->plane_size();
    for (int b = 0; b < flat_field.planes(); ++b) {
        const std::uint8_t* k = spatial->valid_plane(b);
        if (std::any_of(k, k + n, [](std::uint8_t x) { return x != 0; }))
            white.valid[static_cast<std::size_t>(b)] = 1;
    }
    if (white.valid_bands() == 0)
        throw data_error("flat field: every band is below the white floor");
    white.gauze_reflectance_factor = options.gauze_reflectance_factor;
    white.roi.rect = Rect{0, 0, flat_field.width(), flat_field.height()};
    white.spatial = std::move(spatial);
    return white;
}

cube::SpectralCube normalize_reflectance(const cube::SpectralCube& uniform, const WhiteReference& white) {
    cube::SpectralCube out = uniform;
    normalize_reflectance_in_place(out, white);
    return out;
}

void normalize_reflectance_in_place(cube::SpectralCube& cube, const WhiteReference& white) {
    if (cube.stage() != cube::Stage::uniform)
        throw data_error("normalize: expected a uniform-stage cube");
    const auto& wl = cube.wavelengths();
    if (wl.size() != white.wavelengths_nm.size() ||
        std::memcmp(wl.data(), white.wavelengths_nm.data(), wl.size() * sizeof(double)) != 0)
        throw data_error("normalize: band grid of the cube differs from the white reference");
    if (white.spatial && (white.spatial->width() != cube.width() || white.spatial->height() != cube.height()))
        throw data_error("normalize: spatial white reference dimensions differ from the cube");

    const std::size_t n = cube.plane_size();
    for (int b = 0; b < cube.planes(); ++b) {
        float* v = cube.plane(b);
        std::uint8_t* k = cube.valid_plane(b);
        if (!white.valid[static_cast<std::size_t>(b)]) {
            std::fill(v, v + n, 0.0f);
            std::fill(k, k + n, std::uint8_t{0});
            continue;
        }
        if (white.spatial) {
            const float* w = white.spatial->plane(b);
            const std::uint8_t* kw = white.spatial->valid_plane(b);
            for (std::size_t i = 0; i < n; ++i) {
                const bool good = k[i] && kw[i];
                v[i] = good ? v[i] / w[i] : 0.0f;
                k[i] = good ? 1 : 0;
            }
        } else {
            const float w = white.values[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < n; ++i)
                v[i] = k[i] ? v[i] / w : 0.0f;
        }
    }
    cube.set_stage(cube::Stage::reflectance);
}

} // namespace hslf::reflect
