#include "hslf/cube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hslf/error.hpp"

namespace hslf::cube {

void validate(const RawSensorFrame& f) {
    if (f.width <= 0 || f.height <= 0)
        throw data_error("raw frame: dimensions must be positive");
    if (f.bit_depth < 1 || f.bit_depth > 16)
        throw data_error("raw frame: bit_depth must be in [1, 16]");
    if (f.pixels.size() != static_cast<std::size_t>(f.width) * static_cast<std::size_t>(f.height))
        throw data_error("raw frame: pixel count does not match dimensions");
    const int limit = 1 << f.bit_depth;
    for (std::size_t i = 0; i < f.pixels.size(); ++i)
        if (f.pixels[i] >= limit)
            throw data_error("raw frame: pixel " + std::to_string(i) + " value " + std::to_string(f.pixels[i]) +
                             " exceeds bit depth " + std::to_string(f.bit_depth));
}

SpectralCube::SpectralCube(int width, int height, int planes, Stage stage)
    : width_(width), height_(height), planes_(planes), stage_(stage),
      wavelengths_(static_cast<std::size_t>(planes), std::numeric_limits<double>::quiet_NaN()),
      values_(static_cast<std::size_t>(width) * height * planes, 0.0f),
      valid_(static_cast<std::size_t>(width) * height * planes, 0) {
    if (width < 0 || height < 0 || planes < 0)
        throw data_error("cube: negative dimensions");
}

void SpectralCube::reset(int width, int height, int planes, Stage stage) {
    if (width < 0 || height < 0 || planes < 0)
        throw data_error("cube: negative dimensions");
    width_ = width;
    height_ = height;
    planes_ = planes;
    stage_ = stage;
    const std::size_t n = static_cast<std::size_t>(width) * height * planes;
    wavelengths_.assign(static_cast<std::size_t>(planes), std::numeric_limits<double>::quiet_NaN());
    values_.resize(n);
    valid_.resize(n);
    std::fill(values_.begin(), values_.end(), 0.0f);
    std::fill(valid_.begin(), valid_.end(), std::uint8_t{0});
}

void SpectralCube::set_wavelengths(std::vector<double> w) {
    if (static_cast<int>(w.size()) != planes_)
        throw data_error("cube: wavelength count does not match plane count");
    wavelengths_ = std::move(w);
}

bool SpectralCube::operator==(const SpectralCube& o) const {
    if (width_ != o.width_ || height_ != o.height_ || planes_ != o.planes_ || stage_ != o.stage_)
        return false;
    if (valid_ != o.valid_)
        return false;
    if (std::memcmp(wavelengths_.data(), o.wavelengths_.data(), wavelengths_.size() * sizeof(double)) != 0)
        return false;
    return std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------

SpectralCube extract_raw_cube(const RawSensorFrame& frame, const calib::MicrolensLayout& layout,
                              const ExtractOptions& options) {
    SpectralCube cube;
    extract_raw_cube(frame, layout, options, cube);
    return cube;
}

void extract_raw_cube(const RawSensorFrame& frame, const calib::MicrolensLayout& layout, const ExtractOptions& options,
                      SpectralCube& cube) {
    if (layout.lenses.empty())
        throw data_error("extract: layout has no lenses");
    if (frame.pixels.size() != static_cast<std::size_t>(frame.width) * static_cast<std::size_t>(frame.height))
        throw data_error("extract: frame pixel buffer does not match its dimensions");
    const int w = layout.lenses.front().width;
    const int h = layout.lenses.front().height;
    for (std::size_t i = 0; i < layout.lenses.size(); ++i) {
        const auto& r = layout.lenses[i];
        if (r.width != w || r.height != h)
            throw data_error("extract: lens regions differ in size");
        if (!r.inside(frame.width, frame.height))
            throw data_error("extract: frame " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                             " does not contain lens region " + std::to_string(i));
    }

    const int planes = static_cast<int>(layout.lenses.size());
    cube.reset(w, h, planes, Stage::raw);
    const int sat = frame.saturation_dn();
    const int floor_dn = options.dark_floor_dn;
    for (int p = 0; p < planes; ++p) {
        const auto& r = layout.lenses[static_cast<std::size_t>(p)];
        float* out = cube.plane(p);
        std::uint8_t* ok = cube.valid_plane(p);
        for (int y = 0; y < h; ++y) {
            const std::uint16_t* src = frame.pixels.data() + static_cast<std::size_t>(r.y + y) * frame.width + r.x;
            float* o = out + static_cast<std::size_t>(y) * w;
            std::uint8_t* v = ok + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                const int dn = src[x];
                o[x] = static_cast<float>(dn);
                v[x] = (dn < sat && dn >= floor_dn) ? 1 : 0;
            }
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kSnap = 1e-9;

inline double snap(double c) {
    const double r = std::nearbyint(c);
    return std::abs(c - r) < kSnap ? r : c;
}

/// Bilinear sample of one plane at (u, v). Neighbours with zero weight are not read.
inline void bilinear(const float* src, const std::uint8_t* ok, int w, int h, double u, double v, float& out,
                     std::uint8_t& valid) {
    u = snap(u);
    v = snap(v);
    const double xf = std::floor(u);
    const double yf = std::floor(v);
    const float fx = static_cast<float>(u - xf);
    const float fy = static_cast<float>(v - yf);
    if (xf < 0 || yf < 0 || xf > w - 1 || yf > h - 1 || (fx > 0 && xf + 1 > w - 1) || (fy > 0 && yf + 1 > h - 1)) {
        out = 0.0f;
        valid = 0;
        return;
    }
    const std::size_t i = static_cast<std::size_t>(yf) * w + static_cast<std::size_t>(xf);
    float a = src[i], b = 0, c = 0, d = 0;
    bool good = ok[i] != 0;
    if (fx > 0) {
        b = src[i + 1];
        good = good && ok[i + 1];
    }
    if (fy > 0) {
        c = src[i + w];
        good = good && ok[i + w];
        if (fx > 0) {
            d = src[i + w + 1];
            good = good && ok[i + w + 1];
        }
    }
    out = (1.0f - fy) * ((1.0f - fx) * a + fx * b) + fy * ((1.0f - fx) * c + fx * d);
    valid = good ? 1 : 0;
}

void warp_translation(const float* src, const std::uint8_t* ok, int w, int h, double tx, double ty, float* out,
                      std::uint8_t* out_ok) {
    tx = snap(tx);
    ty = snap(ty);
    const double ix = std::floor(tx);
    const double iy = std::floor(ty);
    const float fx = static_cast<float>(tx - ix);
    const float fy = static_cast<float>(ty - iy);
    const int ox = static_cast<int>(ix);
    const int oy = static_cast<int>(iy);
    const int nx = fx > 0 ? 2 : 1;
    const int ny = fy > 0 ? 2 : 1;
    // Valid output columns: 0 <= x + ox and x + ox + nx - 1 <= w - 1.
    const int x_lo = std::max(0, -ox);
    const int x_hi = std::min(w - 1, w - nx - ox);   // inclusive
    const float wa = (1.0f - fx), wb = fx;
    for (int y = 0; y < h; ++y) {
        float* o = out + static_cast<std::size_t>(y) * w;
        std::uint8_t* vo = out_ok + static_cast<std::size_t>(y) * w;
        const int sy = y + oy;
        if (sy < 0 || sy + ny - 1 > h - 1 || x_lo > x_hi) {
            std::fill(o, o + w, 0.0f);
            std::fill(vo, vo + w, std::uint8_t{0});
            continue;
        }
        std::fill(o, o + x_lo, 0.0f);
        std::fill(vo, vo + x_lo, std::uint8_t{0});
        std::fill(o + x_hi + 1, o + w, 0.0f);
        std::fill(vo + x_hi + 1, vo + w, std::uint8_t{0});
        const float* r0 = src + static_cast<std::size_t>(sy) * w + ox;
        const std::uint8_t* k0 = ok + static_cast<std::size_t>(sy) * w + ox;
        if (nx == 1 && ny == 1) {
            for (int x = x_lo; x <= x_hi; ++x) {
                o[x] = r0[x];
                vo[x] = k0[x];
            }
        } else if (ny == 1) {
            for (int x = x_lo; x <= x_hi; ++x) {
                o[x] = (1.0f - fy) * (wa * r0[x] + wb * r0[x + 1]) + fy * 0.0f;
                vo[x] = k0[x] & k0[x + 1];
            }
        } else {
            const float* r1 = r0 + w;
            const std::uint8_t* k1 = k0 + w;
            if (nx == 1) {
                for (int x = x_lo; x <= x_hi; ++x) {
                    o[x] = (1.0f - fy) * (wa * r0[x] + wb * 0.0f) + fy * (wa * r1[x] + wb * 0.0f);
                    vo[x] = k0[x] & k1[x];
                }
            } else {
                for (int x = x_lo; x <= x_hi; ++x) {
                    o[x] = (1.0f - fy) * (wa * r0[x] + wb * r0[x + 1]) + fy * (wa * r1[x] + wb * r1[x + 1]);
                    vo[x] = k0[x] & k0[x + 1] & k1[x] & k1[x + 1];
                }
            }
        }
    }
}

} // namespace

SpectralCube warp_cube(const SpectralCube& raw, const calib::ResolvedCalibration& resolved) {
    SpectralCube out;
    warp_cube(raw, resolved, out);
    return out;
}

void warp_cube(const SpectralCube& raw, const calib::ResolvedCalibration& resolved, SpectralCube& out) {
    if (raw.stage() != Stage::raw)
        throw data_error("warp: expected a raw-stage cube");
    if (static_cast<std::size_t>(raw.planes()) != resolved.homographies.size())
        throw data_error("warp: cube has " + std::to_string(raw.planes()) + " planes but calibration has " +
                         std::to_string(resolved.homographies.size()) + " lenses");
    const int w = raw.width();
    const int h = raw.height();
    out.reset(w, h, raw.planes(), Stage::transformed);
    for (int p = 0; p < raw.planes(); ++p) {
        const auto& H = resolved.homographies[static_cast<std::size_t>(p)];
        if (std::abs(H.determinant()) <= 1e-9)
            throw data_error("warp: singular homography for lens " + std::to_string(p));
        if (H.is_translation()) {
            warp_translation(raw.plane(p), raw.valid_plane(p), w, h, H.m[2], H.m[5], out.plane(p), out.valid_plane(p));
            continue;
        }
        const float* src = raw.plane(p);
        const std::uint8_t* ok = raw.valid_plane(p);
        float* o = out.plane(p);
        std::uint8_t* vo = out.valid_plane(p);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto [u, v] = H.apply(x, y);
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (!std::isfinite(u) || !std::isfinite(v)) {
                    o[i] = 0.0f;
                    vo[i] = 0;
                    continue;
                }
                bilinear(src, ok, w, h, u, v, o[i], vo[i]);
            }
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

struct Sample {
    double nm;
    float value;
};

/// Linear interpolation of sorted valid samples onto the bands they cover.
/// Only covered, valid bands are written; `limit[b]` is the largest
/// admissible bracket width for band b.
template <typename Write>
void interpolate_sorted(const Sample* s, std::size_t n, const double* bands, const double* limit, int nb, Write&& write) {
    if (n == 0)
        return;
    int b = static_cast<int>(std::lower_bound(bands, bands + nb, s[0].nm) - bands);
    const double last = s[n - 1].nm;
    std::size_t j = 0;
    for (; b < nb && bands[b] <= last; ++b) {
        const double lb = bands[b];
        while (s[j].nm < lb)
            ++j;
        if (s[j].nm == lb) {
            write(b, s[j].value);
            continue;
        }
        const Sample& lo = s[j - 1];
        const Sample& hi = s[j];
        const double gap = hi.nm - lo.nm;
        if (gap <= limit[b]) {
            const double t = (lb - lo.nm) / gap;
            write(b, static_cast<float>(lo.value + t * (static_cast<double>(hi.value) - lo.value)));
        }
    }
}

std::vector<double> gap_limits(const calib::BandGrid& grid) {
    std::vector<double> limit(static_cast<std::size_t>(grid.count()));
    for (int b = 0; b < grid.count(); ++b)
        limit[static_cast<std::size_t>(b)] = 2.0 * grid.local_spacing(b);
    return limit;
}

void sort_samples(Sample* s, std::size_t n) {
    // Insertion sort: lenses are usually already in wavelength order.
    for (std::size_t i = 1; i < n; ++i) {
        const Sample x = s[i];
        std::size_t k = i;
        while (k > 0 && s[k - 1].nm > x.nm) {
            s[k] = s[k - 1];
            --k;
        }
        s[k] = x;
    }
}

} // namespace

void interpolate_spectrum(std::vector<SpectralSample>& samples, const calib::BandGrid& grid, float* out_values,
                          std::uint8_t* out_valid, std::size_t stride) {
    std::vector<Sample> s;
    s.reserve(samples.size());
    std::size_t n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].valid && std::isfinite(samples[i].wavelength_nm)) {
            samples[n++] = samples[i];
            s.push_back({samples[i].wavelength_nm, samples[i].value});
        }
    }
    samples.resize(n);
    std::stable_sort(s.begin(), s.end(), [](const Sample& a, const Sample& b) { return a.nm < b.nm; });

    const int nb = grid.count();
    for (int b = 0; b < nb; ++b) {
        out_values[static_cast<std::size_t>(b) * stride] = 0.0f;
        out_valid[static_cast<std::size_t>(b) * stride] = 0;
    }
    const auto limit = gap_limits(grid);
    interpolate_sorted(s.data(), s.size(), grid.wavelengths().data(), limit.data(), nb, [&](int b, float v) {
        out_values[static_cast<std::size_t>(b) * stride] = v;
        out_valid[static_cast<std::size_t>(b) * stride] = 1;
    });
}

SpectralCube resample_uniform(const SpectralCube& transformed, const calib::ResolvedCalibration& resolved,
                              const calib::BandGrid& grid) {
    SpectralCube out;
    resample_uniform(transformed, resolved, grid, out);
    return out;
}

void resample_uniform(const SpectralCube& transformed, const calib::ResolvedCalibration& resolved,
                      const calib::BandGrid& grid, SpectralCube& out) {
    if (transformed.stage() != Stage::transformed)
        throw data_error("resample: expected a transformed-stage cube");
    const int planes = transformed.planes();
    if (static_cast<std::size_t>(planes) != resolved.dispersion.size() ||
        static_cast<std::size_t>(planes) != resolved.homographies.size())
        throw data_error("resample: plane count does not match the calibration lens count");

    const int w = transformed.width();
    const int h = transformed.height();
    out.reset(w, h, grid.count(), Stage::uniform);
    out.set_wavelengths(grid.wavelengths());
    const std::size_t stride = out.plane_size();
    const auto limit = gap_limits(grid);
    const double* bands = grid.wavelengths().data();
    const int nb = grid.count();

    // Per lens: wavelength at scene pixel (x, y) is the dispersion evaluated at H * (x, y).
    struct LensAccess {
        const float* values;
        const std::uint8_t* valid;
        const calib::Homography* H;
        calib::LinearDispersion disp;
        bool translation;
    };
    std::vector<LensAccess> lenses;
    lenses.reserve(static_cast<std::size_t>(planes));
    for (int p = 0; p < planes; ++p) {
        const auto& d = resolved.dispersion[static_cast<std::size_t>(p)];
        if (!d.assigned)
            continue;
        const auto& H = resolved.homographies[static_cast<std::size_t>(p)];
        lenses.push_back({transformed.plane(p), transformed.valid_plane(p), &H, d, H.is_translation()});
    }
    // Visit lenses in wavelength order at the scene origin so the per-pixel
    // sort rarely has to move anything.
    std::stable_sort(lenses.begin(), lenses.end(), [](const LensAccess& a, const LensAccess& b) {
        return a.disp.at(a.H->m[2], a.H->m[5]) < b.disp.at(b.H->m[2], b.H->m[5]);
    });

    std::vector<Sample> samples(lenses.size());
    float* ov = out.plane(0);
    std::uint8_t* ok = out.valid_plane(0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            std::size_t n = 0;
            for (const auto& L : lenses) {
                if (!L.valid[i])
                    continue;
                double nm;
                if (L.translation) {
                    nm = L.disp.at(x + L.H->m[2], y + L.H->m[5]);
                } else {
                    const auto uv = L.H->apply(x, y);
                    nm = L.disp.at(uv[0], uv[1]);
                }
                if (!std::isfinite(nm))
                    continue;
                samples[n++] = {nm, L.values[i]};
            }
            sort_samples(samples.data(), n);
            interpolate_sorted(samples.data(), n, bands, limit.data(), nb, [&](int b, float v) {
                ov[static_cast<std::size_t>(b) * stride + i] = v;
                ok[static_cast<std::size_t>(b) * stride + i] = 1;
            });
        }
    }
}

} // namespace hslf::cube
