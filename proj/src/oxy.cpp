#include "hslf/oxy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "hslf/error.hpp"

namespace hslf::oxy {

namespace {

template <typename A, typename B>
double sam_impl(std::span<const A> a, std::span<const B> b, const std::uint8_t* valid, int min_valid_bands) {
    if (a.size() != b.size())
        throw data_error("sam: spectra differ in length");
    double dot = 0.0, na = 0.0, nb = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (valid && !valid[i])
            continue;
        const double x = a[i];
        const double y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
        ++n;
    }
    if (n < min_valid_bands)
        throw data_error("sam: " + std::to_string(n) + " valid bands, need at least " + std::to_string(min_valid_bands));
    if (na == 0.0 || nb == 0.0)
        throw data_error("sam: zero-norm spectrum");
    const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return std::acos(c);
}

} // namespace

double sam(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> valid,
           int min_valid_bands) {
    if (valid.size() != a.size())
        throw data_error("sam: mask length differs from spectrum length");
    return sam_impl(a, b, valid.data(), min_valid_bands);
}

double sam(std::span<const float> a, std::span<const double> b, std::span<const std::uint8_t> valid,
           int min_valid_bands) {
    if (valid.size() != a.size())
        throw data_error("sam: mask length differs from spectrum length");
    return sam_impl(a, b, valid.data(), min_valid_bands);
}

double sam(std::span<const double> a, std::span<const double> b, int min_valid_bands) {
    return sam_impl(a, b, nullptr, min_valid_bands);
}

// ---------------------------------------------------------------------------

namespace {

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define HSLF_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define HSLF_CLONES
#endif

template <std::size_t Block>
inline std::size_t accumulate_block(const double* __restrict lib, std::size_t ne, std::size_t e0, const int* bands,
                                    const double* p, std::size_t n, double* __restrict dot) {
    for (; e0 + Block <= ne; e0 += Block) {
        double acc[Block] = {};
        for (std::size_t k = 0; k < n; ++k) {
            const double pk = p[k];
            const double* __restrict row = lib + static_cast<std::size_t>(bands[k]) * ne + e0;
            for (std::size_t j = 0; j < Block; ++j)
                acc[j] += pk * row[j];
        }
        for (std::size_t j = 0; j < Block; ++j)
            dot[e0 + j] = acc[j];
    }
    return e0;
}

/// dot[e] = sum over k of p[k] * lib[bands[k]][e], accumulated in k order.
/// Each entry keeps its own accumulation order, so all instruction-set
/// variants give identical sums.
HSLF_CLONES
void accumulate_dots(const double* __restrict lib, std::size_t ne, const int* bands, const double* p, std::size_t n,
                     double* __restrict dot) {
    std::size_t e = accumulate_block<16>(lib, ne, 0, bands, p, n, dot);
    e = accumulate_block<4>(lib, ne, e, bands, p, n, dot);
    accumulate_block<1>(lib, ne, e, bands, p, n, dot);
}

/// Squared entry norms per distinct band list.
class NormCache {
public:
    explicit NormCache(const PreparedLibrary& lib) : lib_(lib) {}

    const std::vector<double>& norms(const std::vector<int>& bands) {
        auto it = map_.find(bands);
        if (it != map_.end())
            return it->second;
        if (map_.size() >= kMaxEntries)
            map_.clear();
        std::vector<double> n(static_cast<std::size_t>(lib_.entries()), 0.0);
        for (int b : bands) {
            const double* row = lib_.band_row(b);
            for (std::size_t e = 0; e < n.size(); ++e)
                n[e] += row[e] * row[e];
        }
        return map_.emplace(bands, std::move(n)).first->second;
    }

private:
    struct Hash {
        std::size_t operator()(const std::vector<int>& v) const noexcept {
            std::uint64_t h = 1469598103934665603ull;
            for (int x : v)
                h = (h ^ static_cast<std::uint64_t>(x)) * 1099511628211ull;
            return static_cast<std::size_t>(h);
        }
    };
    static constexpr std::size_t kMaxEntries = 1 << 14;
    const PreparedLibrary& lib_;
    std::unordered_map<std::vector<int>, std::vector<double>, Hash> map_;
};

} // namespace

Classification classify_so2(const cube::SpectralCube& cube, const PreparedLibrary& lib, const ClassifyOptions& options) {
    if (lib.entries() == 0)
        throw data_error("classify: empty library");
    if (cube.planes() != lib.bands() ||
        std::memcmp(cube.wavelengths().data(), lib.wavelengths().data(), sizeof(double) * lib.wavelengths().size()) != 0)
        throw data_error("classify: library was prepared for a different band grid");

    const int w = cube.width();
    const int h = cube.height();
    const int nb = cube.planes();
    const std::size_t ne = static_cast<std::size_t>(lib.entries());
    const auto& lib_valid = lib.band_valid();

    Classification out;
    out.so2.so2 = Raster<double>(w, h, std::numeric_limits<double>::quiet_NaN());
    out.so2.index = Raster<std::int16_t>(w, h, -1);
    out.similarity.angle = Raster<double>(w, h, std::numeric_limits<double>::quiet_NaN());
    out.similarity.valid_bands = Raster<std::uint16_t>(w, h, 0);

    std::vector<int> bands;
    bands.reserve(static_cast<std::size_t>(nb));
    std::vector<double> pvals(static_cast<std::size_t>(nb));
    std::vector<double> dot(ne);
    std::vector<double> cosines(ne);
    NormCache cache(lib);

    // One image row at a time, transposed to pixel-major order.
    const std::size_t row_len = static_cast<std::size_t>(w);
    std::vector<float> row_values(row_len * static_cast<std::size_t>(nb));
    std::vector<std::uint8_t> row_valid(row_len * static_cast<std::size_t>(nb));

    std::vector<int> row_bands;
    row_bands.reserve(static_cast<std::size_t>(nb));
    for (int y = 0; y < h; ++y) {
        const std::size_t base = static_cast<std::size_t>(y) * row_len;
        row_bands.clear();
        for (int b = 0; b < nb; ++b) {
            if (!lib_valid[static_cast<std::size_t>(b)])
                continue;
            const std::uint8_t* k = cube.valid_plane(b) + base;
            if (std::find(k, k + row_len, std::uint8_t{1}) != k + row_len)
                row_bands.push_back(b);
        }
        const std::size_t nr = row_bands.size();
        for (std::size_t j = 0; j < nr; ++j) {
            const float* v = cube.plane(row_bands[j]) + base;
            const std::uint8_t* k = cube.valid_plane(row_bands[j]) + base;
            for (std::size_t x = 0; x < row_len; ++x) {
                row_values[x * nr + j] = v[x];
                row_valid[x * nr + j] = k[x];
            }
        }
        for (std::size_t x = 0; x < row_len; ++x) {
            const std::size_t i = base + x;
            const float* pv = row_values.data() + x * nr;
            const std::uint8_t* pk = row_valid.data() + x * nr;
            bands.clear();
            double na = 0.0;
            for (std::size_t j = 0; j < nr; ++j) {
                if (pk[j]) {
                    const double p = pv[j];
                    pvals[bands.size()] = p;
                    bands.push_back(row_bands[j]);
                    na += p * p;
                }
            }
            out.similarity.valid_bands.data[i] = static_cast<std::uint16_t>(bands.size());
            if (static_cast<int>(bands.size()) < options.min_valid_bands || na == 0.0)
                continue;

            accumulate_dots(lib.band_row(0), ne, bands.data(), pvals.data(), bands.size(), dot.data());
            const std::vector<double>& norms = cache.norms(bands);

            for (std::size_t e = 0; e < ne; ++e)
                cosines[e] = std::clamp(dot[e] / std::sqrt(na * norms[e]), -1.0, 1.0);

            // Largest clamped cosine, first index on ties. acos is non-increasing,
            // so the smallest angle belongs to this entry or to an earlier one
            // whose cosine rounds to the same angle.
            std::size_t best = ne;
            double best_cos = -2.0;
            for (std::size_t e = 0; e < ne; ++e) {
                if (norms[e] != 0.0 && cosines[e] > best_cos) {
                    best_cos = cosines[e];
                    best = e;
                }
            }
            if (best == ne)
                continue;
            const double angle = std::acos(best_cos);
            for (std::size_t e = 0; e < best; ++e) {
                if (norms[e] != 0.0 && cosines[e] >= best_cos - 1e-9 && std::acos(cosines[e]) == angle) {
                    best = e;
                    break;
                }
            }
            out.so2.index.data[i] = static_cast<std::int16_t>(best);
            out.so2.so2.data[i] = lib.levels()[best];
            out.similarity.angle.data[i] = angle;
        }
    }
    return out;
}

Classification classify_so2(const cube::SpectralCube& cube, const ReferenceLibrary& lib, const ClassifyOptions& options) {
    return classify_so2(cube, PreparedLibrary(lib, cube.wavelengths(), options.min_valid_bands), options);
}

void validate_threshold(double t) {
    if (!(t >= 0.0 && t <= std::numbers::pi / 2))
        throw usage_error("threshold out of range");
}

TissueMask build_tissue_mask(const SimilarityMap& sim, double threshold, int min_valid_bands) {
    validate_threshold(threshold);
    TissueMask mask(sim.angle.width, sim.angle.height, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double a = sim.angle.data[i];
        mask.data[i] = (!std::isnan(a) && a <= threshold && sim.valid_bands.data[i] >= min_valid_bands) ? 1 : 0;
    }
    return mask;
}

// ---------------------------------------------------------------------------

std::uint8_t encode_gamma(double r) {
    if (!(r > 0.0))
        return 0;
    if (r >= 1.0)
        return 255;
    return static_cast<std::uint8_t>(std::lround(255.0 * std::pow(r, 1.0 / 2.2)));
}

RgbImage render_rgb(const cube::SpectralCube& cube) {
    const auto& wl = cube.wavelengths();
    if (wl.empty() || cube::is_lens_indexed(cube.stage()))
        throw data_error("render_rgb: cube has no band wavelengths");
    const double lo = wl.front();
    const double hi = wl.back();
    auto pick = [&](double nm) -> int {
        if (nm < lo || nm > hi)
            return -1;
        int best = 0;
        for (int b = 1; b < static_cast<int>(wl.size()); ++b)
            if (std::abs(wl[static_cast<std::size_t>(b)] - nm) < std::abs(wl[static_cast<std::size_t>(best)] - nm))
                best = b;
        return best;
    };
    const int br = pick(kRedNm), bg = pick(kGreenNm), bb = pick(kBlueNm);
    if (br < 0 && bg < 0 && bb < 0)
        throw data_error("render_rgb: band grid covers none of 610, 540, 470 nm");

    RgbImage img(cube.width(), cube.height());
    const std::size_t n = cube.plane_size();
    auto channel = [&](int band, std::uint8_t Rgb8::*field) {
        if (band < 0)
            return;
        const float* v = cube.plane(band);
        const std::uint8_t* ok = cube.valid_plane(band);
        for (std::size_t i = 0; i < n; ++i)
            img.data[i].*field = ok[i] ? encode_gamma(v[i]) : 0;
    };
    channel(br, &Rgb8::r);
    channel(bg, &Rgb8::g);
    channel(bb, &Rgb8::b);
    return img;
}

Rgb8 Colormap::operator()(double t) const {
    if (stops.empty())
        return {};
    if (!(t > stops.front().first))
        return stops.front().second;
    if (t >= stops.back().first)
        return stops.back().second;
    std::size_t k = 1;
    while (stops[k].first < t)
        ++k;
    const auto& [t0, c0] = stops[k - 1];
    const auto& [t1, c1] = stops[k];
    const double f = (t - t0) / (t1 - t0);
    auto mix = [f](std::uint8_t a, std::uint8_t b) {
        return static_cast<std::uint8_t>(std::lround(a + f * (static_cast<double>(b) - a)));
    };
    return {mix(c0.r, c1.r), mix(c0.g, c1.g), mix(c0.b, c1.b)};
}

Colormap Colormap::by_name(std::string_view name) {
    if (name == "oxy")
        return {"oxy", {{0.0, {0, 0, 255}}, {1.0 / 3.0, {0, 255, 255}}, {2.0 / 3.0, {255, 255, 0}}, {1.0, {255, 0, 0}}}};
    if (name == "gray")
        return {"gray", {{0.0, {0, 0, 0}}, {1.0, {255, 255, 255}}}};
    throw usage_error("unknown colormap '" + std::string(name) + "'");
}

std::vector<std::string> Colormap::names() { return {"oxy", "gray"}; }

RgbaImage colorize(const SO2Map& so2, const TissueMask& mask, const Colormap& cmap, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw usage_error("alpha must lie in [0, 1]");
    if (so2.so2.width != mask.width || so2.so2.height != mask.height)
        throw data_error("colorize: mask and so2 map differ in size");
    const auto a = static_cast<std::uint8_t>(std::lround(alpha * 255.0));
    RgbaImage out(mask.width, mask.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!mask.data[i] || std::isnan(so2.so2.data[i]))
            continue;
        const Rgb8 c = cmap(so2.so2.data[i]);
        out.data[i] = {c.r, c.g, c.b, a};
    }
    return out;
}

RgbImage composite(const RgbImage& base, const RgbaImage& overlay) {
    if (base.width != overlay.width || base.height != overlay.height)
        throw data_error("composite: base and overlay differ in size");
    RgbImage out = base;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Rgba8 s = overlay.data[i];
        if (s.a == 0)
            continue;
        Rgb8& d = out.data[i];
        const unsigned a = s.a, ia = 255u - s.a;
        d.r = static_cast<std::uint8_t>((s.r * a + d.r * ia + 127u) / 255u);
        d.g = static_cast<std::uint8_t>((s.g * a + d.g * ia + 127u) / 255u);
        d.b = static_cast<std::uint8_t>((s.b * a + d.b * ia + 127u) / 255u);
    }
    return out;
}

} // namespace hslf::oxy
