#include <doctest.h>

#include <numbers>
#include <random>

#include "hslf/error.hpp"
#include "hslf/oxy.hpp"
#include "oracles.hpp"

using namespace hslf;

namespace {

const std::vector<double>& s5_grid() {
    static const auto g = calib::s5_profile().band_grid.wavelengths();
    return g;
}

const oxy::ReferenceLibrary& lib36() {
    static const auto lib = oxy::build_synthetic_library(36, oxy::library_grid());
    return lib;
}

cube::SpectralCube reflectance_cube(int w, int h, const std::vector<double>& grid) {
    cube::SpectralCube c(w, h, static_cast<int>(grid.size()), cube::Stage::reflectance);
    c.set_wavelengths(grid);
    return c;
}

void set_pixel(cube::SpectralCube& c, int x, int y, const std::vector<double>& s) {
    for (int b = 0; b < c.planes(); ++b) {
        c.value(b, x, y) = static_cast<float>(s[static_cast<std::size_t>(b)]);
        c.set_valid(b, x, y, true);
    }
}

std::vector<double> entry_on_grid(int e) {
    return oracle::lookup_on_grid(lib36(), s5_grid()).spectra[static_cast<std::size_t>(e)];
}

} // namespace

TEST_CASE("sam on analytic cases") {
    const std::vector<double> a{0.2, 0.4, 0.1, 0.9, 0.3, 0.5, 0.7, 0.8};
    CHECK(oxy::sam(a, a) == 0.0);

    std::vector<double> e1(8, 0.0), e2(8, 0.0);
    e1[0] = 1;
    e2[1] = 1;
    CHECK(oxy::sam(e1, e2) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));

    const std::vector<double> p{1, 1}, q{1, 0};
    CHECK(std::abs(oxy::sam(p, q, 2) - std::acos(1 / std::sqrt(2.0))) < 1e-9);
}

TEST_CASE("sam is symmetric, scale invariant and bounded on random spectra") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> scale(1e-3, 1e3);
    for (int i = 0; i < 10000; ++i) {
        const auto a = oracle::random_spectrum(rng, 51, 0.0, 1.0);
        const auto b = oracle::random_spectrum(rng, 51, 0.0, 1.0);
        const double c = scale(rng);
        std::vector<double> ca(a);
        for (auto& v : ca)
            v *= c;
        const double ab = oxy::sam(a, b);
        REQUIRE(ab == oxy::sam(b, a));
        REQUIRE(ab >= 0.0);
        REQUIRE(ab <= std::numbers::pi / 2);
        REQUIRE(oxy::sam(a, ca) < 1e-7);
    }
}

TEST_CASE("sam rejects too few bands and zero norms") {
    const std::vector<double> a{1, 2, 3}, z{0, 0, 0};
    CHECK_THROWS_AS(oxy::sam(a, a), Error);
    CHECK_THROWS_AS(oxy::sam(a, z, 3), Error);
    const std::vector<std::uint8_t> mask{1, 0, 1};
    CHECK(oxy::sam(std::span<const double>(a), std::span<const double>(a), std::span<const std::uint8_t>(mask), 2) ==
          0.0);
}

TEST_CASE("classify matches the exhaustive oracle on random cubes with holes") {
    std::mt19937_64 rng(5);
    std::bernoulli_distribution hole(0.1);
    const auto g = oracle::lookup_on_grid(lib36(), s5_grid());
    const oxy::PreparedLibrary prepared(lib36(), s5_grid());
    for (int t = 0; t < 20; ++t) {
        auto c = reflectance_cube(8, 8, s5_grid());
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                set_pixel(c, x, y, oracle::random_spectrum(rng, s5_grid().size(), 0.0, 1.5));
                for (int b = 0; b < c.planes(); ++b)
                    if (hole(rng))
                        c.set_valid(b, x, y, false);
            }
        const auto got = oxy::classify_so2(c, prepared);
        const auto want = oracle::classify(c, g, oxy::kDefaultMinValidBands);
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE(got.so2.index.data[i] == want[i]);
    }
}

TEST_CASE("exact library members and scaled members classify to themselves") {
    auto c = reflectance_cube(3, 1, s5_grid());
    auto s = entry_on_grid(20);
    set_pixel(c, 0, 0, s);
    for (auto& v : s)
        v *= 0.5;
    set_pixel(c, 1, 0, s);
    set_pixel(c, 2, 0, entry_on_grid(35));
    const auto r = oxy::classify_so2(c, lib36());
    CHECK(r.so2.index.at(0, 0) == 20);
    CHECK(r.so2.so2.at(0, 0) == lib36().entries[20].so2);
    CHECK(r.similarity.angle.at(0, 0) < 1e-6);
    CHECK(r.so2.index.at(1, 0) == 20);
    CHECK(r.so2.index.at(2, 0) == 35);
}

TEST_CASE("midpoints between adjacent entries agree with the oracle") {
    const auto g = oracle::lookup_on_grid(lib36(), s5_grid());
    auto c = reflectance_cube(35, 1, s5_grid());
    for (int k = 0; k < 35; ++k) {
        std::vector<double> m(s5_grid().size());
        for (std::size_t b = 0; b < m.size(); ++b)
            m[b] = 0.5 * (g.spectra[k][b] + g.spectra[k + 1][b]);
        set_pixel(c, k, 0, m);
    }
    const auto r = oxy::classify_so2(c, lib36());
    const auto want = oracle::classify(c, g, 8);
    for (int k = 0; k < 35; ++k)
        CHECK(r.so2.index.at(k, 0) == want[static_cast<std::size_t>(k)]);
}

TEST_CASE("classification is invariant under per-pixel positive scaling") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> alpha(0.01, 100.0);
    auto a = reflectance_cube(16, 16, s5_grid());
    auto b = reflectance_cube(16, 16, s5_grid());
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            auto s = oracle::random_spectrum(rng, s5_grid().size(), 0.05, 1.0);
            set_pixel(a, x, y, s);
            // power-of-two factors keep the float spectra exact multiples
            const double f = std::exp2(std::round(std::log2(alpha(rng))));
            for (auto& v : s)
                v *= f;
            set_pixel(b, x, y, s);
        }
    CHECK(oxy::classify_so2(a, lib36()).so2 == oxy::classify_so2(b, lib36()).so2);
}

TEST_CASE("excluding a band matches classifying on the restricted grid") {
    std::mt19937_64 rng(8);
    const auto& grid = s5_grid();
    for (int drop : {0, 17, 50}) {
        auto full = reflectance_cube(6, 6, grid);
        std::vector<double> restricted_grid;
        for (int b = 0; b < static_cast<int>(grid.size()); ++b)
            if (b != drop)
                restricted_grid.push_back(grid[static_cast<std::size_t>(b)]);
        auto part = reflectance_cube(6, 6, restricted_grid);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                const auto s = oracle::random_spectrum(rng, grid.size(), 0.0, 1.0);
                set_pixel(full, x, y, s);
                full.set_valid(drop, x, y, false);
                std::vector<double> r;
                for (int b = 0; b < static_cast<int>(grid.size()); ++b)
                    if (b != drop)
                        r.push_back(s[static_cast<std::size_t>(b)]);
                set_pixel(part, x, y, r);
            }
        CHECK(oxy::classify_so2(full, lib36()).so2.index == oxy::classify_so2(part, lib36()).so2.index);
    }
}

TEST_CASE("pixels with too few valid bands stay unclassified") {
    auto c = reflectance_cube(1, 1, s5_grid());
    set_pixel(c, 0, 0, entry_on_grid(3));
    for (int b = 7; b < c.planes(); ++b)
        c.set_valid(b, 0, 0, false);
    const auto r = oxy::classify_so2(c, lib36());
    CHECK(r.so2.index.at(0, 0) == -1);
    CHECK(std::isnan(r.so2.so2.at(0, 0)));
    CHECK(r.similarity.valid_bands.at(0, 0) == 7);
}

TEST_CASE("classify rejects an empty library and a foreign grid") {
    auto c = reflectance_cube(1, 1, s5_grid());
    CHECK_THROWS_AS(oxy::classify_so2(c, oxy::PreparedLibrary()), Error);
    const oxy::PreparedLibrary other(lib36(), calib::x20_profile().band_grid.wavelengths());
    CHECK_THROWS_AS(oxy::classify_so2(c, other), Error);
}

TEST_CASE("tissue mask thresholds") {
    oxy::SimilarityMap sim;
    sim.angle = Raster<double>(4, 1);
    sim.valid_bands = Raster<std::uint16_t>(4, 1, 51);
    sim.angle.data = {0.0, 0.1, 0.3, std::numeric_limits<double>::quiet_NaN()};
    CHECK(oxy::build_tissue_mask(sim, std::numbers::pi / 2).data == std::vector<std::uint8_t>{1, 1, 1, 0});
    CHECK(oxy::build_tissue_mask(sim, 0.0).data == std::vector<std::uint8_t>{1, 0, 0, 0});
    CHECK(oxy::build_tissue_mask(sim, 0.15).data == std::vector<std::uint8_t>{1, 1, 0, 0});
    sim.valid_bands.data[1] = 7;
    CHECK(oxy::build_tissue_mask(sim, 0.15).data == std::vector<std::uint8_t>{1, 0, 0, 0});
    CHECK_THROWS_WITH_AS(oxy::build_tissue_mask(sim, -1.0), "threshold out of range", Error);
    CHECK_THROWS_AS(oxy::validate_threshold(2.0), Error);
}

TEST_CASE("rgb rendering follows gamma quantization") {
    auto c = reflectance_cube(3, 1, s5_grid());
    for (int b = 0; b < c.planes(); ++b) {
        c.value(b, 0, 0) = 1.0f;
        c.value(b, 1, 0) = 0.0f;
        for (int x = 0; x < 3; ++x)
            c.set_valid(b, x, 0, true);
    }
    const int red = calib::s5_profile().band_grid.nearest_band(610.0);
    c.value(red, 2, 0) = 0.25f;
    const auto img = oxy::render_rgb(c);
    CHECK(img.at(0, 0) == Rgb8{255, 255, 255});
    CHECK(img.at(1, 0) == Rgb8{0, 0, 0});
    const auto expected = static_cast<std::uint8_t>(std::lround(255.0 * std::pow(0.25, 1.0 / 2.2)));
    CHECK(img.at(2, 0) == Rgb8{expected, 0, 0});
    c.set_valid(red, 0, 0, false);
    CHECK(oxy::render_rgb(c).at(0, 0) == Rgb8{0, 255, 255});
    CHECK(oxy::encode_gamma(7.0) == 255);
    auto far = reflectance_cube(1, 1, {900.0, 950.0});
    CHECK_THROWS_AS(oxy::render_rgb(far), Error);
}

TEST_CASE("colormap ends and overlay composition") {
    const auto cmap = oxy::Colormap::by_name("oxy");
    CHECK(cmap(1.0) == Rgb8{255, 0, 0});
    CHECK(cmap(0.0) == Rgb8{0, 0, 255});
    CHECK_THROWS_AS(oxy::Colormap::by_name("viridis"), Error);

    oxy::SO2Map m;
    m.so2 = Raster<double>(2, 1, 1.0);
    m.index = Raster<std::int16_t>(2, 1, 35);
    oxy::TissueMask mask(2, 1, 0);
    mask.data[0] = 1;
    const auto ov = oxy::colorize(m, mask, cmap, 0.6);
    CHECK(ov.at(0, 0) == Rgba8{255, 0, 0, 153});
    CHECK(ov.at(1, 0).a == 0);

    RgbImage base(2, 1, Rgb8{10, 200, 30});
    CHECK(oxy::composite(base, oxy::colorize(m, mask, cmap, 0.0)) == base);
    CHECK(oxy::composite(base, oxy::colorize(m, oxy::TissueMask(2, 1, 0), cmap, 0.6)) == base);
    const auto blended = oxy::composite(base, ov);
    CHECK(blended.at(0, 0).r == (255u * 153 + 10u * 102 + 127) / 255);
    CHECK(oxy::composite(base, oxy::colorize(m, mask, cmap, 1.0)).at(0, 0) == Rgb8{255, 0, 0});
}

TEST_CASE("synthetic library levels and endmembers") {
    const auto& lib = lib36();
    REQUIRE(lib.size() == 36);
    for (int i = 0; i < 36; ++i)
        CHECK(lib.entries[static_cast<std::size_t>(i)].so2 == doctest::Approx(i / 35.0).epsilon(1e-15));
    CHECK(lib.entries.front().so2 == 0.0);
    CHECK(lib.entries.back().so2 == 1.0);

    const oxy::EndmemberModel model;
    const auto grid = oxy::library_grid();
    for (int b = 0; b < grid.count(); b += 37) {
        const double nm = grid[b];
        const double want = std::exp(-model.path_length * model.eps_oxy(nm));
        CHECK(lib.entries.back().reflectance[static_cast<std::size_t>(b)] == doctest::Approx(want).epsilon(1e-12));
    }
    for (int i = 0; i < 36; ++i)
        for (int j = i + 1; j < 36; ++j)
            REQUIRE(oxy::sam(lib.entries[static_cast<std::size_t>(i)].reflectance,
                             lib.entries[static_cast<std::size_t>(j)].reflectance) > 0.0);
    CHECK(oxy::nearest_level(lib, 0.49) == 17);
}

TEST_CASE("library validation and JSON round trip") {
    const auto lib = oxy::build_synthetic_library(5, calib::BandGrid::linspace(400, 800, 41));
    const auto back = oxy::parse_library(oxy::serialize_library(lib));
    CHECK(back.wavelengths_nm == lib.wavelengths_nm);
    CHECK(back.entries == lib.entries);
    CHECK(back.provenance == "file");
    auto bad = lib;
    std::swap(bad.entries[1], bad.entries[2]);
    CHECK_THROWS_AS(oxy::validate(bad), Error);
    CHECK_THROWS_AS(oxy::parse_library("{\"wavelengths_nm\": [1, 2]}"), Error);
    CHECK_THROWS_AS(oxy::build_synthetic_library(1, oxy::library_grid()), Error);
}
