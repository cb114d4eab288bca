#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "hslf/error.hpp"
#include "hslf/reflect.hpp"

using namespace hslf;

namespace {

cube::SpectralCube uniform_cube(int w, int h, int bands, float fill) {
    cube::SpectralCube c(w, h, bands, cube::Stage::uniform);
    std::vector<double> wl;
    for (int b = 0; b < bands; ++b)
        wl.push_back(450.0 + 8.0 * b);
    c.set_wavelengths(wl);
    std::fill(c.values().begin(), c.values().end(), fill);
    std::fill(c.validity().begin(), c.validity().end(), std::uint8_t{1});
    return c;
}

const reflect::RegionOfInterest kRoi{{2, 2, 8, 6}, 4};

} // namespace

TEST_CASE("roi validation") {
    CHECK_NOTHROW(reflect::validate({{0, 0, 4, 4}, 0}, 10, 10));
    CHECK_THROWS_AS(reflect::validate({{0, 0, 3, 5}, 0}, 10, 10), Error);
    CHECK_THROWS_AS(reflect::validate({{8, 8, 4, 4}, 0}, 10, 10), Error);
    CHECK_THROWS_AS(reflect::validate({{-1, 0, 4, 4}, 0}, 10, 10), Error);
}

TEST_CASE("white reference from constant regions") {
    auto c = uniform_cube(12, 10, 5, 1000.0f);
    auto w = reflect::extract_white_reference(c, kRoi);
    CHECK(w.valid_bands() == 5);
    for (float v : w.values)
        CHECK(v == 1000.0f);
    CHECK(w.frame_id == 4);
    CHECK(w.roi == kRoi);

    c = uniform_cube(12, 10, 5, 900.0f);
    w = reflect::extract_white_reference(c, kRoi, {.gauze_reflectance_factor = 0.9});
    for (float v : w.values)
        CHECK(v == doctest::Approx(1000.0).epsilon(1e-6));
    CHECK_THROWS_AS(reflect::extract_white_reference(c, kRoi, {.gauze_reflectance_factor = 1.5}), Error);
    CHECK_THROWS_AS(reflect::extract_white_reference(c, {{10, 8, 5, 5}, 0}), Error);
}

TEST_CASE("a band with mostly invalid roi pixels is dropped") {
    auto c = uniform_cube(12, 10, 4, 800.0f);
    const Rect& r = kRoi.rect;
    int flagged = 0;
    for (int y = r.y; y < r.y + r.height; ++y)
        for (int x = r.x; x < r.x + r.width; ++x)
            if (flagged < r.area() * 8 / 10) {
                c.set_valid(2, x, y, false);
                ++flagged;
            }
    const auto w = reflect::extract_white_reference(c, kRoi);
    CHECK(w.valid == std::vector<std::uint8_t>{1, 1, 0, 1});
}

TEST_CASE("bands at or below the white floor are dropped and all-dark fails") {
    auto c = uniform_cube(12, 10, 3, 500.0f);
    for (int i = 0; i < static_cast<int>(c.plane_size()); ++i)
        c.plane(1)[i] = 0.5f;
    const auto w = reflect::extract_white_reference(c, kRoi);
    CHECK(w.valid == std::vector<std::uint8_t>{1, 0, 1});
    auto dark = uniform_cube(12, 10, 3, 1.0f);
    CHECK_THROWS_AS(reflect::extract_white_reference(dark, kRoi), Error);
}

TEST_CASE("median ignores a minority of outliers") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> junk(0.0f, 4000.0f);
    const Rect& r = kRoi.rect;
    const int n = static_cast<int>(r.area());
    for (int outliers = 0; outliers <= (n - 1) / 2; outliers += 3) {
        auto c = uniform_cube(12, 10, 2, 1234.0f);
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int k = 0; k < outliers; ++k) {
            const int x = r.x + idx[static_cast<std::size_t>(k)] % r.width;
            const int y = r.y + idx[static_cast<std::size_t>(k)] / r.width;
            c.value(0, x, y) = junk(rng);
            c.value(1, x, y) = junk(rng);
        }
        const auto w = reflect::extract_white_reference(c, kRoi);
        REQUIRE(w.values[0] == 1234.0f);
        REQUIRE(w.values[1] == 1234.0f);
    }
}

TEST_CASE("self-normalization gives unit reflectance") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(50.0f, 4000.0f);
    auto c = uniform_cube(12, 10, 6, 0.0f);
    for (int b = 0; b < 6; ++b) {
        const float v = u(rng);
        std::fill(c.plane(b), c.plane(b) + c.plane_size(), v);
    }
    const auto w = reflect::extract_white_reference(c, kRoi);
    const auto r = reflect::normalize_reflectance(c, w);
    CHECK(r.stage() == cube::Stage::reflectance);
    for (std::size_t i = 0; i < r.values().size(); ++i)
        REQUIRE(std::abs(r.values()[i] - 1.0) <= 1e-6);
}

TEST_CASE("normalization masks and zeros") {
    auto c = uniform_cube(12, 10, 3, 1000.0f);
    auto w = reflect::extract_white_reference(c, kRoi);
    c.value(0, 0, 0) = 0.0f;
    c.set_valid(1, 1, 1, false);
    w.valid[2] = 0;
    const auto r = reflect::normalize_reflectance(c, w);
    CHECK(r.value(0, 0, 0) == 0.0f);
    CHECK(r.valid(0, 0, 0));
    CHECK_FALSE(r.valid(1, 1, 1));
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x)
            REQUIRE_FALSE(r.valid(2, x, y));

    auto other = uniform_cube(12, 10, 3, 1000.0f);
    auto wl = other.wavelengths();
    wl[1] += 1.0;
    other.set_wavelengths(wl);
    CHECK_THROWS_AS(reflect::normalize_reflectance(other, w), Error);
}

TEST_CASE("illumination scale cancels through the roi white") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<float> u(10.0f, 3000.0f);
    auto c = uniform_cube(12, 10, 8, 0.0f);
    for (auto& v : c.values())
        v = u(rng);
    const auto base = reflect::normalize_reflectance(c, reflect::extract_white_reference(c, kRoi));
    for (double alpha : {0.25, 0.5, 1.7, 4.0, 123.0}) {
        auto s = c;
        for (auto& v : s.values())
            v = static_cast<float>(v * alpha);
        const auto r = reflect::normalize_reflectance(s, reflect::extract_white_reference(s, kRoi));
        CHECK(r.validity() == base.validity());
        for (std::size_t i = 0; i < r.values().size(); ++i)
            REQUIRE(r.values()[i] == doctest::Approx(base.values()[i]).epsilon(1e-6));
    }
}

TEST_CASE("normalization is monotone in the numerator") {
    auto c = uniform_cube(12, 10, 2, 1000.0f);
    const auto w = reflect::extract_white_reference(c, kRoi);
    float prev = -1.0f;
    for (float v = 0.0f; v < 5000.0f; v += 37.5f) {
        c.value(0, 0, 0) = v;
        const float r = reflect::normalize_reflectance(c, w).value(0, 0, 0);
        REQUIRE(r >= prev);
        prev = r;
    }
}

TEST_CASE("spatial white divides per pixel") {
    auto flat = uniform_cube(4, 4, 2, 0.0f);
    for (std::size_t i = 0; i < flat.values().size(); ++i)
        flat.values()[i] = static_cast<float>(100 + i);
    const auto w = reflect::white_reference_from_flat_field(flat);
    CHECK(w.spatial);
    const auto r = reflect::normalize_reflectance(flat, w);
    for (float v : r.values())
        CHECK(v == 1.0f);
}

TEST_CASE("staleness") {
    reflect::WhiteReference w;
    w.timestamp_ms = 1000.0;
    CHECK_FALSE(w.is_stale(1000.0 + 300000.0, 300.0));
    CHECK(w.is_stale(1000.0 + 300001.0, 300.0));
}
