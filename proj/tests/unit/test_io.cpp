#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "hslf/error.hpp"
#include "hslf/io.hpp"

using namespace hslf;

namespace {

cube::SpectralCube random_cube(std::mt19937_64& rng, int w, int h, int planes, cube::Stage stage) {
    cube::SpectralCube c(w, h, planes, stage);
    if (!cube::is_lens_indexed(stage)) {
        std::vector<double> wl;
        for (int p = 0; p < planes; ++p)
            wl.push_back(450.0 + 8.0 * p);
        c.set_wavelengths(wl);
    }
    std::uniform_real_distribution<float> u(-10.0f, 4000.0f);
    std::bernoulli_distribution coin(0.8);
    for (auto& v : c.values())
        v = u(rng);
    for (auto& v : c.validity())
        v = coin(rng) ? 1 : 0;
    c.values()[0] = std::numeric_limits<float>::quiet_NaN();
    c.values()[1] = -0.0f;
    return c;
}

cube::RawSensorFrame random_frame(std::mt19937_64& rng, int w, int h) {
    cube::RawSensorFrame f(w, h);
    std::uniform_int_distribution<int> u(0, 4095);
    for (auto& p : f.pixels)
        p = static_cast<std::uint16_t>(u(rng));
    f.frame_id = rng();
    f.integration_time_ms = 4.75f;
    return f;
}

} // namespace

TEST_CASE("HSC1 round trip is bitwise") {
    std::mt19937_64 rng(1);
    for (auto stage : {cube::Stage::raw, cube::Stage::transformed, cube::Stage::uniform, cube::Stage::reflectance}) {
        for (auto [w, h] : {std::pair{1, 1}, {3, 5}, {17, 9}}) {
            const auto c = random_cube(rng, w, h, 6, stage);
            const auto bytes = io::encode_cube(c);
            const auto back = io::decode_cube(bytes);
            CHECK(back == c);
            CHECK(io::encode_cube(back) == bytes);
        }
    }
    fixture::TempDir dir("hsc");
    const auto c = random_cube(rng, 8, 8, 51, cube::Stage::uniform);
    io::write_cube(c, dir.path / "c.hsc");
    CHECK(io::read_cube(dir.path / "c.hsc") == c);
    CHECK(io::read_bytes(dir.path / "c.hsc") == io::encode_cube(c));
}

TEST_CASE("HSC1 header layout") {
    std::mt19937_64 rng(2);
    const auto c = random_cube(rng, 3, 2, 2, cube::Stage::uniform);
    const auto b = io::encode_cube(c);
    CHECK(std::memcmp(b.data(), "HSC1", 4) == 0);
    CHECK(b[4] == 0x00);
    CHECK(b[5] == 0x01);
    CHECK(b[6] == 3);
    CHECK(b[10] == 2);
    CHECK(b[14] == 2);
    CHECK(b[18] == 2);
    CHECK(b.size() == 19 + 2 * (4 + 6 * 4 + 1));
}

TEST_CASE("HSR1 round trip is bitwise") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 10; ++i) {
        const auto f = random_frame(rng, 13 + i, 7 + 2 * i);
        const auto bytes = io::encode_frame(f);
        CHECK(bytes.size() == 30 + f.pixels.size() * 2);
        const auto back = io::decode_frame(bytes);
        CHECK(back.pixels == f.pixels);
        CHECK(back.frame_id == f.frame_id);
        CHECK(back.integration_time_ms == f.integration_time_ms);
        CHECK(back.bit_depth == 12);
        CHECK(io::encode_frame(back) == bytes);
    }
}

TEST_CASE("decoding errors") {
    std::mt19937_64 rng(4);
    const auto f = random_frame(rng, 10, 10);
    auto bytes = io::encode_frame(f);
    const auto full = bytes.size();
    bytes.resize(full - 7);
    CHECK_THROWS_WITH_AS(io::decode_frame(bytes),
                         ("HSR1: length mismatch, expected " + std::to_string(full) + " bytes, got " +
                          std::to_string(full - 7))
                             .c_str(),
                         Error);
    bytes = io::encode_frame(f);
    bytes.push_back(0);
    CHECK_THROWS_WITH_AS(io::decode_frame(bytes), doctest::Contains("length mismatch"), Error);
    bytes = io::encode_frame(f);
    bytes[5] = 0x02;
    CHECK_THROWS_WITH_AS(io::decode_frame(bytes), doctest::Contains("unsupported version 2.0"), Error);
    bytes = io::encode_frame(f);
    bytes[4] = 0x07;
    CHECK_NOTHROW(io::decode_frame(bytes));
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(io::decode_frame(bytes), doctest::Contains("bad magic"), Error);
    CHECK_THROWS_WITH_AS(io::decode_frame(io::Bytes{'H', 'S'}), doctest::Contains("truncated"), Error);

    auto cb = io::encode_cube(random_cube(rng, 4, 4, 3, cube::Stage::uniform));
    cb.pop_back();
    CHECK_THROWS_WITH_AS(io::decode_cube(cb), doctest::Contains("HSC1: length mismatch"), Error);
    cb = io::encode_cube(random_cube(rng, 4, 4, 3, cube::Stage::uniform));
    cb[18] = 9;
    CHECK_THROWS_WITH_AS(io::decode_cube(cb), doctest::Contains("stage"), Error);
    auto frame = random_frame(rng, 4, 4);
    frame.pixels[3] = 5000;
    CHECK_THROWS_AS(io::encode_frame(frame), Error);
    CHECK_THROWS_AS(io::read_frame("/nonexistent/x.hsr"), Error);
}

TEST_CASE("calibration and library files round trip bitwise") {
    fixture::TempDir dir("files");
    for (const auto& name : {"s5", "x20"}) {
        const auto& c = fixture::calibration(name);
        const auto path = dir.path / (std::string(name) + ".calib");
        calib::save_calibration(c, path);
        const auto first = io::read_bytes(path);
        const auto back = calib::load_calibration(path);
        CHECK(back == c);
        calib::save_calibration(back, dir.path / "again.calib");
        CHECK(io::read_bytes(dir.path / "again.calib") == first);
    }
    const auto& lib = fixture::library();
    oxy::save_library(lib, dir.path / "lib.json");
    const auto back = oxy::load_library(dir.path / "lib.json");
    CHECK(back.wavelengths_nm == lib.wavelengths_nm);
    for (std::size_t e = 0; e < lib.entries.size(); ++e) {
        CHECK(back.entries[e].so2 == lib.entries[e].so2);
        CHECK(back.entries[e].reflectance == lib.entries[e].reflectance);
    }
    oxy::save_library(back, dir.path / "lib2.json");
    CHECK(io::read_bytes(dir.path / "lib2.json") == io::read_bytes(dir.path / "lib.json"));
}

TEST_CASE("white reference export") {
    fixture::TempDir dir("white");
    reflect::WhiteReference w;
    w.wavelengths_nm = {450, 458, 466};
    w.values = {1000.5f, 0.0f, 998.25f};
    w.valid = {1, 0, 1};
    w.gauze_reflectance_factor = 0.9;
    w.roi = {{4, 5, 20, 10}, 3};
    w.frame_id = 3;
    w.timestamp_ms = 200.0;
    io::save_white_reference(w, dir.path / "white");
    CHECK(std::filesystem::exists(dir.path / "white.hsc"));
    CHECK(std::filesystem::exists(dir.path / "white.json"));
    const auto back = io::load_white_reference(dir.path / "white");
    CHECK(back.wavelengths_nm == w.wavelengths_nm);
    CHECK(back.values == w.values);
    CHECK(back.valid == w.valid);
    CHECK(back.gauze_reflectance_factor == w.gauze_reflectance_factor);
    CHECK(back.roi == w.roi);
    CHECK(back.frame_id == 3);
    CHECK(back.timestamp_ms == 200.0);
}

TEST_CASE("png round trip") {
    std::mt19937_64 rng(5);
    RgbaImage img(7, 5);
    for (auto& p : img.data)
        p = {std::uint8_t(rng()), std::uint8_t(rng()), std::uint8_t(rng()), std::uint8_t(rng())};
    CHECK(io::decode_png(io::encode_png(img)) == img);
    RgbImage rgb(3, 4);
    for (auto& p : rgb.data)
        p = {std::uint8_t(rng()), std::uint8_t(rng()), std::uint8_t(rng())};
    const auto back = io::decode_png(io::encode_png(rgb));
    for (std::size_t i = 0; i < rgb.size(); ++i)
        CHECK(back.data[i] == Rgba8{rgb.data[i].r, rgb.data[i].g, rgb.data[i].b, 255});
    Raster<std::uint8_t> gray(2, 2, 77);
    CHECK(io::decode_png(io::encode_png(gray)).data[3] == Rgba8{77, 77, 77, 255});
    CHECK_THROWS_AS(io::decode_png(io::Bytes{1, 2, 3}), Error);
}

TEST_CASE("recording round trip") {
    fixture::TempDir dir("rec");
    auto opts = sim::default_sim_options(calib::s5_profile());
    opts.noise = {0.3, 2.0, 5};
    auto rig = fixture::make_rig("s5", "resection", opts);
    const auto rec = dir.path / "r";
    std::vector<cube::RawSensorFrame> frames;
    {
        io::RecordingWriter w(rec, rig.sim.calibration(), rig.sim.library());
        w.set_simulation(rig.sim.phantom(), opts);
        auto cfg = rig.config;
        for (std::uint64_t i = 0; i < 4; ++i) {
            frames.push_back(rig.sim.frame(i));
            if (i == 2)
                cfg.sam_threshold = 0.1;
            w.add_frame(frames.back(), cfg);
        }
        CHECK_THROWS_AS(w.add_frame(frames.front(), cfg), Error);
        w.finish();
        CHECK_THROWS_AS(w.add_frame(rig.sim.frame(9), cfg), Error);
    }
    const io::RecordingReader r(rec);
    CHECK(r.size() == 4);
    CHECK(r.calibration() == rig.sim.calibration());
    CHECK(r.manifest().configs.size() == 2);
    CHECK(r.manifest().roi_events.size() == 1);
    CHECK(r.config_for(1).sam_threshold == rig.config.sam_threshold);
    CHECK(r.config_for(3).sam_threshold == 0.1);
    CHECK_THROWS_AS(r.config_for(10), Error);
    REQUIRE(r.phantom());
    CHECK(*r.phantom() == rig.sim.phantom());
    for (std::size_t i = 0; i < 4; ++i) {
        const auto f = r.frame(i);
        CHECK(io::encode_frame(f) == io::encode_frame(frames[i]));
        CHECK(f.timestamp_ms == frames[i].timestamp_ms);
        CHECK(io::read_bytes(rec / r.manifest().frames[i].file) == io::encode_frame(frames[i]));
    }
    CHECK(io::parse_manifest(io::serialize_manifest(r.manifest())).frames == r.manifest().frames);
    CHECK(io::serialize_manifest(io::parse_manifest(io::read_text(rec / "manifest.json"))) ==
          io::read_text(rec / "manifest.json"));
    CHECK_THROWS_AS(io::RecordingWriter(rec, rig.sim.calibration(), rig.sim.library()), Error);

    auto src = io::make_recording_source(std::make_shared<const io::RecordingReader>(rec), 0, false);
    int n = 0;
    while (auto f = src->next()) {
        CHECK(f->pixels == frames[static_cast<std::size_t>(n)].pixels);
        ++n;
    }
    CHECK(n == 4);
}

TEST_CASE("manifest validation") {
    io::RecordingManifest m;
    m.profile = "s5";
    m.frames = {{0, 0, "frames/0.hsr"}, {2, 1, "frames/2.hsr"}};
    m.configs = {{0, 2, {}}};
    CHECK_NOTHROW(io::validate(m));
    auto bad = m;
    bad.frames[1].frame_id = 0;
    CHECK_THROWS_AS(io::validate(bad), Error);
    bad = m;
    bad.configs = {{0, 1, {}}, {1, 2, {}}};
    CHECK_THROWS_AS(io::validate(bad), Error);
    CHECK_THROWS_AS(io::parse_manifest("{"), Error);
}
