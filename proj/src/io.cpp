#include "hslf/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "hslf/error.hpp"

namespace hslf::io {

using nlohmann::json;

namespace {

class Writer {
public:
    explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

    void magic(const char (&m)[5]) { out_.insert(out_.end(), m, m + 4); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }

    Bytes take() { return std::move(out_); }

private:
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> in, std::string format) : in_(in), format_(std::move(format)) {}

    void magic(const char (&m)[5]) {
        need(4);
        if (std::memcmp(in_.data(), m, 4) != 0)
            throw data_error(format_ + ": bad magic, expected \"" + std::string(m) + "\"");
        pos_ = 4;
    }
    void version() {
        const std::uint16_t v = u16();
        if ((v >> 8) != (kFormatVersion >> 8))
            throw data_error(format_ + ": unsupported version " + std::to_string(v >> 8) + "." +
                             std::to_string(v & 0xff));
    }
    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint16_t u16() { return le<std::uint16_t>(); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }

    /// Checks the remaining length against the header before any payload is read.
    void expect_total(std::uint64_t total) {
        if (in_.size() != total)
            throw data_error(format_ + ": length mismatch, expected " + std::to_string(total) + " bytes, got " +
                             std::to_string(in_.size()));
    }
    std::size_t pos() const { return pos_; }
    const std::uint8_t* here() const { return in_.data() + pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    void need(std::size_t n) {
        if (pos_ + n > in_.size())
            throw data_error(format_ + ": truncated header, got " + std::to_string(in_.size()) + " bytes");
    }
    template <typename T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v = static_cast<T>(v | static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i)));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> in_;
    std::string format_;
    std::size_t pos_ = 0;
};

} // namespace

// ---------------------------------------------------------------------------

Bytes encode_cube(const cube::SpectralCube& c) {
    const std::size_t n = c.plane_size();
    const std::size_t mask_bytes = (n + 7) / 8;
    Writer w(19 + c.planes() * (4 + n * 4 + mask_bytes));
    w.magic("HSC1");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(c.width()));
    w.u32(static_cast<std::uint32_t>(c.height()));
    w.u32(static_cast<std::uint32_t>(c.planes()));
    w.u8(static_cast<std::uint8_t>(c.stage()));
    for (double nm : c.wavelengths())
        w.f32(static_cast<float>(nm));
    for (float v : c.values())
        w.f32(v);
    for (int p = 0; p < c.planes(); ++p) {
        const std::uint8_t* ok = c.valid_plane(p);
        for (std::size_t byte = 0; byte < mask_bytes; ++byte) {
            std::uint8_t bits = 0;
            for (std::size_t b = 0; b < 8 && byte * 8 + b < n; ++b)
                bits |= static_cast<std::uint8_t>((ok[byte * 8 + b] ? 1 : 0) << b);
            w.u8(bits);
        }
    }
    return w.take();
}

cube::SpectralCube decode_cube(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "HSC1");
    r.magic("HSC1");
    r.version();
    const std::uint32_t width = r.u32(), height = r.u32(), planes = r.u32();
    const std::uint8_t stage = r.u8();
    if (stage > 3)
        throw data_error("HSC1: unknown stage tag " + std::to_string(stage));
    if (width > 1u << 16 || height > 1u << 16 || planes > 1u << 16)
        throw data_error("HSC1: implausible dimensions");
    const std::uint64_t n = static_cast<std::uint64_t>(width) * height;
    const std::uint64_t mask_bytes = (n + 7) / 8;
    r.expect_total(r.pos() + planes * (4 + n * 4 + mask_bytes));

    cube::SpectralCube c(static_cast<int>(width), static_cast<int>(height), static_cast<int>(planes),
                         static_cast<cube::Stage>(stage));
    std::vector<double> wl(planes);
    for (auto& nm : wl)
        nm = r.f32();
    c.set_wavelengths(std::move(wl));
    for (float& v : c.values())
        v = r.f32();
    for (std::uint32_t p = 0; p < planes; ++p) {
        std::uint8_t* ok = c.valid_plane(static_cast<int>(p));
        const std::uint8_t* bits = r.here();
        for (std::uint64_t i = 0; i < n; ++i)
            ok[i] = (bits[i / 8] >> (i % 8)) & 1u;
        r.skip(mask_bytes);
    }
    return c;
}

Bytes encode_frame(const cube::RawSensorFrame& f) {
    cube::validate(f);
    Writer w(30 + f.pixels.size() * 2);
    w.magic("HSR1");
    w.u16(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(f.width));
    w.u32(static_cast<std::uint32_t>(f.height));
    w.u16(static_cast<std::uint16_t>(f.bit_depth));
    w.u16(0);
    w.u64(f.frame_id);
    w.f32(f.integration_time_ms);
    for (std::uint16_t p : f.pixels)
        w.u16(p);
    return w.take();
}

cube::RawSensorFrame decode_frame(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "HSR1");
    r.magic("HSR1");
    r.version();
    const std::uint32_t width = r.u32(), height = r.u32();
    const std::uint16_t depth = r.u16();
    r.u16();
    const std::uint64_t id = r.u64();
    const float t = r.f32();
    if (width == 0 || height == 0 || width > 1u << 16 || height > 1u << 16)
        throw data_error("HSR1: implausible dimensions " + std::to_string(width) + "x" + std::to_string(height));
    r.expect_total(r.pos() + static_cast<std::uint64_t>(width) * height * 2);

    cube::RawSensorFrame f(static_cast<int>(width), static_cast<int>(height), depth);
    f.frame_id = id;
    f.integration_time_ms = t;
    for (auto& p : f.pixels)
        p = r.u16();
    cube::validate(f);
    return f;
}

// ---------------------------------------------------------------------------

Bytes read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw data_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw data_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw data_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_cube(const cube::SpectralCube& c, const std::filesystem::path& path) { write_bytes(path, encode_cube(c)); }
cube::SpectralCube read_cube(const std::filesystem::path& path) { return decode_cube(read_bytes(path)); }
void write_frame(const cube::RawSensorFrame& f, const std::filesystem::path& path) { write_bytes(path, encode_frame(f)); }
cube::RawSensorFrame read_frame(const std::filesystem::path& path) { return decode_frame(read_bytes(path)); }

// ---------------------------------------------------------------------------

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
    std::filesystem::path p = base;
    p += suffix;
    return p;
}

} // namespace

void save_white_reference(const reflect::WhiteReference& white, const std::filesystem::path& base) {
    if (white.spatial) {
        write_cube(*white.spatial, with_suffix(base, ".hsc"));
    } else {
        cube::SpectralCube c(1, 1, static_cast<int>(white.values.size()), cube::Stage::uniform);
        c.set_wavelengths(white.wavelengths_nm);
        for (std::size_t b = 0; b < white.values.size(); ++b) {
            c.plane(static_cast<int>(b))[0] = white.values[b];
            c.valid_plane(static_cast<int>(b))[0] = white.valid[b];
        }
        write_cube(c, with_suffix(base, ".hsc"));
    }
    const Rect& r = white.roi.rect;
    json j = {{"roi", {r.x, r.y, r.width, r.height}},
              {"roi_frame_id", white.roi.frame_id},
              {"gauze_reflectance_factor", white.gauze_reflectance_factor},
              {"frame_id", white.frame_id},
              {"timestamp_ms", white.timestamp_ms},
              {"spatial", static_cast<bool>(white.spatial)}};
    if (white.spatial) {
        json valid = json::array();
        for (auto v : white.valid)
            valid.push_back(v);
        j["valid"] = valid;
    }
    write_text(with_suffix(base, ".json"), j.dump(2));
}

reflect::WhiteReference load_white_reference(const std::filesystem::path& base) {
    cube::SpectralCube c = read_cube(with_suffix(base, ".hsc"));
    if (c.stage() != cube::Stage::uniform)
        throw data_error("white reference: cube must have the uniform stage tag");
    json j;
    try {
        j = json::parse(read_text(with_suffix(base, ".json")));
    } catch (const json::exception& e) {
        throw data_error(std::string("white reference sidecar: ") + e.what());
    }
    reflect::WhiteReference w;
    try {
        const auto& r = j.at("roi");
        w.roi.rect = Rect{r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
        w.roi.frame_id = j.at("roi_frame_id").get<std::uint64_t>();
        w.gauze_reflectance_factor = j.at("gauze_reflectance_factor").get<double>();
        w.frame_id = j.at("frame_id").get<std::uint64_t>();
        w.timestamp_ms = j.at("timestamp_ms").get<double>();
        w.wavelengths_nm = c.wavelengths();
        const std::size_t planes = static_cast<std::size_t>(c.planes());
        if (j.at("spatial").get<bool>()) {
            w.values.assign(planes, 0.0f);
            w.valid = j.at("valid").get<std::vector<std::uint8_t>>();
            if (w.valid.size() != planes)
                throw data_error("white reference sidecar: valid has the wrong length");
            w.spatial = std::make_shared<const cube::SpectralCube>(std::move(c));
        } else {
            if (c.width() != 1 || c.height() != 1)
                throw data_error("white reference: broadcast spectrum must be a 1x1 cube");
            for (std::size_t b = 0; b < planes; ++b) {
                w.values.push_back(c.plane(static_cast<int>(b))[0]);
                w.valid.push_back(c.valid_plane(static_cast<int>(b))[0]);
            }
        }
    } catch (const json::exception& e) {
        throw data_error(std::string("white reference sidecar: ") + e.what());
    }
    return w;
}

} // namespace hslf::io
