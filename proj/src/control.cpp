#include <cmath>
#include <cstring>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/service.hpp"

namespace hslf::service {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double number(const json& j, const char* key) {
    if (!j.contains(key))
        throw usage_error(std::string("missing field '") + key + "'");
    if (!j[key].is_number())
        throw usage_error(std::string("field '") + key + "' must be a number");
    return j[key].get<double>();
}

std::string text(const json& j, const char* key) {
    if (!j.contains(key))
        throw usage_error(std::string("missing field '") + key + "'");
    if (!j[key].is_string())
        throw usage_error(std::string("field '") + key + "' must be a string");
    return j[key].get<std::string>();
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

std::string_view command_type(const Command& c) {
    return std::visit(overloaded{[](const SetRoi&) { return "set_roi"; },
                                 [](const SetWorkingDistance&) { return "set_working_distance"; },
                                 [](const SetThreshold&) { return "set_threshold"; },
                                 [](const SetColormap&) { return "set_colormap"; },
                                 [](const SetOverlayMode&) { return "set_overlay_mode"; },
                                 [](const Pause&) { return "pause"; }, [](const Resume&) { return "resume"; },
                                 [](const SelectSource&) { return "select_source"; },
                                 [](const RequestStats&) { return "request_stats"; }},
                      c);
}

ControlMessage parse_control(std::string_view json_text, std::optional<std::uint64_t>* id_out) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded())
        throw usage_error("message is not valid JSON");
    if (!j.is_object())
        throw usage_error("message must be a JSON object");
    if (!j.contains("id") || !j["id"].is_number_unsigned())
        throw usage_error("message needs a non-negative integer 'id'");
    ControlMessage m;
    m.id = j["id"].get<std::uint64_t>();
    if (id_out)
        *id_out = m.id;
    const std::string type = text(j, "type");
    if (type == "set_roi") {
        if (!j.contains("rect") || !j["rect"].is_array() || j["rect"].size() != 4)
            throw usage_error("set_roi needs 'rect': [x, y, width, height]");
        for (const auto& v : j["rect"])
            if (!v.is_number_integer())
                throw usage_error("set_roi rect entries must be integers");
        const auto& r = j["rect"];
        m.command = SetRoi{Rect{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()}};
    } else if (type == "set_working_distance") {
        m.command = SetWorkingDistance{number(j, "cm")};
    } else if (type == "set_threshold") {
        m.command = SetThreshold{number(j, "rad")};
    } else if (type == "set_colormap") {
        SetColormap c{text(j, "name"), oxy::kDefaultAlpha};
        if (j.contains("alpha"))
            c.alpha = number(j, "alpha");
        m.command = c;
    } else if (type == "set_overlay_mode") {
        m.command = SetOverlayMode{pipeline::overlay_mode_from(text(j, "mode"))};
    } else if (type == "pause") {
        m.command = Pause{};
    } else if (type == "resume") {
        m.command = Resume{};
    } else if (type == "select_source") {
        SelectSource s;
        if (j.contains("scenario"))
            s.scenario = text(j, "scenario");
        if (j.contains("recording"))
            s.recording = text(j, "recording");
        if (s.scenario.empty() == s.recording.empty())
            throw usage_error("select_source needs exactly one of 'scenario' or 'recording'");
        m.command = s;
    } else if (type == "request_stats") {
        m.command = RequestStats{};
    } else {
        throw usage_error("unknown message type '" + type + "'");
    }
    return m;
}

std::string serialize_control(const ControlMessage& m) {
    json j = {{"id", m.id}, {"type", command_type(m.command)}};
    std::visit(overloaded{[&](const SetRoi& c) {
                              j["rect"] = {c.rect.x, c.rect.y, c.rect.width, c.rect.height};
                          },
                          [&](const SetWorkingDistance& c) { j["cm"] = c.cm; },
                          [&](const SetThreshold& c) { j["rad"] = c.rad; },
                          [&](const SetColormap& c) {
                              j["name"] = c.name;
                              j["alpha"] = c.alpha;
                          },
                          [&](const SetOverlayMode& c) { j["mode"] = pipeline::to_string(c.mode); },
                          [&](const SelectSource& c) {
                              if (!c.scenario.empty())
                                  j["scenario"] = c.scenario;
                              else
                                  j["recording"] = c.recording;
                          },
                          [](const auto&) {}},
               m.command);
    return j.dump();
}

std::string ack_json(std::uint64_t id, std::uint64_t frame_id) {
    return json{{"type", "ack"}, {"id", id}, {"frame_id", frame_id}}.dump();
}

std::string nack_json(std::optional<std::uint64_t> id, std::string_view reason) {
    return json{{"type", "nack"}, {"id", id ? json(*id) : json(nullptr)}, {"reason", reason}}.dump();
}

std::string event_json(std::string_view event, std::uint64_t frame_id, std::string_view detail) {
    json j = {{"type", "event"}, {"event", event}, {"frame_id", frame_id}};
    if (!detail.empty())
        j["detail"] = detail;
    return j.dump();
}

std::string_view to_string(Encoding e) { return e == Encoding::png ? "png" : "rgba"; }

Encoding encoding_from(std::string_view name) {
    if (name == "png")
        return Encoding::png;
    if (name == "rgba")
        return Encoding::rgba;
    throw usage_error("unknown encoding '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::uint8_t* p, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        p[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template <typename T>
T get(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace

std::array<std::uint8_t, kFrameHeaderSize> encode_header(const FrameHeader& h) {
    std::array<std::uint8_t, kFrameHeaderSize> out{};
    std::memcpy(out.data(), "OXF1", 4);
    put(out.data() + 4, h.version);
    put(out.data() + 6, static_cast<std::uint16_t>(h.encoding));
    put(out.data() + 8, h.frame_id);
    put(out.data() + 16, h.width);
    put(out.data() + 20, h.height);
    put(out.data() + 24, h.payload_length);
    put(out.data() + 28, h.reserved);
    return out;
}

FrameHeader decode_header(std::span<const std::uint8_t> b) {
    if (b.size() < kFrameHeaderSize)
        throw data_error("OXF1: header needs 32 bytes, got " + std::to_string(b.size()));
    if (std::memcmp(b.data(), "OXF1", 4) != 0)
        throw data_error("OXF1: bad magic");
    FrameHeader h;
    h.version = get<std::uint16_t>(b.data() + 4);
    if ((h.version >> 8) != 1)
        throw data_error("OXF1: unsupported version " + std::to_string(h.version >> 8) + "." +
                         std::to_string(h.version & 0xff));
    const auto enc = get<std::uint16_t>(b.data() + 6);
    if (enc > 1)
        throw data_error("OXF1: unknown encoding " + std::to_string(enc));
    h.encoding = static_cast<Encoding>(enc);
    h.frame_id = get<std::uint64_t>(b.data() + 8);
    h.width = get<std::uint32_t>(b.data() + 16);
    h.height = get<std::uint32_t>(b.data() + 20);
    h.payload_length = get<std::uint32_t>(b.data() + 24);
    h.reserved = get<std::uint32_t>(b.data() + 28);
    return h;
}

std::string frame_json(const pipeline::ProcessedFrame& f, Encoding encoding) {
    const auto& t = f.timings;
    json j = {{"type", "frame"},
              {"frame_id", f.frame_id},
              {"width", f.display.width},
              {"height", f.display.height},
              {"encoding", to_string(encoding)},
              {"mode", pipeline::to_string(f.config.overlay_mode)},
              {"warnings", f.warnings},
              {"uncalibrated", f.uncalibrated},
              {"failed", f.failed},
              {"timings",
               {{"reflectance_cube_ms", t.reflectance_cube_ms},
                {"rgb_image_ms", t.rgb_image_ms},
                {"oxy_correlation_ms", t.oxy_correlation_ms},
                {"oxy_image_ms", t.oxy_image_ms},
                {"overhead_ms", t.overhead_ms},
                {"total_ms", t.total_ms}}},
              {"histogram", f.summary.histogram},
              {"tissue_pixels", f.summary.tissue_pixels},
              {"mean_so2", nullable(f.summary.mean_so2)},
              {"colormap", f.config.colormap}};
    if (f.failed)
        j["error"] = f.error;
    return j.dump();
}

} // namespace hslf::service
