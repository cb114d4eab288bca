#include <cstdio>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/io.hpp"

namespace hslf::io {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kPhantom = "phantom.json";

json rect_json(const Rect& r) { return json::array({r.x, r.y, r.width, r.height}); }

Rect rect_from(const json& j) {
    if (!j.is_array() || j.size() != 4)
        throw data_error("manifest: rect must be [x, y, width, height]");
    return Rect{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

std::string frame_file(std::uint64_t id) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "frames/%010llu.hsr", static_cast<unsigned long long>(id));
    return buf;
}

} // namespace

void validate(const RecordingManifest& m) {
    if (m.profile.empty())
        throw data_error("manifest: profile is empty");
    for (std::size_t i = 1; i < m.frames.size(); ++i)
        if (!(m.frames[i].frame_id > m.frames[i - 1].frame_id))
            throw data_error("manifest: frames[" + std::to_string(i) + "] id is not strictly increasing");
    for (std::size_t i = 0; i < m.configs.size(); ++i) {
        const auto& c = m.configs[i];
        const std::string path = "manifest: configs[" + std::to_string(i) + "]";
        if (c.first_frame > c.last_frame)
            throw data_error(path + " has first_frame after last_frame");
        if (m.frames.empty() || c.first_frame < m.frames.front().frame_id || c.last_frame > m.frames.back().frame_id)
            throw data_error(path + " references frames outside the recording");
        if (i > 0 && !(c.first_frame > m.configs[i - 1].last_frame))
            throw data_error(path + " overlaps the previous snapshot");
    }
    for (std::size_t i = 1; i < m.roi_events.size(); ++i)
        if (m.roi_events[i].frame_id < m.roi_events[i - 1].frame_id)
            throw data_error("manifest: roi_events[" + std::to_string(i) + "] is out of order");
}

std::string serialize_manifest(const RecordingManifest& m) {
    json j;
    j["format"] = "hslf-recording";
    j["version"] = 1;
    j["profile"] = m.profile;
    j["calibration"] = m.calibration_file;
    j["library"] = m.library_file;
    j["frames"] = json::array();
    for (const auto& f : m.frames)
        j["frames"].push_back({{"frame_id", f.frame_id}, {"timestamp_ms", f.timestamp_ms}, {"file", f.file}});
    j["configs"] = json::array();
    for (const auto& c : m.configs)
        j["configs"].push_back({{"first_frame", c.first_frame},
                                {"last_frame", c.last_frame},
                                {"config", json::parse(pipeline::serialize_config(c.config))}});
    j["roi_events"] = json::array();
    for (const auto& e : m.roi_events)
        j["roi_events"].push_back({{"frame_id", e.frame_id}, {"rect", e.rect ? rect_json(*e.rect) : json(nullptr)}});
    if (m.simulation) {
        const auto& s = *m.simulation;
        const auto& o = s.options;
        j["simulation"] = {{"phantom", s.phantom_file},
                           {"working_distance_cm", o.working_distance_cm},
                           {"integration_time_ms", o.exposure.integration_time_ms},
                           {"gain_dn_per_ms", o.exposure.gain_dn_per_ms},
                           {"illuminant_scale", o.illuminant_scale},
                           {"shot_scale", o.noise.shot_scale},
                           {"read_sigma_dn", o.noise.read_sigma_dn},
                           {"seed", o.noise.seed},
                           {"fps", o.fps}};
    }
    return j.dump(2);
}

RecordingManifest parse_manifest(std::string_view text) {
    RecordingManifest m;
    try {
        const json j = json::parse(text);
        if (j.value("format", std::string()) != "hslf-recording")
            throw data_error("manifest: not a recording manifest");
        if (j.at("version").get<int>() != 1)
            throw data_error("manifest: unsupported version " + std::to_string(j.at("version").get<int>()));
        m.profile = j.at("profile").get<std::string>();
        m.calibration_file = j.at("calibration").get<std::string>();
        m.library_file = j.at("library").get<std::string>();
        for (const auto& f : j.at("frames"))
            m.frames.push_back({f.at("frame_id").get<std::uint64_t>(), f.at("timestamp_ms").get<double>(),
                                f.at("file").get<std::string>()});
        for (const auto& c : j.at("configs"))
            m.configs.push_back({c.at("first_frame").get<std::uint64_t>(), c.at("last_frame").get<std::uint64_t>(),
                                 pipeline::parse_config(c.at("config").dump())});
        for (const auto& e : j.at("roi_events")) {
            RoiEvent ev;
            ev.frame_id = e.at("frame_id").get<std::uint64_t>();
            if (!e.at("rect").is_null())
                ev.rect = rect_from(e.at("rect"));
            m.roi_events.push_back(ev);
        }
        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            SimulationInfo info;
            info.phantom_file = s.at("phantom").get<std::string>();
            auto& o = info.options;
            o.working_distance_cm = s.at("working_distance_cm").get<double>();
            o.exposure.integration_time_ms = s.at("integration_time_ms").get<double>();
            o.exposure.gain_dn_per_ms = s.at("gain_dn_per_ms").get<double>();
            o.illuminant_scale = s.at("illuminant_scale").get<double>();
            o.noise.shot_scale = s.at("shot_scale").get<double>();
            o.noise.read_sigma_dn = s.at("read_sigma_dn").get<double>();
            o.noise.seed = s.at("seed").get<std::uint64_t>();
            o.fps = s.at("fps").get<double>();
            m.simulation = info;
        }
    } catch (const json::exception& e) {
        throw data_error(std::string("manifest: ") + e.what());
    }
    validate(m);
    return m;
}

// ---------------------------------------------------------------------------

RecordingWriter::RecordingWriter(fs::path dir, const calib::CalibrationSet& calibration,
                                 const oxy::ReferenceLibrary& library)
    : dir_(std::move(dir)) {
    std::error_code ec;
    if (fs::exists(dir_, ec) && !fs::is_empty(dir_, ec))
        throw usage_error("recording directory " + dir_.string() + " is not empty");
    fs::create_directories(dir_ / "frames", ec);
    if (ec)
        throw data_error("cannot create " + (dir_ / "frames").string() + ": " + ec.message());
    manifest_.profile = calibration.profile.name;
    calib::save_calibration(calibration, dir_ / manifest_.calibration_file);
    oxy::save_library(library, dir_ / manifest_.library_file);
}

void RecordingWriter::set_simulation(const sim::ScenePhantom& phantom, const sim::SimOptions& options) {
    sim::save_phantom(phantom, dir_ / kPhantom);
    manifest_.simulation = SimulationInfo{kPhantom, options};
}

void RecordingWriter::add_frame(const cube::RawSensorFrame& frame, const pipeline::PipelineConfig& cfg) {
    if (finished_)
        throw usage_error("recording already finished");
    if (!manifest_.frames.empty() && !(frame.frame_id > manifest_.frames.back().frame_id))
        throw usage_error("recording frame ids must increase");
    const std::string file = frame_file(frame.frame_id);
    write_frame(frame, dir_ / file);
    manifest_.frames.push_back({frame.frame_id, frame.timestamp_ms, file});

    auto& configs = manifest_.configs;
    const bool first = configs.empty();
    const bool roi_changed = first ? cfg.roi.has_value() : !(configs.back().config.roi == cfg.roi);
    if (roi_changed)
        manifest_.roi_events.push_back(
            {frame.frame_id, cfg.roi ? std::optional<Rect>(cfg.roi->rect) : std::optional<Rect>()});
    if (first || !(configs.back().config == cfg))
        configs.push_back({frame.frame_id, frame.frame_id, cfg});
    else
        configs.back().last_frame = frame.frame_id;
}

void RecordingWriter::finish() {
    if (finished_)
        return;
    validate(manifest_);
    write_text(dir_ / kManifest, serialize_manifest(manifest_));
    finished_ = true;
}

// ---------------------------------------------------------------------------

RecordingReader::RecordingReader(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_ / kManifest))
        throw data_error("no recording manifest in " + dir_.string());
    manifest_ = parse_manifest(read_text(dir_ / kManifest));
    calibration_ = calib::load_calibration(dir_ / manifest_.calibration_file);
    library_ = oxy::load_library(dir_ / manifest_.library_file);
    if (calibration_.profile.name != manifest_.profile)
        throw data_error("recording calibration is for profile '" + calibration_.profile.name + "', manifest says '" +
                         manifest_.profile + "'");
}

std::optional<sim::ScenePhantom> RecordingReader::phantom() const {
    if (!manifest_.simulation)
        return std::nullopt;
    return sim::load_phantom(dir_ / manifest_.simulation->phantom_file);
}

cube::RawSensorFrame RecordingReader::frame(std::size_t index) const {
    const FrameEntry& e = manifest_.frames.at(index);
    cube::RawSensorFrame f = read_frame(dir_ / e.file);
    if (f.frame_id != e.frame_id)
        throw data_error(e.file + ": frame id " + std::to_string(f.frame_id) + " does not match the manifest's " +
                         std::to_string(e.frame_id));
    f.timestamp_ms = e.timestamp_ms;
    return f;
}

const pipeline::PipelineConfig& RecordingReader::config_for(std::uint64_t id) const {
    for (const auto& c : manifest_.configs)
        if (id >= c.first_frame && id <= c.last_frame)
            return c.config;
    throw data_error("recording has no configuration for frame " + std::to_string(id));
}

std::unique_ptr<pipeline::FrameSource> make_recording_source(std::shared_ptr<const RecordingReader> reader,
                                                             double fps, bool loop) {
    if (reader->size() == 0)
        throw data_error("recording " + reader->dir().string() + " has no frames");
    auto gen = [reader, loop](std::uint64_t i) -> std::optional<cube::RawSensorFrame> {
        const std::size_t n = reader->size();
        if (!loop && i >= n)
            return std::nullopt;
        cube::RawSensorFrame f = reader->frame(i % n);
        const std::uint64_t cycle = i / n;
        if (cycle > 0) {
            const auto& frames = reader->manifest().frames;
            const std::uint64_t span = frames.back().frame_id + 1;
            f.frame_id += cycle * span;
            f.timestamp_ms += static_cast<double>(cycle) * (frames.back().timestamp_ms + 1.0);
        }
        return f;
    };
    return std::make_unique<pipeline::PacedSource>("recording:" + reader->dir().filename().string(), std::move(gen),
                                                   fps);
}

void replay(const RecordingReader& reader, const std::function<void(const pipeline::ProcessedFrame&)>& visit) {
    if (reader.size() == 0)
        return;
    std::optional<pipeline::Processor> proc;
    for (std::size_t i = 0; i < reader.size(); ++i) {
        const cube::RawSensorFrame f = reader.frame(i);
        const auto& cfg = reader.config_for(f.frame_id);
        if (!proc)
            proc.emplace(reader.calibration(), reader.library(), cfg);
        else if (!(proc->config() == cfg))
            proc->configure(cfg);
        visit(proc->process(f));
    }
}

} // namespace hslf::io
