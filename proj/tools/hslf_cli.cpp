#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/io.hpp"
#include "hslf/service.hpp"
#include "hslf/sim.hpp"

using namespace hslf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct Inputs {
    std::string profile = "s5";
    std::string calib_path;
    std::string library_path;
    int levels = oxy::kDefaultLevels;
};

void add_inputs(CLI::App* app, Inputs& in) {
    app->add_option("--profile", in.profile, "Camera profile (s5 or x20)");
    app->add_option("--calib", in.calib_path, "Calibration file (default: synthesized for the profile)");
    app->add_option("--library", in.library_path, "Reference library file (default: synthetic)");
    app->add_option("--levels", in.levels, "Levels of the synthetic library")->check(CLI::Range(2, 1001));
}

calib::CalibrationSet load_calib(const Inputs& in) {
    if (!in.calib_path.empty()) {
        auto c = calib::load_calibration(in.calib_path);
        if (c.profile.name != calib::profile_by_name(in.profile).name)
            throw usage_error("calibration " + in.calib_path + " is for profile '" + c.profile.name + "', not '" +
                              in.profile + "'");
        return c;
    }
    return calib::synthesize_default_calibration(calib::profile_by_name(in.profile),
                                                 calib::default_calibration_distances());
}

oxy::ReferenceLibrary load_lib(const Inputs& in) {
    if (!in.library_path.empty())
        return oxy::load_library(in.library_path);
    return oxy::build_synthetic_library(in.levels, oxy::library_grid());
}

sim::ScenePhantom load_phantom_arg(const std::string& name) {
    if (fs::exists(name))
        return sim::load_phantom(name);
    return sim::builtin_phantom(name);
}

Rect parse_rect(const std::string& text) {
    Rect r;
    char c1, c2, c3;
    std::istringstream is(text);
    if (!(is >> r.x >> c1 >> r.y >> c2 >> r.width >> c3 >> r.height) || c1 != ',' || c2 != ',' || c3 != ',')
        throw usage_error("roi must be x,y,width,height");
    return r;
}

json timings_json(const pipeline::StageTimings& t) {
    return {{"reflectance_cube_ms", t.reflectance_cube_ms}, {"rgb_image_ms", t.rgb_image_ms},
            {"oxy_correlation_ms", t.oxy_correlation_ms},   {"oxy_image_ms", t.oxy_image_ms},
            {"overhead_ms", t.overhead_ms},                 {"total_ms", t.total_ms}};
}

void emit(bool as_json, const json& j, const std::string& text) {
    if (as_json)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << text;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    Inputs in;
    std::string phantom = "wedge";
    std::uint64_t frames = 1;
    std::uint64_t seed = 0;
    double shot_scale = 0.0;
    double read_sigma = 0.0;
    double distance = 56.0;
    double illuminant_scale = 1.0;
    double integration_ms = 0.0;
    double fps = 15.0;
    std::string out;
    bool json = false;
};

int run_simulate(const SimulateArgs& a) {
    const auto calibration = load_calib(a.in);
    const auto library = load_lib(a.in);
    const auto phantom = load_phantom_arg(a.phantom);
    sim::SimOptions opt = sim::default_sim_options(calibration.profile);
    opt.working_distance_cm = a.distance;
    opt.illuminant_scale = a.illuminant_scale;
    opt.noise.shot_scale = a.shot_scale;
    opt.noise.read_sigma_dn = a.read_sigma;
    opt.noise.seed = a.seed;
    opt.fps = a.fps;
    if (a.integration_ms > 0.0)
        opt.exposure.integration_time_ms = a.integration_ms;
    const sim::Simulator simulator(calibration, phantom, library, opt);

    pipeline::PipelineConfig cfg;
    cfg.profile = calibration.profile.name;
    cfg.working_distance_cm = a.distance;
    if (const auto roi = simulator.white_roi())
        cfg.roi = reflect::RegionOfInterest{*roi, 0};
    pipeline::validate(cfg, &calibration.profile);

    io::RecordingWriter writer(a.out, calibration, library);
    writer.set_simulation(phantom, opt);
    for (std::uint64_t i = 0; i < a.frames; ++i)
        writer.add_frame(simulator.frame(i), cfg);
    writer.finish();

    json j = {{"command", "simulate"},  {"recording", a.out},   {"profile", cfg.profile},
              {"phantom", phantom.name}, {"frames", a.frames}, {"seed", a.seed},
              {"white_roi", cfg.roi ? json::array({cfg.roi->rect.x, cfg.roi->rect.y, cfg.roi->rect.width,
                                                   cfg.roi->rect.height})
                                    : json(nullptr)}};
    std::ostringstream t;
    t << "wrote " << a.frames << " frame(s) of '" << phantom.name << "' (" << cfg.profile << ") to " << a.out << "\n";
    emit(a.json, j, t.str());
    return 0;
}

// ---------------------------------------------------------------------------

struct ProcessArgs {
    Inputs in;
    std::string recording;
    std::string frame;
    std::string out;
    std::string roi;
    double distance = -1.0;
    double threshold = -1.0;
    std::string mode;
    std::string colormap;
    bool json = false;
};

int run_process(const ProcessArgs& a) {
    if (a.recording.empty() == a.frame.empty())
        throw usage_error("process needs exactly one of --recording or --frame");
    if (!a.out.empty())
        fs::create_directories(a.out);

    std::unique_ptr<io::RecordingReader> reader;
    std::optional<sim::ScenePhantom> phantom;
    std::vector<cube::RawSensorFrame> single;
    calib::CalibrationSet calibration;
    oxy::ReferenceLibrary library;
    if (!a.recording.empty()) {
        reader = std::make_unique<io::RecordingReader>(a.recording);
        phantom = reader->phantom();
        calibration = reader->calibration();
        library = reader->library();
    } else {
        single.push_back(io::read_frame(a.frame));
        calibration = load_calib(a.in);
        library = load_lib(a.in);
    }

    auto adjust = [&](pipeline::PipelineConfig cfg) {
        cfg.profile = calibration.profile.name;
        if (!a.roi.empty())
            cfg.roi = reflect::RegionOfInterest{parse_rect(a.roi), 0};
        if (a.distance > 0.0)
            cfg.working_distance_cm = a.distance;
        if (a.threshold >= 0.0)
            cfg.sam_threshold = a.threshold;
        if (!a.mode.empty())
            cfg.overlay_mode = pipeline::overlay_mode_from(a.mode);
        if (!a.colormap.empty())
            cfg.colormap = a.colormap;
        return cfg;
    };

    json frames = json::array();
    std::ostringstream text;
    std::size_t total_tissue = 0, total_correct = 0;
    double worst_boundary = 0.0;
    bool any_boundary = false;
    bool any_failed = false;

    std::optional<pipeline::Processor> proc;
    const std::size_t n = reader ? reader->size() : single.size();
    for (std::size_t i = 0; i < n; ++i) {
        const cube::RawSensorFrame f = reader ? reader->frame(i) : single[i];
        const pipeline::PipelineConfig cfg = adjust(reader ? reader->config_for(f.frame_id) : pipeline::PipelineConfig{});
        if (!proc)
            proc.emplace(calibration, library, cfg);
        else if (!(proc->config() == cfg))
            proc->configure(cfg);
        const pipeline::ProcessedFrame out = proc->process(f);

        json fj = {{"frame_id", out.frame_id},
                   {"failed", out.failed},
                   {"uncalibrated", out.uncalibrated},
                   {"tissue_pixels", out.summary.tissue_pixels},
                   {"mean_so2", std::isfinite(out.summary.mean_so2) ? json(out.summary.mean_so2) : json(nullptr)},
                   {"histogram", out.summary.histogram},
                   {"warnings", out.warnings},
                   {"timings", timings_json(out.timings)}};
        text << "frame " << out.frame_id << ": ";
        if (out.failed) {
            any_failed = true;
            fj["error"] = out.error;
            text << "failed: " << out.error << "\n";
            frames.push_back(fj);
            continue;
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "tissue %zu px, mean SO2 %.3f, %.1f ms", out.summary.tissue_pixels,
                      out.summary.mean_so2, out.timings.total_ms);
        text << buf;
        if (phantom && !out.uncalibrated) {
            const auto truth = sim::evaluate_phantom(*phantom, calibration.profile.subimage_width,
                                                     calibration.profile.subimage_height, out.frame_id);
            const auto score = sim::score_recovery(truth, out.classification.so2, library);
            total_tissue += score.tissue_pixels;
            total_correct += score.correct;
            fj["accuracy"] = score.accuracy;
            fj["boundary_error_px"] = score.boundary_error_px;
            std::snprintf(buf, sizeof buf, ", accuracy %.4f%%", 100.0 * score.accuracy);
            text << buf;
            for (double e : score.boundary_error_px) {
                any_boundary = true;
                worst_boundary = std::max(worst_boundary, e);
                std::snprintf(buf, sizeof buf, ", boundary error %.1f px", e);
                text << buf;
            }
        }
        for (const auto& w : out.warnings)
            text << " [" << w << "]";
        text << "\n";
        if (!a.out.empty()) {
            char name[64];
            std::snprintf(name, sizeof name, "%010llu", static_cast<unsigned long long>(out.frame_id));
            io::export_png(out.rgb, fs::path(a.out) / (std::string(name) + "_rgb.png"));
            io::export_png(out.display, fs::path(a.out) / (std::string(name) + "_" +
                                                           std::string(pipeline::to_string(cfg.overlay_mode)) + ".png"));
        }
        frames.push_back(fj);
    }

    json j = {{"command", "process"}, {"frames", frames}};
    if (total_tissue > 0) {
        const double acc = static_cast<double>(total_correct) / total_tissue;
        j["accuracy"] = acc;
        char buf[96];
        std::snprintf(buf, sizeof buf, "overall accuracy %.4f%% over %zu tissue pixels\n", 100.0 * acc, total_tissue);
        text << buf;
    }
    if (any_boundary) {
        j["max_boundary_error_px"] = worst_boundary;
        text << "max boundary error " << worst_boundary << " px\n";
    }
    emit(a.json, j, text.str());
    return any_failed ? 3 : 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string profile = "s5";
    pipeline::BenchmarkOptions options;
    bool json = false;
};

int run_bench(const BenchArgs& a) {
    const auto report = pipeline::benchmark(calib::profile_by_name(a.profile), a.options);
    if (a.json)
        std::cout << pipeline::report_json(report) << "\n";
    else
        std::cout << pipeline::format_report(report);
    return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
    Inputs in;
    std::string scenario = "wedge";
    std::string recording;
    std::string recordings_dir;
    std::string bind = "127.0.0.1";
    unsigned short port = 8080;
    std::string static_dir;
    std::string encoding = "png";
    double duration = 0.0;
    double fps = 0.0;
    bool json = false;
};

std::unique_ptr<pipeline::FrameSource> scenario_source(const calib::CalibrationSet& calibration,
                                                       const oxy::ReferenceLibrary& library, const std::string& name,
                                                       double fps) {
    auto simulator = std::make_shared<const sim::Simulator>(calibration, load_phantom_arg(name), library,
                                                            sim::default_sim_options(calibration.profile));
    return std::make_unique<pipeline::PacedSource>(
        "scenario:" + name, [simulator](std::uint64_t i) -> std::optional<cube::RawSensorFrame> {
            return simulator->frame(i);
        },
        fps);
}

int run_serve(const ServeArgs& a) {
    std::shared_ptr<const io::RecordingReader> reader;
    calib::CalibrationSet calibration;
    oxy::ReferenceLibrary library;
    pipeline::PipelineConfig cfg;
    if (!a.recording.empty()) {
        reader = std::make_shared<const io::RecordingReader>(a.recording);
        calibration = reader->calibration();
        library = reader->library();
        if (reader->size() > 0)
            cfg = reader->config_for(reader->manifest().frames.front().frame_id);
    } else {
        calibration = load_calib(a.in);
        library = load_lib(a.in);
    }
    cfg.profile = calibration.profile.name;
    const double fps = a.fps > 0.0 ? a.fps : cfg.target_fps;

    std::unique_ptr<pipeline::FrameSource> source;
    if (reader) {
        source = io::make_recording_source(reader, fps, true);
    } else {
        source = scenario_source(calibration, library, a.scenario, fps);
        const sim::Simulator probe(calibration, load_phantom_arg(a.scenario), library,
                                   sim::default_sim_options(calibration.profile));
        if (const auto roi = probe.white_roi())
            cfg.roi = reflect::RegionOfInterest{*roi, 0};
    }

    const std::string recordings_dir = a.recordings_dir;
    service::SourceFactory factory = [calibration, library, fps,
                                      recordings_dir](const service::SelectSource& s) -> std::unique_ptr<pipeline::FrameSource> {
        if (!s.scenario.empty()) {
            const auto names = sim::builtin_phantom_names();
            if (std::find(names.begin(), names.end(), s.scenario) == names.end())
                throw usage_error("unknown scenario '" + s.scenario + "'");
            return scenario_source(calibration, library, s.scenario, fps);
        }
        if (recordings_dir.empty())
            throw usage_error("no recordings directory configured");
        if (s.recording.find('/') != std::string::npos || s.recording.find("..") != std::string::npos)
            throw usage_error("invalid recording id '" + s.recording + "'");
        auto r = std::make_shared<const io::RecordingReader>(fs::path(recordings_dir) / s.recording);
        if (r->calibration().profile.name != calibration.profile.name)
            throw usage_error("recording '" + s.recording + "' is for another profile");
        return io::make_recording_source(r, fps, true);
    };

    service::LivePipeline live(pipeline::Processor(calibration, library, cfg), std::move(source), factory);
    service::ServerOptions opts;
    opts.address = a.bind;
    opts.port = a.port;
    opts.static_dir = a.static_dir;
    opts.default_encoding = service::encoding_from(a.encoding);
    service::Server server(live, opts);
    const unsigned short port = server.start();
    live.start();

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    if (a.json)
        std::cout << json{{"command", "serve"}, {"address", a.bind}, {"port", port}, {"source", live.source_name()}}.dump()
                  << std::endl;
    else
        std::cout << "serving " << live.source_name() << " on ws://" << a.bind << ":" << port << "/stream" << std::endl;

    const auto start = std::chrono::steady_clock::now();
    while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (a.duration > 0.0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.duration)
            break;
    }
    server.stop();
    live.stop();
    const std::string stats = live.stats_json();
    if (a.json)
        std::cout << stats << "\n";
    else
        std::cout << "stopped: " << stats << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct CalibGenArgs {
    std::string profile = "s5";
    std::vector<double> distances;
    std::string out;
    bool json = false;
};

int run_calib_gen(const CalibGenArgs& a) {
    const auto distances = a.distances.empty() ? calib::default_calibration_distances() : a.distances;
    const auto c = calib::synthesize_default_calibration(calib::profile_by_name(a.profile), distances);
    calib::save_calibration(c, a.out);
    json j = {{"command", "calib gen"}, {"profile", c.profile.name}, {"distances_cm", distances}, {"out", a.out}};
    std::ostringstream t;
    t << "wrote " << c.profile.name << " calibration at " << distances.size() << " distance(s) to " << a.out << "\n";
    emit(a.json, j, t.str());
    return 0;
}

struct LibraryGenArgs {
    int levels = oxy::kDefaultLevels;
    std::string out;
    bool json = false;
};

int run_library_gen(const LibraryGenArgs& a) {
    const auto lib = oxy::build_synthetic_library(a.levels, oxy::library_grid());
    oxy::save_library(lib, a.out);
    json j = {{"command", "library gen"},
              {"levels", lib.size()},
              {"bands", lib.wavelengths_nm.size()},
              {"out", a.out}};
    std::ostringstream t;
    t << "wrote " << lib.size() << "-level library on " << lib.wavelengths_nm.size() << " bands to " << a.out << "\n";
    emit(a.json, j, t.str());
    return 0;
}

struct PhantomGenArgs {
    std::string name = "wedge";
    std::string out;
    bool json = false;
};

int run_phantom_gen(const PhantomGenArgs& a) {
    const auto phantom = sim::builtin_phantom(a.name);
    sim::save_phantom(phantom, a.out);
    json j = {{"command", "phantom gen"}, {"name", phantom.name}, {"out", a.out}};
    emit(a.json, j, "wrote phantom '" + phantom.name + "' to " + a.out + "\n");
    return 0;
}

int exit_code(ErrorKind k) {
    switch (k) {
    case ErrorKind::usage:
        return 2;
    case ErrorKind::data:
        return 3;
    case ErrorKind::internal:
        return 4;
    }
    return 4;
}

std::string_view kind_name(ErrorKind k) {
    switch (k) {
    case ErrorKind::usage:
        return "usage";
    case ErrorKind::data:
        return "data";
    case ErrorKind::internal:
        return "internal";
    }
    return "internal";
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperspectral light-field oxygenation pipeline"};
    app.require_subcommand(1);

    SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "Render a phantom into an HSR1 recording");
    add_inputs(simulate, sa.in);
    simulate->add_option("--phantom", sa.phantom, "Built-in phantom (wedge, resection, props) or phantom JSON file");
    simulate->add_option("--frames", sa.frames, "Number of frames");
    simulate->add_option("--seed", sa.seed, "Noise seed");
    simulate->add_option("--shot-scale", sa.shot_scale, "Shot-noise variance per DN (0 disables)");
    simulate->add_option("--read-sigma", sa.read_sigma, "Read-noise sigma in DN (0 disables)");
    simulate->add_option("--distance", sa.distance, "Working distance in cm");
    simulate->add_option("--illuminant-scale", sa.illuminant_scale, "Illuminant intensity factor");
    simulate->add_option("--integration-ms", sa.integration_ms, "Integration time in ms (default per profile)");
    simulate->add_option("--fps", sa.fps, "Frame rate used for timestamps");
    simulate->add_option("--out", sa.out, "Output recording directory")->required();
    simulate->add_flag("--json", sa.json, "JSON report");

    ProcessArgs pa;
    auto* process = app.add_subcommand("process", "Process a recording or frame into overlays and SO2 statistics");
    add_inputs(process, pa.in);
    process->add_option("--recording", pa.recording, "Recording directory");
    process->add_option("--frame", pa.frame, "Single HSR1 frame file");
    process->add_option("--out", pa.out, "Directory for PNG outputs");
    process->add_option("--roi", pa.roi, "White reference roi x,y,width,height");
    process->add_option("--distance", pa.distance, "Working distance in cm");
    process->add_option("--threshold", pa.threshold, "SAM threshold in radians");
    process->add_option("--mode", pa.mode, "Overlay mode (rgb, overlay, composite, so2, similarity)");
    process->add_option("--colormap", pa.colormap, "Colormap (oxy or gray)");
    process->add_flag("--json", pa.json, "JSON report");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Per-stage processing time benchmark");
    bench->add_option("--profile", ba.profile, "Camera profile (s5 or x20)");
    bench->add_option("--levels", ba.options.levels, "Library levels")->check(CLI::Range(1, 1001));
    bench->add_option("--repetitions", ba.options.repetitions, "Timed repetitions")->check(CLI::Range(1, 100000));
    bench->add_option("--warmup", ba.options.warmup, "Untimed warm-up repetitions")->check(CLI::NonNegativeNumber);
    bench->add_option("--phantom", ba.options.phantom, "Phantom to benchmark on");
    bench->add_option("--stream-frames", ba.options.stream_frames, "Frames for the sustained-rate measurement")
        ->check(CLI::NonNegativeNumber);
    bench->add_flag("--json", ba.json, "JSON report");

    ServeArgs va;
    auto* serve = app.add_subcommand("serve", "Run the live pipeline behind the WebSocket service");
    add_inputs(serve, va.in);
    serve->add_option("--scenario", va.scenario, "Built-in phantom to stream");
    serve->add_option("--recording", va.recording, "Recording directory to stream in a loop");
    serve->add_option("--recordings-dir", va.recordings_dir, "Directory of recordings selectable by id");
    serve->add_option("--bind", va.bind, "Bind address");
    serve->add_option("--port", va.port, "Port (0 picks a free one)");
    serve->add_option("--static", va.static_dir, "Directory served over HTTP");
    serve->add_option("--encoding", va.encoding, "Default frame encoding (png or rgba)");
    serve->add_option("--duration", va.duration, "Stop after this many seconds (0 runs until interrupted)");
    serve->add_option("--fps", va.fps, "Source frame rate (default: configured target)");
    serve->add_flag("--json", va.json, "JSON output");

    auto* calib_cmd = app.add_subcommand("calib", "Calibration utilities");
    calib_cmd->require_subcommand(1);
    CalibGenArgs ca;
    auto* calib_gen = calib_cmd->add_subcommand("gen", "Emit a synthetic calibration");
    calib_gen->add_option("--profile", ca.profile, "Camera profile (s5 or x20)");
    calib_gen->add_option("--distances", ca.distances, "Calibrated distances in cm");
    calib_gen->add_option("--out", ca.out, "Output .calib file")->required();
    calib_gen->add_flag("--json", ca.json, "JSON report");

    auto* library_cmd = app.add_subcommand("library", "Reference library utilities");
    library_cmd->require_subcommand(1);
    LibraryGenArgs la;
    auto* library_gen = library_cmd->add_subcommand("gen", "Emit the synthetic reference library");
    library_gen->add_option("--levels", la.levels, "Number of SO2 levels")->check(CLI::Range(2, 1001));
    library_gen->add_option("--out", la.out, "Output JSON file")->required();
    library_gen->add_flag("--json", la.json, "JSON report");

    auto* phantom_cmd = app.add_subcommand("phantom", "Phantom utilities");
    phantom_cmd->require_subcommand(1);
    PhantomGenArgs pga;
    auto* phantom_gen = phantom_cmd->add_subcommand("gen", "Emit a built-in phantom as JSON");
    phantom_gen->add_option("--name", pga.name, "Built-in phantom (wedge, resection, props)");
    phantom_gen->add_option("--out", pga.out, "Output JSON file")->required();
    phantom_gen->add_flag("--json", pga.json, "JSON report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (*simulate)
            return run_simulate(sa);
        if (*process)
            return run_process(pa);
        if (*bench)
            return run_bench(ba);
        if (*serve)
            return run_serve(va);
        if (*calib_gen)
            return run_calib_gen(ca);
        if (*library_gen)
            return run_library_gen(la);
        if (*phantom_gen)
            return run_phantom_gen(pga);
    } catch (const Error& e) {
        std::cerr << "error: " << kind_name(e.kind()) << ": " << one_line(e.what()) << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 4;
    }
    return 2;
}
