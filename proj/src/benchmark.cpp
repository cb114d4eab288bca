#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hslf/error.hpp"
#include "hslf/pipeline.hpp"
#include "hslf/sim.hpp"

namespace hslf::pipeline {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

const std::vector<std::string>& table_rows() {
    static const std::vector<std::string> rows = {"Reflectance Cube", "RGB Image",     "Oxy Correlation",
                                                  "Oxy Image",        "Add. Overhead", "Total (ms)"};
    return rows;
}

const BenchmarkRow& BenchmarkReport::row(std::string_view name) const {
    for (const auto& r : rows)
        if (r.name == name)
            return r;
    throw usage_error("no benchmark row '" + std::string(name) + "'");
}

std::string machine_descriptor() {
    std::string cpu = "unknown cpu";
    std::ifstream in("/proc/cpuinfo");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos)
                cpu = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    std::ostringstream os;
    os << cpu << ", " << std::thread::hardware_concurrency() << " logical cores, ";
#if defined(__clang__)
    os << "clang " << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
    os << "gcc " << __GNUC__ << "." << __GNUC_MINOR__;
#endif
#ifdef NDEBUG
    os << ", optimized";
#else
    os << ", debug";
#endif
    return os.str();
}

namespace {

/// Reference timings per profile, in row order.
std::vector<double> reference_values(const std::string& profile) {
    if (profile == "s5")
        return {57.69, 10.25, 80.98, 6.85, 5.76, 161.53};
    if (profile == "x20")
        return {185.95, 75.17, 104.16, 14.22, 17.68, 397.18};
    return std::vector<double>(6, 0.0);
}

double budget_for(const std::string& profile) {
    if (profile == "s5")
        return 325.0;
    if (profile == "x20")
        return 800.0;
    return 0.0;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

double sustained_rate(const cube::RawSensorFrame& frame, PipelineState& state, const PipelineConfig& cfg, double fps,
                      int frames) {
    auto source = make_vector_source({frame}, fps);
    std::stop_source stop;
    std::vector<Clock::time_point> published;
    std::mutex m;
    FrameSink sink = [&](const std::shared_ptr<const ProcessedFrame>&) {
        std::lock_guard lock(m);
        published.push_back(Clock::now());
        if (static_cast<int>(published.size()) > frames)
            stop.request_stop();
    };
    FrameProcessor proc = [&](const cube::RawSensorFrame& f) -> std::optional<ProcessedFrame> {
        return process_frame(f, cfg, state);
    };
    StreamOptions so;
    so.queue_capacity = cfg.queue_capacity;
    run_stream(*source, proc, {sink}, stop.get_token(), so);
    if (published.size() < 2)
        return 0.0;
    const double span = std::chrono::duration<double>(published.back() - published.front()).count();
    return span > 0.0 ? static_cast<double>(published.size() - 1) / span : 0.0;
}

} // namespace

BenchmarkReport benchmark(const calib::CameraProfile& profile, const BenchmarkOptions& options) {
    if (options.repetitions < 5)
        throw usage_error("benchmark needs at least 5 repetitions");
    if (options.levels < 1)
        throw usage_error("benchmark needs at least one library level");
    if (options.warmup < 0)
        throw usage_error("warm-up count must not be negative");

    const auto calibration = calib::synthesize_default_calibration(profile, calib::default_calibration_distances());
    const auto grid = oxy::library_grid();
    const auto sim_library = oxy::build_synthetic_library(oxy::kDefaultLevels, grid);
    oxy::ReferenceLibrary library = oxy::build_synthetic_library(std::max(options.levels, 2), grid);
    if (options.levels == 1)
        library.entries.resize(1);

    const sim::Simulator simulator(calibration, sim::builtin_phantom(options.phantom), sim_library,
                                   sim::default_sim_options(profile));
    const cube::RawSensorFrame frame = simulator.frame(0);

    PipelineConfig cfg;
    cfg.profile = profile.name;
    if (auto roi = simulator.white_roi())
        cfg.roi = reflect::RegionOfInterest{*roi, 0};
    PipelineState state;
    state.calibration = std::make_shared<const calib::ResolvedCalibration>(
        calib::calibration_at_distance(calibration, cfg.working_distance_cm));
    state.library = std::make_shared<const oxy::PreparedLibrary>(library, profile.band_grid.wavelengths(),
                                                                 cfg.min_valid_bands);

    BenchmarkReport report;
    report.profile = profile.name;
    report.levels = options.levels;
    report.repetitions = options.repetitions;
    report.warmup = options.warmup;
    report.width = profile.subimage_width;
    report.height = profile.subimage_height;
    report.bands = profile.band_grid.count();
    report.machine = machine_descriptor();
    report.budget_ms = budget_for(profile.name);

    for (int i = 0; i < options.warmup + options.repetitions; ++i) {
        ProcessedFrame out = process_frame(frame, cfg, state);
        if (out.failed)
            throw internal_error("benchmark frame failed: " + out.error);
        if (i >= options.warmup)
            report.samples.push_back(out.timings);
    }

    const double StageTimings::*fields[] = {&StageTimings::reflectance_cube_ms, &StageTimings::rgb_image_ms,
                                            &StageTimings::oxy_correlation_ms,  &StageTimings::oxy_image_ms,
                                            &StageTimings::overhead_ms,         &StageTimings::total_ms};
    const auto reference = reference_values(profile.name);
    for (std::size_t r = 0; r < 6; ++r) {
        std::vector<double> v;
        for (const auto& s : report.samples)
            v.push_back(s.*fields[r]);
        BenchmarkRow row;
        row.name = table_rows()[r];
        row.median_ms = median_of(v);
        row.min_ms = *std::min_element(v.begin(), v.end());
        row.max_ms = *std::max_element(v.begin(), v.end());
        row.reference_ms = reference[r];
        report.rows.push_back(row);
    }

    if (options.stream_frames > 0)
        report.sustained_fps = sustained_rate(frame, state, cfg, profile.max_fps, options.stream_frames);
    return report;
}

std::string format_report(const BenchmarkReport& r) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "profile %s: %dx%dx%d cube, %d levels, %d repetitions after %d warm-up\n",
                  r.profile.c_str(), r.width, r.height, r.bands, r.levels, r.repetitions, r.warmup);
    os << buf;
    std::snprintf(buf, sizeof buf, "%-18s %10s %10s %10s %10s\n", "", "median", "min", "max", "ref");
    os << buf;
    for (const auto& row : r.rows) {
        std::string ref = "-";
        if (row.reference_ms > 0.0) {
            std::snprintf(buf, sizeof buf, "%.2f", row.reference_ms);
            ref = buf;
        }
        std::snprintf(buf, sizeof buf, "%-18s %10.2f %10.2f %10.2f %10s\n", row.name.c_str(), row.median_ms,
                      row.min_ms, row.max_ms, ref.c_str());
        os << buf;
    }
    if (r.budget_ms > 0.0) {
        std::snprintf(buf, sizeof buf, "budget %.2f ms: %s\n", r.budget_ms, r.total_ms() < r.budget_ms ? "met" : "missed");
        os << buf;
    }
    if (r.sustained_fps > 0.0) {
        std::snprintf(buf, sizeof buf, "sustained streaming: %.2f fps\n", r.sustained_fps);
        os << buf;
    }
    os << "machine: " << r.machine << "\n";
    return os.str();
}

std::string report_json(const BenchmarkReport& r) {
    json j;
    j["profile"] = r.profile;
    j["levels"] = r.levels;
    j["repetitions"] = r.repetitions;
    j["warmup"] = r.warmup;
    j["cube"] = {r.width, r.height, r.bands};
    j["rows"] = json::array();
    for (const auto& row : r.rows) {
        json jr = {{"name", row.name}, {"median_ms", row.median_ms}, {"min_ms", row.min_ms}, {"max_ms", row.max_ms}};
        jr["reference_ms"] = row.reference_ms > 0.0 ? json(row.reference_ms) : json(nullptr);
        j["rows"].push_back(jr);
    }
    j["total_ms"] = r.total_ms();
    j["budget_ms"] = r.budget_ms > 0.0 ? json(r.budget_ms) : json(nullptr);
    j["within_budget"] = r.budget_ms > 0.0 ? json(r.total_ms() < r.budget_ms) : json(nullptr);
    j["sustained_fps"] = r.sustained_fps > 0.0 ? json(r.sustained_fps) : json(nullptr);
    j["machine"] = r.machine;
    return j.dump(2);
}

} // namespace hslf::pipeline
