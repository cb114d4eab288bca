#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/cube.hpp"
#include "hslf/oxy.hpp"
#include "hslf/reflect.hpp"

/// Per-frame orchestration (reflectance cube, then oxygenation image), stage
/// timing, bounded streaming and the benchmark harness.
namespace hslf::pipeline {

enum class OverlayMode { rgb, overlay, composite, so2, similarity };

std::string_view to_string(OverlayMode mode);
/// Throws a usage error for unknown names.
OverlayMode overlay_mode_from(std::string_view name);

struct PipelineConfig {
    std::string profile = "s5";
    double working_distance_cm = 56.0;
    std::optional<reflect::RegionOfInterest> roi;
    double gauze_reflectance_factor = 1.0;
    std::string library = "synthetic";
    double sam_threshold = oxy::kDefaultSamThreshold;
    std::string colormap = "oxy";
    double alpha = oxy::kDefaultAlpha;
    OverlayMode overlay_mode = OverlayMode::composite;
    double target_fps = 1.0;
    int queue_capacity = 2;
    int min_valid_bands = oxy::kDefaultMinValidBands;
    int dark_floor_dn = 1;
    double epsilon_white = 1.0;
    double white_max_age_s = 300.0;

    bool operator==(const PipelineConfig&) const = default;
};

/// Throws a usage error naming the first violated invariant. The roi is
/// checked against the profile's scene size when `profile` is given.
void validate(const PipelineConfig& cfg, const calib::CameraProfile* profile = nullptr);

std::string serialize_config(const PipelineConfig& cfg);
PipelineConfig parse_config(std::string_view json_text);

/// Wall-clock milliseconds per processing stage.
struct StageTimings {
    double reflectance_cube_ms = 0.0;
    double rgb_image_ms = 0.0;
    double oxy_correlation_ms = 0.0;
    double oxy_image_ms = 0.0;
    double overhead_ms = 0.0;
    double total_ms = 0.0;

    double component_sum() const {
        return reflectance_cube_ms + rgb_image_ms + oxy_correlation_ms + oxy_image_ms + overhead_ms;
    }
};

struct So2Summary {
    std::vector<std::uint32_t> histogram;   ///< masked pixels per library level
    std::uint64_t tissue_pixels = 0;
    double mean_so2 = 0.0;                  ///< NaN when the mask is empty
    double mean_angle = 0.0;                ///< NaN when the mask is empty
};

struct ProcessedFrame {
    std::uint64_t frame_id = 0;
    double timestamp_ms = 0.0;
    bool failed = false;
    std::string error;
    bool uncalibrated = false;
    bool white_updated = false;

    RgbImage rgb;
    RgbaImage overlay;
    RgbImage composite;
    RgbaImage display;                      ///< the configured overlay mode, ready to publish
    oxy::Classification classification;
    oxy::TissueMask mask;
    So2Summary summary;
    StageTimings timings;
    double saturation_fraction = 0.0;
    std::vector<std::string> warnings;
    PipelineConfig config;                  ///< the configuration this frame was processed with
};

/// Immutable shared inputs plus the mutable per-stream state.
struct PipelineState {
    std::shared_ptr<const calib::ResolvedCalibration> calibration;
    std::shared_ptr<const oxy::PreparedLibrary> library;
    std::shared_ptr<const reflect::WhiteReference> white;

    /// Scratch cubes reused across frames.
    struct Workspace {
        cube::SpectralCube raw;
        cube::SpectralCube transformed;
        cube::SpectralCube uniform;
    } workspace;
};

/// Runs the full chain on one frame. Without a white reference the frame is
/// rendered to RGB only and flagged uncalibrated. When `cfg.roi` is set and
/// the state's white reference does not match it, the white reference is
/// re-extracted from this frame. Stage errors are reported on the frame.
ProcessedFrame process_frame(const cube::RawSensorFrame& frame, const PipelineConfig& cfg, PipelineState& state);

/// Image shown for `mode`; so2 and similarity views are opaque color maps.
RgbaImage display_image(const ProcessedFrame& frame, OverlayMode mode, const oxy::Colormap& cmap);

/// Owns calibration, library and configuration for one camera and keeps the
/// derived state (resolved calibration, prepared library) in sync.
class Processor {
public:
    Processor(calib::CalibrationSet calibration, oxy::ReferenceLibrary library, PipelineConfig cfg);

    /// Validates and applies a new configuration. Changing the working
    /// distance re-resolves the calibration and drops the white reference.
    void configure(const PipelineConfig& cfg);
    const PipelineConfig& config() const { return cfg_; }

    ProcessedFrame process(const cube::RawSensorFrame& frame) { return process_frame(frame, cfg_, state_); }

    void set_white(std::shared_ptr<const reflect::WhiteReference> white) { state_.white = std::move(white); }
    void reset_white() { state_.white.reset(); }
    const PipelineState& state() const { return state_; }
    const calib::CalibrationSet& calibration() const { return calibration_; }
    const oxy::ReferenceLibrary& library() const { return library_; }

private:
    calib::CalibrationSet calibration_;
    oxy::ReferenceLibrary library_;
    PipelineConfig cfg_;
    PipelineState state_;
};

// ---------------------------------------------------------------------------
// Streaming

class FrameSource {
public:
    virtual ~FrameSource() = default;
    /// Next frame in id order, or nothing once exhausted. May block to pace.
    virtual std::optional<cube::RawSensorFrame> next() = 0;
    virtual std::string name() const = 0;
};

/// Emits frames at `fps` against the wall clock (unpaced when fps <= 0).
class PacedSource : public FrameSource {
public:
    using Generator = std::function<std::optional<cube::RawSensorFrame>(std::uint64_t index)>;

    PacedSource(std::string name, Generator generator, double fps, std::optional<std::uint64_t> count = {});

    std::optional<cube::RawSensorFrame> next() override;
    std::string name() const override { return name_; }

private:
    std::string name_;
    Generator generator_;
    double fps_;
    std::optional<std::uint64_t> count_;
    std::uint64_t index_ = 0;
    std::chrono::steady_clock::time_point start_;
};

/// Cycles through a fixed frame list, renumbering ids and timestamps.
std::unique_ptr<FrameSource> make_vector_source(std::vector<cube::RawSensorFrame> frames, double fps,
                                                std::optional<std::uint64_t> count = {});

/// Delegates to a replaceable inner source and assigns its own strictly
/// increasing frame ids and wall-clock timestamps, so ids never repeat
/// across a switch.
class SwitchableSource : public FrameSource {
public:
    explicit SwitchableSource(std::unique_ptr<FrameSource> initial);

    std::optional<cube::RawSensorFrame> next() override;
    std::string name() const override;
    /// Takes effect for the next frame pulled; returns the id that frame will carry.
    std::uint64_t select(std::unique_ptr<FrameSource> source);
    void close();

private:
    mutable std::mutex mutex_;
    std::unique_ptr<FrameSource> current_;
    std::unique_ptr<FrameSource> pending_;
    std::uint64_t next_id_ = 0;
    std::uint64_t generation_ = 0;
    bool closed_ = false;
    std::chrono::steady_clock::time_point start_;
};

struct StreamOptions {
    int queue_capacity = 2;
};

struct StreamStats {
    std::uint64_t frames_in = 0;
    std::uint64_t frames_processed = 0;
    std::uint64_t frames_skipped = 0;     ///< consumed while paused
    std::uint64_t frames_dropped = 0;     ///< evicted from the capture queue
    std::uint64_t frames_failed = 0;
    std::uint64_t frames_published = 0;
    std::uint64_t frames_left = 0;        ///< still queued when the stream ended
    double max_frame_age_ms = 0.0;        ///< capture to publication
    double last_frame_age_ms = 0.0;
    double elapsed_ms = 0.0;
};

/// Processing returns nothing for frames it chooses to skip.
using FrameProcessor = std::function<std::optional<ProcessedFrame>(const cube::RawSensorFrame&)>;
using FrameSink = std::function<void(const std::shared_ptr<const ProcessedFrame>&)>;

/// Live counters of a running stream.
struct StreamCounters {
    std::atomic<std::uint64_t> in{0}, processed{0}, skipped{0}, dropped{0}, failed{0}, published{0};
    std::atomic<double> max_age_ms{0.0}, last_age_ms{0.0};

    StreamStats snapshot() const;
};

/// Capture, processing and publication threads joined by a drop-oldest queue
/// of `queue_capacity` and a depth-1 overwrite mailbox. Returns when the
/// source is exhausted or `stop` is requested; the frame in processing
/// completes either way.
StreamStats run_stream(FrameSource& source, const FrameProcessor& process, const std::vector<FrameSink>& sinks,
                       std::stop_token stop, const StreamOptions& options = {}, StreamCounters* counters = nullptr);

/// Per-stage medians over the most recent frames.
class TimingWindow {
public:
    explicit TimingWindow(std::size_t capacity = 64) : capacity_(capacity) {}
    void add(const StageTimings& t);
    StageTimings median() const;
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::size_t capacity_;
    std::vector<StageTimings> samples_;
    std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkOptions {
    int levels = oxy::kDefaultLevels;
    int repetitions = 10;
    int warmup = 3;
    std::string phantom = "wedge";
    int stream_frames = 4;     ///< frames pushed through run_stream for the sustained rate (0 skips)
};

struct BenchmarkRow {
    std::string name;
    double median_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    double reference_ms = 0.0;     ///< published figure, 0 when none
};

struct BenchmarkReport {
    std::string profile;
    int levels = 0;
    int repetitions = 0;
    int warmup = 0;
    int width = 0, height = 0, bands = 0;
    std::vector<BenchmarkRow> rows;   ///< stage order, Total last
    double budget_ms = 0.0;
    double sustained_fps = 0.0;       ///< 0 when not measured
    std::vector<StageTimings> samples;
    std::string machine;

    const BenchmarkRow& row(std::string_view name) const;
    double total_ms() const { return rows.back().median_ms; }
};

/// Row labels in report order.
const std::vector<std::string>& table_rows();

BenchmarkReport benchmark(const calib::CameraProfile& profile, const BenchmarkOptions& options = {});
std::string format_report(const BenchmarkReport& report);
std::string report_json(const BenchmarkReport& report);
/// CPU model, logical cores, compiler and build flags.
std::string machine_descriptor();

} // namespace hslf::pipeline
