#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/cube.hpp"
#include "hslf/oxy.hpp"
#include "hslf/pipeline.hpp"
#include "hslf/reflect.hpp"
#include "hslf/sim.hpp"

/// Binary cube/frame formats, white reference export, PNG export and session
/// recordings. Binary formats are little-endian and carry a u16 version
/// (major in the high byte) directly after the magic.
namespace hslf::io {

constexpr std::uint16_t kFormatVersion = 0x0100;

using Bytes = std::vector<std::uint8_t>;

// HSC1: spectral cube
Bytes encode_cube(const cube::SpectralCube& cube);
cube::SpectralCube decode_cube(std::span<const std::uint8_t> bytes);
void write_cube(const cube::SpectralCube& cube, const std::filesystem::path& path);
cube::SpectralCube read_cube(const std::filesystem::path& path);

// HSR1: raw sensor frame (the timestamp is not part of the format)
Bytes encode_frame(const cube::RawSensorFrame& frame);
cube::RawSensorFrame decode_frame(std::span<const std::uint8_t> bytes);
void write_frame(const cube::RawSensorFrame& frame, const std::filesystem::path& path);
cube::RawSensorFrame read_frame(const std::filesystem::path& path);

/// `<base>.hsc` holds the spectrum (1x1, or the spatial cube) and `<base>.json`
/// the roi, gauze factor, frame id and timestamp.
void save_white_reference(const reflect::WhiteReference& white, const std::filesystem::path& base);
reflect::WhiteReference load_white_reference(const std::filesystem::path& base);

Bytes read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// PNG (8-bit)
Bytes encode_png(const RgbImage& image);
Bytes encode_png(const RgbaImage& image);
Bytes encode_png(const Raster<std::uint8_t>& gray);
/// Any 8-bit PNG, expanded to RGBA.
RgbaImage decode_png(std::span<const std::uint8_t> bytes);
void export_png(const RgbImage& image, const std::filesystem::path& path);
void export_png(const RgbaImage& image, const std::filesystem::path& path);
void export_png(const Raster<std::uint8_t>& gray, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Recordings: a directory holding manifest.json, the calibration, the library
// and frames/<id>.hsr.

struct FrameEntry {
    std::uint64_t frame_id = 0;
    double timestamp_ms = 0.0;
    std::string file;

    bool operator==(const FrameEntry&) const = default;
};

/// Configuration in force for frames first_frame..last_frame inclusive.
struct ConfigSnapshot {
    std::uint64_t first_frame = 0;
    std::uint64_t last_frame = 0;
    pipeline::PipelineConfig config;

    bool operator==(const ConfigSnapshot&) const = default;
};

/// The roi became `rect` (or was cleared) at `frame_id`.
struct RoiEvent {
    std::uint64_t frame_id = 0;
    std::optional<Rect> rect;

    bool operator==(const RoiEvent&) const = default;
};

/// Simulator settings a recording was generated with, enough to rebuild ground truth.
struct SimulationInfo {
    std::string phantom_file;
    sim::SimOptions options;
};

struct RecordingManifest {
    std::string profile;
    std::string calibration_file = "calibration.calib";
    std::string library_file = "library.json";
    std::vector<FrameEntry> frames;
    std::vector<ConfigSnapshot> configs;
    std::vector<RoiEvent> roi_events;
    std::optional<SimulationInfo> simulation;
};

/// Frame ids strictly increasing; snapshots ordered, disjoint and inside the recorded id range.
void validate(const RecordingManifest& manifest);
std::string serialize_manifest(const RecordingManifest& manifest);
RecordingManifest parse_manifest(std::string_view json_text);

class RecordingWriter {
public:
    /// Creates `dir` (which must be empty or absent) and writes the calibration and library.
    RecordingWriter(std::filesystem::path dir, const calib::CalibrationSet& calibration,
                    const oxy::ReferenceLibrary& library);

    void set_simulation(const sim::ScenePhantom& phantom, const sim::SimOptions& options);
    /// Appends a frame recorded under `cfg`; ids must increase.
    void add_frame(const cube::RawSensorFrame& frame, const pipeline::PipelineConfig& cfg);
    /// Writes the manifest. Further frames are rejected.
    void finish();

    const RecordingManifest& manifest() const { return manifest_; }

private:
    std::filesystem::path dir_;
    RecordingManifest manifest_;
    bool finished_ = false;
};

class RecordingReader {
public:
    explicit RecordingReader(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    const RecordingManifest& manifest() const { return manifest_; }
    const calib::CalibrationSet& calibration() const { return calibration_; }
    const oxy::ReferenceLibrary& library() const { return library_; }
    std::optional<sim::ScenePhantom> phantom() const;

    std::size_t size() const { return manifest_.frames.size(); }
    /// Frame at position `index`, with its recorded timestamp.
    cube::RawSensorFrame frame(std::size_t index) const;
    /// Configuration in force for `frame_id`; throws a data error if none covers it.
    const pipeline::PipelineConfig& config_for(std::uint64_t frame_id) const;

private:
    std::filesystem::path dir_;
    RecordingManifest manifest_;
    calib::CalibrationSet calibration_;
    oxy::ReferenceLibrary library_;
};

/// Frames of a recording at `fps` (unpaced when <= 0), optionally looping.
std::unique_ptr<pipeline::FrameSource> make_recording_source(std::shared_ptr<const RecordingReader> reader,
                                                             double fps, bool loop);

/// Runs every frame of the recording through a fresh processor, reconfigured
/// at each snapshot boundary. `visit` receives each processed frame.
void replay(const RecordingReader& reader, const std::function<void(const pipeline::ProcessedFrame&)>& visit);

} // namespace hslf::io
