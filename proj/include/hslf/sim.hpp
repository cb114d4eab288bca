#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/cube.hpp"
#include "hslf/oxy.hpp"
#include "hslf/raster.hpp"

/// Forward camera simulator: phantom scenes with known SO2 rendered through
/// illuminant, optics, dispersion and quantization into raw sensor frames.
namespace hslf::sim {

// ---------------------------------------------------------------------------
// Spectra

/// Tabulated spectral power distribution; zero outside [lo_nm, hi_nm].
struct Illuminant {
    double lo_nm = 450.0;
    double hi_nm = 700.0;
    std::vector<double> power;   ///< uniformly spaced samples from lo_nm to hi_nm
    double intensity = 1.0;

    double at(double nm) const;

    /// Surgical light: 0.7 + 0.3 sin(pi (nm - 450) / 250) on 450-700 nm.
    static Illuminant surgical_light();
    static Illuminant flat(double lo_nm, double hi_nm);
};

/// Reflectance of a non-tissue material.
struct Material {
    enum class Kind { flat, gaussian };
    Kind kind = Kind::flat;
    double base = 1.0;        ///< flat value, or baseline of the gaussian kind
    double peak = 0.0;
    double center_nm = 0.0;
    double sigma_nm = 1.0;

    double reflectance(double nm) const;
    bool operator==(const Material&) const = default;
};

// ---------------------------------------------------------------------------
// Phantoms

/// Rectangle in scene-normalized coordinates ([0, 1] on both axes).
struct NormRect {
    double x = 0, y = 0, w = 0, h = 0;

    /// Pixel rectangle [round(x W), round((x + w) W)) x [round(y H), round((y + h) H)).
    Rect to_pixels(int width, int height) const;
    bool operator==(const NormRect&) const = default;
};

struct PhantomRegion {
    enum class Shape { rect, wedge, split };
    Shape shape = Shape::rect;
    NormRect rect;
    std::string material = "tissue";   ///< "tissue" or a key of ScenePhantom::materials
    double so2 = 0.0;                  ///< rect tissue
    double so2_from = 0.0, so2_to = 1.0;   ///< wedge, stepped along x
    int steps = 36;
    double so2_left = 1.0, so2_right = 0.0;   ///< split
    double boundary = 0.5;                    ///< split position as a fraction of the region width
    double drift_per_frame = 0.0;             ///< boundary motion per frame (fraction of region width)

    bool operator==(const PhantomRegion&) const = default;
};

struct ScenePhantom {
    std::string name;
    std::string background = "table";
    std::map<std::string, Material> materials;
    std::vector<PhantomRegion> regions;   ///< painted in order over the background

    bool operator==(const ScenePhantom&) const = default;
};

void validate(const ScenePhantom& phantom);
ScenePhantom parse_phantom(std::string_view json_text);
std::string serialize_phantom(const ScenePhantom& phantom);
ScenePhantom load_phantom(const std::filesystem::path& path);
void save_phantom(const ScenePhantom& phantom, const std::filesystem::path& path);

/// "wedge", "resection" or "props".
ScenePhantom builtin_phantom(std::string_view name);
std::vector<std::string> builtin_phantom_names();

/// A split boundary at one frame: columns x < column carry so2_left.
struct BoundaryTruth {
    Rect region;
    int column = 0;
    double so2_left = 0.0;
    double so2_right = 0.0;
};

/// Phantom rasterized at one frame index.
struct PhantomFrame {
    Raster<double> so2;               ///< NaN off tissue
    Raster<std::int16_t> material;    ///< -1 tissue, else index into material_names
    std::vector<std::string> material_names;
    std::vector<BoundaryTruth> boundaries;

    bool tissue(int x, int y) const { return material.at(x, y) < 0; }
};

PhantomFrame evaluate_phantom(const ScenePhantom& phantom, int width, int height, std::uint64_t frame_index);

/// Agreement between a classified map and the phantom truth.
struct RecoveryScore {
    std::size_t tissue_pixels = 0;
    std::size_t correct = 0;                 ///< classified to the truth's nearest library level
    double accuracy = 0.0;
    std::vector<double> boundary_error_px;   ///< per boundary, |estimated column - true column|
};

/// Boundary columns are estimated per row by the split minimizing mislabelled
/// pixels, then the median over rows is compared with the truth.
RecoveryScore score_recovery(const PhantomFrame& truth, const oxy::SO2Map& map, const oxy::ReferenceLibrary& lib);

/// Pixel rectangle of the first gauze region, inset by `margin` pixels.
std::optional<Rect> gauze_roi(const ScenePhantom& phantom, int width, int height, int margin = 2);

// ---------------------------------------------------------------------------
// Radiance and sensor

/// Per-pixel continuous spectra: illuminant times reflectance, evaluated on demand.
class SceneRadiance {
public:
    SceneRadiance(const PhantomFrame& frame, const ScenePhantom& phantom, const oxy::ReferenceLibrary& lib,
                  const Illuminant& illum);

    int width() const { return ids_.width; }
    int height() const { return ids_.height; }
    double reflectance(int x, int y, double nm) const;
    double radiance(int x, int y, double nm) const { return illum_.at(nm) * reflectance(x, y, nm); }

private:
    double table_at(int id, double nm) const;

    Raster<std::uint16_t> ids_;
    std::vector<std::vector<double>> tables_;
    std::vector<double> grid_;
    bool uniform_grid_ = false;
    double step_ = 1.0;
    Illuminant illum_;
};

SceneRadiance render_scene_radiance(const ScenePhantom& phantom, const oxy::ReferenceLibrary& lib,
                                    const Illuminant& illum, int width, int height, std::uint64_t frame_index);

struct NoiseModel {
    double shot_scale = 0.0;     ///< variance in DN^2 per DN of signal
    double read_sigma_dn = 0.0;
    std::uint64_t seed = 0;

    bool enabled() const { return shot_scale > 0.0 || read_sigma_dn > 0.0; }
};

struct Exposure {
    double integration_time_ms = 5.0;
    double gain_dn_per_ms = 180.0;   ///< DN per unit radiance per millisecond
};

/// Profile defaults: unit-reflectance white near 900 DN at the light's peak.
Exposure default_exposure(const calib::CameraProfile& profile);

/// For each lens sensor pixel, samples the scene at H^-1 (u, v) (bilinear over
/// scene pixels) at the lens' dispersion wavelength, then scales, adds noise
/// and quantizes with saturation. Pixels outside lens regions read 0.
cube::RawSensorFrame project_to_sensor(const SceneRadiance& radiance, const calib::ResolvedCalibration& resolved,
                                       const Exposure& exposure, const NoiseModel& noise, std::uint64_t frame_id = 0);

// ---------------------------------------------------------------------------

struct SimOptions {
    double working_distance_cm = 56.0;
    Exposure exposure;
    double illuminant_scale = 1.0;
    NoiseModel noise;
    double fps = 15.0;   ///< timestamps are frame_id / fps
};

SimOptions default_sim_options(const calib::CameraProfile& profile);

/// Renders frame sequences of a phantom through a calibration.
class Simulator {
public:
    Simulator(calib::CalibrationSet calibration, ScenePhantom phantom, oxy::ReferenceLibrary library, SimOptions options,
              Illuminant illuminant = Illuminant::surgical_light());

    cube::RawSensorFrame frame(std::uint64_t index) const;
    PhantomFrame truth(std::uint64_t index) const;
    std::optional<Rect> white_roi() const;

    int scene_width() const { return resolved_.profile.subimage_width; }
    int scene_height() const { return resolved_.profile.subimage_height; }
    const calib::CalibrationSet& calibration() const { return calibration_; }
    const ScenePhantom& phantom() const { return phantom_; }
    const oxy::ReferenceLibrary& library() const { return library_; }
    const SimOptions& options() const { return options_; }

private:
    calib::CalibrationSet calibration_;
    calib::ResolvedCalibration resolved_;
    ScenePhantom phantom_;
    oxy::ReferenceLibrary library_;
    SimOptions options_;
    Illuminant illuminant_;
};

} // namespace hslf::sim
