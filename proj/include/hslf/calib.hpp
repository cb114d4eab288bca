#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hslf/raster.hpp"

/// Camera profiles and the pre-calibrated geometry/spectral data of a
/// light-field hyperspectral camera: microlens layout, per-lens homographies
/// and dispersion maps for a set of calibrated working distances.
namespace hslf::calib {

/// Ordered band-centre wavelengths (nm), strictly increasing, at least two.
class BandGrid {
public:
    BandGrid() = default;
    explicit BandGrid(std::vector<double> wavelengths_nm);

    /// `count` evenly spaced centres from `first_nm` to `last_nm` inclusive.
    static BandGrid linspace(double first_nm, double last_nm, int count);

    const std::vector<double>& wavelengths() const { return wavelengths_; }
    int count() const { return static_cast<int>(wavelengths_.size()); }
    double operator[](int band) const { return wavelengths_[static_cast<std::size_t>(band)]; }
    double min_nm() const { return wavelengths_.front(); }
    double max_nm() const { return wavelengths_.back(); }
    double mean_spacing() const;

    /// Half the distance between the neighbouring centres (one-sided at the ends).
    double local_spacing(int band) const;

    /// Band whose centre is closest to `nm`; ties resolve to the lower band.
    int nearest_band(double nm) const;

    bool operator==(const BandGrid&) const = default;

private:
    std::vector<double> wavelengths_;
};

struct CameraProfile {
    std::string name;
    int lens_count = 0;
    int subimage_width = 0;
    int subimage_height = 0;
    int sensor_width = 0;
    int sensor_height = 0;
    int bit_depth = 12;
    double max_fps = 1.0;
    BandGrid band_grid;
    double fov_deg = 0.0;
    /// Distance at which the synthetic parallax model has zero lens offset.
    double reference_distance_cm = 56.0;
    /// Spectral window that synthetic calibrations sample densely when the
    /// lens count cannot cover the whole grid at the band spacing.
    std::optional<std::pair<double, double>> dense_window_nm;

    int saturation_dn() const { return (1 << bit_depth) - 1; }

    bool operator==(const CameraProfile&) const = default;
};

/// Throws hslf::Error (data) naming the offending field.
void validate(const CameraProfile& profile);

/// Ultris S5-shaped profile: 42 lenses, 290x275 sub-images, 51 bands 450-850 nm.
CameraProfile s5_profile();
/// Ultris X20-shaped profile: 66 lenses, 410x410 sub-images, 164 bands 350-1002 nm.
CameraProfile x20_profile();
/// "s5" or "x20"; throws a usage error for anything else.
CameraProfile profile_by_name(std::string_view name);

using LensRegion = Rect;

struct MicrolensLayout {
    std::vector<LensRegion> lenses;   ///< sensor rectangles ordered by lens index

    bool operator==(const MicrolensLayout&) const = default;
};

/// 3x3 projective matrix, row-major. Applied to scene coordinates it yields
/// the sampling position inside a lens sub-image.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return {}; }
    static Homography translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

    double determinant() const;
    /// Scaled so the bottom-right entry is 1. Throws if that entry is 0.
    Homography normalized() const;
    Homography inverse() const;
    bool is_translation() const { return m[0] == 1 && m[1] == 0 && m[3] == 0 && m[4] == 1 && m[6] == 0 && m[7] == 0 && m[8] == 1; }

    std::array<double, 2> apply(double x, double y) const {
        const double w = m[6] * x + m[7] * y + m[8];
        return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
    }

    bool operator==(const Homography&) const = default;
};

struct HomographySet {
    std::vector<double> distances_cm;               ///< ascending
    std::vector<std::vector<Homography>> matrices;  ///< [distance][lens]

    bool operator==(const HomographySet&) const = default;
};

/// Wavelength assignment over one lens sub-image, affine in sub-image
/// coordinates: origin + dnm_dx * u + dnm_dy * v.
struct LinearDispersion {
    bool assigned = true;
    double origin_nm = 0.0;
    double dnm_dx = 0.0;
    double dnm_dy = 0.0;

    double at(double u, double v) const { return origin_nm + dnm_dx * u + dnm_dy * v; }

    bool operator==(const LinearDispersion&) const = default;
};

struct DispersionMap {
    double distance_cm = 0.0;
    std::vector<LinearDispersion> lenses;

    bool operator==(const DispersionMap&) const = default;
};

struct CalibrationSet {
    CameraProfile profile;
    MicrolensLayout layout;
    HomographySet homographies;
    std::vector<DispersionMap> dispersion;   ///< one per calibrated distance, same order

    bool operator==(const CalibrationSet&) const = default;
};

/// Checks every CalibrationSet invariant; errors carry a field path such as
/// `layout.lenses[3]` or `homographies["50"][7]`.
void validate(const CalibrationSet& calib);

CalibrationSet load_calibration(const std::filesystem::path& path);
void save_calibration(const CalibrationSet& calib, const std::filesystem::path& path);
CalibrationSet parse_calibration(std::string_view json_text);
std::string serialize_calibration(const CalibrationSet& calib);

/// Calibration specialised to one working distance.
struct ResolvedCalibration {
    CameraProfile profile;
    MicrolensLayout layout;
    double working_distance_cm = 0.0;
    bool extrapolated = false;
    std::vector<Homography> homographies;      ///< per lens, normalized
    std::vector<LinearDispersion> dispersion;  ///< per lens
};

/// Exact entry at calibrated distances, per-entry linear blend between the two
/// nearest calibrated distances, clamp (flagged) outside the calibrated range.
ResolvedCalibration calibration_at_distance(const CalibrationSet& calib, double working_distance_cm);

/// Distances (cm) covered by the shipped synthetic calibrations.
std::vector<double> default_calibration_distances();

/// Deterministic stand-in for vendor calibration data.
CalibrationSet synthesize_default_calibration(const CameraProfile& profile, const std::vector<double>& distances_cm);

/// Columns x rows of the rectangular lens grid used by the synthetic layout.
std::pair<int, int> lens_grid_shape(const CameraProfile& profile);

} // namespace hslf::calib
