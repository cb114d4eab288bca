#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/cube.hpp"
#include "hslf/raster.hpp"

/// Oxygenation imaging: reference library, SAM classification, tissue
/// masking, RGB rendering and color overlays.
namespace hslf::oxy {

constexpr int kDefaultLevels = 36;
constexpr int kDefaultMinValidBands = 8;
constexpr double kDefaultSamThreshold = 0.15;
constexpr double kDefaultAlpha = 0.6;

// ---------------------------------------------------------------------------
// Reference library

struct LibraryEntry {
    double so2 = 0.0;
    std::vector<double> reflectance;

    bool operator==(const LibraryEntry&) const = default;
};

struct ReferenceLibrary {
    std::vector<double> wavelengths_nm;
    std::vector<LibraryEntry> entries;
    std::string provenance = "synthetic";   ///< "synthetic" or "file"

    int size() const { return static_cast<int>(entries.size()); }
    bool operator==(const ReferenceLibrary&) const = default;
};

/// Levels strictly increasing from 0 to 1, spectra strictly positive and sized to the grid.
void validate(const ReferenceLibrary& lib);

struct Gaussian {
    double amplitude;
    double center_nm;
    double sigma_nm;

    double operator()(double nm) const;
};

/// Smooth stand-ins for the oxygenated / deoxygenated attenuation curves.
struct EndmemberModel {
    double path_length = 2.2;
    double baseline = 0.05;
    std::vector<Gaussian> oxy{{1.0, 555.0, 55.0}};
    std::vector<Gaussian> deoxy{{0.65, 565.0, 70.0}, {0.55, 690.0, 70.0}};

    double eps_oxy(double nm) const;
    double eps_deoxy(double nm) const;
    /// exp(-d * (so2 * eps_oxy + (1 - so2) * eps_deoxy))
    double reflectance(double so2, double nm) const;
};

/// 1 nm grid from 300 to 1100 nm, wide enough for both shipped profiles.
calib::BandGrid library_grid();

/// `count` levels uniformly spaced over [0, 1].
ReferenceLibrary build_synthetic_library(int count, const calib::BandGrid& grid, const EndmemberModel& model = {});

/// Spectrum at an arbitrary so2, linearly blended between the bracketing entries.
std::vector<double> spectrum_at(const ReferenceLibrary& lib, double so2);

/// Index of the entry whose level is closest to `so2`; ties go to the lower index.
int nearest_level(const ReferenceLibrary& lib, double so2);

ReferenceLibrary parse_library(std::string_view json_text);
std::string serialize_library(const ReferenceLibrary& lib);
ReferenceLibrary load_library(const std::filesystem::path& path);
void save_library(const ReferenceLibrary& lib, const std::filesystem::path& path);

/// Library linearly resampled onto a cube's band grid, stored band-major.
/// Bands outside the library's wavelength range are invalid.
class PreparedLibrary {
public:
    PreparedLibrary() = default;
    PreparedLibrary(const ReferenceLibrary& lib, const std::vector<double>& band_wavelengths_nm,
                    int min_valid_bands = kDefaultMinValidBands);

    int entries() const { return static_cast<int>(levels_.size()); }
    int bands() const { return static_cast<int>(wavelengths_.size()); }
    const std::vector<double>& levels() const { return levels_; }
    const std::vector<double>& wavelengths() const { return wavelengths_; }
    const std::vector<std::uint8_t>& band_valid() const { return band_valid_; }
    double value(int entry, int band) const { return data_[static_cast<std::size_t>(band) * levels_.size() + entry]; }
    /// All entries' values at one band.
    const double* band_row(int band) const { return data_.data() + static_cast<std::size_t>(band) * levels_.size(); }
    /// One entry over all bands (invalid bands hold 0).
    std::vector<double> spectrum(int entry) const;

private:
    std::vector<double> levels_;
    std::vector<double> wavelengths_;
    std::vector<std::uint8_t> band_valid_;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Spectral angle

/// Angle between a and b over the bands flagged in `valid`:
/// acos(clamp(<a,b> / sqrt(|a|^2 |b|^2), -1, 1)), accumulated in band order.
/// Throws a data error with fewer than `min_valid_bands` bands or a zero-norm input.
double sam(std::span<const double> a, std::span<const double> b, std::span<const std::uint8_t> valid,
           int min_valid_bands = kDefaultMinValidBands);
double sam(std::span<const float> a, std::span<const double> b, std::span<const std::uint8_t> valid,
           int min_valid_bands = kDefaultMinValidBands);
/// All bands valid.
double sam(std::span<const double> a, std::span<const double> b, int min_valid_bands = kDefaultMinValidBands);

// ---------------------------------------------------------------------------
// Classification

struct SO2Map {
    Raster<double> so2;          ///< library level, NaN where unclassified
    Raster<std::int16_t> index;  ///< library index, -1 where unclassified

    bool operator==(const SO2Map& o) const { return index == o.index; }
};

struct SimilarityMap {
    Raster<double> angle;                 ///< best-match SAM angle (rad), NaN where unclassified
    Raster<std::uint16_t> valid_bands;    ///< bands the pixel was compared on
};

struct Classification {
    SO2Map so2;
    SimilarityMap similarity;
};

struct ClassifyOptions {
    int min_valid_bands = kDefaultMinValidBands;
};

/// Per pixel, the library entry with the smallest SAM angle over the bands
/// valid in both the pixel and the library; ties go to the lower index.
Classification classify_so2(const cube::SpectralCube& reflectance, const PreparedLibrary& lib,
                            const ClassifyOptions& options = {});
Classification classify_so2(const cube::SpectralCube& reflectance, const ReferenceLibrary& lib,
                            const ClassifyOptions& options = {});

using TissueMask = Raster<std::uint8_t>;

/// True where the pixel was classified on at least `min_valid_bands` bands with angle <= threshold.
TissueMask build_tissue_mask(const SimilarityMap& sim, double threshold_rad,
                             int min_valid_bands = kDefaultMinValidBands);

/// Throws a usage error unless 0 <= threshold <= pi/2.
void validate_threshold(double threshold_rad);

// ---------------------------------------------------------------------------
// Rendering

constexpr double kRedNm = 610.0;
constexpr double kGreenNm = 540.0;
constexpr double kBlueNm = 470.0;

/// Nearest bands to 610/540/470 nm, clipped to [0, 1], gamma 1/2.2, 8 bits.
RgbImage render_rgb(const cube::SpectralCube& reflectance);

/// round(255 * clamp(r, 0, 1)^(1/2.2)).
std::uint8_t encode_gamma(double reflectance);

/// Piecewise-linear map from [0, 1] to RGB.
struct Colormap {
    std::string name;
    std::vector<std::pair<double, Rgb8>> stops;

    Rgb8 operator()(double t) const;

    /// "oxy" (blue, cyan, yellow, red) or "gray". Throws a usage error otherwise.
    static Colormap by_name(std::string_view name);
    static std::vector<std::string> names();
};

RgbaImage colorize(const SO2Map& so2, const TissueMask& mask, const Colormap& cmap, double alpha = kDefaultAlpha);

/// Source-over blend of `overlay` onto `base`.
RgbImage composite(const RgbImage& base, const RgbaImage& overlay);

} // namespace hslf::oxy
