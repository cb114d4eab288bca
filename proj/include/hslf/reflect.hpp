#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hslf/cube.hpp"
#include "hslf/raster.hpp"

/// Scene-dependent white reference and reflectance normalization.
namespace hslf::reflect {

struct RegionOfInterest {
    Rect rect;
    std::uint64_t frame_id = 0;

    bool operator==(const RegionOfInterest&) const = default;
};

constexpr long long kMinRoiArea = 16;

/// Throws a usage error unless the roi lies inside a `width` x `height` scene
/// and covers at least kMinRoiArea pixels.
void validate(const RegionOfInterest& roi, int width, int height);

struct WhiteOptions {
    double gauze_reflectance_factor = 1.0;
    double epsilon_white = 1.0;          ///< medians at or below this are unusable
    double min_valid_fraction = 0.25;    ///< of roi pixels, per band
};

/// Per-band white spectrum broadcast over the scene, or a full spatial cube
/// when flat-field data is available.
struct WhiteReference {
    std::vector<double> wavelengths_nm;
    std::vector<float> values;            ///< per band, already divided by the gauze factor
    std::vector<std::uint8_t> valid;      ///< per band
    std::shared_ptr<const cube::SpectralCube> spatial;   ///< optional, uniform stage
    double gauze_reflectance_factor = 1.0;
    RegionOfInterest roi;
    std::uint64_t frame_id = 0;
    double timestamp_ms = 0.0;

    int valid_bands() const;
    bool is_stale(double now_ms, double max_age_s) const { return now_ms - timestamp_ms > max_age_s * 1000.0; }
};

/// Median of the valid roi samples per band, divided by the gauze factor.
/// Throws if the roi is outside the cube or no band survives.
WhiteReference extract_white_reference(const cube::SpectralCube& uniform, const RegionOfInterest& roi,
                                       const WhiteOptions& options = {});

/// Spatial white from a uniform flat-field cube (one reference value per pixel and band).
WhiteReference white_reference_from_flat_field(const cube::SpectralCube& flat_field, const WhiteOptions& options = {});

/// reflectance = value / white on bands where the sample and the white band are valid.
cube::SpectralCube normalize_reflectance(const cube::SpectralCube& uniform, const WhiteReference& white);
/// Same result, computed in the storage of `cube` (uniform stage in, reflectance stage out).
void normalize_reflectance_in_place(cube::SpectralCube& cube, const WhiteReference& white);

} // namespace hslf::reflect
