#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "hslf/calib.hpp"
#include "hslf/raster.hpp"

/// Reconstruction of a uniform hyperspectral cube from a raw light-field
/// sensor frame: sub-image extraction, homography alignment and per-pixel
/// spectral resampling onto the camera's band grid.
namespace hslf::cube {

struct RawSensorFrame {
    int width = 0;
    int height = 0;
    int bit_depth = 12;
    std::vector<std::uint16_t> pixels;   ///< row-major digital numbers
    float integration_time_ms = 0.0f;
    double timestamp_ms = 0.0;           ///< monotonic capture time
    std::uint64_t frame_id = 0;

    RawSensorFrame() = default;
    RawSensorFrame(int w, int h, int depth = 12)
        : width(w), height(h), bit_depth(depth), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

    std::uint16_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint16_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    int saturation_dn() const { return (1 << bit_depth) - 1; }

    bool operator==(const RawSensorFrame&) const = default;
};

/// Throws a data error if dimensions are inconsistent or a value does not fit the bit depth.
void validate(const RawSensorFrame& frame);

enum class Stage : std::uint8_t { raw = 0, transformed = 1, uniform = 2, reflectance = 3 };

inline bool is_lens_indexed(Stage s) { return s == Stage::raw || s == Stage::transformed; }

/// Plane-major stack of equally sized float planes with a per-sample validity
/// mask. Raw/transformed planes are indexed by lens, uniform/reflectance
/// planes by band wavelength.
class SpectralCube {
public:
    SpectralCube() = default;
    SpectralCube(int width, int height, int planes, Stage stage);

    int width() const { return width_; }
    int height() const { return height_; }
    int planes() const { return planes_; }
    Stage stage() const { return stage_; }
    std::size_t plane_size() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }

    /// Band wavelength per plane (NaN for lens-indexed stages).
    const std::vector<double>& wavelengths() const { return wavelengths_; }
    void set_wavelengths(std::vector<double> w);
    /// Lens index carried by plane `p` on lens-indexed stages (the plane position).
    int lens_index(int p) const { return p; }

    float* plane(int p) { return values_.data() + plane_size() * static_cast<std::size_t>(p); }
    const float* plane(int p) const { return values_.data() + plane_size() * static_cast<std::size_t>(p); }
    std::uint8_t* valid_plane(int p) { return valid_.data() + plane_size() * static_cast<std::size_t>(p); }
    const std::uint8_t* valid_plane(int p) const { return valid_.data() + plane_size() * static_cast<std::size_t>(p); }

    float& value(int p, int x, int y) { return plane(p)[static_cast<std::size_t>(y) * width_ + x]; }
    float value(int p, int x, int y) const { return plane(p)[static_cast<std::size_t>(y) * width_ + x]; }
    bool valid(int p, int x, int y) const { return valid_plane(p)[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set_valid(int p, int x, int y, bool v) { valid_plane(p)[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    std::vector<float>& values() { return values_; }
    const std::vector<float>& values() const { return values_; }
    std::vector<std::uint8_t>& validity() { return valid_; }
    const std::vector<std::uint8_t>& validity() const { return valid_; }

    void set_stage(Stage s) { stage_ = s; }

    /// Reshapes in place, reusing the existing allocation. All values and
    /// validity flags become zero, wavelengths NaN.
    void reset(int width, int height, int planes, Stage stage);

    /// Values are compared bitwise (NaN payloads included).
    bool operator==(const SpectralCube& o) const;

private:
    int width_ = 0;
    int height_ = 0;
    int planes_ = 0;
    Stage stage_ = Stage::raw;
    std::vector<double> wavelengths_;
    std::vector<float> values_;
    std::vector<std::uint8_t> valid_;
};

struct ExtractOptions {
    /// Samples below this DN carry no signal and are marked invalid (0 disables).
    int dark_floor_dn = 0;
};

/// One plane per lens, copied from the lens' sensor region. Saturated
/// samples (DN = 2^bit_depth - 1) are invalid.
SpectralCube extract_raw_cube(const RawSensorFrame& frame, const calib::MicrolensLayout& layout,
                              const ExtractOptions& options = {});
void extract_raw_cube(const RawSensorFrame& frame, const calib::MicrolensLayout& layout, const ExtractOptions& options,
                      SpectralCube& out);

/// Aligns every lens plane with the scene: output(p) = bilinear(input, H * p).
/// Samples falling outside the sub-image, or touching an invalid source
/// sample with non-zero weight, are invalid.
SpectralCube warp_cube(const SpectralCube& raw, const calib::ResolvedCalibration& resolved);
void warp_cube(const SpectralCube& raw, const calib::ResolvedCalibration& resolved, SpectralCube& out);

/// Per scene pixel, gathers (wavelength, value) from every lens plane via the
/// dispersion map and linearly interpolates onto `grid`. A band is valid only
/// when bracketed by two valid samples no further apart than twice the local
/// band spacing; nothing is extrapolated.
SpectralCube resample_uniform(const SpectralCube& transformed, const calib::ResolvedCalibration& resolved,
                              const calib::BandGrid& grid);
void resample_uniform(const SpectralCube& transformed, const calib::ResolvedCalibration& resolved,
                      const calib::BandGrid& grid, SpectralCube& out);

/// Scalar per-pixel interpolation rule used by resample_uniform. `samples`
/// need not be sorted and is compacted in place; invalid samples are ignored.
/// Bands the samples do not cover are written as invalid zeros.
struct SpectralSample {
    double wavelength_nm;
    float value;
    bool valid;
};
void interpolate_spectrum(std::vector<SpectralSample>& samples, const calib::BandGrid& grid, float* out_values,
                          std::uint8_t* out_valid, std::size_t out_stride);

} // namespace hslf::cube
