#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace hslf {

/// Dense row-major 2D array.
template <typename T>
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Raster() = default;
    Raster(int w, int h, T fill = T{})
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t size() const { return data.size(); }
    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    T* row(int y) { return data.data() + static_cast<std::size_t>(y) * width; }
    const T* row(int y) const { return data.data() + static_cast<std::size_t>(y) * width; }

    bool operator==(const Raster&) const = default;
};

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb8&) const = default;
};

struct Rgba8 {
    std::uint8_t r = 0, g = 0, b = 0, a = 0;
    bool operator==(const Rgba8&) const = default;
};

using RgbImage = Raster<Rgb8>;
using RgbaImage = Raster<Rgba8>;

/// Axis-aligned pixel rectangle.
struct Rect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    long long area() const { return static_cast<long long>(width) * height; }
    bool inside(int w, int h) const {
        return x >= 0 && y >= 0 && width > 0 && height > 0 && x + width <= w && y + height <= h;
    }
    bool intersects(const Rect& o) const {
        return x < o.x + o.width && o.x < x + width && y < o.y + o.height && o.y < y + height;
    }
    bool operator==(const Rect&) const = default;
};

} // namespace hslf
