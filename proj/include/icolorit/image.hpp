#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace icolorit {

/// 8-bit sRGB image, interleaved r,g,b, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t offset(int x, int y) const {
        return (static_cast<std::size_t>(y) * width + x) * 3;
    }
    std::uint8_t* pixel(int x, int y) { return data.data() + offset(x, y); }
    const std::uint8_t* pixel(int x, int y) const { return data.data() + offset(x, y); }

    bool operator==(const RgbImage&) const = default;
};

/// Single real-valued raster, row-major.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const Plane&) const = default;
};

/// The lightness channel of a CIELab image, L in [0,100].
using LumaPlane = Plane;

/// CIELab image stored as three planes.
struct LabImage {
    int width = 0;
    int height = 0;
    Plane L;
    Plane a;
    Plane b;

    LabImage() = default;
    LabImage(int w, int h) : width(w), height(h), L(w, h), a(w, h), b(w, h) {}

    bool operator==(const LabImage&) const = default;
};

}  // namespace icolorit
