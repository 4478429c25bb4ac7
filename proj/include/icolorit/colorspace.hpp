#pragma once

#include <array>
#include <cstdint>

#include "icolorit/image.hpp"

namespace icolorit::colorspace {

/// ab values are divided by this before entering the network.
inline constexpr double kAbScale = 110.0;

struct Lab {
    double L = 0.0;
    double a = 0.0;
    double b = 0.0;
};

/// sRGB (D65, standard transfer curve) to CIELab for one pixel.
Lab rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
/// CIELab to sRGB; out-of-gamut channels are clamped to [0,255].
std::array<std::uint8_t, 3> lab_to_rgb(const Lab& lab);

LabImage rgb_to_lab(const RgbImage& img);
RgbImage lab_to_rgb(const LabImage& img);

LumaPlane extract_grayscale(const LabImage& img);

/// Wraps a lightness plane into a LabImage with zero chroma.
LabImage from_grayscale(const LumaPlane& luma);

inline double normalize_l(double l) { return l / 100.0; }
inline double normalize_ab(double v) { return v / kAbScale; }
inline double denormalize_l(double l) { return l * 100.0; }
inline double denormalize_ab(double v) { return v * kAbScale; }

}  // namespace icolorit::colorspace
