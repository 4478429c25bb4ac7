#include "icolorit/colorspace.hpp"

#include <algorithm>
#include <cmath>

namespace icolorit::colorspace {
namespace {

// D65 reference white.
constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.0;
constexpr double kWhiteZ = 1.08883;

constexpr double kEpsilon = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

struct LinearTable {
    std::array<double, 256> v{};
    LinearTable() {
        for (int i = 0; i < 256; ++i) {
            const double c = i / 255.0;
            v[i] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
        }
    }
};

const LinearTable& linear_table() {
    static const LinearTable table;
    return table;
}

double lab_f(double t) {
    return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

double lab_f_inv(double f) {
    const double f3 = f * f * f;
    return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}

double encode_gamma(double c) {
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

std::uint8_t to_byte(double c) {
    const double v = std::round(encode_gamma(std::clamp(c, 0.0, 1.0)) * 255.0);
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace

Lab rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const auto& lin = linear_table().v;
    const double rl = lin[r], gl = lin[g], bl = lin[b];

    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;

    const double fx = lab_f(x / kWhiteX);
    const double fy = lab_f(y / kWhiteY);
    const double fz = lab_f(z / kWhiteZ);

    Lab out;
    out.L = std::clamp(116.0 * fy - 16.0, 0.0, 100.0);
    out.a = 500.0 * (fx - fy);
    out.b = 200.0 * (fy - fz);
    return out;
}

std::array<std::uint8_t, 3> lab_to_rgb(const Lab& lab) {
    const double fy = (lab.L + 16.0) / 116.0;
    const double fx = fy + lab.a / 500.0;
    const double fz = fy - lab.b / 200.0;

    const double x = kWhiteX * lab_f_inv(fx);
    const double y = kWhiteY * (lab.L > kKappa * kEpsilon ? fy * fy * fy : lab.L / kKappa);
    const double z = kWhiteZ * lab_f_inv(fz);

    const double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    return {to_byte(rl), to_byte(gl), to_byte(bl)};
}

LabImage rgb_to_lab(const RgbImage& img) {
    LabImage out(img.width, img.height);
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
        const Lab lab = rgb_to_lab(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
        out.L.data[i] = lab.L;
        out.a.data[i] = lab.a;
        out.b.data[i] = lab.b;
    }
    return out;
}

RgbImage lab_to_rgb(const LabImage& img) {
    RgbImage out(img.width, img.height);
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
        const auto rgb = lab_to_rgb(Lab{img.L.data[i], img.a.data[i], img.b.data[i]});
        std::copy(rgb.begin(), rgb.end(), out.data.begin() + 3 * i);
    }
    return out;
}

LumaPlane extract_grayscale(const LabImage& img) { return img.L; }

LabImage from_grayscale(const LumaPlane& luma) {
    LabImage out(luma.width, luma.height);
    out.L = luma;
    return out;
}

}  // namespace icolorit::colorspace
