#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "icolorit/image.hpp"

namespace icolorit {

/// Seeded generator used for every stochastic step (hint simulation,
/// synthetic data, initialization).
using Rng = std::mt19937_64;

/// A user color condition covering a size x size block anchored at its
/// top-left pixel (x, y).
struct Hint {
    int x = 0;
    int y = 0;
    int size = 2;
    double a = 0.0;
    double b = 0.0;

    bool operator==(const Hint&) const = default;
};

/// Raster encoding of a hint list: chroma planes plus a {0,1} mask.
struct HintPlanes {
    int width = 0;
    int height = 0;
    Plane a;
    Plane b;
    Plane mask;
};

/// Four-channel network input, channel-last: normalized L, a, b, mask.
struct NetInput {
    static constexpr int kChannels = 4;

    int width = 0;
    int height = 0;
    std::vector<double> data;

    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
    }
};

namespace hints {

int sample_hint_count(Rng& rng, int max_count);

std::vector<std::pair<int, int>> sample_hint_locations(Rng& rng, int n, int width, int height,
                                                       int size);

/// Mean chroma over the hint block. Throws InvalidArgument if the block
/// leaves the image.
std::pair<double, double> hint_color_from_image(const LabImage& img, int x, int y, int size);

/// Checks the Hint invariants against a width x height image.
bool in_bounds(const Hint& h, int width, int height);

/// Later hints overwrite earlier ones where footprints overlap.
HintPlanes encode_hints(const std::vector<Hint>& hint_list, int width, int height);

NetInput build_model_input(const LumaPlane& luma, const HintPlanes& planes);

/// Draws U(0, max_count) hints with colors taken from the ground truth.
std::vector<Hint> simulate_hints(Rng& rng, const LabImage& img, int max_count, int size);

/// Draws exactly n hints with colors taken from the ground truth.
std::vector<Hint> simulate_n_hints(Rng& rng, const LabImage& img, int n, int size);

/// Parses the hints file schema: a JSON array of {"x","y","size","a","b"}
/// or {"x","y","size","rgb":[r,g,b]} objects. "size" defaults to 2.
std::vector<Hint> parse_hints_json(const std::string& text);
std::string hints_to_json(const std::vector<Hint>& hint_list);

}  // namespace hints
}  // namespace icolorit
