#pragma once

#include <string>
#include <vector>

#include "icolorit/hints.hpp"
#include "icolorit/image.hpp"
#include "icolorit/model.hpp"

namespace icolorit::rollout {

/// Square row-major matrix of doubles.
struct Matrix {
    int n = 0;
    std::vector<double> data;

    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * n + j]; }
};

/// Head-averaged, identity-mixed (0.5 A + 0.5 I), row-renormalized product
/// of the recorded layers, last layer on the left. Throws InvalidArgument
/// for an empty record or rows that do not sum to 1 within 1e-3.
Matrix attention_rollout(const AttentionRecord& record);

/// Patch-grid heat map of where the hint's token attends after rollout.
struct HeatMap {
    int grid_width = 0;
    int grid_height = 0;
    int patch = 0;
    std::vector<double> values;
    /// Token row selected for the hint.
    int token = 0;
};

/// Rollout of one forward pass over `input`.
Matrix input_rollout(const Model& model, const NetInput& input);

/// Row of `rollout` for the token containing the hint's top-left pixel.
HeatMap heat_map_for_hint(const Matrix& rollout, const ModelConfig& config, const Hint& hint);

HeatMap hint_attention_map(const Model& model, const NetInput& input, const Hint& hint);

/// Grid JSON: {"grid_width","grid_height","patch","token","values":[[...]]}.
std::string heat_map_to_json(const HeatMap& map);

/// Min-max scaled 8-bit grayscale, one pixel per cell, or `upsample`
/// pixels per cell with nearest-neighbor replication.
RgbImage heat_map_to_image(const HeatMap& map, int upsample = 1);

}  // namespace icolorit::rollout
