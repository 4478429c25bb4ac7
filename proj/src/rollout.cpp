#include "icolorit/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit::rollout {

Matrix attention_rollout(const AttentionRecord& record) {
    if (record.layers.empty()) throw InvalidArgument("attention_rollout: no layers recorded");
    const int n = record.tokens;
    const int heads = record.heads;
    const auto nn = static_cast<std::size_t>(n) * n;
    Matrix result{n, std::vector<double>(nn, 0.0)};
    for (int i = 0; i < n; ++i) result.data[static_cast<std::size_t>(i) * n + i] = 1.0;

    std::vector<double> mixed(nn);
    std::vector<double> next(nn);
    for (std::size_t l = 0; l < record.layers.size(); ++l) {
        const auto& layer = record.layers[l];
        if (layer.size() != static_cast<std::size_t>(heads) * nn) {
            throw InvalidArgument("attention_rollout: layer " + std::to_string(l) +
                                  " has wrong size");
        }
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += layer[(static_cast<std::size_t>(h) * n + i) * n + j];
                if (std::abs(s - 1.0) > 1e-3) {
                    throw InvalidArgument("attention_rollout: corrupt record, layer " +
                                          std::to_string(l) + " head " + std::to_string(h) +
                                          " row " + std::to_string(i) + " sums to " +
                                          std::to_string(s));
                }
            }
        }
        std::fill(mixed.begin(), mixed.end(), 0.0);
        for (int h = 0; h < heads; ++h) {
            const double* src = layer.data() + static_cast<std::size_t>(h) * nn;
            for (std::size_t k = 0; k < nn; ++k) mixed[k] += src[k];
        }
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) {
                double& e = mixed[static_cast<std::size_t>(i) * n + j];
                e = 0.5 * e / heads + (i == j ? 0.5 : 0.0);
                s += e;
            }
            for (int j = 0; j < n; ++j) mixed[static_cast<std::size_t>(i) * n + j] /= s;
        }
        // result <- mixed * result
        std::fill(next.begin(), next.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < n; ++k) {
                const double a = mixed[static_cast<std::size_t>(i) * n + k];
                if (a == 0.0) continue;
                const double* row = result.data.data() + static_cast<std::size_t>(k) * n;
                double* out = next.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) out[j] += a * row[j];
            }
        }
        std::swap(result.data, next);
    }
    return result;
}

Matrix input_rollout(const Model& model, const NetInput& input) {
    AttentionRecord record;
    {
        ad::NoGradGuard no_grad;
        model.forward(std::span(&input, 1), &record);
    }
    return attention_rollout(record);
}

HeatMap heat_map_for_hint(const Matrix& r, const ModelConfig& c, const Hint& hint) {
    if (!hints::in_bounds(hint, c.image_size, c.image_size)) {
        throw InvalidArgument("hint_attention_map: hint at (" + std::to_string(hint.x) + "," +
                              std::to_string(hint.y) + ") outside the image");
    }
    const int grid = c.grid();
    if (r.n != grid * grid) throw InvalidArgument("hint_attention_map: rollout size mismatch");
    HeatMap map;
    map.grid_width = grid;
    map.grid_height = grid;
    map.patch = c.patch_size;
    map.token = (hint.y / c.patch_size) * grid + hint.x / c.patch_size;
    map.values.assign(r.data.begin() + static_cast<std::ptrdiff_t>(map.token) * r.n,
                      r.data.begin() + static_cast<std::ptrdiff_t>(map.token + 1) * r.n);
    return map;
}

HeatMap hint_attention_map(const Model& model, const NetInput& input, const Hint& hint) {
    if (!hints::in_bounds(hint, input.width, input.height)) {
        throw InvalidArgument("hint_attention_map: hint at (" + std::to_string(hint.x) + "," +
                              std::to_string(hint.y) + ") outside the image");
    }
    return heat_map_for_hint(input_rollout(model, input), model.config(), hint);
}

std::string heat_map_to_json(const HeatMap& map) {
    nlohmann::json rows = nlohmann::json::array();
    for (int y = 0; y < map.grid_height; ++y) {
        nlohmann::json row = nlohmann::json::array();
        for (int x = 0; x < map.grid_width; ++x) {
            row.push_back(map.values[static_cast<std::size_t>(y) * map.grid_width + x]);
        }
        rows.push_back(std::move(row));
    }
    nlohmann::json j = {{"grid_width", map.grid_width}, {"grid_height", map.grid_height},
                        {"patch", map.patch},           {"token", map.token},
                        {"values", std::move(rows)}};
    return j.dump();
}

RgbImage heat_map_to_image(const HeatMap& map, int upsample) {
    if (upsample < 1) throw InvalidArgument("heat map upsampling factor must be >= 1");
    const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    RgbImage img(map.grid_width * upsample, map.grid_height * upsample);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double v =
                map.values[static_cast<std::size_t>(y / upsample) * map.grid_width + x / upsample];
            const double t = span > 0.0 ? (v - lo) / span : 0.0;
            const auto g = static_cast<std::uint8_t>(std::lround(t * 255.0));
            std::uint8_t* px = img.pixel(x, y);
            px[0] = px[1] = px[2] = g;
        }
    }
    return img;
}

}  // namespace icolorit::rollout
