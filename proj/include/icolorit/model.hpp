#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icolorit/hints.hpp"
#include "icolorit/image.hpp"
#include "icolorit/tensor.hpp"

namespace icolorit {

/// Layer placed between the encoder and pixel shuffling.
enum class LsKind { Convolution, LocalAttention, Linear };

std::string_view to_string(LsKind kind);
/// Accepts "convolution", "local_attention", "linear".
LsKind parse_ls_kind(std::string_view text);

struct ModelConfig {
    int image_size = 224;
    int patch_size = 16;
    int depth = 12;
    int dim = 768;
    int heads = 12;
    int mlp_dim = 3072;
    LsKind ls_kind = LsKind::Convolution;

    static ModelConfig base();
    static ModelConfig small();
    static ModelConfig tiny();
    /// Desk-scale: 64x64 images, 8x8 patches, 4 layers of width 64.
    static ModelConfig toy();
    /// "base", "small"/"S", "tiny"/"T", "toy".
    static ModelConfig preset(std::string_view name);

    /// Patches per side.
    int grid() const { return image_size / patch_size; }
    int tokens() const { return grid() * grid(); }
    int head_dim() const { return dim / heads; }
    /// Output channels of the stabilizing layer, 2 * P^2.
    int ls_channels() const { return 2 * patch_size * patch_size; }
    int token_width() const { return patch_size * patch_size * NetInput::kChannels; }

    /// Throws InvalidArgument when invariants fail.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

struct Parameter {
    std::string name;
    ad::Tensor tensor;
    /// Whether AdamW applies decoupled weight decay.
    bool decay = false;
};

struct ParameterSpec {
    std::string name;
    ad::Shape shape;
    bool decay = false;
};

/// Every parameter of a configuration, in canonical order.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& config);

/// Named parameter set of one model.
class ModelParams {
public:
    ModelParams() = default;

    /// Truncated-normal (std 0.02) weights, unit LN scales, zero biases and
    /// zero relative-bias tables.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);
    /// Zero-filled tensors for every entry of the layout.
    static ModelParams zeros(const ModelConfig& config);

    const ad::Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;
    std::vector<Parameter>& list() { return params_; }
    const std::vector<Parameter>& list() const { return params_; }
    std::size_t count() const;

    void zero_grad();

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t, std::less<>> index_;

    void add(Parameter p);
};

/// Post-softmax attention weights captured for one image.
struct AttentionRecord {
    int heads = 0;
    int tokens = 0;
    /// layers[l][(h * tokens + i) * tokens + j]
    std::vector<std::vector<double>> layers;
};

/// The network: config plus parameters.
class Model {
public:
    Model(ModelConfig config, ModelParams params);

    const ModelConfig& config() const { return config_; }
    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }

    /// Normalized ab predictions [B, H, W, 2] for a batch of inputs. When
    /// `record` is set the batch must hold exactly one image.
    ad::Tensor forward(std::span<const NetInput> inputs, AttentionRecord* record = nullptr) const;

private:
    ModelConfig config_;
    ModelParams params_;
};

namespace model {

/// Tokens [N, P*P*4]: each row is one P x P x 4 block, patches in
/// row-major grid order.
ad::Tensor patchify(const NetInput& input, int patch);

/// Fixed sinusoid over the flattened token index.
ad::Tensor positional_encoding(int tokens, int dim);

/// Flat table index for each (i, j) token pair of a G x G grid.
std::vector<std::int64_t> relative_bias_indices(int grid);

/// Expands a [heads, (2G-1)^2] table into [heads, N, N].
ad::Tensor relative_bias(const ad::Tensor& table, int grid, int heads);

struct BlockParams {
    ad::Tensor norm1_w, norm1_b;
    ad::Tensor qkv_w, qkv_b;
    ad::Tensor bias_table;
    ad::Tensor proj_w, proj_b;
    ad::Tensor norm2_w, norm2_b;
    ad::Tensor fc1_w, fc1_b;
    ad::Tensor fc2_w, fc2_b;

    static BlockParams from(const ModelParams& params, int layer);
};

/// Pre-norm transformer block over z[B*N, d]. `bias` is the expanded
/// relative bias [heads, N, N]. Appends image 0's attention weights to
/// `attention` when given.
ad::Tensor encoder_block(const ad::Tensor& z, const BlockParams& p, const ad::Tensor& bias,
                         int heads, int batch, std::vector<double>* attention = nullptr);

/// y[(B,) G, G, d] -> [(B,) G, G, 2 P^2].
ad::Tensor local_stabilizing_layer(const ad::Tensor& y, LsKind kind, const ModelParams& params);

/// Giga multiply-accumulates of one forward pass (the convention behind
/// the commonly reported ViT "GFLOPs"); element-wise work excluded.
double count_flops(const ModelConfig& config);

std::size_t parameter_count(const ModelConfig& config);
/// Patch embedding, encoder blocks and final norm.
std::size_t backbone_parameter_count(const ModelConfig& config);

/// Denormalized ab planes at model resolution.
std::pair<Plane, Plane> predict_ab(const Model& model, const LumaPlane& luma,
                                   const std::vector<Hint>& hint_list);

/// The given lightness joined with predicted chroma.
LabImage predict_lab(const Model& model, const LumaPlane& luma, const std::vector<Hint>& hint_list);

RgbImage predict_image(const Model& model, const LumaPlane& luma,
                       const std::vector<Hint>& hint_list);

/// Batched predict_lab over equally sized inputs.
std::vector<LabImage> predict_lab_batch(const Model& model, std::span<const LumaPlane> lumas,
                                        std::span<const std::vector<Hint>> hint_lists);

}  // namespace model
}  // namespace icolorit
