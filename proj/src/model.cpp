#include "icolorit/model.hpp"

#include <algorithm>
#include <cmath>

#include "icolorit/colorspace.hpp"
#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit {

using ad::Tensor;

std::string_view to_string(LsKind kind) {
    switch (kind) {
        case LsKind::Convolution: return "convolution";
        case LsKind::LocalAttention: return "local_attention";
        case LsKind::Linear: return "linear";
    }
    return "convolution";
}

LsKind parse_ls_kind(std::string_view text) {
    if (text == "convolution") return LsKind::Convolution;
    if (text == "local_attention") return LsKind::LocalAttention;
    if (text == "linear") return LsKind::Linear;
    throw InvalidArgument("unknown stabilizing layer kind '" + std::string(text) + "'");
}

ModelConfig ModelConfig::base() { return {}; }

ModelConfig ModelConfig::small() {
    ModelConfig c;
    c.dim = 384;
    c.heads = 6;
    c.mlp_dim = 1536;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.dim = 192;
    c.heads = 3;
    c.mlp_dim = 768;
    return c;
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.image_size = 64;
    c.patch_size = 8;
    c.depth = 4;
    c.dim = 64;
    c.heads = 4;
    c.mlp_dim = 256;
    return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
    if (name == "base" || name == "B") return base();
    if (name == "small" || name == "S") return small();
    if (name == "tiny" || name == "T") return tiny();
    if (name == "toy") return toy();
    throw InvalidArgument("unknown model preset '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("model config: " + m); };
    if (patch_size < 1 || image_size < 1) fail("image_size and patch_size must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (depth < 0) fail("depth must be >= 0");
    if (heads < 1 || dim < 1 || dim % heads != 0) fail("dim must be divisible by heads");
    if (dim % 2 != 0) fail("dim must be even for the sinusoidal encoding");
    if (mlp_dim < 1) fail("mlp_dim must be positive");
}

std::string config_to_json(const ModelConfig& c) {
    nlohmann::json j = {{"image_size", c.image_size}, {"patch_size", c.patch_size},
                        {"depth", c.depth},           {"dim", c.dim},
                        {"heads", c.heads},           {"mlp_dim", c.mlp_dim},
                        {"ls_kind", std::string(to_string(c.ls_kind))}};
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("model config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("model config: expected an object");
    ModelConfig c = j.contains("preset") ? ModelConfig::preset(j["preset"].get<std::string>())
                                         : ModelConfig{};
    try {
        if (j.contains("image_size")) c.image_size = j["image_size"].get<int>();
        if (j.contains("patch_size")) c.patch_size = j["patch_size"].get<int>();
        if (j.contains("depth")) c.depth = j["depth"].get<int>();
        if (j.contains("dim")) c.dim = j["dim"].get<int>();
        if (j.contains("heads")) c.heads = j["heads"].get<int>();
        if (j.contains("mlp_dim")) c.mlp_dim = j["mlp_dim"].get<int>();
        if (j.contains("ls_kind")) c.ls_kind = parse_ls_kind(j["ls_kind"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<ParameterSpec> parameter_layout(const ModelConfig& c) {
    c.validate();
    const auto d = static_cast<std::size_t>(c.dim);
    const auto mlp = static_cast<std::size_t>(c.mlp_dim);
    const auto table = static_cast<std::size_t>((2 * c.grid() - 1) * (2 * c.grid() - 1));
    const auto out = static_cast<std::size_t>(c.ls_channels());

    std::vector<ParameterSpec> specs;
    specs.push_back({"patch_embed.weight", {static_cast<std::size_t>(c.token_width()), d}, true});
    specs.push_back({"patch_embed.bias", {d}, false});
    for (int l = 0; l < c.depth; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        specs.push_back({p + "norm1.weight", {d}, false});
        specs.push_back({p + "norm1.bias", {d}, false});
        specs.push_back({p + "attn.qkv.weight", {d, 3 * d}, true});
        specs.push_back({p + "attn.qkv.bias", {3 * d}, false});
        specs.push_back({p + "attn.relative_bias_table",
                         {static_cast<std::size_t>(c.heads), table}, false});
        specs.push_back({p + "attn.proj.weight", {d, d}, true});
        specs.push_back({p + "attn.proj.bias", {d}, false});
        specs.push_back({p + "norm2.weight", {d}, false});
        specs.push_back({p + "norm2.bias", {d}, false});
        specs.push_back({p + "mlp.fc1.weight", {d, mlp}, true});
        specs.push_back({p + "mlp.fc1.bias", {mlp}, false});
        specs.push_back({p + "mlp.fc2.weight", {mlp, d}, true});
        specs.push_back({p + "mlp.fc2.bias", {d}, false});
    }
    specs.push_back({"norm.weight", {d}, false});
    specs.push_back({"norm.bias", {d}, false});
    switch (c.ls_kind) {
        case LsKind::Convolution:
            specs.push_back({"ls.weight", {3, 3, d, out}, true});
            specs.push_back({"ls.bias", {out}, false});
            break;
        case LsKind::Linear:
            specs.push_back({"ls.weight", {d, out}, true});
            specs.push_back({"ls.bias", {out}, false});
            break;
        case LsKind::LocalAttention:
            specs.push_back({"ls.q.weight", {d, d}, true});
            specs.push_back({"ls.k.weight", {d, d}, true});
            specs.push_back({"ls.v.weight", {d, out}, true});
            specs.push_back({"ls.v.bias", {out}, false});
            break;
    }
    return specs;
}

namespace {

bool is_norm_scale(const std::string& name) {
    return name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
           name == "norm.weight";
}

}  // namespace

void ModelParams::add(Parameter p) {
    if (!index_.emplace(p.name, params_.size()).second) {
        throw InvalidArgument("duplicate parameter name '" + p.name + "'");
    }
    params_.push_back(std::move(p));
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    ModelParams out;
    for (auto& spec : parameter_layout(config)) {
        out.add({spec.name, Tensor::zeros(spec.shape, true), spec.decay});
    }
    return out;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    ModelParams out;
    for (auto& spec : parameter_layout(config)) {
        std::vector<double> v(ad::numel(spec.shape), 0.0);
        if (is_norm_scale(spec.name)) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (spec.decay) {
            for (double& e : v) {
                do {
                    e = normal(rng);
                } while (std::abs(e) > 0.04);
            }
        }
        out.add({spec.name, Tensor::from(spec.shape, std::move(v), true), spec.decay});
    }
    return out;
}

const Tensor& ModelParams::get(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("no parameter named '" + std::string(name) + "'");
    return params_[it->second].tensor;
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// Building blocks

namespace model {

Tensor patchify(const NetInput& input, int patch) {
    if (patch < 1 || input.width % patch != 0 || input.height % patch != 0) {
        throw InvalidArgument("patchify: " + std::to_string(input.width) + "x" +
                              std::to_string(input.height) + " not divisible by patch " +
                              std::to_string(patch));
    }
    const int gw = input.width / patch;
    const int gh = input.height / patch;
    const std::size_t width = static_cast<std::size_t>(patch) * patch * NetInput::kChannels;
    std::vector<double> v(static_cast<std::size_t>(gw) * gh * width);
    std::size_t k = 0;
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    for (int c = 0; c < NetInput::kChannels; ++c) {
                        v[k++] = input.at(gx * patch + px, gy * patch + py, c);
                    }
                }
            }
        }
    }
    return Tensor::from({static_cast<std::size_t>(gw) * gh, width}, std::move(v));
}

Tensor positional_encoding(int tokens, int dim) {
    if (dim % 2 != 0) throw InvalidArgument("positional_encoding: dim must be even");
    std::vector<double> v(static_cast<std::size_t>(tokens) * dim);
    for (int pos = 0; pos < tokens; ++pos) {
        for (int i = 0; i < dim / 2; ++i) {
            const double angle = pos / std::pow(10000.0, 2.0 * i / dim);
            v[static_cast<std::size_t>(pos) * dim + 2 * i] = std::sin(angle);
            v[static_cast<std::size_t>(pos) * dim + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor::from({static_cast<std::size_t>(tokens), static_cast<std::size_t>(dim)},
                        std::move(v));
}

std::vector<std::int64_t> relative_bias_indices(int grid) {
    const int n = grid * grid;
    const int side = 2 * grid - 1;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int dy = j / grid - i / grid;
            const int dx = j % grid - i % grid;
            idx[static_cast<std::size_t>(i) * n + j] = (dy + grid - 1) * side + (dx + grid - 1);
        }
    }
    return idx;
}

Tensor relative_bias(const Tensor& table, int grid, int heads) {
    const auto side = static_cast<std::size_t>(2 * grid - 1);
    if (table.rank() != 2 || table.dim(0) != static_cast<std::size_t>(heads) ||
        table.dim(1) != side * side) {
        throw InvalidArgument("relative_bias: table shape " + ad::shape_str(table.shape()));
    }
    const auto base = relative_bias_indices(grid);
    const auto n = static_cast<std::size_t>(grid) * grid;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(heads) * base.size());
    for (int h = 0; h < heads; ++h) {
        for (auto e : base) idx->push_back(e + static_cast<std::int64_t>(h * side * side));
    }
    return ad::gather(table, std::move(idx), {static_cast<std::size_t>(heads), n, n});
}

BlockParams BlockParams::from(const ModelParams& params, int layer) {
    const std::string p = "blocks." + std::to_string(layer) + ".";
    BlockParams b;
    b.norm1_w = params.get(p + "norm1.weight");
    b.norm1_b = params.get(p + "norm1.bias");
    b.qkv_w = params.get(p + "attn.qkv.weight");
    b.qkv_b = params.get(p + "attn.qkv.bias");
    b.bias_table = params.get(p + "attn.relative_bias_table");
    b.proj_w = params.get(p + "attn.proj.weight");
    b.proj_b = params.get(p + "attn.proj.bias");
    b.norm2_w = params.get(p + "norm2.weight");
    b.norm2_b = params.get(p + "norm2.bias");
    b.fc1_w = params.get(p + "mlp.fc1.weight");
    b.fc1_b = params.get(p + "mlp.fc1.bias");
    b.fc2_w = params.get(p + "mlp.fc2.weight");
    b.fc2_b = params.get(p + "mlp.fc2.bias");
    return b;
}

Tensor encoder_block(const Tensor& z, const BlockParams& p, const Tensor& bias, int heads,
                     int batch, std::vector<double>* attention) {
    if (z.rank() != 2 || batch < 1 || z.dim(0) % static_cast<std::size_t>(batch) != 0) {
        throw InvalidArgument("encoder_block: input " + ad::shape_str(z.shape()) +
                              " for batch " + std::to_string(batch));
    }
    const std::size_t d = z.dim(1);
    const std::size_t n = z.dim(0) / static_cast<std::size_t>(batch);
    const std::size_t hd = d / static_cast<std::size_t>(heads);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Tensor bias_rows = ad::reshape(bias, {static_cast<std::size_t>(heads) * n, n});

    const Tensor h = ad::layer_norm(z, p.norm1_w, p.norm1_b);
    const Tensor qkv = ad::linear(h, p.qkv_w, p.qkv_b);
    std::vector<Tensor> images;
    images.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        const std::size_t row0 = static_cast<std::size_t>(b) * n;
        std::vector<Tensor> head_out;
        head_out.reserve(static_cast<std::size_t>(heads));
        for (int hh = 0; hh < heads; ++hh) {
            const std::size_t c0 = static_cast<std::size_t>(hh) * hd;
            const Tensor q = ad::slice2d(qkv, row0, n, c0, hd);
            const Tensor k = ad::slice2d(qkv, row0, n, d + c0, hd);
            const Tensor v = ad::slice2d(qkv, row0, n, 2 * d + c0, hd);
            const Tensor bh = ad::slice2d(bias_rows, static_cast<std::size_t>(hh) * n, n, 0, n);
            const Tensor logits = ad::add(ad::scale(ad::matmul_nt(q, k), inv_scale), bh);
            const Tensor weights = ad::softmax_lastdim(logits);
            if (attention && b == 0) {
                attention->insert(attention->end(), weights.values().begin(), weights.values().end());
            }
            head_out.push_back(ad::matmul(weights, v));
        }
        images.push_back(heads == 1 ? head_out[0] : ad::concat_cols(head_out));
    }
    const Tensor attn = batch == 1 ? images[0] : ad::concat_rows(images);
    const Tensor z1 = ad::add(z, ad::linear(attn, p.proj_w, p.proj_b));

    const Tensor h2 = ad::layer_norm(z1, p.norm2_w, p.norm2_b);
    const Tensor mlp = ad::linear(ad::gelu(ad::linear(h2, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
    return ad::add(z1, mlp);
}

namespace {

// Row-major [B*G*G*9, d] gather plan of each cell's 3x3 neighborhood;
// -1 marks taps outside the grid. `mask` holds 0 or a large negative
// logit per (cell, tap).
struct NeighborPlan {
    std::shared_ptr<std::vector<std::int64_t>> indices;
    std::vector<double> mask;
};

NeighborPlan neighbor_plan(std::size_t batch, std::size_t grid, std::size_t d) {
    NeighborPlan plan{std::make_shared<std::vector<std::int64_t>>(), {}};
    plan.indices->reserve(batch * grid * grid * 9 * d);
    plan.mask.reserve(batch * grid * grid * 9);
    const auto g = static_cast<std::ptrdiff_t>(grid);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::ptrdiff_t y = 0; y < g; ++y) {
            for (std::ptrdiff_t x = 0; x < g; ++x) {
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const bool inside = y + dy >= 0 && y + dy < g && x + dx >= 0 && x + dx < g;
                        plan.mask.push_back(inside ? 0.0 : -1e9);
                        const auto cell = static_cast<std::int64_t>(
                            (b * grid + static_cast<std::size_t>(y + dy)) * grid +
                            static_cast<std::size_t>(x + dx));
                        for (std::size_t c = 0; c < d; ++c) {
                            plan.indices->push_back(
                                inside ? cell * static_cast<std::int64_t>(d) + static_cast<std::int64_t>(c)
                                       : -1);
                        }
                    }
                }
            }
        }
    }
    return plan;
}

}  // namespace

Tensor local_stabilizing_layer(const Tensor& y, LsKind kind, const ModelParams& params) {
    if (y.rank() != 3 && y.rank() != 4) {
        throw InvalidArgument("local_stabilizing_layer: expected [(B,) G, G, d], got " +
                              ad::shape_str(y.shape()));
    }
    switch (kind) {
        case LsKind::Convolution:
            return ad::conv2d_same(y, params.get("ls.weight"), params.get("ls.bias"));
        case LsKind::Linear:
            return ad::linear(y, params.get("ls.weight"), params.get("ls.bias"));
        case LsKind::LocalAttention: {
            const std::size_t batch = y.rank() == 4 ? y.dim(0) : 1;
            const std::size_t grid = y.dim(y.rank() - 2);
            const std::size_t d = y.shape().back();
            const std::size_t cells = batch * grid * grid;
            const Tensor& wv = params.get("ls.v.weight");
            const Tensor flat = ad::reshape(y, {cells, d});
            NeighborPlan plan = neighbor_plan(batch, grid, d);
            const Tensor nb = ad::gather(flat, plan.indices, {cells * 9, d});
            const Tensor q = ad::matmul(flat, params.get("ls.q.weight"));
            const Tensor k = ad::matmul(nb, params.get("ls.k.weight"));
            const Tensor v = ad::linear(nb, wv, params.get("ls.v.bias"));
            const Tensor logits = ad::add(
                ad::scale(ad::group_rowdot(q, k), 1.0 / std::sqrt(static_cast<double>(d))),
                Tensor::from({cells, 9}, std::move(plan.mask)));
            const Tensor out = ad::group_weighted_sum(ad::softmax_lastdim(logits), v);
            ad::Shape shape = y.shape();
            shape.back() = wv.dim(1);
            return ad::reshape(out, std::move(shape));
        }
    }
    throw InvalidArgument("local_stabilizing_layer: unknown kind");
}

double count_flops(const ModelConfig& c) {
    c.validate();
    const double n = c.tokens();
    const double d = c.dim;
    const double out = c.ls_channels();
    double macs = n * c.token_width() * d;
    const double per_layer = 3.0 * n * d * d     // qkv
                             + 2.0 * n * n * d   // QK^T and attention * V
                             + n * d * d         // output projection
                             + 2.0 * n * d * c.mlp_dim;
    macs += c.depth * per_layer;
    switch (c.ls_kind) {
        case LsKind::Convolution: macs += n * 9.0 * d * out; break;
        case LsKind::Linear: macs += n * d * out; break;
        case LsKind::LocalAttention:
            macs += n * d * d + 9.0 * n * d * d + 9.0 * n * d * out + 9.0 * n * d + 9.0 * n * out;
            break;
    }
    return macs / 1e9;
}

std::size_t parameter_count(const ModelConfig& config) {
    std::size_t total = 0;
    for (const auto& s : parameter_layout(config)) total += ad::numel(s.shape);
    return total;
}

std::size_t backbone_parameter_count(const ModelConfig& config) {
    std::size_t total = 0;
    for (const auto& s : parameter_layout(config)) {
        if (!s.name.starts_with("ls.")) total += ad::numel(s.shape);
    }
    return total;
}

std::vector<LabImage> predict_lab_batch(const Model& m, std::span<const LumaPlane> lumas,
                                        std::span<const std::vector<Hint>> hint_lists) {
    if (lumas.size() != hint_lists.size()) {
        throw InvalidArgument("predict: lightness and hint list counts differ");
    }
    const int size = m.config().image_size;
    std::vector<NetInput> inputs;
    inputs.reserve(lumas.size());
    for (std::size_t i = 0; i < lumas.size(); ++i) {
        const auto& luma = lumas[i];
        if (luma.width != size || luma.height != size) {
            throw InvalidArgument("predict: image is " + std::to_string(luma.width) + "x" +
                                  std::to_string(luma.height) + ", model expects " +
                                  std::to_string(size) + "x" + std::to_string(size));
        }
        for (const auto& h : hint_lists[i]) {
            if (!hints::in_bounds(h, size, size)) {
                throw InvalidArgument("predict: hint at (" + std::to_string(h.x) + "," +
                                      std::to_string(h.y) + ") out of bounds");
            }
        }
        inputs.push_back(
            hints::build_model_input(luma, hints::encode_hints(hint_lists[i], size, size)));
    }
    ad::NoGradGuard no_grad;
    const Tensor ab = m.forward(inputs);
    const auto v = ab.values();
    const std::size_t pixels = static_cast<std::size_t>(size) * size;
    std::vector<LabImage> out;
    for (std::size_t i = 0; i < lumas.size(); ++i) {
        LabImage lab(size, size);
        lab.L = lumas[i];
        for (std::size_t p = 0; p < pixels; ++p) {
            lab.a.data[p] = colorspace::denormalize_ab(v[(i * pixels + p) * 2]);
            lab.b.data[p] = colorspace::denormalize_ab(v[(i * pixels + p) * 2 + 1]);
        }
        out.push_back(std::move(lab));
    }
    return out;
}

LabImage predict_lab(const Model& m, const LumaPlane& luma, const std::vector<Hint>& hint_list) {
    return std::move(predict_lab_batch(m, std::span(&luma, 1), std::span(&hint_list, 1))[0]);
}

std::pair<Plane, Plane> predict_ab(const Model& m, const LumaPlane& luma,
                                   const std::vector<Hint>& hint_list) {
    LabImage lab = predict_lab(m, luma, hint_list);
    return {std::move(lab.a), std::move(lab.b)};
}

RgbImage predict_image(const Model& m, const LumaPlane& luma, const std::vector<Hint>& hint_list) {
    return colorspace::lab_to_rgb(predict_lab(m, luma, hint_list));
}

}  // namespace model

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, ModelParams params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    for (const auto& spec : parameter_layout(config_)) {
        if (!params_.contains(spec.name)) {
            throw InvalidArgument("model: missing parameter '" + spec.name + "'");
        }
        if (params_.get(spec.name).shape() != spec.shape) {
            throw InvalidArgument("model: parameter '" + spec.name + "' has shape " +
                                  ad::shape_str(params_.get(spec.name).shape()) + ", expected " +
                                  ad::shape_str(spec.shape));
        }
    }
}

Tensor Model::forward(std::span<const NetInput> inputs, AttentionRecord* record) const {
    const auto& c = config_;
    if (inputs.empty()) throw InvalidArgument("forward: empty batch");
    if (record && inputs.size() != 1) {
        throw InvalidArgument("forward: attention capture needs a batch of one");
    }
    const auto batch = inputs.size();
    const auto n = static_cast<std::size_t>(c.tokens());
    const auto d = static_cast<std::size_t>(c.dim);
    const auto grid = static_cast<std::size_t>(c.grid());

    std::vector<double> tokens;
    tokens.reserve(batch * n * static_cast<std::size_t>(c.token_width()));
    for (const auto& in : inputs) {
        if (in.width != c.image_size || in.height != c.image_size) {
            throw InvalidArgument("forward: input " + std::to_string(in.width) + "x" +
                                  std::to_string(in.height) + " does not match image_size " +
                                  std::to_string(c.image_size));
        }
        const Tensor t = model::patchify(in, c.patch_size);
        tokens.insert(tokens.end(), t.values().begin(), t.values().end());
    }
    const Tensor x =
        Tensor::from({batch * n, static_cast<std::size_t>(c.token_width())}, std::move(tokens));

    const Tensor pe = model::positional_encoding(c.tokens(), c.dim);
    std::vector<double> pe_rows;
    pe_rows.reserve(batch * n * d);
    for (std::size_t b = 0; b < batch; ++b) {
        pe_rows.insert(pe_rows.end(), pe.values().begin(), pe.values().end());
    }

    Tensor z = ad::linear(x, params_.get("patch_embed.weight"), params_.get("patch_embed.bias"));
    z = ad::add(z, Tensor::from({batch * n, d}, std::move(pe_rows)));

    if (record) {
        record->heads = c.heads;
        record->tokens = c.tokens();
        record->layers.clear();
    }
    for (int l = 0; l < c.depth; ++l) {
        const auto bp = model::BlockParams::from(params_, l);
        const Tensor bias = model::relative_bias(bp.bias_table, c.grid(), c.heads);
        std::vector<double>* capture = nullptr;
        if (record) capture = &record->layers.emplace_back();
        z = model::encoder_block(z, bp, bias, c.heads, static_cast<int>(batch), capture);
    }
    const Tensor y = ad::layer_norm(z, params_.get("norm.weight"), params_.get("norm.bias"));
    const Tensor grid_map = ad::reshape(y, {batch, grid, grid, d});
    const Tensor ls = model::local_stabilizing_layer(grid_map, c.ls_kind, params_);
    return ad::pixel_shuffle(ls, static_cast<std::size_t>(c.patch_size));
}

}  // namespace icolorit
