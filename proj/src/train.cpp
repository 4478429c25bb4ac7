#include "icolorit/train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>

#include "icolorit/colorspace.hpp"
#include "icolorit/dataio.hpp"
#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit::train {

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("train config: " + m); };
    if (steps < 1) fail("steps must be >= 1");
    if (batch < 1) fail("batch must be >= 1");
    if (hint_max < 0) fail("hint_max must be >= 0");
    if (hint_size < 1) fail("hint_size must be >= 1");
    if (!(lr >= 0.0) || !(min_lr >= 0.0)) fail("learning rates must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("betas must be in [0,1)");
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("train config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("train config: expected an object");
    TrainConfig c;
    try {
        if (j.contains("steps")) c.steps = j["steps"].get<int>();
        if (j.contains("batch")) c.batch = j["batch"].get<int>();
        if (j.contains("lr")) c.lr = j["lr"].get<double>();
        if (j.contains("min_lr")) c.min_lr = j["min_lr"].get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
        if (j.contains("betas")) {
            const auto& b = j["betas"];
            if (!b.is_array() || b.size() != 2) throw InvalidArgument("train config: betas must be [b1,b2]");
            c.beta1 = b[0].get<double>();
            c.beta2 = b[1].get<double>();
        }
        if (j.contains("hint_max")) c.hint_max = j["hint_max"].get<int>();
        if (j.contains("hint_size")) c.hint_size = j["hint_size"].get<int>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
    OptimizerState s;
    for (const auto& p : params.list()) {
        s.m.emplace_back(p.tensor.size(), 0.0);
        s.v.emplace_back(p.tensor.size(), 0.0);
    }
    return s;
}

double huber_value(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw InvalidArgument("huber: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = std::abs(pred[i] - target[i]);
        total += r < 1.0 ? 0.5 * r * r : r - 0.5;
    }
    return pred.empty() ? 0.0 : total / static_cast<double>(pred.size());
}

void adamw_step(ModelParams& params, OptimizerState& state, double lr, const TrainConfig& config) {
    auto& list = params.list();
    if (state.m.size() != list.size()) {
        throw InvalidArgument("adamw: optimizer state does not match parameter set");
    }
    for (const auto& p : list) {
        if (!p.tensor.has_grad()) {
            throw InvalidArgument("adamw: parameter '" + p.name + "' has no gradient");
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < list.size(); ++k) {
        auto& p = list[k];
        auto w = p.tensor.mutable_values();
        const auto g = p.tensor.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        const double decay = p.decay ? lr * config.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= decay * w[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr) {
    if (total_steps <= 0) return base_lr;
    const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) /
                     static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

double train_step(std::span<const LabImage> batch, Model& model, OptimizerState& state, Rng& rng,
                  const TrainConfig& config, double lr) {
    const int size = model.config().image_size;
    std::vector<NetInput> inputs;
    std::vector<double> target;
    inputs.reserve(batch.size());
    target.reserve(batch.size() * static_cast<std::size_t>(size) * size * 2);
    for (const auto& img : batch) {
        if (img.width != size || img.height != size) {
            throw InvalidArgument("train_step: image is " + std::to_string(img.width) + "x" +
                                  std::to_string(img.height) + ", model expects " +
                                  std::to_string(size));
        }
        const auto hint_list = hints::simulate_hints(rng, img, config.hint_max, config.hint_size);
        inputs.push_back(hints::build_model_input(colorspace::extract_grayscale(img),
                                                  hints::encode_hints(hint_list, size, size)));
        for (std::size_t p = 0; p < img.a.data.size(); ++p) {
            target.push_back(colorspace::normalize_ab(img.a.data[p]));
            target.push_back(colorspace::normalize_ab(img.b.data[p]));
        }
    }
    const ad::Tensor pred = model.forward(inputs);
    const ad::Tensor loss = ad::huber_loss(pred, ad::Tensor::from(pred.shape(), std::move(target)));
    loss.backward();
    adamw_step(model.params(), state, lr, config);
    model.params().zero_grad();
    return loss.item();
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Rgb o{0, 0, 0};
    switch (static_cast<int>(hp) % 6) {
        case 0: o = {c, x, 0}; break;
        case 1: o = {x, c, 0}; break;
        case 2: o = {0, c, x}; break;
        case 3: o = {0, x, c}; break;
        case 4: o = {x, 0, c}; break;
        default: o = {c, 0, x}; break;
    }
    const double m = v - c;
    return {(o.r + m) * 255.0, (o.g + m) * 255.0, (o.b + m) * 255.0};
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

colorspace::Lab lab_of(const Rgb& c) {
    return colorspace::rgb_to_lab(to_byte(c.r), to_byte(c.g), to_byte(c.b));
}

/// Saturated colors with chroma > 30, pairwise ab distance > 30.
std::vector<Rgb> pick_colors(Rng& rng, int k) {
    std::uniform_real_distribution<double> hue(0.0, 1.0);
    std::uniform_real_distribution<double> sat(0.6, 1.0);
    std::uniform_real_distribution<double> val(0.45, 0.95);
    std::vector<Rgb> out;
    while (static_cast<int>(out.size()) < k) {
        const Rgb c = hsv_to_rgb(hue(rng), sat(rng), val(rng));
        const auto lab = lab_of(c);
        if (std::hypot(lab.a, lab.b) <= 30.0) continue;
        bool distinct = true;
        for (const auto& o : out) {
            const auto ol = lab_of(o);
            distinct = distinct && std::hypot(lab.a - ol.a, lab.b - ol.b) > 30.0;
        }
        if (distinct) out.push_back(c);
    }
    return out;
}

/// Oriented sinusoidal stripes in [-1, 1].
struct Texture {
    double fx, fy, phase;
    double operator()(int x, int y) const { return std::sin(fx * x + fy * y + phase); }

    static Texture random(Rng& rng) {
        std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
        std::uniform_real_distribution<double> freq(0.4, 1.6);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        const double a = angle(rng);
        const double f = freq(rng);
        return {f * std::cos(a), f * std::sin(a), phase(rng)};
    }
};

std::vector<int> region_labels(Rng& rng, int size, int k) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t pixels = static_cast<std::size_t>(size) * size;
    for (;;) {
        std::vector<int> labels(pixels, 0);
        for (int r = 1; r < k; ++r) {
            if (unit(rng) < 0.5) {
                // Axis-aligned rectangle.
                int x0 = static_cast<int>(unit(rng) * size * 0.7);
                int y0 = static_cast<int>(unit(rng) * size * 0.7);
                int w = std::max(4, static_cast<int>((0.25 + 0.55 * unit(rng)) * size));
                int h = std::max(4, static_cast<int>((0.25 + 0.55 * unit(rng)) * size));
                for (int y = y0; y < std::min(size, y0 + h); ++y) {
                    for (int x = x0; x < std::min(size, x0 + w); ++x) {
                        labels[static_cast<std::size_t>(y) * size + x] = r;
                    }
                }
            } else {
                // Half-plane through a random interior point.
                const double px = (0.2 + 0.6 * unit(rng)) * size;
                const double py = (0.2 + 0.6 * unit(rng)) * size;
                const double a = unit(rng) * 2.0 * std::numbers::pi;
                const double nx = std::cos(a);
                const double ny = std::sin(a);
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        if ((x - px) * nx + (y - py) * ny > 0.0) {
                            labels[static_cast<std::size_t>(y) * size + x] = r;
                        }
                    }
                }
            }
        }
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (int l : labels) ++counts[static_cast<std::size_t>(l)];
        const auto min_count = *std::min_element(counts.begin(), counts.end());
        if (min_count >= pixels / 20) return labels;
    }
}

}  // namespace

std::vector<RgbImage> make_synthetic_dataset(Rng& rng, int n, int size) {
    if (n < 1 || size < 1) throw InvalidArgument("synthetic dataset: n and size must be >= 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> region_count(2, 4);
    std::normal_distribution<double> grain(0.0, 2.0);
    std::vector<RgbImage> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RgbImage img(size, size);
        const bool gradient = unit(rng) < 0.25;
        const int k = gradient ? 2 : region_count(rng);
        const auto colors = pick_colors(rng, k);
        std::vector<Texture> textures;
        for (int r = 0; r < k; ++r) textures.push_back(Texture::random(rng));
        std::uniform_real_distribution<double> amp_dist(0.06, 0.14);
        const double amp = amp_dist(rng);

        std::vector<int> labels;
        double gx = 0.0, gy = 0.0;
        if (gradient) {
            const double a = unit(rng) * 2.0 * std::numbers::pi;
            gx = std::cos(a);
            gy = std::sin(a);
        } else {
            labels = region_labels(rng, size, k);
        }
        const double c = (size - 1) / 2.0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                Rgb base;
                double t = 0.0;
                if (gradient) {
                    t = std::clamp(0.5 + ((x - c) * gx + (y - c) * gy) / size, 0.0, 1.0);
                    base = {colors[0].r * (1 - t) + colors[1].r * t,
                            colors[0].g * (1 - t) + colors[1].g * t,
                            colors[0].b * (1 - t) + colors[1].b * t};
                } else {
                    base = colors[static_cast<std::size_t>(labels[static_cast<std::size_t>(y) * size + x])];
                }
                const auto& tex = gradient ? textures[0]
                                           : textures[static_cast<std::size_t>(labels[static_cast<std::size_t>(y) * size + x])];
                const double factor = 1.0 + amp * tex(x, y);
                const double noise = grain(rng);
                std::uint8_t* px = img.pixel(x, y);
                px[0] = to_byte(base.r * factor + noise);
                px[1] = to_byte(base.g * factor + noise);
                px[2] = to_byte(base.b * factor + noise);
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loop

std::string log_record_json(const LogRecord& r) {
    nlohmann::json j = {{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"elapsed_ms", r.elapsed_ms}};
    return j.dump();
}

void fit(Model& model, std::span<const LabImage> dataset, const TrainConfig& config,
         const std::function<bool(const LogRecord&)>& on_step) {
    config.validate();
    if (dataset.empty()) throw InvalidArgument("fit: empty dataset");
    Rng rng(config.seed);
    OptimizerState state = OptimizerState::for_params(model.params());
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    const auto start = std::chrono::steady_clock::now();
    std::vector<LabImage> batch(static_cast<std::size_t>(config.batch));
    for (int step = 0; step < config.steps; ++step) {
        for (auto& img : batch) img = dataset[pick(rng)];
        const double lr = cosine_lr(step, config.steps, config.lr, config.min_lr);
        const double loss = train_step(batch, model, state, rng, config, lr);
        if (!std::isfinite(loss)) {
            throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step + 1));
        }
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        if (on_step && !on_step(LogRecord{step + 1, loss, lr, elapsed.count()})) break;
    }
}

RunConfig run_config_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("run config: malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw InvalidArgument("run config: expected a JSON object");
    RunConfig run;
    if (doc.contains("model")) run.model = config_from_json(doc["model"].dump());
    if (doc.contains("train")) run.train = train_config_from_json(doc["train"].dump());
    if (doc.contains("data")) {
        const auto& d = doc["data"];
        if (!d.is_object()) throw InvalidArgument("run config: data: expected an object");
        if (d.contains("dir")) {
            if (!d["dir"].is_string()) throw InvalidArgument("run config: data.dir: expected a string");
            run.data_dir = d["dir"].get<std::string>();
        }
        if (d.contains("synthetic")) {
            if (!d["synthetic"].is_number_integer() || d["synthetic"].get<int>() < 1) {
                throw InvalidArgument("run config: data.synthetic: expected a positive integer");
            }
            run.synthetic_images = d["synthetic"].get<int>();
        }
    }
    run.model.validate();
    run.train.validate();
    return run;
}

std::vector<LabImage> training_set(const RunConfig& run) {
    std::vector<RgbImage> images;
    if (!run.data_dir.empty()) {
        images = dataio::load_png_directory(run.data_dir, run.model.image_size);
        if (images.empty()) throw InvalidArgument(run.data_dir + ": no PNG images");
    } else {
        std::seed_seq seq{static_cast<std::uint32_t>(run.train.seed),
                          static_cast<std::uint32_t>(run.train.seed >> 32), 0x64617461u};
        Rng rng(seq);
        images = make_synthetic_dataset(rng, run.synthetic_images, run.model.image_size);
    }
    std::vector<LabImage> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(colorspace::rgb_to_lab(img));
    return out;
}

Model run_training(const RunConfig& run, const std::function<bool(const LogRecord&)>& on_step) {
    const auto data = training_set(run);
    Model model(run.model, ModelParams::init(run.model, run.train.seed));
    fit(model, data, run.train, on_step);
    return model;
}

}  // namespace icolorit::train
