#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "icolorit/hints.hpp"
#include "icolorit/image.hpp"
#include "icolorit/model.hpp"

namespace icolorit::train {

struct TrainConfig {
    int steps = 1000;
    int batch = 8;
    double lr = 5e-4;
    double min_lr = 0.0;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int hint_max = 128;
    int hint_size = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Accepts the TrainConfig fields by name ("betas" as a two-element array).
TrainConfig train_config_from_json(const std::string& text);

/// AdamW moment buffers, one pair per parameter.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;

    static OptimizerState for_params(const ModelParams& params);
};

/// Mean Huber penalty (knee at 1) of pred - target.
double huber_value(std::span<const double> pred, std::span<const double> target);

/// One AdamW update with decoupled weight decay. Throws InvalidArgument if
/// any parameter has no gradient.
void adamw_step(ModelParams& params, OptimizerState& state, double lr, const TrainConfig& config);

/// Cosine annealing from base_lr at step 0 to min_lr at total_steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr);

/// Simulates hints on each image, runs forward/backward on normalized ab,
/// applies one AdamW step at `lr` and clears gradients. Returns the batch
/// loss.
double train_step(std::span<const LabImage> batch, Model& model, OptimizerState& state, Rng& rng,
                  const TrainConfig& config, double lr);

/// Procedural images: 2-4 region partitions or two-color gradients in
/// saturated colors, with a per-region luminance texture.
std::vector<RgbImage> make_synthetic_dataset(Rng& rng, int n, int size);

struct LogRecord {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::int64_t elapsed_ms = 0;
};

std::string log_record_json(const LogRecord& r);

/// Runs config.steps steps over `dataset`, drawing batches with the
/// training generator. `on_step` sees every record; returning false stops
/// early. Throws RuntimeError when the loss becomes non-finite.
void fit(Model& model, std::span<const LabImage> dataset, const TrainConfig& config,
         const std::function<bool(const LogRecord&)>& on_step = {});

/// A complete training job as read from a config file:
/// {"model": ModelConfig or {"preset": ...}, "train": TrainConfig,
///  "data": {"synthetic": count} or {"dir": path}}.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    int synthetic_images = 2000;
    std::string data_dir;
};

RunConfig run_config_from_json(const std::string& text);

/// Training images in Lab: the PNG directory when set, otherwise the
/// synthetic set drawn from a stream derived from train.seed.
std::vector<LabImage> training_set(const RunConfig& run);

/// Initializes from train.seed, fits and returns the model. Each record is
/// passed to `on_step`.
Model run_training(const RunConfig& run, const std::function<bool(const LogRecord&)>& on_step = {});

}  // namespace icolorit::train
