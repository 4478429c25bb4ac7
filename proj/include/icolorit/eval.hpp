#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icolorit/hints.hpp"
#include "icolorit/image.hpp"
#include "icolorit/model.hpp"

namespace icolorit::eval {

/// Returned for zero-error comparisons.
inline constexpr double kPsnrCap = 100.0;
/// Just-noticeable difference on per-pixel Lab MSE.
inline constexpr double kJnd = 2.3;

double psnr(const RgbImage& a, const RgbImage& b);

/// True where the row or column index is 0 or P-1 modulo P.
bool is_boundary_pixel(int x, int y, int patch);
double boundary_psnr(const RgbImage& pred, const RgbImage& gt, int patch);

/// Population variance of per-patch RGB MSE.
double pev(const RgbImage& pred, const RgbImage& gt, int patch);

/// Pixels whose Lab MSE (mean over L, a, b) between the two images exceeds
/// `jnd`, in row-major order.
std::vector<std::pair<int, int>> colorized_set(const LabImage& prev, const LabImage& next,
                                               double jnd = kJnd);

struct HprResult {
    double distance = 0.0;
    /// No pixel crossed the threshold; distance is reported as 0.
    bool no_visible_change = false;
};

/// Mean Euclidean distance from the hint anchor to the colorized set.
HprResult hpr(const LabImage& prev, const LabImage& next, const Hint& hint, double jnd = kJnd);

/// delta(t) = curve(t) - curve(t-1) for every t > min key. Throws
/// InvalidArgument when t-1 is missing.
std::map<int, double> delta_psnr(const std::map<int, double>& curve);

/// Held-out evaluation set: ground truth in both RGB and Lab.
struct EvalImage {
    RgbImage rgb;
    LabImage lab;
};

std::vector<EvalImage> make_eval_set(std::span<const RgbImage> images);

/// Generator for image `index` at hint count `n` under `seed`.
Rng protocol_rng(std::uint64_t seed, int n, std::size_t index);

/// Hints for one image: n uniform locations, ground-truth patch means.
std::vector<Hint> protocol_hints(const EvalImage& img, int n, std::uint64_t seed,
                                 std::size_t index, int hint_size);

/// Mean PSNR over the set with n simulated hints per image.
double psnr_at_n(const Model& model, std::span<const EvalImage> dataset, int n,
                 std::uint64_t seed, int hint_size = 2);

/// Mean Euclidean ab distance between the prediction, averaged over each
/// hint block, and the hint color; n protocol hints per image.
double hint_fidelity(const Model& model, std::span<const EvalImage> dataset, int n,
                     std::uint64_t seed, int hint_size = 2);

struct EvalOptions {
    std::vector<int> hint_counts{0, 1, 2, 5, 10, 25, 50, 100};
    std::uint64_t seed = 0;
    int hint_size = 2;
    /// Hint count at which PEV is measured.
    int pev_hints = 10;
    /// Length of the nested hint sequence used for HPR and delta PSNR;
    /// 0 disables it.
    int hpr_steps = 10;
};

struct EvalReport {
    std::map<int, double> psnr_at;
    std::map<int, double> b_psnr_at;
    double pev = 0.0;
    std::map<int, double> hpr_at;
    /// Images whose t-th nested hint changed no pixel visibly.
    std::map<int, int> hpr_no_change;
    std::map<int, double> delta_psnr;
    int n_images = 0;
    std::uint64_t seed = 0;
};

EvalReport evaluate(const Model& model, std::span<const EvalImage> dataset,
                    const EvalOptions& options);

struct BenchResult {
    std::string config_name;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    /// Nearest-rank 95th percentile.
    double p95_ms = 0.0;
    double gflops = 0.0;
    std::size_t parameter_count = 0;
    int warmup_runs = 0;
    int timed_runs = 0;
};

/// Single-image forward-pass latency; at least 5 warmup and 30 timed runs
/// are enforced.
BenchResult bench_latency(const Model& model, int warmup_runs = 5, int timed_runs = 30);
std::string bench_to_json(const BenchResult& r);

std::string report_to_json(const EvalReport& report);
/// Columns n,mean_psnr,n_images,seed.
std::string report_to_csv(const EvalReport& report);

}  // namespace icolorit::eval
