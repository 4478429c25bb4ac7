#include "icolorit/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "icolorit/colorspace.hpp"
#include "icolorit/error.hpp"
#include "json.hpp"

namespace icolorit::eval {
namespace {

void require_same_dims(int w1, int h1, int w2, int h2, const char* op) {
    if (w1 != w2 || h1 != h2) {
        throw InvalidArgument(std::string(op) + ": image dimensions differ (" + std::to_string(w1) +
                              "x" + std::to_string(h1) + " vs " + std::to_string(w2) + "x" +
                              std::to_string(h2) + ")");
    }
}

void require_patch_grid(const RgbImage& img, int patch, const char* op) {
    if (patch < 1 || img.width % patch != 0 || img.height % patch != 0) {
        throw InvalidArgument(std::string(op) + ": dimensions not divisible by patch size " +
                              std::to_string(patch));
    }
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double pixel_sq_error(const RgbImage& a, const RgbImage& b, int x, int y) {
    const auto* pa = a.pixel(x, y);
    const auto* pb = b.pixel(x, y);
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(pa[c]) - static_cast<double>(pb[c]);
        s += d * d;
    }
    return s;
}

}  // namespace

double psnr(const RgbImage& a, const RgbImage& b) {
    require_same_dims(a.width, a.height, b.width, b.height, "psnr");
    double s = 0.0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) s += pixel_sq_error(a, b, x, y);
    }
    return psnr_from_mse(s / static_cast<double>(a.data.size()));
}

bool is_boundary_pixel(int x, int y, int patch) {
    const int rx = x % patch;
    const int ry = y % patch;
    return rx == 0 || rx == patch - 1 || ry == 0 || ry == patch - 1;
}

double boundary_psnr(const RgbImage& pred, const RgbImage& gt, int patch) {
    require_same_dims(pred.width, pred.height, gt.width, gt.height, "boundary_psnr");
    require_patch_grid(pred, patch, "boundary_psnr");
    double s = 0.0;
    std::size_t count = 0;
    for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
            if (!is_boundary_pixel(x, y, patch)) continue;
            s += pixel_sq_error(pred, gt, x, y);
            count += 3;
        }
    }
    return psnr_from_mse(count ? s / static_cast<double>(count) : 0.0);
}

double pev(const RgbImage& pred, const RgbImage& gt, int patch) {
    require_same_dims(pred.width, pred.height, gt.width, gt.height, "pev");
    require_patch_grid(pred, patch, "pev");
    std::vector<double> errors;
    for (int py = 0; py < pred.height; py += patch) {
        for (int px = 0; px < pred.width; px += patch) {
            double s = 0.0;
            for (int y = py; y < py + patch; ++y) {
                for (int x = px; x < px + patch; ++x) s += pixel_sq_error(pred, gt, x, y);
            }
            errors.push_back(s / (3.0 * patch * patch));
        }
    }
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= static_cast<double>(errors.size());
    double var = 0.0;
    for (double e : errors) var += (e - mean) * (e - mean);
    return var / static_cast<double>(errors.size());
}

std::vector<std::pair<int, int>> colorized_set(const LabImage& prev, const LabImage& next,
                                               double jnd) {
    require_same_dims(prev.width, prev.height, next.width, next.height, "colorized_set");
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < prev.height; ++y) {
        for (int x = 0; x < prev.width; ++x) {
            const double dl = next.L.at(x, y) - prev.L.at(x, y);
            const double da = next.a.at(x, y) - prev.a.at(x, y);
            const double db = next.b.at(x, y) - prev.b.at(x, y);
            if ((dl * dl + da * da + db * db) / 3.0 > jnd) out.emplace_back(x, y);
        }
    }
    return out;
}

HprResult hpr(const LabImage& prev, const LabImage& next, const Hint& hint, double jnd) {
    const auto changed = colorized_set(prev, next, jnd);
    if (changed.empty()) return {0.0, true};
    double total = 0.0;
    for (const auto& [x, y] : changed) {
        const int dx = x - hint.x, dy = y - hint.y;
        total += std::sqrt(static_cast<double>(dx * dx + dy * dy));
    }
    return {total / static_cast<double>(changed.size()), false};
}

std::map<int, double> delta_psnr(const std::map<int, double>& curve) {
    std::map<int, double> out;
    if (curve.empty()) return out;
    const int first = curve.begin()->first;
    for (const auto& [t, v] : curve) {
        if (t == first) continue;
        auto prev = curve.find(t - 1);
        if (prev == curve.end()) {
            throw InvalidArgument("delta_psnr: curve has no value at t=" + std::to_string(t - 1));
        }
        out[t] = v - prev->second;
    }
    return out;
}

std::vector<EvalImage> make_eval_set(std::span<const RgbImage> images) {
    std::vector<EvalImage> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back({img, colorspace::rgb_to_lab(img)});
    return out;
}

Rng protocol_rng(std::uint64_t seed, int n, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(index)};
    return Rng(seq);
}

std::vector<Hint> protocol_hints(const EvalImage& img, int n, std::uint64_t seed,
                                 std::size_t index, int hint_size) {
    Rng rng = protocol_rng(seed, n, index);
    return hints::simulate_n_hints(rng, img.lab, n, hint_size);
}

namespace {

constexpr std::size_t kChunk = 16;

/// Predictions for every image at hint count n, in dataset order.
std::vector<RgbImage> predict_at(const Model& model, std::span<const EvalImage> dataset, int n,
                                 std::uint64_t seed, int hint_size) {
    std::vector<RgbImage> out;
    out.reserve(dataset.size());
    for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
        const std::size_t end = std::min(dataset.size(), start + kChunk);
        std::vector<LumaPlane> lumas;
        std::vector<std::vector<Hint>> hint_lists;
        for (std::size_t i = start; i < end; ++i) {
            lumas.push_back(dataset[i].lab.L);
            hint_lists.push_back(protocol_hints(dataset[i], n, seed, i, hint_size));
        }
        for (auto& lab : model::predict_lab_batch(model, lumas, hint_lists)) {
            out.push_back(colorspace::lab_to_rgb(lab));
        }
    }
    return out;
}

}  // namespace

double psnr_at_n(const Model& model, std::span<const EvalImage> dataset, int n,
                 std::uint64_t seed, int hint_size) {
    if (n < 0) throw InvalidArgument("psnr_at_n: n must be >= 0");
    if (dataset.empty()) throw InvalidArgument("psnr_at_n: empty dataset");
    const auto preds = predict_at(model, dataset, n, seed, hint_size);
    double total = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) total += psnr(preds[i], dataset[i].rgb);
    return total / static_cast<double>(dataset.size());
}

double hint_fidelity(const Model& model, std::span<const EvalImage> dataset, int n,
                     std::uint64_t seed, int hint_size) {
    if (n < 1) throw InvalidArgument("hint_fidelity: n must be >= 1");
    if (dataset.empty()) throw InvalidArgument("hint_fidelity: empty dataset");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto hint_list = protocol_hints(dataset[i], n, seed, i, hint_size);
        const LabImage pred = model::predict_lab(model, dataset[i].lab.L, hint_list);
        for (const auto& h : hint_list) {
            double a = 0.0, b = 0.0;
            for (int y = h.y; y < h.y + h.size; ++y) {
                for (int x = h.x; x < h.x + h.size; ++x) {
                    a += pred.a.at(x, y);
                    b += pred.b.at(x, y);
                }
            }
            const double area = static_cast<double>(h.size) * h.size;
            total += std::hypot(a / area - h.a, b / area - h.b);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

EvalReport evaluate(const Model& model, std::span<const EvalImage> dataset,
                    const EvalOptions& options) {
    if (dataset.empty()) throw InvalidArgument("evaluate: empty dataset");
    const int patch = model.config().patch_size;
    const double count = static_cast<double>(dataset.size());
    EvalReport report;
    report.n_images = static_cast<int>(dataset.size());
    report.seed = options.seed;

    std::vector<int> counts = options.hint_counts;
    if (std::find(counts.begin(), counts.end(), options.pev_hints) == counts.end()) {
        counts.push_back(options.pev_hints);
    }
    for (int n : counts) {
        if (n < 0) throw InvalidArgument("evaluate: hint counts must be >= 0");
        const auto preds = predict_at(model, dataset, n, options.seed, options.hint_size);
        double p = 0.0, bp = 0.0, v = 0.0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            p += psnr(preds[i], dataset[i].rgb);
            bp += boundary_psnr(preds[i], dataset[i].rgb, patch);
            v += pev(preds[i], dataset[i].rgb, patch);
        }
        if (std::find(options.hint_counts.begin(), options.hint_counts.end(), n) !=
            options.hint_counts.end()) {
            report.psnr_at[n] = p / count;
            report.b_psnr_at[n] = bp / count;
        }
        if (n == options.pev_hints) report.pev = v / count;
    }

    if (options.hpr_steps > 0) {
        // Nested sequence: the t-th image state uses the first t hints.
        std::map<int, double> nested;
        std::map<int, double> hpr_sum;
        std::map<int, int> hpr_valid;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto seq = protocol_hints(dataset[i], options.hpr_steps, options.seed ^ 0x6a09e667f3bcc909ULL,
                                            i, options.hint_size);
            LabImage prev;
            for (int t = 0; t <= options.hpr_steps; ++t) {
                const std::vector<Hint> prefix(seq.begin(), seq.begin() + t);
                LabImage cur = model::predict_lab(model, dataset[i].lab.L, prefix);
                nested[t] += psnr(colorspace::lab_to_rgb(cur), dataset[i].rgb);
                if (t > 0) {
                    const HprResult r = hpr(prev, cur, seq[static_cast<std::size_t>(t - 1)]);
                    if (r.no_visible_change) {
                        ++report.hpr_no_change[t];
                    } else {
                        hpr_sum[t] += r.distance;
                        ++hpr_valid[t];
                    }
                }
                prev = std::move(cur);
            }
        }
        for (auto& [t, v] : nested) v /= count;
        for (int t = 1; t <= options.hpr_steps; ++t) {
            report.hpr_at[t] = hpr_valid[t] ? hpr_sum[t] / hpr_valid[t] : 0.0;
            report.hpr_no_change.try_emplace(t, 0);
        }
        report.delta_psnr = delta_psnr(nested);
    }
    return report;
}

BenchResult bench_latency(const Model& model, int warmup_runs, int timed_runs) {
    const auto& c = model.config();
    BenchResult r;
    r.warmup_runs = std::max(5, warmup_runs);
    r.timed_runs = std::max(30, timed_runs);
    r.gflops = model::count_flops(c);
    r.parameter_count = model::parameter_count(c);
    const LumaPlane luma(c.image_size, c.image_size, 50.0);
    const std::vector<Hint> none;
    for (int i = 0; i < r.warmup_runs; ++i) model::predict_ab(model, luma, none);
    std::vector<double> ms;
    for (int i = 0; i < r.timed_runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        model::predict_ab(model, luma, none);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    double sum = 0.0;
    for (double v : ms) sum += v;
    const std::size_t n = ms.size();
    r.mean_ms = sum / static_cast<double>(n);
    r.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
    r.p95_ms = ms[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1];
    return r;
}

std::string bench_to_json(const BenchResult& r) {
    nlohmann::json j = {{"config", r.config_name},       {"mean_ms", r.mean_ms},
                        {"median_ms", r.median_ms},      {"p95_ms", r.p95_ms},
                        {"gflops", r.gflops},            {"parameter_count", r.parameter_count},
                        {"warmup_runs", r.warmup_runs},  {"timed_runs", r.timed_runs}};
    return j.dump(2);
}

namespace {

nlohmann::json int_map(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
    nlohmann::json no_change = nlohmann::json::object();
    for (const auto& [k, v] : r.hpr_no_change) no_change[std::to_string(k)] = v;
    nlohmann::json j = {{"psnr_at", int_map(r.psnr_at)},
                        {"b_psnr_at", int_map(r.b_psnr_at)},
                        {"pev", r.pev},
                        {"hpr_at", int_map(r.hpr_at)},
                        {"hpr_no_visible_change", no_change},
                        {"delta_psnr", int_map(r.delta_psnr)},
                        {"n_images", r.n_images},
                        {"seed", r.seed}};
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "n,mean_psnr,n_images,seed\n";
    for (const auto& [n, v] : r.psnr_at) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        os << n << ',' << buf << ',' << r.n_images << ',' << r.seed << '\n';
    }
    return os.str();
}

}  // namespace icolorit::eval
