#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icolorit/icolorit.h"
#include "json.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

struct ModelDeleter {
    void operator()(icl_model* m) const { icl_model_free(m); }
};
using ModelPtr = std::unique_ptr<icl_model, ModelDeleter>;

class Failure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void check(icl_status status) {
    if (status != ICL_OK) throw Failure(icl_last_error());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure(path + ": cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelPtr load(const std::string& checkpoint) {
    icl_model* m = nullptr;
    check(icl_model_load(checkpoint.c_str(), &m));
    return ModelPtr(m);
}

int patch_size(const icl_model* m) {
    char* text = nullptr;
    check(icl_model_config_json(m, &text));
    const auto j = nlohmann::json::parse(text);
    icl_free(text);
    return j.at("patch_size").get<int>();
}

std::vector<int> parse_counts(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || v < 0) throw CLI::ValidationError("--hints", "bad hint count '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw CLI::ValidationError("--hints", "empty list");
    return out;
}

int on_step(const char* line, void* user) {
    const int every = *static_cast<int*>(user);
    const auto j = nlohmann::json::parse(line);
    const int step = j["step"].get<int>();
    if (every > 0 && step % every == 0) {
        std::fprintf(stderr, "step %6d  loss %.6f  lr %.3g\n", step, j["loss"].get<double>(),
                     j["lr"].get<double>());
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-interactive image colorization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(icl_version()));

    // train
    auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
    std::string train_config, train_out, train_log;
    int print_every = 100;
    train->add_option("-c,--config", train_config, "Run config JSON file")->required()->check(CLI::ExistingFile);
    train->add_option("-o,--output", train_out, "Checkpoint output path")->required();
    train->add_option("--log", train_log, "Metrics log (default: OUTPUT.log.jsonl)");
    train->add_option("--print-every", print_every, "Progress interval in steps (0 = silent)");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_dir, ev_out, ev_hints = "0,1,2,5,10,25,50,100";
    int ev_synthetic = 0, ev_hpr = 10;
    std::uint64_t ev_seed = 0, ev_syn_seed = 1;
    ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
    auto* dir_opt = ev->add_option("--dataset", ev_dir, "Directory of PNG images")->check(CLI::ExistingDirectory);
    auto* syn_opt = ev->add_option("--synthetic", ev_synthetic, "Use N synthetic images instead")->check(CLI::PositiveNumber);
    dir_opt->excludes(syn_opt);
    ev->add_option("--synthetic-seed", ev_syn_seed);
    ev->add_option("--hints", ev_hints, "Comma-separated hint counts");
    ev->add_option("--seed", ev_seed);
    ev->add_option("--hpr-steps", ev_hpr, "Nested hint sequence length (0 disables HPR)");
    ev->add_option("-o,--output", ev_out, "Report prefix; writes PREFIX.json and PREFIX.csv")->required();

    // colorize
    auto* col = app.add_subcommand("colorize", "Colorize one image");
    std::string col_ckpt, col_image, col_hints, col_out;
    col->add_option("--checkpoint", col_ckpt)->required()->check(CLI::ExistingFile);
    col->add_option("-i,--image", col_image)->required();
    col->add_option("--hints", col_hints, "Hints JSON file");
    col->add_option("-o,--output", col_out)->required();

    // rollout
    auto* ro = app.add_subcommand("rollout", "Export the attention rollout for one hint");
    std::string ro_ckpt, ro_image, ro_out, ro_json;
    int ro_x = 0, ro_y = 0;
    bool ro_upsample = false;
    ro->add_option("--checkpoint", ro_ckpt)->required()->check(CLI::ExistingFile);
    ro->add_option("-i,--image", ro_image)->required();
    ro->add_option("-x", ro_x)->required();
    ro->add_option("-y", ro_y)->required();
    ro->add_option("-o,--output", ro_out, "Heat-map PNG")->required();
    ro->add_option("--json", ro_json, "Grid JSON (default: OUTPUT with .json)");
    ro->add_flag("--upsample", ro_upsample, "One pixel per image pixel instead of per patch");

    // bench
    auto* bench = app.add_subcommand("bench", "Latency and FLOPs of one forward pass");
    std::string bench_config = "base", bench_ckpt, bench_json;
    int warmup = 5, runs = 30;
    auto* cfg_opt = bench->add_option("--config", bench_config, "Preset name or ModelConfig JSON file");
    bench->add_option("--checkpoint", bench_ckpt)->check(CLI::ExistingFile)->excludes(cfg_opt);
    bench->add_option("--warmup", warmup)->check(CLI::Range(5, 1000000));
    bench->add_option("--runs", runs)->check(CLI::Range(30, 1000000));
    bench->add_option("--json", bench_json, "Write the result as JSON");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::string serve_ckpt, serve_host = "127.0.0.1", serve_static;
    int port = 8290, max_dim = 4096, workers = 0;
    serve->add_option("--checkpoint", serve_ckpt)->check(CLI::ExistingFile);
    serve->add_option("--host", serve_host);
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_option("--max-image-dim", max_dim)->check(CLI::PositiveNumber);
    serve->add_option("--workers", workers, "Concurrent handlers (0 = CPU count)");
    serve->add_option("--static", serve_static, "Directory served under /")->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    std::vector<int> counts;
    try {
        if (*ev) counts = parse_counts(ev_hints);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitUsage;
    }

    try {
        if (*train) {
            const std::string text = slurp(train_config);
            if (train_log.empty()) train_log = train_out + ".log.jsonl";
            check(icl_train(text.c_str(), train_out.c_str(), train_log.c_str(), on_step, &print_every));
            std::printf("wrote %s\n", train_out.c_str());
        } else if (*ev) {
            const auto model = load(ev_ckpt);
            if (ev_dir.empty() && ev_synthetic == 0) throw Failure("eval: give --dataset or --synthetic");
            const std::string json_path = ev_out + ".json", csv_path = ev_out + ".csv";
            check(icl_eval(model.get(), ev_dir.empty() ? nullptr : ev_dir.c_str(), ev_synthetic,
                           ev_syn_seed, counts.data(), counts.size(), ev_seed, ev_hpr,
                           json_path.c_str(), csv_path.c_str()));
            std::fputs(slurp(csv_path).c_str(), stdout);
        } else if (*col) {
            const auto model = load(col_ckpt);
            check(icl_colorize_file(model.get(), col_image.c_str(),
                                    col_hints.empty() ? nullptr : col_hints.c_str(), col_out.c_str()));
        } else if (*ro) {
            const auto model = load(ro_ckpt);
            if (ro_json.empty()) {
                const auto dot = ro_out.rfind('.');
                ro_json = (dot == std::string::npos ? ro_out : ro_out.substr(0, dot)) + ".json";
            }
            const int scale = ro_upsample ? patch_size(model.get()) : 1;
            check(icl_rollout_file(model.get(), ro_image.c_str(), ro_x, ro_y, scale, ro_out.c_str(),
                                   ro_json.c_str()));
        } else if (*bench) {
            ModelPtr model;
            if (!bench_ckpt.empty()) {
                model = load(bench_ckpt);
            } else {
                icl_model* m = nullptr;
                const bool is_file = bench_config.find('.') != std::string::npos;
                const std::string cfg = is_file ? slurp(bench_config) : bench_config;
                check(icl_model_create(cfg.c_str(), 0, &m));
                model.reset(m);
            }
            icl_bench_result r{};
            check(icl_bench(model.get(), warmup, runs, &r));
            std::printf("%-8s %10s %10s %10s %9s %12s\n", "config", "mean_ms", "median_ms", "p95_ms",
                        "gflops", "params");
            std::printf("%-8s %10.2f %10.2f %10.2f %9.3f %12llu\n", r.config_name, r.mean_ms,
                        r.median_ms, r.p95_ms, r.gflops,
                        static_cast<unsigned long long>(r.parameter_count));
            if (!bench_json.empty()) {
                const nlohmann::json j = {{"config", r.config_name},     {"mean_ms", r.mean_ms},
                                          {"median_ms", r.median_ms},    {"p95_ms", r.p95_ms},
                                          {"gflops", r.gflops},          {"parameter_count", r.parameter_count},
                                          {"warmup_runs", r.warmup_runs}, {"timed_runs", r.timed_runs}};
                std::ofstream(bench_json) << j.dump(2) << '\n';
            }
        } else if (*serve) {
            ModelPtr model;
            if (!serve_ckpt.empty()) model = load(serve_ckpt);
            std::fprintf(stderr, "listening on %s:%d\n", serve_host.c_str(), port);
            check(icl_serve(model.get(), serve_ckpt.empty() ? nullptr : serve_ckpt.c_str(),
                            serve_host.c_str(), port, max_dim, workers,
                            serve_static.empty() ? nullptr : serve_static.c_str()));
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
    return 0;
}
