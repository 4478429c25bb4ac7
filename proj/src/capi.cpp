#include "icolorit/icolorit.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include "icolorit/colorspace.hpp"
#include "icolorit/dataio.hpp"
#include "icolorit/error.hpp"
#include "icolorit/eval.hpp"
#include "icolorit/rollout.hpp"
#include "icolorit/service.hpp"
#include "icolorit/train.hpp"
#include "json.hpp"

using namespace icolorit;

struct icl_model {
    Model model;
    std::string checkpoint_path;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
icl_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return ICL_OK;
    } catch (const InvalidArgument& e) {
        g_last_error = e.what();
        return ICL_ERR_INVALID_ARGUMENT;
    } catch (const IoError& e) {
        g_last_error = e.what();
        return ICL_ERR_IO;
    } catch (const DivergenceError& e) {
        g_last_error = e.what();
        return ICL_ERR_DIVERGED;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return ICL_ERR_OUT_OF_MEMORY;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return ICL_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return ICL_ERR_RUNTIME;
    }
}

void require(const void* p, const char* what) {
    if (p == nullptr) throw InvalidArgument(std::string(what) + " must not be NULL");
}

template <typename T>
T* copy_out(const void* src, std::size_t n) {
    auto* p = static_cast<T*>(std::malloc(n == 0 ? 1 : n));
    if (!p) throw std::bad_alloc();
    if (n) std::memcpy(p, src, n);
    return p;
}

std::string preset_name(const ModelConfig& c) {
    for (const char* name : {"base", "small", "tiny", "toy"}) {
        if (config_to_json(ModelConfig::preset(name)) == config_to_json(c)) return name;
    }
    return "custom";
}

std::vector<Hint> hints_or_empty(const char* text) {
    if (text == nullptr) return {};
    return hints::parse_hints_json(text);
}

}  // namespace

extern "C" {

const char* icl_last_error(void) { return g_last_error.c_str(); }

const char* icl_version(void) { return "0.1.0"; }

void icl_free(void* ptr) { std::free(ptr); }

icl_status icl_model_create(const char* config_json, uint64_t seed, icl_model** out) {
    return guarded([&] {
        require(config_json, "config");
        require(out, "out");
        const std::string text = config_json;
        const ModelConfig c = text.find('{') == std::string::npos ? ModelConfig::preset(text)
                                                                   : config_from_json(text);
        *out = new icl_model{Model(c, ModelParams::init(c, seed)), {}};
    });
}

icl_status icl_model_load(const char* checkpoint_path, icl_model** out) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint path");
        require(out, "out");
        *out = new icl_model{dataio::load_checkpoint(checkpoint_path), checkpoint_path};
    });
}

icl_status icl_model_save(const icl_model* model, const char* checkpoint_path) {
    return guarded([&] {
        require(model, "model");
        require(checkpoint_path, "checkpoint path");
        dataio::save_checkpoint(model->model.params(), model->model.config(), checkpoint_path);
    });
}

void icl_model_free(icl_model* model) { delete model; }

icl_status icl_model_config_json(const icl_model* model, char** out_json) {
    return guarded([&] {
        require(model, "model");
        require(out_json, "out");
        const std::string text = config_to_json(model->model.config());
        *out_json = copy_out<char>(text.c_str(), text.size() + 1);
    });
}

double icl_model_gflops(const icl_model* model) {
    return model ? model::count_flops(model->model.config()) : 0.0;
}

uint64_t icl_model_parameter_count(const icl_model* model) {
    return model ? model::parameter_count(model->model.config()) : 0;
}

icl_status icl_train(const char* run_config_json, const char* checkpoint_path, const char* log_path,
                     icl_train_callback callback, void* user) {
    return guarded([&] {
        require(run_config_json, "run config");
        require(checkpoint_path, "checkpoint path");
        const auto run = train::run_config_from_json(run_config_json);
        std::ofstream log;
        if (log_path) {
            log.open(log_path, std::ios::trunc);
            if (!log) throw IoError(std::string(log_path) + ": cannot open for writing");
        }
        const Model model = train::run_training(run, [&](const train::LogRecord& r) {
            const std::string line = train::log_record_json(r);
            if (log_path) log << line << '\n';
            return callback == nullptr || callback(line.c_str(), user) != 0;
        });
        if (log_path) {
            log.flush();
            if (!log) throw IoError(std::string(log_path) + ": write failed");
        }
        dataio::save_checkpoint(model.params(), model.config(), checkpoint_path);
    });
}

icl_status icl_eval(const icl_model* model, const char* dataset_dir, int synthetic_count,
                    uint64_t synthetic_seed, const int* hint_counts, size_t n_hint_counts,
                    uint64_t seed, int hpr_steps, const char* json_path, const char* csv_path) {
    return guarded([&] {
        require(model, "model");
        const int size = model->model.config().image_size;
        std::vector<RgbImage> images;
        if (dataset_dir) {
            images = dataio::load_png_directory(dataset_dir, size);
        } else if (synthetic_count > 0) {
            Rng rng(synthetic_seed);
            images = train::make_synthetic_dataset(rng, synthetic_count, size);
        }
        if (images.empty()) throw InvalidArgument("evaluation dataset is empty");
        eval::EvalOptions options;
        if (hint_counts && n_hint_counts) options.hint_counts.assign(hint_counts, hint_counts + n_hint_counts);
        options.seed = seed;
        if (hpr_steps < 0) throw InvalidArgument("hpr steps must be >= 0");
        options.hpr_steps = hpr_steps;
        const auto set = eval::make_eval_set(images);
        const auto report = eval::evaluate(model->model, set, options);
        if (json_path) dataio::write_text(json_path, eval::report_to_json(report) + "\n");
        if (csv_path) dataio::write_text(csv_path, eval::report_to_csv(report));
    });
}

icl_status icl_colorize_png(const icl_model* model, const uint8_t* png, size_t png_len,
                            const char* hints_json, uint8_t** out_png, size_t* out_len,
                            double* latency_ms) {
    return guarded([&] {
        require(model, "model");
        require(png, "png");
        require(out_png, "out");
        require(out_len, "out length");
        const RgbImage image = dataio::decode_png(std::span(png, png_len));
        const auto result =
            service::colorize_full_resolution(model->model, image, hints_or_empty(hints_json));
        const auto bytes = dataio::encode_png(result.image);
        *out_png = copy_out<uint8_t>(bytes.data(), bytes.size());
        *out_len = bytes.size();
        if (latency_ms) *latency_ms = result.latency_ms;
    });
}

icl_status icl_colorize_file(const icl_model* model, const char* image_path, const char* hints_path,
                             const char* output_path) {
    return guarded([&] {
        require(model, "model");
        require(image_path, "image path");
        require(output_path, "output path");
        const RgbImage image = dataio::load_png(image_path);
        std::vector<Hint> hint_list;
        if (hints_path) {
            try {
                hint_list = hints::parse_hints_json(dataio::read_text(hints_path));
            } catch (const InvalidArgument& e) {
                throw InvalidArgument(std::string(hints_path) + ": " + e.what());
            }
        }
        const auto result = service::colorize_full_resolution(model->model, image, hint_list);
        dataio::save_png(result.image, output_path);
    });
}

icl_status icl_rollout_file(const icl_model* model, const char* image_path, int x, int y,
                            int upsample, const char* png_path, const char* json_path) {
    return guarded([&] {
        require(model, "model");
        require(image_path, "image path");
        if (upsample < 1) throw InvalidArgument("upsample must be >= 1");
        const auto& c = model->model.config();
        const RgbImage image = dataio::load_png(image_path);
        const LabImage lab = colorspace::rgb_to_lab(image);
        Hint h{x, y, 2, 0.0, 0.0};
        const auto scaled = service::scale_hints({h}, image.width, image.height, c.image_size);
        const auto [a, b] = hints::hint_color_from_image(lab, x, y, h.size);
        std::vector<Hint> hint_list = scaled;
        hint_list[0].a = a;
        hint_list[0].b = b;
        const LumaPlane luma = dataio::resize_bilinear(lab.L, c.image_size, c.image_size);
        const NetInput input = hints::build_model_input(
            luma, hints::encode_hints(hint_list, c.image_size, c.image_size));
        const auto map = rollout::hint_attention_map(model->model, input, hint_list[0]);
        if (png_path) dataio::save_png(rollout::heat_map_to_image(map, upsample), png_path);
        if (json_path) dataio::write_text(json_path, rollout::heat_map_to_json(map) + "\n");
    });
}

icl_status icl_bench(const icl_model* model, int warmup_runs, int timed_runs, icl_bench_result* out) {
    return guarded([&] {
        require(model, "model");
        require(out, "out");
        const auto r = eval::bench_latency(model->model, warmup_runs, timed_runs);
        *out = icl_bench_result{};
        const std::string name = preset_name(model->model.config());
        std::snprintf(out->config_name, sizeof out->config_name, "%s", name.c_str());
        out->mean_ms = r.mean_ms;
        out->median_ms = r.median_ms;
        out->p95_ms = r.p95_ms;
        out->gflops = r.gflops;
        out->parameter_count = r.parameter_count;
        out->warmup_runs = r.warmup_runs;
        out->timed_runs = r.timed_runs;
    });
}

icl_status icl_serve(const icl_model* model, const char* checkpoint_path, const char* host, int port,
                     int max_image_dim, int workers, const char* static_dir) {
    return guarded([&] {
        service::Options options;
        if (host) options.host = host;
        options.port = port;
        options.max_image_dim = max_image_dim;
        options.workers = workers;
        if (static_dir) options.static_dir = static_dir;
        service::Service svc(options);
        if (model) svc.set_model(model->model, checkpoint_path ? checkpoint_path : model->checkpoint_path);
        if (!svc.listen()) {
            throw IoError("cannot listen on " + options.host + ":" + std::to_string(port));
        }
    });
}

}  // extern "C"
