#ifndef ICOLORIT_H
#define ICOLORIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ICL_API __declspec(dllexport)
#else
#define ICL_API __attribute__((visibility("default")))
#endif

typedef enum icl_status {
    ICL_OK = 0,
    /* Malformed input, bad configuration or out-of-range argument. */
    ICL_ERR_INVALID_ARGUMENT = 1,
    /* File could not be read or written. */
    ICL_ERR_IO = 2,
    /* Training loss became non-finite. */
    ICL_ERR_DIVERGED = 3,
    ICL_ERR_RUNTIME = 4,
    ICL_ERR_OUT_OF_MEMORY = 5
} icl_status;

typedef struct icl_model icl_model;

typedef struct icl_bench_result {
    /* Preset name, or "custom". */
    char config_name[16];
    double mean_ms;
    double median_ms;
    double p95_ms;
    double gflops;
    uint64_t parameter_count;
    int warmup_runs;
    int timed_runs;
} icl_bench_result;

/* Called once per training step with one metrics-log JSON line (no
 * newline). Return nonzero to continue, zero to stop early. */
typedef int (*icl_train_callback)(const char* json_line, void* user);

/* Message for the last failing call on this thread; never NULL. */
ICL_API const char* icl_last_error(void);
ICL_API const char* icl_version(void);

/* Frees strings and buffers returned by this library. */
ICL_API void icl_free(void* ptr);

/* Model lifetime. `config_json` is a ModelConfig object or a preset name
 * ("base", "small", "tiny", "toy"). */
ICL_API icl_status icl_model_create(const char* config_json, uint64_t seed, icl_model** out);
ICL_API icl_status icl_model_load(const char* checkpoint_path, icl_model** out);
ICL_API icl_status icl_model_save(const icl_model* model, const char* checkpoint_path);
ICL_API void icl_model_free(icl_model* model);

/* Caller frees *out_json with icl_free. */
ICL_API icl_status icl_model_config_json(const icl_model* model, char** out_json);
ICL_API double icl_model_gflops(const icl_model* model);
ICL_API uint64_t icl_model_parameter_count(const icl_model* model);

/* Runs the training job in `run_config_json` and writes the checkpoint.
 * `log_path` (optional) receives newline-delimited JSON records. */
ICL_API icl_status icl_train(const char* run_config_json, const char* checkpoint_path,
                             const char* log_path, icl_train_callback callback, void* user);

/* Evaluates on a directory of PNGs, or on `synthetic_count` synthetic images
 * from `synthetic_seed` when `dataset_dir` is NULL. Writes the report as
 * JSON and CSV; either path may be NULL. `hpr_steps` of 0 skips HPR. */
ICL_API icl_status icl_eval(const icl_model* model, const char* dataset_dir, int synthetic_count,
                            uint64_t synthetic_seed, const int* hint_counts, size_t n_hint_counts,
                            uint64_t seed, int hpr_steps, const char* json_path,
                            const char* csv_path);

/* Colorizes a PNG with a hints JSON array (NULL for none); output is a PNG
 * at the input resolution. Caller frees *out_png with icl_free. */
ICL_API icl_status icl_colorize_png(const icl_model* model, const uint8_t* png, size_t png_len,
                                    const char* hints_json, uint8_t** out_png,
                                    size_t* out_len, double* latency_ms);
ICL_API icl_status icl_colorize_file(const icl_model* model, const char* image_path,
                                     const char* hints_path, const char* output_path);

/* Heat map for a hint at (x, y) in input-image pixels, evaluated with that
 * single hint colored from the input. The PNG has one pixel per patch, or
 * `upsample` pixels per patch side. Either output path may be NULL. */
ICL_API icl_status icl_rollout_file(const icl_model* model, const char* image_path, int x, int y,
                                    int upsample, const char* png_path, const char* json_path);

ICL_API icl_status icl_bench(const icl_model* model, int warmup_runs, int timed_runs,
                             icl_bench_result* out);

/* Serves the HTTP API until the process is stopped. `model` may be NULL,
 * in which case model endpoints answer 503. `static_dir` may be NULL. */
ICL_API icl_status icl_serve(const icl_model* model, const char* checkpoint_path,
                             const char* host, int port, int max_image_dim, int workers,
                             const char* static_dir);

#ifdef __cplusplus
}
#endif

#endif
