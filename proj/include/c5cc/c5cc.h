#ifndef C5CC_C5CC_H
#define C5CC_C5CC_H

/* C interface to the c5cc library. All functions return a status code; on
 * failure c5cc_last_error() describes the problem (per thread). Handles are
 * opaque and must be released with the matching _free function. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define C5CC_API __declspec(dllexport)
#else
#define C5CC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum c5cc_status {
  C5CC_OK = 0,
  C5CC_ERR_USAGE = 1,
  C5CC_ERR_DATA = 2,
  C5CC_ERR_NUMERICAL = 3,
  C5CC_ERR_INTERNAL = 4
} c5cc_status;

typedef struct c5cc_weights c5cc_weights;
typedef struct c5cc_report c5cc_report;

/* Line-oriented progress output (no trailing newline). */
typedef void (*c5cc_log_fn)(const char* line, void* user);

C5CC_API const char* c5cc_version(void);
C5CC_API const char* c5cc_last_error(void);

/* ---- weights ---- */

typedef struct c5cc_weights_info {
  int n;
  int m;
  int depth;
  int base_channels;
  int convs_per_block;
  int emit_gain;
  int use_gradient;
  int use_coords;
  size_t trainable_values;
  size_t total_values;
  size_t serialized_bytes;
} c5cc_weights_info;

C5CC_API c5cc_status c5cc_weights_load(const char* path, c5cc_weights** out);
C5CC_API c5cc_status c5cc_weights_save(const c5cc_weights* w, const char* path);
/* Fresh weights; `config` holds key = value lines (architecture keys only,
 * NULL for the defaults). */
C5CC_API c5cc_status c5cc_weights_init(const char* config, uint64_t seed, c5cc_weights** out);
C5CC_API c5cc_status c5cc_weights_get_info(const c5cc_weights* w, c5cc_weights_info* out);
C5CC_API void c5cc_weights_free(c5cc_weights* w);

/* ---- inference ---- */

typedef struct c5cc_estimate {
  double illuminant[3]; /* unit norm, camera RGB */
  double uv[2];         /* log-chroma of the estimate */
} c5cc_estimate;

/* Images are PFM files (optionally with a "<name>_mask.pfm" companion). When
 * `heatmap_path` is non-NULL the heat map is written there as a grayscale
 * PFM; when `filters_prefix` is non-NULL the generated filters, bias and gain
 * are written as <prefix>_filter_pixel.pfm, _filter_gradient.pfm, _bias.pfm
 * and _gain.pfm. */
C5CC_API c5cc_status c5cc_infer_files(const c5cc_weights* w, const char* query_path, const char* const* additional,
                                      size_t additional_count, const char* heatmap_path, const char* filters_prefix,
                                      c5cc_estimate* out);

/* Interleaved linear RGB float images, row-major, top row first. */
C5CC_API c5cc_status c5cc_infer_rgb(const c5cc_weights* w, const float* query, int width, int height,
                                    const float* const* additional, const int* widths, const int* heights,
                                    size_t additional_count, c5cc_estimate* out);

/* ---- training ---- */

/* Trains from a key = value config file. Besides the hyperparameter keys it
 * requires `manifest` and `output` and accepts `metrics` (tab-separated
 * per-epoch log), `exclude_camera` (leave-one-camera-out hold-out) and
 * `width` / `height` (working size). The best-validation weights go to
 * `output`, the last epoch's to `<output>.final`. Paths resolve against the
 * config's directory. When override_seed is non-zero `seed` replaces the
 * config's seed. */
C5CC_API c5cc_status c5cc_train_file(const char* config_path, uint64_t seed, int override_seed, c5cc_log_fn log,
                                     void* user);

/* ---- augmentation and synthetic data ---- */

/* Maps `count` images from the source manifest into the (single) camera of
 * the target manifest. Writes PFM images and `manifest.jsonl` to out_dir. */
C5CC_API c5cc_status c5cc_augment(const char* source_manifest, const char* target_manifest, int count,
                                  const char* out_dir, uint64_t seed, c5cc_log_fn log, void* user);

/* Draws `camera_count` synthetic cameras and renders `images_per_camera`
 * scenes with each, writing PFM images and `manifest.jsonl` to out_dir. */
C5CC_API c5cc_status c5cc_synth_cameras(uint64_t seed, int camera_count, int images_per_camera, double perturbation,
                                        const char* out_dir, c5cc_log_fn log, void* user);

/* ---- evaluation ---- */

typedef struct c5cc_stats {
  double mean;
  double median;
  double trimean;
  double best25;
  double worst25;
} c5cc_stats;

/* Evaluates on the manifest (restricted to `camera` when non-NULL) with the
 * additional-image policy random | vivid | dull | cross-camera | none. With
 * w == NULL the gray-world baseline is evaluated instead. */
C5CC_API c5cc_status c5cc_eval(const c5cc_weights* w, const char* manifest, const char* camera, const char* policy,
                               int repeats, uint64_t seed, c5cc_report** out);
C5CC_API size_t c5cc_report_images(const c5cc_report* r);
C5CC_API size_t c5cc_report_runs(const c5cc_report* r);
/* run < 0 selects the across-run mean (and `std` its standard deviation). */
C5CC_API c5cc_status c5cc_report_stats(const c5cc_report* r, int run, c5cc_stats* out, c5cc_stats* std);
C5CC_API const char* c5cc_report_text(const c5cc_report* r);
C5CC_API void c5cc_report_free(c5cc_report* r);

/* ---- gradient checks ---- */

typedef void (*c5cc_gradcheck_fn)(const char* name, double worst_rel_error, int passed, void* user);

/* Runs the finite-difference suite; `failures` receives the failing count. */
C5CC_API c5cc_status c5cc_gradcheck(uint64_t seed, double tolerance, c5cc_gradcheck_fn cb, void* user,
                                    int* failures);

#ifdef __cplusplus
}
#endif

#endif
