#ifndef CGFUSION_CGFUSION_H
#define CGFUSION_CGFUSION_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CGF_API __declspec(dllexport)
#else
#define CGF_API __attribute__((visibility("default")))
#endif

typedef enum cgf_status {
  CGF_OK = 0,
  CGF_ERR_INPUT = 1,    /* null or out-of-range argument */
  CGF_ERR_CONFIG = 2,   /* invalid configuration or shape mismatch */
  CGF_ERR_STATE = 3,    /* operation not valid in the current state */
  CGF_ERR_IO = 4,       /* missing or unreadable file */
  CGF_ERR_DATA = 5,     /* dataset content unusable */
  CGF_ERR_INTERNAL = 6  /* unexpected failure */
} cgf_status;

typedef struct cgf_config cgf_config;
typedef struct cgf_image cgf_image;
typedef struct cgf_model cgf_model;

/* Message of the last failed call on this thread ("" if none). */
CGF_API const char* cgf_last_error(void);
CGF_API const char* cgf_version(void);

/* ---- configuration ---------------------------------------------------- */

CGF_API cgf_status cgf_config_create(cgf_config** out);
CGF_API void cgf_config_destroy(cgf_config* cfg);
CGF_API cgf_status cgf_config_set(cgf_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed receives
   the required size including the terminator. */
CGF_API cgf_status cgf_config_get(const cgf_config* cfg, const char* key, char* buf, size_t cap,
                                  size_t* needed);
CGF_API cgf_status cgf_config_load_file(cgf_config* cfg, const char* path);

CGF_API size_t cgf_config_key_count(void);
CGF_API const char* cgf_config_key_name(size_t index);
CGF_API const char* cgf_config_key_help(size_t index);
CGF_API const char* cgf_config_key_default(size_t index);

/* ---- pipeline commands ------------------------------------------------ */

typedef void (*cgf_log_fn)(const char* line, void* user);

CGF_API cgf_status cgf_gen_data(const cgf_config* cfg, cgf_log_fn log, void* user);
CGF_API cgf_status cgf_train(const cgf_config* cfg, cgf_log_fn log, void* user);
CGF_API cgf_status cgf_infer(const cgf_config* cfg, cgf_log_fn log, void* user);
CGF_API cgf_status cgf_evaluate(const cgf_config* cfg, cgf_log_fn log, void* user);
/* Also logs one line per ablation row. */
CGF_API cgf_status cgf_ablate(const cgf_config* cfg, cgf_log_fn log, void* user);

/* ---- images ----------------------------------------------------------- */

/* Gray levels in [0, 255], row-major. */
CGF_API cgf_status cgf_image_create(int height, int width, const double* gray, cgf_image** out);
CGF_API cgf_status cgf_image_load(const char* path, cgf_image** out);
CGF_API void cgf_image_destroy(cgf_image* img);
CGF_API int cgf_image_height(const cgf_image* img);
CGF_API int cgf_image_width(const cgf_image* img);
CGF_API const double* cgf_image_data(const cgf_image* img);

/* ---- models ----------------------------------------------------------- */

CGF_API cgf_status cgf_model_load(const char* checkpoint, cgf_model** out);
CGF_API void cgf_model_destroy(cgf_model* model);
/* logits[0] = background, logits[1] = damage (pre-softmax). */
CGF_API cgf_status cgf_model_classify(cgf_model* model, const cgf_image* img, double logits[2],
                                      int* predicted);
/* Heatmap in [0, 1] for the method, target and fusion settings of `cfg`,
   its segmentation mask ({0, 1}) and region count. Outputs may be NULL. */
CGF_API cgf_status cgf_model_explain(cgf_model* model, const cgf_image* img, const cgf_config* cfg,
                                     cgf_image** heatmap, cgf_image** mask, int* regions);

/* ---- stateless helpers ------------------------------------------------ */

/* Local threshold of a gray-level map; mask_out receives 0/1 per pixel. */
CGF_API cgf_status cgf_sauvola(const double* map, int height, int width, int window, double k, double r,
                               unsigned char* mask_out);
/* out = {precision, recall, f1, iou}; undefined rates are NaN. */
CGF_API cgf_status cgf_pixel_metrics(const unsigned char* pred, const unsigned char* gt, size_t n,
                                     double out[4]);

#ifdef __cplusplus
}
#endif

#endif
