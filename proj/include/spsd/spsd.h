#ifndef SPSD_SPSD_H
#define SPSD_SPSD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SPSD_API __declspec(dllexport)
#else
#define SPSD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum spsd_status {
  SPSD_OK = 0,
  SPSD_ERR_CONFIG = 1,
  SPSD_ERR_SHAPE = 2,
  SPSD_ERR_INVALID_ROUTE = 3,
  SPSD_ERR_DOMAIN = 4,
  SPSD_ERR_SCHEDULE = 5,
  SPSD_ERR_IO = 6,
  SPSD_ERR_VALIDATION = 7,
  SPSD_ERR_INVALID_STATE = 8,
  SPSD_ERR_INVALID_ARGUMENT = 9,
  SPSD_ERR_INTERNAL = 10
} spsd_status;

typedef enum spsd_placement {
  SPSD_PLACEMENT_FINAL_ONLY = 0,
  SPSD_PLACEMENT_INTERMEDIATE_ONLY = 1,
  SPSD_PLACEMENT_BOTH = 2
} spsd_placement;

typedef struct spsd_model spsd_model;

typedef void (*spsd_log_fn)(const char* line, void* user);

/* Message of the last failed call on this thread; empty after a success. */
SPSD_API const char* spsd_last_error(void);
SPSD_API const char* spsd_status_string(spsd_status status);

/* network_json holds the "network" section of an experiment config. */
SPSD_API spsd_status spsd_model_create(const char* network_json, uint64_t seed, spsd_model** out);
SPSD_API spsd_status spsd_model_load(const char* checkpoint_path, spsd_model** out);
SPSD_API spsd_status spsd_model_save(const spsd_model* model, const char* checkpoint_path);
SPSD_API void spsd_model_destroy(spsd_model* model);

SPSD_API spsd_status spsd_model_info(const spsd_model* model, int* image_size, int* num_blocks, int* num_classes);

/* images: n normalized images, HWC float, image_size x image_size x 3.
   route 0 selects the full network, 1..num_blocks an intermediate route.
   logits: n x num_classes, row-major. */
SPSD_API spsd_status spsd_model_forward(const spsd_model* model, const float* images, size_t n, int route,
                                        float* logits);

/* One normalized image in, image_size x image_size map in [0, 1] out. */
SPSD_API spsd_status spsd_model_heatmap(const spsd_model* model, const float* image, int rollout, double* map);

SPSD_API spsd_status spsd_beta_at(int64_t step, int64_t total_steps, double beta_final, double* beta);
SPSD_API spsd_status spsd_kl_tempered(const double* teacher, const double* student, size_t num_classes, double tau,
                                      double* kl);
SPSD_API spsd_status spsd_kl_softened(const double* teacher, const double* student, size_t num_classes, int label,
                                      double beta, spsd_placement placement, double* kl);

/* correct[i] is nonzero when sample i was classified correctly. */
SPSD_API spsd_status spsd_ece(const double* confidences, const int* correct, size_t n, int num_bins, double* ece);
/* probs: n x num_classes, row-major, rows summing to 1. */
SPSD_API spsd_status spsd_sce(const double* probs, const int* labels, size_t n, size_t num_classes, int num_bins,
                              double* sce);

typedef struct spsd_command_options {
  const char* config_path;
  /* NULL: $SPSD_OUT_DIR, then ./spsd_out */
  const char* out_dir;
  int has_seed;
  uint64_t seed;
  int resume;
  spsd_log_fn log;
  void* log_user;
} spsd_command_options;

SPSD_API spsd_status spsd_make_data(const spsd_command_options* options);
SPSD_API spsd_status spsd_train(const spsd_command_options* options);
SPSD_API spsd_status spsd_sweep(const spsd_command_options* options);
SPSD_API spsd_status spsd_report(const char* results_dir, spsd_log_fn log, void* log_user);

#ifdef __cplusplus
}
#endif

#endif
