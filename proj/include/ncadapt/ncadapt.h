/* C interface to the NCAdapt library. All functions return an
 * ncadapt_status; on failure ncadapt_last_error() describes the problem
 * (thread-local, valid until the next call on the same thread). Strings
 * returned through char** are owned by the caller and released with
 * ncadapt_string_free. */
#ifndef NCADAPT_H
#define NCADAPT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NCADAPT_API __declspec(dllexport)
#else
#define NCADAPT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ncadapt_status {
  NCADAPT_OK = 0,
  NCADAPT_ERR_USAGE = 1,    /* bad arguments or configuration */
  NCADAPT_ERR_DATA = 2,     /* unreadable, missing or inconsistent files */
  NCADAPT_ERR_NUMERIC = 3,  /* non-finite values during training or inference */
  NCADAPT_ERR_INTERNAL = 4
} ncadapt_status;

typedef struct ncadapt_config ncadapt_config;
typedef struct ncadapt_model ncadapt_model;

NCADAPT_API const char* ncadapt_last_error(void);
NCADAPT_API const char* ncadapt_version(void);
NCADAPT_API void ncadapt_string_free(char* s);

/* Parameter counts of a fresh model. arch is "default2d" or "default3d". */
typedef struct ncadapt_param_audit {
  size_t all;                /* backbone */
  size_t ncadapt_trainable;  /* per stage after the first, shared scope */
  size_t per_domain;         /* adapter growth per domain */
  size_t fc;
  size_t fh;
  size_t fl;
  size_t sa_total;
} ncadapt_param_audit;

NCADAPT_API ncadapt_status ncadapt_param_audit_run(const char* arch, ncadapt_param_audit* out);

/* Run configuration. */
NCADAPT_API ncadapt_status ncadapt_config_default(ncadapt_config** out);
NCADAPT_API ncadapt_status ncadapt_config_load(const char* path, ncadapt_config** out);
/* Overrides one entry by dotted key ("train.epochs", "seed", ...) with a JSON value. */
NCADAPT_API ncadapt_status ncadapt_config_set(ncadapt_config* config, const char* key, const char* json_value);
NCADAPT_API ncadapt_status ncadapt_config_to_json(const ncadapt_config* config, char** out);
NCADAPT_API ncadapt_status ncadapt_config_hash(const ncadapt_config* config, char** out);
NCADAPT_API void ncadapt_config_free(ncadapt_config* config);

/* Writes the configured synthetic domains and their split manifest under data_dir. */
NCADAPT_API ncadapt_status ncadapt_generate_data(const ncadapt_config* config, const char* data_dir);

/* Training. Each call writes a new checkpoint directory out_dir (plus
 * train_report.json and timings.json) and returns a JSON summary in
 * *summary when summary is not NULL. */
NCADAPT_API ncadapt_status ncadapt_train_first(const ncadapt_config* config, const char* data_dir, const char* domain,
                                               const char* out_dir, char** summary);
/* Next continual stage on top of prev_dir. Verifies afterwards that no frozen
 * or foreign-domain tensor changed. */
NCADAPT_API ncadapt_status ncadapt_adapt(const ncadapt_config* config, const char* data_dir, const char* domain,
                                         const char* prev_dir, const char* out_dir, char** summary);
NCADAPT_API ncadapt_status ncadapt_train_baseline(const ncadapt_config* config, const char* data_dir,
                                                  const char* domain, const char* out_dir, char** summary);

/* Evaluates stage checkpoints (in stage order) and optional baselines
 * (n_baselines is 0 or n_stages, in task order) on the test splits and
 * writes evaluation.json and timings.json into out_dir. threads >= 1. */
NCADAPT_API ncadapt_status ncadapt_evaluate(const ncadapt_config* config, const char* data_dir,
                                            const char* const* stage_dirs, size_t n_stages,
                                            const char* const* baseline_dirs, size_t n_baselines,
                                            const char* out_dir, size_t threads);
/* Reads evaluation.json from eval_dir and writes report.json and
 * dice_matrix.csv into out_dir; returns report.json's text in *report. */
NCADAPT_API ncadapt_status ncadapt_report(const char* eval_dir, const char* out_dir, char** report);

/* Checkpoints. */
NCADAPT_API ncadapt_status ncadapt_model_load(const char* dir, ncadapt_model** out);
NCADAPT_API void ncadapt_model_free(ncadapt_model* model);
NCADAPT_API size_t ncadapt_model_domain_count(const ncadapt_model* model);
/* Borrowed pointer, valid while the model lives; NULL when out of range. */
NCADAPT_API const char* ncadapt_model_domain_label(const ncadapt_model* model, size_t index);

typedef enum ncadapt_param_filter {
  NCADAPT_PARAMS_ALL = 0,
  NCADAPT_PARAMS_TRAINABLE = 1,
  NCADAPT_PARAMS_PER_DOMAIN = 2
} ncadapt_param_filter;

NCADAPT_API ncadapt_status ncadapt_model_param_count(const ncadapt_model* model, ncadapt_param_filter filter,
                                                     size_t* out);

/* Segments one RTI image. domain < 0 selects the head by NQM (rule "min"
 * or "max"); otherwise that 0-based head is used. Writes the binary mask to
 * out_rti. *chosen receives the head used; scores (capacity n_scores) the
 * per-head NQM values when the head was selected automatically. */
NCADAPT_API ncadapt_status ncadapt_infer(const ncadapt_model* model, const char* image_rti, int domain,
                                         size_t samples, uint64_t seed, const char* rule, const char* out_rti,
                                         int* chosen, double* scores, size_t n_scores);

#ifdef __cplusplus
}
#endif

#endif
