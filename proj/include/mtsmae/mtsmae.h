/* C interface to the mtsmae forecasting library. Every call returns a status
 * code; on failure mtsmae_last_error() describes the problem for the calling
 * thread. Handles are opaque and owned by the caller. */
#ifndef MTSMAE_H
#define MTSMAE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MTSMAE_API __declspec(dllexport)
#else
#define MTSMAE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtsmae_status {
  MTSMAE_OK = 0,
  MTSMAE_ERR_INTERNAL = 1,
  MTSMAE_ERR_CONFIG = 2,
  MTSMAE_ERR_DATA = 3,
  MTSMAE_ERR_TRAINING = 4,
  MTSMAE_ERR_IO = 5
} mtsmae_status;

typedef struct mtsmae_config mtsmae_config;
typedef struct mtsmae_model mtsmae_model;

MTSMAE_API const char* mtsmae_version(void);

/* Message of the last failed call on this thread ("" when none). */
MTSMAE_API const char* mtsmae_last_error(void);
/* Short category of the last failure: config, dimension, index, data, training, transfer, io, internal. */
MTSMAE_API const char* mtsmae_last_error_kind(void);

/* trace, debug, info, warn, error, off. Log lines go to stderr. */
MTSMAE_API mtsmae_status mtsmae_set_log_level(const char* level);

/* profile: "desk" or "full". */
MTSMAE_API mtsmae_status mtsmae_config_new(const char* profile, mtsmae_config** out);
MTSMAE_API void mtsmae_config_free(mtsmae_config* cfg);
MTSMAE_API mtsmae_status mtsmae_config_load_file(mtsmae_config* cfg, const char* path);
MTSMAE_API mtsmae_status mtsmae_config_set(mtsmae_config* cfg, const char* key, const char* value);
/* Copies the resolved text into buf (NUL-terminated, truncated to cap) and
 * stores the full length (without NUL) in *needed when non-null. */
MTSMAE_API mtsmae_status mtsmae_config_to_text(const mtsmae_config* cfg, char* buf, size_t cap, size_t* needed);

MTSMAE_API size_t mtsmae_schema_size(void);
MTSMAE_API const char* mtsmae_schema_key(size_t index);
MTSMAE_API const char* mtsmae_schema_description(size_t index);

/* seed < 0 keeps the seed written in the spec file. */
MTSMAE_API mtsmae_status mtsmae_synth(const char* spec_path, const char* out_csv, int64_t seed, int force);

/* Each run writes config.txt and train_log.csv into out_dir. Out-params may be null. */
MTSMAE_API mtsmae_status mtsmae_pretrain(const mtsmae_config* cfg, const char* out_dir, int force,
                                         double* final_loss);
/* init_checkpoint may be null: the model is then trained from scratch. */
MTSMAE_API mtsmae_status mtsmae_finetune(const mtsmae_config* cfg, const char* out_dir,
                                         const char* init_checkpoint, int force, double* best_val);
MTSMAE_API mtsmae_status mtsmae_evaluate(const mtsmae_config* cfg, const char* checkpoint, const char* out_dir,
                                         int force, double* mse, double* mae);
/* values: comma-separated list. */
MTSMAE_API mtsmae_status mtsmae_sweep(const mtsmae_config* cfg, const char* axis, const char* values, size_t jobs,
                                      const char* out_dir, int force);

MTSMAE_API mtsmae_status mtsmae_model_load(const char* checkpoint, mtsmae_model** out);
MTSMAE_API void mtsmae_model_free(mtsmae_model* model);
MTSMAE_API mtsmae_status mtsmae_model_shape(const mtsmae_model* model, size_t* input_len, size_t* label_len,
                                            size_t* pred_len, size_t* d_x, size_t* d_y);
/* x_enc: input_len * d_x row-major values (already scaled as in training);
 * enc_minutes / pred_minutes: timestamps in minutes since 1970-01-01 for the
 * encoder window and the forecast steps; out: pred_len * d_y values. */
MTSMAE_API mtsmae_status mtsmae_model_forecast(const mtsmae_model* model, const double* x_enc,
                                               const int64_t* enc_minutes, const int64_t* pred_minutes,
                                               double* out);

#ifdef __cplusplus
}
#endif

#endif /* MTSMAE_H */
