#ifndef READALIGN_H
#define READALIGN_H

/* C interface to the readalign engine. All functions return an ra_status;
 * on failure ra_last_error() describes the problem (thread-local, valid until
 * the next call on the same thread). Arrays are caller-allocated. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(READALIGN_BUILDING_LIBRARY)
#    define RA_API __declspec(dllexport)
#  else
#    define RA_API __declspec(dllimport)
#  endif
#else
#  define RA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ra_status {
  RA_OK = 0,
  RA_E_MISSING_FILE = 1,
  RA_E_PARSE = 2,
  RA_E_INVARIANT = 3, /* inputs violate a data-model rule */
  RA_E_ARGUMENT = 4,
  RA_E_IO = 5,
  RA_E_NUMERIC = 6, /* singular system, zero ceiling, zero variance, ... */
  RA_E_INTERNAL = 7
} ra_status;

typedef enum ra_sidedness { RA_TWO_SIDED = 0, RA_GREATER = 1, RA_LESS = 2 } ra_sidedness;

RA_API const char* ra_version(void);
RA_API const char* ra_last_error(void);
RA_API const char* ra_status_name(ra_status s);
/* 0 ok, 2 input or configuration error, 3 numerical or internal error. */
RA_API int ra_status_exit_code(ra_status s);

/* ---- pipeline configuration */
typedef struct ra_config ra_config;

RA_API ra_status ra_config_load(const char* path, ra_config** out);
/* Relative paths in `json` resolve against `base_dir`. */
RA_API ra_status ra_config_from_json(const char* json, const char* base_dir, ra_config** out);
RA_API void ra_config_free(ra_config* cfg);
RA_API ra_status ra_config_set_workers(ra_config* cfg, unsigned workers);
RA_API ra_status ra_config_set_seed(ra_config* cfg, uint64_t seed);
RA_API ra_status ra_config_set_output_dir(ra_config* cfg, const char* dir);
RA_API ra_status ra_config_set_dry_run(ra_config* cfg, int dry_run);
/* Writes 64 hex digits and a terminating NUL. */
RA_API ra_status ra_config_hash(const ra_config* cfg, char out[65]);

/* Receives each progress line without its newline. May be NULL. */
typedef void (*ra_log_fn)(const char* line, void* user);

/* command: "validate", "features", "targets", "align", "stats" or "visualness". */
RA_API ra_status ra_run(const ra_config* cfg, const char* command, ra_log_fn log, void* user);
/* synth_config may be NULL for the defaults. */
RA_API ra_status ra_synth(const char* synth_config, const char* out_dir, int dry_run, ra_log_fn log, void* user);

/* ---- primitives */
RA_API ra_status ra_alpha_grid(double lo, double hi, size_t n, double* out);
RA_API ra_status ra_scan_index(double onset_ms, double tr_seconds, double lag_seconds, int64_t* out);
RA_API ra_status ra_pair_count(const uint32_t* sentence_lengths, size_t n_sentences, size_t* out);
RA_API ra_status ra_fisher_z(double r, double* out);

/* tok is n_tokens x n_tokens row-major; word_of_token uses -1 for excluded
 * tokens; out receives n_words x n_words. */
RA_API ra_status ra_aggregate_attention(const float* tok, uint32_t n_tokens, const int32_t* word_of_token,
                                        uint32_t n_words, double* out);

/* X is rows x cols row-major; mask may be NULL (all rows). */
RA_API ra_status ra_fit_ridge(const double* X, size_t rows, size_t cols, const double* y, const uint8_t* mask,
                              double alpha, int fit_intercept, double* beta, double* intercept);

RA_API ra_status ra_paired_t_test(const double* a, const double* b, size_t n, ra_sidedness side, double* t,
                                  double* df, double* p);
RA_API ra_status ra_bh_fdr(const double* p, size_t m, double q, uint8_t* rejected, double* adjusted);
RA_API ra_status ra_sign_flip(const double* values, size_t n, ra_sidedness side, size_t n_perm, uint64_t seed,
                              const char* test_id, double* p);

#ifdef __cplusplus
}
#endif

#endif
