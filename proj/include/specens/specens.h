#ifndef SPECENS_H
#define SPECENS_H

/* C interface to the speculative-ensemble engine. Every fallible call
 * returns an se_status; on failure se_last_error() holds a message for the
 * calling thread. Strings returned through char** are owned by the caller
 * and released with se_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SE_API __declspec(dllexport)
#else
#define SE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum se_status {
  SE_OK = 0,
  SE_INVALID_ARGUMENT,
  SE_ZERO_MASS,
  SE_VOCAB_MISMATCH,
  SE_WEIGHT,
  SE_TOKEN_OUT_OF_RANGE,
  SE_FORMAT,
  SE_INVARIANT,
  SE_CONFIG,
  SE_EMPTY_STREAM,
  SE_BUDGET_EXCEEDED,
  SE_INSUFFICIENT_SAMPLES,
  SE_IO,
  SE_INTERNAL
} se_status;

typedef struct se_model se_model;
typedef struct se_trace se_trace;

SE_API const char* se_version(void);
SE_API const char* se_status_name(se_status status);
SE_API const char* se_last_error(void);
SE_API void se_string_free(char* s);

/* --- models --- */

typedef struct se_model_info {
  size_t vocab_size;
  size_t context_length;
  double cost;
  const char* name; /* owned by the model */
} se_model_info;

SE_API se_status se_model_random_table(uint64_t seed, size_t vocab_size, size_t context_length,
                                       double concentration, double cost, const char* name, se_model** out);
/* vocab_size 0 infers max id + 1 from the corpus. */
SE_API se_status se_model_train_ngram(const char* corpus_path, size_t order, double delta, size_t vocab_size,
                                      double cost, const char* name, se_model** out);
SE_API se_status se_model_fixed(const double* probs, size_t vocab_size, double cost, const char* name,
                                se_model** out);
SE_API se_status se_model_load(const char* path, se_model** out);
/* n-gram models are written as their equivalent table. */
SE_API se_status se_model_save(const se_model* model, const char* path);
SE_API se_status se_model_info_get(const se_model* model, se_model_info* out);
/* Writes vocab_size next-token logits after prefix into out[0..capacity). */
SE_API se_status se_model_logits(const se_model* model, const int32_t* prefix, size_t prefix_length, double* out,
                                 size_t capacity);
SE_API void se_model_free(se_model* model);

/* --- decoding --- */

typedef struct se_ensemble {
  const char* kind; /* weighted | contrastive | general; NULL = weighted */
  double lambda;
  double mu;
  const double* weights;
  size_t weight_count;
  double temperature;
} se_ensemble;

typedef struct se_decode_config {
  const char* strategy; /* vanilla-ensemble | vanilla-sd | spec-ensemble | alternate | nmodel-se */
  se_ensemble ensemble;
  const size_t* gammas; /* one per model; NULL = all 1 */
  size_t gamma_count;
  size_t max_tokens;
  uint64_t seed;
  size_t default_proposer;
  const int32_t* prefix;
  size_t prefix_length;
  int record_steps;
} se_decode_config;

/* Fills defaults: weighted lambda 0.5, mu 0.1, temperature 1, 16 tokens,
 * steps recorded. */
SE_API void se_decode_config_init(se_decode_config* config);

SE_API se_status se_decode(const se_model* const* models, size_t model_count, const se_decode_config* config,
                           se_trace** out);
SE_API size_t se_trace_length(const se_trace* trace);
SE_API const int32_t* se_trace_tokens(const se_trace* trace);
SE_API double se_trace_simulated_time(const se_trace* trace);
/* accepted / (accepted + rejected); NaN when nothing was verified. */
SE_API double se_trace_alpha(const se_trace* trace);
SE_API size_t se_trace_invocation_count(const se_trace* trace, size_t model_index);
SE_API se_status se_trace_json(const se_trace* trace, char** out);
SE_API void se_trace_free(se_trace* trace);

/* --- experiments and validation --- */

/* Runs an experiment config (JSON text); relative paths resolve against
 * base_dir. Any of csv, json, summary may be NULL. threads 0 keeps the
 * config's setting. */
SE_API se_status se_experiment_run(const char* config_json, const char* base_dir, unsigned threads, char** csv,
                                   char** json, char** summary);

/* suite: distribution | acceptance | never-slower | formulas | all.
 * sessions 0 and tolerance NaN select suite defaults. */
SE_API se_status se_validate(const char* suite, size_t sessions, double tolerance, uint64_t seed, unsigned threads,
                             char** verdict_json, int* passed);

typedef struct se_formulas_result {
  double expected_tokens;       /* (1 - a^g) / (1 - a) */
  double factor_spec_ensemble;  /* bonus token excluded */
  double factor_alternate;
  double lambda_bound;
  double best_side_bound;
  int best_side_is_q;
  int speedup_possible; /* lambda > c / (1 + c) */
} se_formulas_result;

SE_API se_status se_formulas(double alpha, size_t gamma, size_t gamma_q, size_t gamma_p, double c, double lambda,
                             se_formulas_result* out);

#ifdef __cplusplus
}
#endif

#endif /* SPECENS_H */
