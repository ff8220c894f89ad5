#pragma once

#ifdef __cplusplus
extern "C" {
#endif

/* Stable status codes for the shared-library surface; values 1..14 mirror
   the library's internal error taxonomy. */
typedef enum stepcert_status {
  STEPCERT_OK = 0,
  STEPCERT_ERR_INVALID_ARGUMENT = 1,
  STEPCERT_ERR_INVALID_INSTANCE = 2,
  STEPCERT_ERR_INVALID_CLASS = 3,
  STEPCERT_ERR_SAMPLER_EXHAUSTED = 4,
  STEPCERT_ERR_PARSE = 5,
  STEPCERT_ERR_DIVERGENCE = 6,
  STEPCERT_ERR_REFERENCE = 7,
  STEPCERT_ERR_GRADIENT_UNAVAILABLE = 8,
  STEPCERT_ERR_CHECK_INCONCLUSIVE = 9,
  STEPCERT_ERR_SOLVER_FAILURE = 10,
  STEPCERT_ERR_TRAINING_ABORTED = 11,
  STEPCERT_ERR_CV_FAILED = 12,
  STEPCERT_ERR_CERTIFICATION_UNAVAILABLE = 13,
  STEPCERT_ERR_IO = 14,
  STEPCERT_ERR_INTERNAL = 100
} stepcert_status;

/* Opaque handle holding the last error of each call made through it. */
typedef struct stepcert_ctx stepcert_ctx;

const char* stepcert_version_string(void);

stepcert_ctx* stepcert_ctx_new(void);
void stepcert_ctx_free(stepcert_ctx* ctx);

/* Status and message of the most recent call on this context. The message
   pointer stays valid until the next call on the same context. */
int stepcert_last_status(const stepcert_ctx* ctx);
const char* stepcert_last_message(const stepcert_ctx* ctx);

/* Executes one JSON request {"command": "...", "config": {...}} and returns
   a heap-allocated JSON response to free with stepcert_string_free, or NULL
   with the error recorded on the context. Commands: generate, train, sweep,
   certify, evaluate, check. */
char* stepcert_run(stepcert_ctx* ctx, const char* request_json);

void stepcert_string_free(char* s);

#ifdef __cplusplus
}
#endif
