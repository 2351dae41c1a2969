#ifndef PASSK_LAB_H
#define PASSK_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Status codes. 1 to 4 match the CLI exit codes.
 */
typedef enum PasskStatus {
  PASSK_STATUS_OK = 0,
  PASSK_STATUS_IO = 1,
  PASSK_STATUS_INVALID_ARGUMENT = 2,
  PASSK_STATUS_CAPACITY = 3,
  PASSK_STATUS_VALIDATION = 4,
  PASSK_STATUS_NULL_POINTER = 5,
  PASSK_STATUS_BUFFER_TOO_SMALL = 6,
  PASSK_STATUS_PANIC = 7,
} PasskStatus;

/*
 Opaque policy handle.
 */
typedef struct PasskPolicy PasskPolicy;

/*
 Opaque verifier handle.
 */
typedef struct PasskVerifier PasskVerifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Categorical policy over `len` answers with the given logits.

 # Safety
 `logits` must point to `len` doubles; `out` must be writable.
 */
enum PasskStatus passk_policy_categorical(const double *logits,
                                          uintptr_t len,
                                          struct PasskPolicy **out);

/*
 Autoregressive policy; `len` must equal `vocab * (vocab^horizon - 1) / (vocab - 1)`
 (one logit row per prefix, shallow prefixes first, lexicographic within a depth).

 # Safety
 `logits` must point to `len` doubles; `out` must be writable.
 */
enum PasskStatus passk_policy_autoregressive(uintptr_t vocab,
                                             uintptr_t horizon,
                                             const double *logits,
                                             uintptr_t len,
                                             struct PasskPolicy **out);

/*
 Releases a policy. Null is ignored.

 # Safety
 `policy` must come from a constructor above and not be used afterwards.
 */
void passk_policy_free(struct PasskPolicy *policy);

/*
 # Safety
 `policy` must be a live handle; `out` must be writable.
 */
enum PasskStatus passk_policy_param_count(const struct PasskPolicy *policy, uintptr_t *out);

/*
 Probability of the trajectory `tokens[0..len]`.

 # Safety
 `policy` must be a live handle, `tokens` must point to `len` values.
 */
enum PasskStatus passk_policy_prob(const struct PasskPolicy *policy,
                                   const uintptr_t *tokens,
                                   uintptr_t len,
                                   double *out);

/*
 Gradient of `log prob(tokens)` with respect to all logits, written to
 `out[0..param_count]`.

 # Safety
 `policy` must be a live handle, `tokens` must point to `len` values and
 `out` to `out_len` writable doubles.
 */
enum PasskStatus passk_policy_log_prob_grad(const struct PasskPolicy *policy,
                                            const uintptr_t *tokens,
                                            uintptr_t len,
                                            double *out,
                                            uintptr_t out_len);

/*
 Verifier accepting `count` trajectories of `horizon` tokens each, stored
 back to back in `tokens`.

 # Safety
 `tokens` must point to `count * horizon` values; `out` must be writable.
 */
enum PasskStatus passk_verifier_new(const uintptr_t *tokens,
                                    uintptr_t count,
                                    uintptr_t horizon,
                                    struct PasskVerifier **out);

/*
 Releases a verifier. Null is ignored.

 # Safety
 `verifier` must come from `passk_verifier_new` and not be used afterwards.
 */
void passk_verifier_free(struct PasskVerifier *verifier);

/*
 Exact `J1`, the probability that one sample is accepted.

 # Safety
 Both handles must be live; `out` must be writable.
 */
enum PasskStatus passk_j1_exact(const struct PasskPolicy *policy,
                                const struct PasskVerifier *verifier,
                                double *out);

/*
 Exact `grad J_k`, written to `out[0..param_count]`.

 # Safety
 Both handles must be live; `out` must hold `out_len` doubles.
 */
enum PasskStatus passk_grad_jk_exact(const struct PasskPolicy *policy,
                                     const struct PasskVerifier *verifier,
                                     uintptr_t k,
                                     double *out,
                                     uintptr_t out_len);

/*
 # Safety
 `out` must be writable.
 */
enum PasskStatus passk_jk_from_j1(double j1, uintptr_t k, double *out);

/*
 # Safety
 `out` must be writable.
 */
enum PasskStatus passk_alpha(double j1, uintptr_t k, double *out);

/*
 # Safety
 `out` must be writable.
 */
enum PasskStatus passk_gap(double p, uintptr_t k, double *out);

/*
 # Safety
 `out` must be writable.
 */
enum PasskStatus passk_zero_signal_prob(double j1, uintptr_t m, double *out);

/*
 Unbiased pass@k from `c` correct answers among `n` samples.

 # Safety
 `out` must be writable.
 */
enum PasskStatus passk_eval(uintptr_t n, uintptr_t c, uintptr_t k, double *out);

/*
 Message for the last failed call on this thread; empty if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *passk_last_error_message(void);

/*
 Library version, a static NUL-terminated string.
 */
const char *passk_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PASSK_LAB_H */
