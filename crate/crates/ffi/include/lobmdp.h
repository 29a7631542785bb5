#ifndef LOBMDP_H
#define LOBMDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum LobmdpStatus {
  LOBMDP_STATUS_OK = 0,
  LOBMDP_STATUS_NULL_POINTER = 1,
  LOBMDP_STATUS_INVALID_UTF8 = 2,
  LOBMDP_STATUS_INVALID_ARGUMENT = 3,
  LOBMDP_STATUS_PARSE = 4,
  LOBMDP_STATUS_UNUSABLE_MODEL = 5,
  LOBMDP_STATUS_NOT_CONVERGED = 6,
  LOBMDP_STATUS_MISSING_STATE = 7,
  LOBMDP_STATUS_IO = 8,
  LOBMDP_STATUS_PANIC = 9,
} LobmdpStatus;

/**
 * Action sets: all orders, no cancellations, no market orders.
 */
typedef enum LobmdpVariant {
  LOBMDP_VARIANT_ALL_ORDERS = 0,
  LOBMDP_VARIANT_NO_CO = 1,
  LOBMDP_VARIANT_NO_MO = 2,
} LobmdpVariant;

/**
 * Trader actions, in tie-break order.
 */
typedef enum LobmdpAction {
  LOBMDP_ACTION_WAIT = 0,
  LOBMDP_ACTION_PLACE_LO = 1,
  LOBMDP_ACTION_CANCEL = 2,
  LOBMDP_ACTION_MARKET = 3,
} LobmdpAction;

/**
 * Estimated or built-in flow model.
 */
typedef struct LobmdpModel LobmdpModel;

/**
 * Solved placement problem for one variant, with the model it was solved on.
 */
typedef struct LobmdpPolicy LobmdpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *lobmdp_last_error(void);

/**
 * Library version as a static string.
 */
const char *lobmdp_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void lobmdp_string_free(char *s);

/**
 * Built-in mirror-symmetric model with cap `k`, continuation `theta` and
 * dependence `e_effect` on the last order type.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum LobmdpStatus lobmdp_model_fixture(uint32_t k,
                                       double theta,
                                       double e_effect,
                                       struct LobmdpModel **out);

/**
 * Load a model from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum LobmdpStatus lobmdp_model_from_json(const char *json, struct LobmdpModel **out);

/**
 * Normalize a canonical event CSV to cap `k` and estimate a model.
 *
 * # Safety
 * `csv` must be a NUL-terminated string and `out` writable.
 */
enum LobmdpStatus lobmdp_model_estimate(const char *csv,
                                        uint32_t k,
                                        double smoothing,
                                        struct LobmdpModel **out);

/**
 * Serialize a model to JSON; free the result with `lobmdp_string_free`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LobmdpStatus lobmdp_model_to_json(const struct LobmdpModel *model, char **out);

/**
 * Continuation probability of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LobmdpStatus lobmdp_model_theta(const struct LobmdpModel *model, double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void lobmdp_model_free(struct LobmdpModel *model);

/**
 * Likelihood ratio test of dependence on the last order type, on a raw
 * event CSV normalized to cap `k`.
 *
 * # Safety
 * `csv` must be a NUL-terminated string; the outputs must be writable.
 */
enum LobmdpStatus lobmdp_glrt(const char *csv, uint32_t k, double *statistic, double *p_value);

/**
 * Solve the placement problem with `horizon` periods for one variant.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LobmdpStatus lobmdp_solve(const struct LobmdpModel *model,
                               uint32_t horizon,
                               enum LobmdpVariant which,
                               double tol,
                               struct LobmdpPolicy **out);

/**
 * Optimal action and value at one state.
 *
 * `last` is the order-type index (MB, MS, LB, LS, CB, CS = 0..5) and
 * `status` one of `'a'` (no order), `'b'` (resting), `'c'`, `'d'` (filled).
 * With a resting order `v_front` counts the orders ahead of and including
 * the trader's; otherwise it is 0 and `v_behind` is the whole bid.
 *
 * # Safety
 * `policy` must be a live handle; the outputs must be writable.
 */
enum LobmdpStatus lobmdp_policy_lookup(const struct LobmdpPolicy *policy,
                                       uint32_t v_front,
                                       uint32_t v_behind,
                                       uint32_t v_ask,
                                       uint32_t last,
                                       char status,
                                       uint32_t m,
                                       bool locked,
                                       enum LobmdpAction *action,
                                       double *value);

/**
 * Expected value from a freshly refilled book with `m` periods left.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum LobmdpStatus lobmdp_policy_horizon_value(const struct LobmdpPolicy *policy,
                                              uint32_t m,
                                              double *out);

/**
 * Serialize the solved policy to its versioned JSON form.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum LobmdpStatus lobmdp_policy_to_json(const struct LobmdpPolicy *policy, char **out);

/**
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void lobmdp_policy_free(struct LobmdpPolicy *policy);

/**
 * Simulate `n_policies` solved strategies on common random paths and write
 * the comparison table as CSV. All policies must share the model and horizon.
 *
 * # Safety
 * `policies` must point to `n_policies` live handles and `out` be writable.
 */
enum LobmdpStatus lobmdp_simulate(const struct LobmdpPolicy *const *policies,
                                  size_t n_policies,
                                  size_t n_paths,
                                  uint64_t seed,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOBMDP_H */
