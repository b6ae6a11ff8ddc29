#ifndef RUBRIC_RL_H
#define RUBRIC_RL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RRL_STATUS_OK = 0,
  RRL_STATUS_NULL_POINTER = 1,
  RRL_STATUS_INVALID_ARGUMENT = 2,
  RRL_STATUS_PARSE = 3,
  RRL_STATUS_NUMERIC = 4,
  RRL_STATUS_PANIC = 5,
} RrlStatus;

typedef enum {
  RRL_KL_ESTIMATOR_K1 = 0,
  RRL_KL_ESTIMATOR_K3 = 1,
} RrlKlEstimator;

typedef enum {
  RRL_LABEL_A = 0,
  RRL_LABEL_B = 1,
} RrlLabel;

typedef enum {
  RRL_TASK_TYPE_CHAT = 0,
  RRL_TASK_TYPE_REASONING = 1,
} RrlTaskType;

/**
 * Opaque parsed judgment.
 */
typedef struct RrlJudgment RrlJudgment;

/**
 * Opaque softmax policy.
 */
typedef struct RrlPolicy RrlPolicy;

typedef struct {
  double clip_epsilon;
  double kl_coefficient;
  size_t group_size;
  RrlKlEstimator kl_estimator;
} RrlGrpoConfig;

/**
 * A rollout group as flat arrays. Sequence `i` has `lengths[i]` tokens;
 * `tokens`, `contexts`, `old_logprobs` and `ref_logprobs` hold all
 * sequences back to back.
 */
typedef struct {
  size_t group_size;
  const size_t *lengths;
  const size_t *tokens;
  const size_t *contexts;
  const double *rewards;
  const double *old_logprobs;
  const double *ref_logprobs;
} RrlGroupView;

/**
 * Filtering-gap quantities. Conditional probabilities whose event has
 * measure zero are reported as NaN with their `_defined` flag cleared.
 */
typedef struct {
  double alpha;
  double eps_train;
  bool eps_train_defined;
  double delta;
  double disagreement_given_l;
  bool disagreement_given_l_defined;
  bool assumption_train_defined;
  bool assumption_nontrivial_filter;
  bool assumption_low_reward_disagrees_more;
  /**
   * 1 when `eps_train < delta`, 0 when not, -1 when the assumptions fail.
   */
  int32_t gap_holds;
} RrlGapResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rrl_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void rrl_string_free(char *s);

/**
 * Standardized advantages of `n >= 2` rewards, written to `out[0..n]`.
 *
 * # Safety
 * `rewards` and `out` must point to `n` readable / writable doubles.
 */
RrlStatus rrl_group_advantages(const double *rewards, size_t n, double *out);

/**
 * # Safety
 * `out` must be a valid pointer to a double.
 */
RrlStatus rrl_kl_penalty(double cur_logprob,
                         double ref_logprob,
                         RrlKlEstimator estimator,
                         double *out);

/**
 * Reads the verdict of a rollout. Missing, repeated or malformed answer
 * blocks give `RRL_STATUS_PARSE`.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` a valid pointer.
 */
RrlStatus rrl_extract_answer(const char *text, RrlLabel *out);

/**
 * Reward of a rollout; `kind` is `rm-r1`, `cold-start` or `cold-start:<format>`.
 *
 * # Safety
 * `rollout` and `kind` must be nul-terminated strings; `out` a valid pointer.
 */
RrlStatus rrl_reward(const char *rollout, RrlLabel gold, const char *kind, double *out);

/**
 * # Safety
 * `logits` must point to `contexts * vocab` doubles in row-major order;
 * `out` must be a valid pointer.
 */
RrlStatus rrl_policy_new(size_t contexts, size_t vocab, const double *logits, RrlPolicy **out);

/**
 * # Safety
 * `text` must be a nul-terminated string; `out` a valid pointer.
 */
RrlStatus rrl_policy_from_checkpoint(const char *text, RrlPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from this library not yet freed.
 */
void rrl_policy_free(RrlPolicy *policy);

/**
 * # Safety
 * `policy` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_policy_log_prob(const RrlPolicy *policy, size_t context, size_t token, double *out);

/**
 * Text checkpoint; free the result with [`rrl_string_free`].
 *
 * # Safety
 * `policy` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_policy_to_checkpoint(const RrlPolicy *policy, char **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
RrlStatus rrl_grpo_config_default(RrlGrpoConfig *out);

/**
 * # Safety
 * All pointers must be valid; the arrays in `group` must match its lengths.
 */
RrlStatus rrl_grpo_objective(const RrlPolicy *policy,
                             const RrlGroupView *group,
                             const RrlGrpoConfig *config,
                             double *out);

/**
 * Writes the `contexts * vocab` gradient in row-major order to `out`.
 *
 * # Safety
 * As [`rrl_grpo_objective`]; `out` must hold `out_len` doubles.
 */
RrlStatus rrl_grpo_gradient(const RrlPolicy *policy,
                            const RrlGroupView *group,
                            const RrlGrpoConfig *config,
                            double *out,
                            size_t out_len);

/**
 * Strict chain-of-rubrics parse. Failures give `RRL_STATUS_PARSE`.
 *
 * # Safety
 * `text` must be a nul-terminated string; `out` a valid pointer.
 */
RrlStatus rrl_judgment_parse(const char *text, RrlJudgment **out);

/**
 * # Safety
 * `judgment` must be null or a handle from this library not yet freed.
 */
void rrl_judgment_free(RrlJudgment *judgment);

/**
 * # Safety
 * `judgment` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_judgment_answer(const RrlJudgment *judgment, RrlLabel *out);

/**
 * # Safety
 * `judgment` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_judgment_task_type(const RrlJudgment *judgment, RrlTaskType *out);

/**
 * Number of rubric items; 0 for reasoning judgments.
 *
 * # Safety
 * `judgment` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_judgment_rubric_len(const RrlJudgment *judgment, size_t *out);

/**
 * Weight of rubric item `index`; NaN with `present` false when the item has none.
 *
 * # Safety
 * `judgment` must be a live handle; `weight` and `present` valid pointers.
 */
RrlStatus rrl_judgment_rubric_weight(const RrlJudgment *judgment,
                                     size_t index,
                                     double *weight,
                                     bool *present);

/**
 * Canonical rollout text; free the result with [`rrl_string_free`].
 *
 * # Safety
 * `judgment` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_judgment_to_text(const RrlJudgment *judgment, char **out);

/**
 * The judgment as a JSON object; free the result with [`rrl_string_free`].
 *
 * # Safety
 * `judgment` must be a live handle; `out` a valid pointer.
 */
RrlStatus rrl_judgment_to_json(const RrlJudgment *judgment, char **out);

/**
 * Filtering-gap check on an `n`-point instance.
 *
 * # Safety
 * `mu`, `phi_rob`, `phi_triv` and `reward` must each hold `n` values; `out`
 * must be a valid pointer.
 */
RrlStatus rrl_verify_filtering_gap(size_t n,
                                   const double *mu,
                                   const bool *phi_rob,
                                   const bool *phi_triv,
                                   const double *reward,
                                   double tau,
                                   RrlGapResult *out);

/**
 * `miss = (1 - eps)^n_sft`, `hit = 1 - (1 - delta)^m_rl`.
 *
 * # Safety
 * `miss` and `hit` must be valid pointers.
 */
RrlStatus rrl_sampling_amplification(double eps,
                                     double delta,
                                     uint64_t n_sft,
                                     uint64_t m_rl,
                                     double *miss,
                                     double *hit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RUBRIC_RL_H */
