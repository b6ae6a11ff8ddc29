#include <math.h>
#include <stdio.h>
#include <string.h>

#include "rubric_rl.h"

#define CHECK(cond)                                           \
  do {                                                        \
    if (!(cond)) {                                            \
      fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
      return 1;                                               \
    }                                                         \
  } while (0)

int main(void) {
  double rewards[4] = {1.0, 0.0, 0.0, -1.0};
  double adv[4];
  CHECK(rrl_group_advantages(rewards, 4, adv) == RRL_STATUS_OK);
  CHECK(fabs(adv[0] + adv[3]) < 1e-12);
  CHECK(fabs(adv[0] - sqrt(2.0)) < 1e-12);

  double logits[6] = {0};
  RrlPolicy *policy = NULL;
  CHECK(rrl_policy_new(2, 3, logits, &policy) == RRL_STATUS_OK);
  double lp = 0.0;
  CHECK(rrl_policy_log_prob(policy, 1, 2, &lp) == RRL_STATUS_OK);
  CHECK(fabs(lp + log(3.0)) < 1e-12);
  CHECK(rrl_policy_log_prob(policy, 5, 0, &lp) == RRL_STATUS_INVALID_ARGUMENT);
  CHECK(strlen(rrl_last_error()) > 0);
  rrl_policy_free(policy);

  RrlJudgment *j = NULL;
  const char *text =
      "<type>Reasoning</type><solution>x</solution>"
      "<eval>e</eval><answer>[[B]]</answer>";
  CHECK(rrl_judgment_parse(text, &j) == RRL_STATUS_OK);
  RrlLabel label;
  CHECK(rrl_judgment_answer(j, &label) == RRL_STATUS_OK);
  CHECK(label == RRL_LABEL_B);
  rrl_judgment_free(j);

  CHECK(rrl_judgment_parse("<answer>", &j) == RRL_STATUS_PARSE);
  puts("ok");
  return 0;
}
