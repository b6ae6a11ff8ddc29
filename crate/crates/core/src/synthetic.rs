//! Synthetic separable judgment task for end-to-end GRPO training.
//!
//! Four contexts encode (gold side, task type). The vocabulary holds two
//! filler tokens and one answer token per side; an answer token ends the
//! rollout. Rollouts are decoded to text and scored with a verifiable reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{answer_block, TaskType};
use crate::data::Label;
use crate::grpo::{group_stats, train_step, GrpoConfig, GrpoError, RolloutGroup};
use crate::policy::{rollout, PolicyError, TokenSequence, ToyPolicy};
use crate::reward::{reward, RewardKind};

pub const VOCAB: usize = 4;
pub const CONTEXTS: usize = 4;
pub const ANSWER_A: usize = 2;
pub const ANSWER_B: usize = 3;
pub const STOP_TOKENS: [usize; 2] = [ANSWER_A, ANSWER_B];
pub const MAX_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPrompt {
    pub id: String,
    pub context: usize,
    pub gold: Label,
    pub task_type: TaskType,
}

/// The four prompts, one per context.
pub fn prompts() -> Vec<SyntheticPrompt> {
    let mut out = Vec::with_capacity(CONTEXTS);
    for (g, gold) in [Label::A, Label::B].into_iter().enumerate() {
        for (t, (task_type, name)) in [(TaskType::Chat, "chat"), (TaskType::Reasoning, "reasoning")]
            .into_iter()
            .enumerate()
        {
            out.push(SyntheticPrompt {
                id: format!("{name}-gold-{gold}"),
                context: 2 * g + t,
                gold,
                task_type,
            });
        }
    }
    out
}

/// Renders a rollout as judge text.
pub fn decode(tokens: &[usize], task_type: TaskType) -> String {
    let fillers = match task_type {
        TaskType::Chat => ["rubric", "justify"],
        TaskType::Reasoning => ["solve", "check"],
    };
    let mut words = Vec::with_capacity(tokens.len());
    for &t in tokens {
        match t {
            ANSWER_A => words.push(answer_block(Label::A)),
            ANSWER_B => words.push(answer_block(Label::B)),
            f => words.push(fillers[f % 2].to_string()),
        }
    }
    words.join(" ")
}

/// Exact expected reward of one prompt, enumerating every rollout.
pub fn expected_prompt_reward(policy: &ToyPolicy, p: &SyntheticPrompt, kind: RewardKind) -> f64 {
    let probs = policy.probs(p.context);
    let mut total = 0.0;
    // (prefix probability, prefix tokens)
    let mut frontier = vec![(1.0, Vec::new())];
    for depth in 0..MAX_LEN {
        let mut next = Vec::new();
        for (mass, prefix) in frontier {
            for (tok, &pt) in probs.iter().enumerate() {
                let m = mass * pt;
                let mut seq: Vec<usize> = prefix.clone();
                seq.push(tok);
                if STOP_TOKENS.contains(&tok) || depth + 1 == MAX_LEN {
                    total += m * reward(&decode(&seq, p.task_type), p.gold, kind).value;
                } else {
                    next.push((m, seq));
                }
            }
        }
        frontier = next;
    }
    total
}

/// Mean exact expected reward over all prompts.
pub fn expected_reward(policy: &ToyPolicy, kind: RewardKind) -> f64 {
    let ps = prompts();
    ps.iter().map(|p| expected_prompt_reward(policy, p, kind)).sum::<f64>() / ps.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub grpo: GrpoConfig,
    pub reward: RewardKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            lr: 1e-2,
            seed: 0,
            grpo: GrpoConfig::default(),
            reward: RewardKind::RmR1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub objective: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub mean_abs_advantage: f64,
    pub expected_reward: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step}: non-finite objective in group {}", group.prompt_id)]
    NonFinite { step: usize, group: Box<RolloutGroup> },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub metrics: Vec<StepMetrics>,
    pub final_expected_reward: f64,
}

fn sample_groups(policy: &ToyPolicy, reference: &ToyPolicy, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<RolloutGroup>, TrainError> {
    prompts()
        .iter()
        .map(|p| {
            let seqs: Vec<TokenSequence> = rollout(policy, &[p.context], cfg.grpo.group_size, MAX_LEN, &STOP_TOKENS, rng.gen())?;
            let rewards = seqs
                .iter()
                .map(|s| reward(&decode(&s.tokens, p.task_type), p.gold, cfg.reward).value)
                .collect();
            Ok(RolloutGroup::from_policies(p.id.clone(), seqs, rewards, policy, reference)?)
        })
        .collect()
}

/// Runs `cfg.steps` on-policy GRPO steps from `init`, which also serves as
/// the KL reference. `on_step` sees each step's metrics as they are produced.
pub fn train(init: &ToyPolicy, cfg: &TrainConfig, mut on_step: impl FnMut(&StepMetrics)) -> Result<TrainOutcome, TrainError> {
    cfg.grpo.validate()?;
    if (init.contexts(), init.vocab()) != (CONTEXTS, VOCAB) {
        return Err(PolicyError::Argument(format!(
            "synthetic task needs a {CONTEXTS}x{VOCAB} policy, got {}x{}",
            init.contexts(),
            init.vocab()
        ))
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = init.clone();
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let groups = sample_groups(&policy, init, cfg, &mut rng)?;
        let mut sums = [0.0; 4];
        for g in &groups {
            let st = match group_stats(g, &policy, &cfg.grpo) {
                Ok(st) => st,
                Err(GrpoError::Numeric(_)) => {
                    return Err(TrainError::NonFinite {
                        step,
                        group: Box::new(g.clone()),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            sums[0] += st.objective;
            sums[1] += st.mean_reward;
            sums[2] += st.mean_kl;
            sums[3] += st.mean_abs_advantage;
        }
        let n = groups.len() as f64;
        let m = StepMetrics {
            step,
            objective: sums[0] / n,
            mean_reward: sums[1] / n,
            mean_kl: sums[2] / n,
            mean_abs_advantage: sums[3] / n,
            expected_reward: expected_reward(&policy, cfg.reward),
        };
        on_step(&m);
        metrics.push(m);
        policy = train_step(&groups, &policy, &cfg.grpo, cfg.lr)?;
    }
    let final_expected_reward = expected_reward(&policy, cfg.reward);
    Ok(TrainOutcome {
        policy,
        metrics,
        final_expected_reward,
    })
}
