//! Group-relative policy optimization over a [`ToyPolicy`].
//!
//! For a group of `G` sequences sampled from the old policy the objective is
//!
//! ```text
//! J = 1/G sum_i 1/|j_i| sum_t [ min(rho_it A_i, clip(rho_it, 1-eps, 1+eps) A_i) - beta KL_it ]
//! ```
//!
//! with `rho_it = p(j_it) / p_old(j_it)`, the per-sequence group advantage
//! `A_i` broadcast over tokens, and a per-token KL estimate against the
//! reference policy. Gradients are analytic with respect to the logits table.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{PolicyError, Table, TokenSequence, ToyPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("{0}")]
    Argument(String),
    #[error("group {prompt_id}: {message}")]
    Structure { prompt_id: String, message: String },
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlEstimator {
    /// `log p - log p_ref`
    K1,
    /// `exp(log p_ref - log p) - (log p_ref - log p) - 1`, never negative
    #[default]
    K3,
}

impl FromStr for KlEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k1" => Ok(KlEstimator::K1),
            "k3" => Ok(KlEstimator::K3),
            other => Err(format!("kl estimator must be k1 or k3, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub group_size: usize,
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_epsilon: 0.2,
            kl_coefficient: 1e-3,
            group_size: 7,
            kl_estimator: KlEstimator::K3,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::Argument(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_coefficient >= 0.0 && self.kl_coefficient.is_finite()) {
            return Err(GrpoError::Argument(format!(
                "kl_coefficient must be finite and non-negative, got {}",
                self.kl_coefficient
            )));
        }
        if self.group_size < 2 {
            return Err(GrpoError::Argument(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        Ok(())
    }
}

/// `G` sampled sequences for one prompt, with their rewards and the per-token
/// log-probabilities under the sampling (old) and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub sequences: Vec<TokenSequence>,
    pub rewards: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub ref_logprobs: Vec<Vec<f64>>,
}

impl RolloutGroup {
    /// Scores `sequences` under `old` and `reference`.
    pub fn from_policies(
        prompt_id: impl Into<String>,
        sequences: Vec<TokenSequence>,
        rewards: Vec<f64>,
        old: &ToyPolicy,
        reference: &ToyPolicy,
    ) -> Result<Self, GrpoError> {
        let old_logprobs = sequences
            .iter()
            .map(|s| old.sequence_log_probs(s))
            .collect::<Result<_, _>>()?;
        let ref_logprobs = sequences
            .iter()
            .map(|s| reference.sequence_log_probs(s))
            .collect::<Result<_, _>>()?;
        Ok(RolloutGroup {
            prompt_id: prompt_id.into(),
            sequences,
            rewards,
            old_logprobs,
            ref_logprobs,
        })
    }

    fn structure_error(&self, message: String) -> GrpoError {
        GrpoError::Structure {
            prompt_id: self.prompt_id.clone(),
            message,
        }
    }

    pub fn validate(&self, policy: &ToyPolicy) -> Result<(), GrpoError> {
        let g = self.sequences.len();
        if g < 2 {
            return Err(self.structure_error(format!("needs at least 2 sequences, has {g}")));
        }
        if self.rewards.len() != g || self.old_logprobs.len() != g || self.ref_logprobs.len() != g {
            return Err(self.structure_error(format!(
                "{g} sequences but {} rewards, {} old and {} reference rows",
                self.rewards.len(),
                self.old_logprobs.len(),
                self.ref_logprobs.len()
            )));
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            policy.check_sequence(seq)?;
            if seq.is_empty() {
                return Err(self.structure_error(format!("sequence {i} is empty")));
            }
            if self.old_logprobs[i].len() != seq.len() || self.ref_logprobs[i].len() != seq.len() {
                return Err(self.structure_error(format!(
                    "sequence {i} has {} tokens but {} old and {} reference log-probs",
                    seq.len(),
                    self.old_logprobs[i].len(),
                    self.ref_logprobs[i].len()
                )));
            }
        }
        Ok(())
    }
}

/// Standardizes rewards with the group mean and population standard
/// deviation. A group with zero spread gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Argument(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::Numeric(format!("reward {r}")));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn kl_penalty(cur_logprob: f64, ref_logprob: f64, estimator: KlEstimator) -> Result<f64, GrpoError> {
    if !cur_logprob.is_finite() || !ref_logprob.is_finite() {
        return Err(GrpoError::Numeric(format!(
            "kl inputs {cur_logprob}, {ref_logprob}"
        )));
    }
    Ok(match estimator {
        KlEstimator::K1 => cur_logprob - ref_logprob,
        KlEstimator::K3 => {
            let d = ref_logprob - cur_logprob;
            d.exp_m1() - d
        }
    })
}

/// Derivative of [`kl_penalty`] with respect to the current log-probability.
fn kl_penalty_slope(cur_logprob: f64, ref_logprob: f64, estimator: KlEstimator) -> f64 {
    match estimator {
        KlEstimator::K1 => 1.0,
        KlEstimator::K3 => -(ref_logprob - cur_logprob).exp_m1(),
    }
}

/// One token's share of the surrogate, relative to the old policy.
struct TokenTerm {
    /// `g - 1`, where the selected branch of the min is `g * A`.
    gain: f64,
    /// Whether the unclipped branch is selected (ties included).
    unclipped: bool,
    ratio: f64,
}

fn token_term(cur: f64, old: f64, advantage: f64, eps: f64, clipped: bool) -> TokenTerm {
    let excess = (cur - old).exp_m1();
    let ratio = 1.0 + excess;
    if !clipped {
        return TokenTerm {
            gain: excess,
            unclipped: true,
            ratio,
        };
    }
    let bounded = excess.clamp(-eps, eps);
    // min(rho A, clip(rho) A) picks the smaller ratio when A > 0, the larger when A < 0.
    let unclipped = if advantage >= 0.0 {
        excess <= bounded
    } else {
        excess >= bounded
    };
    TokenTerm {
        gain: if unclipped { excess } else { bounded },
        unclipped,
        ratio,
    }
}

/// Summary of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub objective: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub mean_abs_advantage: f64,
    pub clip_fraction: f64,
}

fn evaluate(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig, clipped: bool) -> Result<GroupStats, GrpoError> {
    cfg.validate()?;
    group.validate(policy)?;
    let adv = group_advantages(&group.rewards)?;
    let g = group.sequences.len() as f64;
    let mut objective = 0.0;
    let mut kl_sum = 0.0;
    let mut tokens = 0usize;
    let mut clipped_tokens = 0usize;
    for (i, seq) in group.sequences.iter().enumerate() {
        let cur = policy.sequence_log_probs(seq)?;
        let mut seq_sum = 0.0;
        for (t, &lp) in cur.iter().enumerate() {
            let term = token_term(lp, group.old_logprobs[i][t], adv[i], cfg.clip_epsilon, clipped);
            let kl = kl_penalty(lp, group.ref_logprobs[i][t], cfg.kl_estimator)?;
            // The advantages sum to zero, so sum_i A_i * 1 drops out and the
            // surrogate is carried as gain over the old policy.
            seq_sum += adv[i] * term.gain - cfg.kl_coefficient * kl;
            kl_sum += kl;
            tokens += 1;
            if !term.unclipped {
                clipped_tokens += 1;
            }
        }
        objective += seq_sum / seq.len() as f64;
    }
    objective /= g;
    if !objective.is_finite() {
        return Err(GrpoError::Numeric(format!("objective {objective} for group {}", group.prompt_id)));
    }
    Ok(GroupStats {
        objective,
        mean_reward: group.rewards.iter().sum::<f64>() / g,
        mean_kl: kl_sum / tokens as f64,
        mean_abs_advantage: adv.iter().map(|a| a.abs()).sum::<f64>() / g,
        clip_fraction: clipped_tokens as f64 / tokens as f64,
    })
}

pub fn grpo_objective(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    Ok(evaluate(group, policy, cfg, true)?.objective)
}

/// The same objective with the ratio clip removed.
pub fn unclipped_objective(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    Ok(evaluate(group, policy, cfg, false)?.objective)
}

pub fn group_stats(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig) -> Result<GroupStats, GrpoError> {
    evaluate(group, policy, cfg, true)
}

/// Gradient of [`grpo_objective`] with respect to the logits. At a kink of
/// the min/clip the derivative of the selected branch is used.
pub fn grpo_gradient(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig) -> Result<Table, GrpoError> {
    cfg.validate()?;
    group.validate(policy)?;
    let adv = group_advantages(&group.rewards)?;
    let g = group.sequences.len() as f64;
    let mut grad = Table::zeros(policy.contexts(), policy.vocab());
    let probs: Vec<Vec<f64>> = (0..policy.contexts()).map(|c| policy.probs(c)).collect();
    for (i, seq) in group.sequences.iter().enumerate() {
        let cur = policy.sequence_log_probs(seq)?;
        let scale = 1.0 / (g * seq.len() as f64);
        for (t, (ctx, tok)) in seq.iter().enumerate() {
            let term = token_term(cur[t], group.old_logprobs[i][t], adv[i], cfg.clip_epsilon, true);
            let surrogate_slope = if term.unclipped { adv[i] * term.ratio } else { 0.0 };
            let kl_slope = kl_penalty_slope(cur[t], group.ref_logprobs[i][t], cfg.kl_estimator);
            let w = scale * (surrogate_slope - cfg.kl_coefficient * kl_slope);
            if w == 0.0 {
                continue;
            }
            // d log p(tok | ctx) / d logit(ctx, k) = 1[k = tok] - p(k | ctx)
            for (k, p) in probs[ctx].iter().enumerate() {
                *grad.get_mut(ctx, k) -= w * p;
            }
            *grad.get_mut(ctx, tok) += w;
        }
    }
    if grad.data.iter().any(|v| !v.is_finite()) {
        return Err(GrpoError::Numeric(format!("gradient for group {}", group.prompt_id)));
    }
    Ok(grad)
}

/// Smallest distance from any advantaged token's ratio to a clip boundary.
pub fn clip_boundary_distance(group: &RolloutGroup, policy: &ToyPolicy, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    group.validate(policy)?;
    let adv = group_advantages(&group.rewards)?;
    let mut dist = f64::INFINITY;
    for (i, seq) in group.sequences.iter().enumerate() {
        if adv[i] == 0.0 {
            continue;
        }
        for (t, lp) in policy.sequence_log_probs(seq)?.into_iter().enumerate() {
            let excess = (lp - group.old_logprobs[i][t]).exp_m1();
            dist = dist
                .min((excess - cfg.clip_epsilon).abs())
                .min((excess + cfg.clip_epsilon).abs());
        }
    }
    Ok(dist)
}

/// One full-batch gradient-ascent step: logits + lr * mean gradient over groups.
/// Group gradients are computed in parallel and reduced in group order.
pub fn train_step(groups: &[RolloutGroup], policy: &ToyPolicy, cfg: &GrpoConfig, lr: f64) -> Result<ToyPolicy, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::Argument("train_step needs at least one group".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(GrpoError::Argument(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let grads: Vec<Table> = groups
        .par_iter()
        .map(|g| grpo_gradient(g, policy, cfg))
        .collect::<Result<_, _>>()?;
    let mut total = Table::zeros(policy.contexts(), policy.vocab());
    for g in &grads {
        total.add_scaled(g, 1.0 / groups.len() as f64);
    }
    Ok(policy.updated(&total, lr)?)
}
