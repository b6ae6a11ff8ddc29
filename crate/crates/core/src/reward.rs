//! Verifiable rewards computed from rollout text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{extract_answer, format_matches};
use crate::data::Label;

pub use crate::cor::FormatSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardValue {
    pub value: f64,
    pub parts: BTreeMap<String, f64>,
}

impl RewardValue {
    fn from_parts(parts: BTreeMap<String, f64>) -> Self {
        RewardValue {
            value: parts.values().sum(),
            parts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// +1 for a correct verdict, -1 for anything else.
    RmR1,
    /// Format indicator plus answer indicator.
    ColdStart(FormatSpec),
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardKind::RmR1 => f.write_str("rm-r1"),
            RewardKind::ColdStart(spec) => write!(f, "cold-start:{}", spec.name()),
        }
    }
}

/// Accepts `rm-r1`, `cold-start` (full structure) or `cold-start:<format-spec>`.
impl FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rm-r1" => Ok(RewardKind::RmR1),
            "cold-start" => Ok(RewardKind::ColdStart(FormatSpec::RubricsQc)),
            other => match other.strip_prefix("cold-start:") {
                Some(spec) => Ok(RewardKind::ColdStart(spec.parse()?)),
                None => Err(format!("reward kind must be rm-r1 or cold-start[:spec], got {other:?}")),
            },
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("reward batch is empty")]
    EmptyBatch,
}

/// Correctness reward. Extraction failures score -1 like wrong verdicts.
pub fn rm_r1_reward(rollout: &str, gold: Label) -> RewardValue {
    let correct = extract_answer(rollout).is_ok_and(|l| l == gold);
    let v = if correct { 1.0 } else { -1.0 };
    RewardValue::from_parts(BTreeMap::from([("correctness".to_string(), v)]))
}

pub fn cold_start_reward(rollout: &str, gold: Label, spec: FormatSpec) -> RewardValue {
    let format = f64::from(u8::from(format_matches(rollout, spec)));
    let answer = f64::from(u8::from(extract_answer(rollout).is_ok_and(|l| l == gold)));
    RewardValue::from_parts(BTreeMap::from([
        ("answer".to_string(), answer),
        ("format".to_string(), format),
    ]))
}

pub fn reward(rollout: &str, gold: Label, kind: RewardKind) -> RewardValue {
    match kind {
        RewardKind::RmR1 => rm_r1_reward(rollout, gold),
        RewardKind::ColdStart(spec) => cold_start_reward(rollout, gold, spec),
    }
}

pub fn reward_batch<S: AsRef<str>>(
    rollouts: &[S],
    gold: Label,
    kind: RewardKind,
) -> Result<Vec<RewardValue>, RewardError> {
    if rollouts.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    Ok(rollouts
        .iter()
        .map(|r| reward(r.as_ref(), gold, kind))
        .collect())
}
