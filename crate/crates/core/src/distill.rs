//! Distillation traces and the token-level NLL objective.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cor::{answer_block, answer_block_range, extract_answer};
use crate::data::{Dataset, Label, PreferenceSample};
use crate::jsonl::{self, JsonlError};
use crate::policy::{PolicyError, Table, TokenSequence, ToyPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleStage {
    FirstPass,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub sample_id: String,
    pub trace: String,
    pub label: Label,
    pub y_trace: String,
    pub oracle_stage: OracleStage,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("reasoning trace is empty")]
    Empty,
    #[error("reasoning trace already contains an <answer> block")]
    Conflict,
}

/// `r` followed immediately by the serialized verdict block.
pub fn build_trace(r: &str, l: Label) -> Result<String, TraceError> {
    if r.is_empty() {
        return Err(TraceError::Empty);
    }
    if r.contains("<answer>") {
        return Err(TraceError::Conflict);
    }
    Ok(format!("{r}{}", answer_block(l)))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct OracleError(pub String);

/// A trace generator with a second-stage corrector for wrong verdicts.
pub trait OracleInterface: Sync {
    fn generate(&self, s: &PreferenceSample) -> Result<String, OracleError>;
    fn correct(&self, s: &PreferenceSample, wrong_trace: &str, gold: Label) -> Result<String, OracleError>;
}

/// One line of a scripted oracle file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTrace {
    pub sample_id: String,
    pub first_pass: String,
    #[serde(default)]
    pub corrected: Option<String>,
}

/// File-backed oracle: canned traces keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    traces: HashMap<String, ScriptedTrace>,
}

impl ScriptedOracle {
    pub fn new(traces: impl IntoIterator<Item = ScriptedTrace>) -> Self {
        ScriptedOracle {
            traces: traces.into_iter().map(|t| (t.sample_id.clone(), t)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let rows: Vec<(usize, ScriptedTrace)> = jsonl::read_records(path)?;
        Ok(Self::new(rows.into_iter().map(|(_, t)| t)))
    }

    fn entry(&self, id: &str) -> Result<&ScriptedTrace, OracleError> {
        self.traces
            .get(id)
            .ok_or_else(|| OracleError(format!("no scripted trace for sample {id}")))
    }
}

impl OracleInterface for ScriptedOracle {
    fn generate(&self, s: &PreferenceSample) -> Result<String, OracleError> {
        Ok(self.entry(&s.id)?.first_pass.clone())
    }

    fn correct(&self, s: &PreferenceSample, _wrong_trace: &str, _gold: Label) -> Result<String, OracleError> {
        self.entry(&s.id)?
            .corrected
            .clone()
            .ok_or_else(|| OracleError(format!("no corrected trace for sample {}", s.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistillSet {
    pub records: Vec<DistillRecord>,
    pub skipped: Vec<SkippedSample>,
}

impl DistillSet {
    pub fn count(&self, stage: OracleStage) -> usize {
        self.records.iter().filter(|r| r.oracle_stage == stage).count()
    }
}

/// Reasoning text of an oracle trace: everything outside its verdict block.
fn reasoning_part(trace: &str) -> String {
    match answer_block_range(trace) {
        Some(range) => format!("{}{}", &trace[..range.start], &trace[range.end..]),
        None => trace.replace("<answer>", ""),
    }
}

fn record_for(s: &PreferenceSample, oracle: &dyn OracleInterface) -> Result<DistillRecord, String> {
    let first = oracle.generate(s).map_err(|e| format!("generate failed: {e}"))?;
    let (trace, stage) = if extract_answer(&first).ok() == Some(s.label) {
        (first, OracleStage::FirstPass)
    } else {
        let fixed = oracle
            .correct(s, &first, s.label)
            .map_err(|e| format!("correct failed: {e}"))?;
        match extract_answer(&fixed) {
            Ok(l) if l == s.label => (fixed, OracleStage::Corrected),
            other => {
                return Err(format!(
                    "corrected trace verdict {:?} disagrees with gold {}",
                    other.ok(),
                    s.label
                ))
            }
        }
    };
    let r = reasoning_part(&trace);
    let y_trace = build_trace(&r, s.label).map_err(|e| e.to_string())?;
    Ok(DistillRecord {
        sample_id: s.id.clone(),
        trace: r,
        label: s.label,
        y_trace,
        oracle_stage: stage,
    })
}

/// Generates a trace per sample, routing traces with the wrong or no verdict
/// through the corrector. Samples the oracle cannot serve are skipped and logged.
pub fn build_distill_set(subset: &Dataset, oracle: &dyn OracleInterface) -> DistillSet {
    let mut out = DistillSet::default();
    for s in subset.samples() {
        match record_for(s, oracle) {
            Ok(r) => out.records.push(r),
            Err(reason) => {
                tracing::warn!(sample_id = %s.id, %reason, "distill sample skipped");
                out.skipped.push(SkippedSample {
                    sample_id: s.id.clone(),
                    reason,
                });
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum NllError {
    #[error("target token {token} at position {position} has probability zero under context {context}")]
    ZeroProbability {
        position: usize,
        context: usize,
        token: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `-sum_t log p(y_t | context_t)`.
pub fn nll_loss(policy: &ToyPolicy, target: &TokenSequence) -> Result<f64, NllError> {
    let lps = policy.sequence_log_probs(target)?;
    let mut loss = 0.0;
    for (position, ((context, token), lp)) in target.iter().zip(lps).enumerate() {
        if lp == f64::NEG_INFINITY {
            return Err(NllError::ZeroProbability {
                position,
                context,
                token,
            });
        }
        loss -= lp;
    }
    // -0.0 from a probability-one target
    Ok(loss.max(0.0))
}

pub fn nll_total(policy: &ToyPolicy, targets: &[TokenSequence]) -> Result<f64, NllError> {
    targets.iter().map(|t| nll_loss(policy, t)).sum()
}

/// Gradient of the summed NLL: per position, `p(. | ctx) - onehot(token)`.
pub fn nll_gradient(policy: &ToyPolicy, targets: &[TokenSequence]) -> Result<Table, NllError> {
    let mut grad = Table::zeros(policy.contexts(), policy.vocab());
    let probs: Vec<Vec<f64>> = (0..policy.contexts()).map(|c| policy.probs(c)).collect();
    for target in targets {
        nll_loss(policy, target)?;
        for (ctx, tok) in target.iter() {
            for (k, p) in probs[ctx].iter().enumerate() {
                *grad.get_mut(ctx, k) += p;
            }
            *grad.get_mut(ctx, tok) -= 1.0;
        }
    }
    Ok(grad)
}

/// One gradient-descent step on the summed NLL.
pub fn nll_descent_step(policy: &ToyPolicy, targets: &[TokenSequence], lr: f64) -> Result<ToyPolicy, NllError> {
    let grad = nll_gradient(policy, targets)?;
    Ok(policy.updated(&grad, -lr)?)
}
