//! A contextual categorical policy: one row of logits per context.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("shape {contexts}x{vocab} needs {expected} logits, got {got}")]
    Shape {
        contexts: usize,
        vocab: usize,
        expected: usize,
        got: usize,
    },
    #[error("context count and vocabulary size must be positive")]
    Empty,
    #[error("logit at context {context}, token {token} is {value}")]
    BadLogit { context: usize, token: usize, value: f64 },
    #[error("context {0} has no finite logit")]
    DeadRow(usize),
    #[error("index out of bounds: {0}")]
    OutOfBounds(String),
    #[error("{0}")]
    Argument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Row-major `rows x cols` table of reals; used for logits and gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_scaled(&mut self, other: &Table, scale: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Token indices with the context each token was drawn under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub context_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, context_ids: Vec<usize>) -> Result<Self, PolicyError> {
        if tokens.len() != context_ids.len() {
            return Err(PolicyError::Argument(format!(
                "{} tokens but {} context ids",
                tokens.len(),
                context_ids.len()
            )));
        }
        Ok(TokenSequence { tokens, context_ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.context_ids.iter().copied().zip(self.tokens.iter().copied())
    }
}

/// Softmax policy over `vocab` tokens for each of `contexts` contexts.
/// Logits may be `-inf` (probability zero) but each row keeps one finite entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    logits: Table,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - log_z).collect()
}

impl ToyPolicy {
    pub fn new(contexts: usize, vocab: usize, logits: Vec<f64>) -> Result<Self, PolicyError> {
        if contexts == 0 || vocab == 0 {
            return Err(PolicyError::Empty);
        }
        if logits.len() != contexts * vocab {
            return Err(PolicyError::Shape {
                contexts,
                vocab,
                expected: contexts * vocab,
                got: logits.len(),
            });
        }
        let table = Table {
            rows: contexts,
            cols: vocab,
            data: logits,
        };
        Self::from_table(table)
    }

    fn from_table(table: Table) -> Result<Self, PolicyError> {
        for c in 0..table.rows {
            let row = table.row(c);
            if let Some((t, &v)) = row
                .iter()
                .enumerate()
                .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
            {
                return Err(PolicyError::BadLogit {
                    context: c,
                    token: t,
                    value: v,
                });
            }
            if !row.iter().any(|v| v.is_finite()) {
                return Err(PolicyError::DeadRow(c));
            }
        }
        Ok(ToyPolicy { logits: table })
    }

    pub fn uniform(contexts: usize, vocab: usize) -> Result<Self, PolicyError> {
        Self::new(contexts, vocab, vec![0.0; contexts * vocab])
    }

    pub fn contexts(&self) -> usize {
        self.logits.rows
    }

    pub fn vocab(&self) -> usize {
        self.logits.cols
    }

    pub fn logits(&self) -> &Table {
        &self.logits
    }

    pub fn log_probs(&self, context: usize) -> Vec<f64> {
        log_softmax(self.logits.row(context))
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        self.log_probs(context).into_iter().map(f64::exp).collect()
    }

    pub fn log_prob(&self, context: usize, token: usize) -> f64 {
        self.log_probs(context)[token]
    }

    pub fn check_sequence(&self, seq: &TokenSequence) -> Result<(), PolicyError> {
        if seq.tokens.len() != seq.context_ids.len() {
            return Err(PolicyError::Argument("tokens and context ids differ in length".into()));
        }
        for (pos, (c, t)) in seq.iter().enumerate() {
            if c >= self.contexts() || t >= self.vocab() {
                return Err(PolicyError::OutOfBounds(format!(
                    "position {pos}: context {c}, token {t} outside {}x{}",
                    self.contexts(),
                    self.vocab()
                )));
            }
        }
        Ok(())
    }

    /// Per-token log-probabilities of a sequence.
    pub fn sequence_log_probs(&self, seq: &TokenSequence) -> Result<Vec<f64>, PolicyError> {
        self.check_sequence(seq)?;
        Ok(seq.iter().map(|(c, t)| self.log_prob(c, t)).collect())
    }

    /// `logits + lr * step`; `-inf` logits stay `-inf`.
    pub fn updated(&self, step: &Table, lr: f64) -> Result<ToyPolicy, PolicyError> {
        if (step.rows, step.cols) != (self.contexts(), self.vocab()) {
            return Err(PolicyError::Shape {
                contexts: step.rows,
                vocab: step.cols,
                expected: self.logits.data.len(),
                got: step.data.len(),
            });
        }
        let mut next = self.logits.clone();
        for (l, g) in next.data.iter_mut().zip(&step.data) {
            if l.is_finite() {
                *l += lr * g;
            }
        }
        Self::from_table(next)
    }

    pub fn with_logit(&self, context: usize, token: usize, value: f64) -> Result<ToyPolicy, PolicyError> {
        let mut t = self.logits.clone();
        *t.get_mut(context, token) = value;
        Self::from_table(t)
    }

    /// Text checkpoint: a shape header then one whitespace-separated row per context.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("toy-policy contexts={} vocab={}\n", self.contexts(), self.vocab());
        for c in 0..self.contexts() {
            let row: Vec<String> = self.logits.row(c).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<ToyPolicy, PolicyError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| PolicyError::Checkpoint("empty checkpoint".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("toy-policy") {
            return Err(PolicyError::Checkpoint(format!("bad header {header:?}")));
        }
        let mut dim = |key: &str| -> Result<usize, PolicyError> {
            fields
                .next()
                .and_then(|f| f.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| PolicyError::Checkpoint(format!("header needs {key}<n>")))
        };
        let contexts = dim("contexts=")?;
        let vocab = dim("vocab=")?;
        let mut logits = Vec::with_capacity(contexts * vocab);
        for (r, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| PolicyError::Checkpoint(format!("row {r}: {e}")))?;
            if row.len() != vocab {
                return Err(PolicyError::Checkpoint(format!(
                    "row {r} has {} values, expected {vocab}",
                    row.len()
                )));
            }
            logits.extend(row);
        }
        ToyPolicy::new(contexts, vocab, logits)
    }
}

/// Samples `group_size` sequences. Position `t` draws from context
/// `prompt_contexts[min(t, len - 1)]`; a sequence ends after `max_len` tokens
/// or right after emitting any token in `stop_tokens`.
pub fn rollout(
    policy: &ToyPolicy,
    prompt_contexts: &[usize],
    group_size: usize,
    max_len: usize,
    stop_tokens: &[usize],
    seed: u64,
) -> Result<Vec<TokenSequence>, PolicyError> {
    if group_size < 2 {
        return Err(PolicyError::Argument(format!("group size must be at least 2, got {group_size}")));
    }
    if max_len == 0 {
        return Err(PolicyError::Argument("max_len must be positive".into()));
    }
    let last = prompt_contexts
        .len()
        .checked_sub(1)
        .ok_or_else(|| PolicyError::Argument("no prompt contexts".into()))?;
    if let Some(&c) = prompt_contexts.iter().find(|&&c| c >= policy.contexts()) {
        return Err(PolicyError::OutOfBounds(format!("context {c}")));
    }
    let samplers: Vec<WeightedIndex<f64>> = prompt_contexts
        .iter()
        .map(|&c| WeightedIndex::new(policy.probs(c)).expect("finite row has positive mass"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let mut tokens = Vec::new();
        let mut contexts = Vec::new();
        for t in 0..max_len {
            let slot = t.min(last);
            let tok = samplers[slot].sample(&mut rng);
            tokens.push(tok);
            contexts.push(prompt_contexts[slot]);
            if stop_tokens.contains(&tok) {
                break;
            }
        }
        out.push(TokenSequence {
            tokens,
            context_ids: contexts,
        });
    }
    Ok(out)
}
