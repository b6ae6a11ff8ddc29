//! Reward-model evaluation: pairwise and best-of-N judging, accuracy
//! aggregation and report rendering.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cor::{extract_answer, render_prompt, Order, PromptTemplate, TaskType};
use crate::data::{Label, PreferenceSample};
use crate::jsonl::{self, JsonlError};
use crate::policy::ToyPolicy;
use crate::synthetic;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to aggregate")]
    Empty,
    #[error("{0}")]
    Argument(String),
    #[error("mode mismatch: requested {requested} but {path} holds {found} data")]
    ModeMismatch {
        requested: EvalMode,
        found: EvalMode,
        path: String,
    },
    #[error(transparent)]
    Read(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Normal,
    Hard,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Normal => "normal",
            Difficulty::Hard => "hard",
        }
    }
}

/// A preference pair tagged with its benchmark category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSample {
    #[serde(flatten)]
    pub sample: PreferenceSample,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub category: String,
    pub difficulty: Option<Difficulty>,
    pub gold: Label,
    /// `None` is an abstention.
    pub predicted: Option<Label>,
    pub presentation_order: Order,
}

impl EvalRecord {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }
}

/// What a judge sees for one comparison.
#[derive(Debug, Clone, Copy)]
pub struct JudgeRequest<'a> {
    pub sample_id: &'a str,
    pub prompt: &'a str,
    pub order: Order,
    /// Response shown under the Chatbot A heading.
    pub shown_a: &'a str,
    pub shown_b: &'a str,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Maps a rendered judge prompt to rollout text. Implementations that are not
/// safe to call from several threads at once return `false` from `concurrent`.
pub trait JudgmentProvider: Send + Sync {
    fn name(&self) -> String;

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<String, ProviderError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Wraps a closure as a provider.
pub struct FnProvider<F> {
    name: String,
    f: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&JudgeRequest<'_>) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnProvider { name: name.into(), f }
    }
}

impl<F> JudgmentProvider for FnProvider<F>
where
    F: Fn(&JudgeRequest<'_>) -> Result<String, ProviderError> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<String, ProviderError> {
        (self.f)(req)
    }
}

/// One canned rollout. Without `order` it answers under either presentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRollout {
    pub sample_id: String,
    #[serde(default)]
    pub order: Option<Order>,
    pub rollout: String,
}

/// Canned rollouts keyed by sample id and, optionally, presentation order.
/// Loads from a line-delimited file or from a directory of `<id>.txt` /
/// `<id>.<AB|BA>.txt` files.
#[derive(Debug, Clone, Default)]
pub struct FixturesProvider {
    source: String,
    rollouts: HashMap<(String, Option<Order>), String>,
}

impl FixturesProvider {
    pub fn new(source: impl Into<String>, rows: impl IntoIterator<Item = FixtureRollout>) -> Self {
        FixturesProvider {
            source: source.into(),
            rollouts: rows.into_iter().map(|r| ((r.sample_id, r.order), r.rollout)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let source = path.display().to_string();
        if !path.is_dir() {
            let rows: Vec<(usize, FixtureRollout)> = jsonl::read_records(path)?;
            return Ok(Self::new(source, rows.into_iter().map(|(_, r)| r)));
        }
        let io = |e| EvalError::Io {
            path: source.clone(),
            source: e,
        };
        let mut rows = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(path).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".txt") else { continue };
            let (sample_id, order) = match stem.rsplit_once('.') {
                Some((id, "AB")) => (id, Some(Order::AB)),
                Some((id, "BA")) => (id, Some(Order::BA)),
                _ => (stem, None),
            };
            let rollout = std::fs::read_to_string(entry.path()).map_err(io)?;
            rows.push(FixtureRollout {
                sample_id: sample_id.to_string(),
                order,
                rollout,
            });
        }
        Ok(Self::new(source, rows))
    }
}

impl JudgmentProvider for FixturesProvider {
    fn name(&self) -> String {
        format!("fixtures:{}", self.source)
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<String, ProviderError> {
        let id = req.sample_id.to_string();
        self.rollouts
            .get(&(id.clone(), Some(req.order)))
            .or_else(|| self.rollouts.get(&(id, None)))
            .cloned()
            .ok_or_else(|| ProviderError(format!("no fixture rollout for {} under {}", req.sample_id, req.order)))
    }
}

/// Greedy decoding of a toy policy on the synthetic judgment vocabulary.
/// The context is picked by hashing the rendered prompt.
#[derive(Debug, Clone)]
pub struct ToyPolicyProvider {
    policy: ToyPolicy,
}

impl ToyPolicyProvider {
    pub fn new(policy: ToyPolicy) -> Result<Self, EvalError> {
        if policy.vocab() != synthetic::VOCAB {
            return Err(EvalError::Argument(format!(
                "toy policy provider needs vocabulary {}, got {}",
                synthetic::VOCAB,
                policy.vocab()
            )));
        }
        Ok(ToyPolicyProvider { policy })
    }
}

impl JudgmentProvider for ToyPolicyProvider {
    fn name(&self) -> String {
        "toy-policy".into()
    }

    fn judge(&self, req: &JudgeRequest<'_>) -> Result<String, ProviderError> {
        let digest = Sha256::digest(req.prompt.as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let context = (h % self.policy.contexts() as u64) as usize;
        let probs = self.policy.probs(context);
        let best = (0..probs.len())
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .expect("non-empty vocabulary");
        let mut tokens = Vec::new();
        for _ in 0..synthetic::MAX_LEN {
            tokens.push(best);
            if synthetic::STOP_TOKENS.contains(&best) {
                break;
            }
        }
        Ok(synthetic::decode(&tokens, TaskType::Chat))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    /// Always A then B.
    Fixed,
    /// Per-sample order drawn from the seed and sample id.
    Seeded,
    /// Every sample judged under both orders.
    Both,
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderMode::Fixed => "fixed",
            OrderMode::Seeded => "seeded",
            OrderMode::Both => "both",
        })
    }
}

impl FromStr for OrderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(OrderMode::Fixed),
            "seeded" => Ok(OrderMode::Seeded),
            "both" => Ok(OrderMode::Both),
            other => Err(format!("order mode must be fixed, seeded or both, got {other:?}")),
        }
    }
}

/// Seeded presentation order for one comparison.
pub fn presentation_order(seed: u64, id: &str) -> Order {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    if h.finalize()[0] & 1 == 0 {
        Order::AB
    } else {
        Order::BA
    }
}

fn judge_sample(provider: &dyn JudgmentProvider, template: &PromptTemplate, s: &PreferenceSample, order: Order) -> Option<Label> {
    let prompt = render_prompt(template, s, order);
    let (shown_a, shown_b) = match order {
        Order::AB => (&s.response_a, &s.response_b),
        Order::BA => (&s.response_b, &s.response_a),
    };
    let req = JudgeRequest {
        sample_id: &s.id,
        prompt: &prompt,
        order,
        shown_a,
        shown_b,
    };
    match provider.judge(&req) {
        Ok(text) => extract_answer(&text).ok().map(|shown| order.unmap(shown)),
        Err(e) => {
            tracing::debug!(sample_id = %s.id, error = %e, "provider failed; abstaining");
            None
        }
    }
}

/// Judges one sample under `order`. Provider or extraction failures abstain.
pub fn judge_pairwise(provider: &dyn JudgmentProvider, template: &PromptTemplate, b: &BenchSample, order: Order) -> EvalRecord {
    EvalRecord {
        sample_id: b.sample.id.clone(),
        category: b.category.clone(),
        difficulty: b.difficulty,
        gold: b.sample.label,
        predicted: judge_sample(provider, template, &b.sample, order),
        presentation_order: order,
    }
}

fn run_parallel<T: Sync, R: Send>(provider: &dyn JudgmentProvider, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if provider.concurrent() {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Judges every sample; records come back in input order.
pub fn evaluate_pairwise(
    provider: &dyn JudgmentProvider,
    template: &PromptTemplate,
    samples: &[BenchSample],
    mode: OrderMode,
    seed: u64,
) -> Vec<EvalRecord> {
    let per_sample = run_parallel(provider, samples, |b| match mode {
        OrderMode::Fixed => vec![judge_pairwise(provider, template, b, Order::AB)],
        OrderMode::Seeded => vec![judge_pairwise(provider, template, b, presentation_order(seed, &b.sample.id))],
        OrderMode::Both => vec![
            judge_pairwise(provider, template, b, Order::AB),
            judge_pairwise(provider, template, b, Order::BA),
        ],
    });
    per_sample.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Unweighted mean of per-category accuracies.
    MacroCategory,
    /// Correct over total.
    Micro,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::MacroCategory => "macro-category",
            Scheme::Micro => "micro",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro-category" | "macro" => Ok(Scheme::MacroCategory),
            "micro" => Ok(Scheme::Micro),
            other => Err(format!("scheme must be macro-category or micro, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub per_category: BTreeMap<String, f64>,
    pub per_difficulty: BTreeMap<Difficulty, f64>,
    pub overall: f64,
    pub n: BTreeMap<String, usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub order_mode: Option<OrderMode>,
}

/// One scored comparison, whatever the evaluation format.
#[derive(Debug, Clone, Copy)]
pub struct Score<'a> {
    pub category: &'a str,
    pub difficulty: Option<Difficulty>,
    pub correct: bool,
}

pub fn aggregate_scores<'a>(scores: impl IntoIterator<Item = Score<'a>>, scheme: Scheme) -> Result<EvalReport, EvalError> {
    let mut cats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut tiers: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
    for s in scores {
        let c = cats.entry(s.category.to_string()).or_default();
        c.0 += usize::from(s.correct);
        c.1 += 1;
        if let Some(d) = s.difficulty {
            let t = tiers.entry(d).or_default();
            t.0 += usize::from(s.correct);
            t.1 += 1;
        }
    }
    if cats.is_empty() {
        return Err(EvalError::Empty);
    }
    let acc = |(hit, total): (usize, usize)| hit as f64 / total as f64;
    let per_category: BTreeMap<String, f64> = cats.iter().map(|(k, &v)| (k.clone(), acc(v))).collect();
    let overall = match scheme {
        Scheme::MacroCategory => per_category.values().sum::<f64>() / per_category.len() as f64,
        Scheme::Micro => {
            let hit: usize = cats.values().map(|v| v.0).sum();
            let total: usize = cats.values().map(|v| v.1).sum();
            hit as f64 / total as f64
        }
    };
    Ok(EvalReport {
        scheme,
        per_category,
        per_difficulty: tiers.into_iter().map(|(k, v)| (k, acc(v))).collect(),
        overall,
        n: cats.into_iter().map(|(k, v)| (k, v.1)).collect(),
        seed: None,
        order_mode: None,
    })
}

/// Abstentions count as incorrect.
pub fn aggregate(records: &[EvalRecord], scheme: Scheme) -> Result<EvalReport, EvalError> {
    aggregate_scores(
        records.iter().map(|r| Score {
            category: &r.category,
            difficulty: r.difficulty,
            correct: r.correct(),
        }),
        scheme,
    )
}

/// Candidates for one prompt, with the index of the best one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonGroup {
    pub prompt_id: String,
    pub prompt: String,
    pub candidates: Vec<String>,
    pub best_index: usize,
    #[serde(default = "default_bon_category")]
    pub category: String,
}

fn default_bon_category() -> String {
    "bon".into()
}

impl BonGroup {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.candidates.len() < 2 {
            return Err(EvalError::Argument(format!(
                "group {} needs at least 2 candidates, has {}",
                self.prompt_id,
                self.candidates.len()
            )));
        }
        if self.best_index >= self.candidates.len() {
            return Err(EvalError::Argument(format!(
                "group {}: best_index {} out of range",
                self.prompt_id, self.best_index
            )));
        }
        Ok(())
    }

    pub fn match_id(&self, i: usize, j: usize) -> String {
        format!("{}#{i}-{j}", self.prompt_id)
    }

    /// Candidates `i` (as A) and `j` (as B). The label favours `j` only when
    /// `j` is the best candidate.
    pub fn pair_sample(&self, i: usize, j: usize) -> PreferenceSample {
        PreferenceSample {
            id: self.match_id(i, j),
            prompt: self.prompt.clone(),
            response_a: self.candidates[i].clone(),
            response_b: self.candidates[j].clone(),
            label: if j == self.best_index { Label::B } else { Label::A },
            source: "bon".into(),
            domain: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonOutcome {
    pub prompt_id: String,
    pub category: String,
    pub picked: usize,
    /// Some match ended in an abstention.
    pub abstained: bool,
    pub correct: bool,
}

/// Single-elimination bracket in index order: each round pairs neighbours
/// (0 v 1, 2 v 3, ...) and an odd last candidate gets a bye. Each match uses
/// its own seeded presentation order. An abstaining match advances the lower
/// index and marks the whole outcome incorrect.
pub fn judge_best_of_n(
    provider: &dyn JudgmentProvider,
    template: &PromptTemplate,
    g: &BonGroup,
    order_seed: u64,
) -> Result<BonOutcome, EvalError> {
    g.validate()?;
    let mut alive: Vec<usize> = (0..g.candidates.len()).collect();
    let mut abstained = false;
    while alive.len() > 1 {
        let mut next = Vec::with_capacity(alive.len().div_ceil(2));
        for pair in alive.chunks(2) {
            let &[i, j] = pair else {
                next.push(pair[0]);
                continue;
            };
            let s = g.pair_sample(i, j);
            let order = presentation_order(order_seed, &s.id);
            match judge_sample(provider, template, &s, order) {
                Some(Label::A) => next.push(i),
                Some(Label::B) => next.push(j),
                None => {
                    abstained = true;
                    next.push(i);
                }
            }
        }
        alive = next;
    }
    let picked = alive[0];
    Ok(BonOutcome {
        prompt_id: g.prompt_id.clone(),
        category: g.category.clone(),
        picked,
        abstained,
        correct: !abstained && picked == g.best_index,
    })
}

pub fn evaluate_best_of_n(
    provider: &dyn JudgmentProvider,
    template: &PromptTemplate,
    groups: &[BonGroup],
    seed: u64,
) -> Result<Vec<BonOutcome>, EvalError> {
    run_parallel(provider, groups, |g| judge_best_of_n(provider, template, g, seed))
        .into_iter()
        .collect()
}

pub fn aggregate_best_of_n(outcomes: &[BonOutcome], scheme: Scheme) -> Result<EvalReport, EvalError> {
    aggregate_scores(
        outcomes.iter().map(|o| Score {
            category: &o.category,
            difficulty: None,
            correct: o.correct,
        }),
        scheme,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Pairwise,
    Bon,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Pairwise => "pairwise",
            EvalMode::Bon => "bon",
        })
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairwise" => Ok(EvalMode::Pairwise),
            "bon" => Ok(EvalMode::Bon),
            other => Err(format!("mode must be pairwise or bon, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BenchFile {
    Pairwise(Vec<BenchSample>),
    Bon(Vec<BonGroup>),
}

impl BenchFile {
    pub fn mode(&self) -> EvalMode {
        match self {
            BenchFile::Pairwise(_) => EvalMode::Pairwise,
            BenchFile::Bon(_) => EvalMode::Bon,
        }
    }
}

/// Loads an evaluation file; records with a `candidates` field make it a
/// best-of-N file.
pub fn load_bench(path: &Path) -> Result<BenchFile, EvalError> {
    let rows: Vec<(usize, serde_json::Value)> = jsonl::read_records(path)?;
    let is_bon = rows.first().is_some_and(|(_, v)| v.get("candidates").is_some());
    let convert = |line: usize, e: serde_json::Error| JsonlError::Parse {
        line,
        message: e.to_string(),
    };
    if is_bon {
        let groups = rows
            .into_iter()
            .map(|(line, v)| {
                serde_json::from_value::<BonGroup>(v).map_err(|e| convert(line, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for g in &groups {
            g.validate()?;
        }
        Ok(BenchFile::Bon(groups))
    } else {
        let samples = rows
            .into_iter()
            .map(|(line, v)| {
                serde_json::from_value::<BenchSample>(v).map_err(|e| convert(line, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BenchFile::Pairwise(samples))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TableText,
    Records,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table-text" | "table" => Ok(ReportFormat::TableText),
            "records" => Ok(ReportFormat::Records),
            other => Err(format!("report format must be table-text or records, got {other:?}")),
        }
    }
}

/// Column order of the usual reward-model benchmark tables.
pub const CATEGORY_ORDER: [&str; 6] = ["Chat", "Chat_Hard", "Safety", "Reasoning", "Math", "Code"];

fn category_rank(name: &str) -> usize {
    let norm = name.to_lowercase().replace(['-', ' '], "_");
    CATEGORY_ORDER
        .iter()
        .position(|c| c.to_lowercase() == norm)
        .unwrap_or(CATEGORY_ORDER.len())
}

fn ordered_categories(r: &EvalReport) -> Vec<&String> {
    let mut cats: Vec<&String> = r.per_category.keys().collect();
    cats.sort_by(|a, b| category_rank(a).cmp(&category_rank(b)).then(a.cmp(b)));
    cats
}

fn table_rows(out: &mut String, cells: &[(String, String)]) {
    let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.len())).collect();
    let line = |pick: fn(&(String, String)) -> &String| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{:>w$}", pick(c), w = w))
            .collect::<Vec<_>>()
            .join("  ")
    };
    out.push_str(&line(|c| &c.0));
    out.push('\n');
    out.push_str(&line(|c| &c.1));
    out.push('\n');
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportLine {
    Header {
        scheme: Scheme,
        overall: f64,
        seed: Option<u64>,
        order_mode: Option<OrderMode>,
    },
    Category {
        name: String,
        accuracy: f64,
        n: usize,
    },
    Difficulty {
        name: Difficulty,
        accuracy: f64,
    },
}

pub fn emit_report(r: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => {
            let mut out = format!("# scheme={}", r.scheme);
            if let Some(seed) = r.seed {
                out.push_str(&format!(" seed={seed}"));
            }
            if let Some(mode) = r.order_mode {
                out.push_str(&format!(" order={mode}"));
            }
            out.push('\n');
            let pct = |v: f64| format!("{:.1}", 100.0 * v);
            let mut cells: Vec<(String, String)> = ordered_categories(r)
                .into_iter()
                .map(|c| (c.clone(), pct(r.per_category[c])))
                .collect();
            cells.push(("Overall".into(), pct(r.overall)));
            table_rows(&mut out, &cells);
            if !r.per_difficulty.is_empty() {
                out.push('\n');
                let cells: Vec<(String, String)> = r
                    .per_difficulty
                    .iter()
                    .map(|(d, v)| (d.name().to_string(), pct(*v)))
                    .collect();
                table_rows(&mut out, &cells);
            }
            out
        }
        ReportFormat::Records => {
            let mut lines = vec![ReportLine::Header {
                scheme: r.scheme,
                overall: r.overall,
                seed: r.seed,
                order_mode: r.order_mode,
            }];
            for c in ordered_categories(r) {
                lines.push(ReportLine::Category {
                    name: c.clone(),
                    accuracy: r.per_category[c],
                    n: r.n.get(c).copied().unwrap_or(0),
                });
            }
            for (d, v) in &r.per_difficulty {
                lines.push(ReportLine::Difficulty { name: *d, accuracy: *v });
            }
            jsonl::to_string(&lines)
        }
    }
}

/// Inverse of [`emit_report`] in records form.
pub fn parse_report(text: &str) -> Result<EvalReport, EvalError> {
    let lines: Vec<(usize, ReportLine)> = jsonl::parse_lines(text.as_bytes())?;
    let mut iter = lines.into_iter();
    let Some((_, ReportLine::Header { scheme, overall, seed, order_mode })) = iter.next() else {
        return Err(EvalError::Report {
            line: 1,
            message: "first line must be the header".into(),
        });
    };
    let mut r = EvalReport {
        scheme,
        per_category: BTreeMap::new(),
        per_difficulty: BTreeMap::new(),
        overall,
        n: BTreeMap::new(),
        seed,
        order_mode,
    };
    for (line, l) in iter {
        match l {
            ReportLine::Category { name, accuracy, n } => {
                r.per_category.insert(name.clone(), accuracy);
                r.n.insert(name, n);
            }
            ReportLine::Difficulty { name, accuracy } => {
                r.per_difficulty.insert(name, accuracy);
            }
            ReportLine::Header { .. } => {
                return Err(EvalError::Report {
                    line,
                    message: "second header".into(),
                })
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cor::TemplateFamily;

    fn bench(id: &str, category: &str, label: Label) -> BenchSample {
        BenchSample {
            sample: PreferenceSample {
                id: id.into(),
                prompt: "q".into(),
                response_a: format!("{id} first"),
                response_b: format!("{id} second"),
                label,
                source: "fixture".into(),
                domain: Default::default(),
            },
            category: category.into(),
            difficulty: None,
        }
    }

    fn template() -> PromptTemplate {
        PromptTemplate::builtin(TemplateFamily::InstructCor)
    }

    fn say(label: &str) -> Result<String, ProviderError> {
        Ok(format!("<answer>[[{label}]]</answer>"))
    }

    #[test]
    fn order_unmapping() {
        let p = FnProvider::new("always-a", |_: &JudgeRequest<'_>| say("A"));
        let b = bench("x", "Chat", Label::B);
        let r = judge_pairwise(&p, &template(), &b, Order::BA);
        assert_eq!(r.predicted, Some(Label::B));
        assert!(r.correct());
    }

    #[test]
    fn missing_answer_abstains() {
        let p = FnProvider::new("mute", |_: &JudgeRequest<'_>| Ok("thinking...".to_string()));
        let r = judge_pairwise(&p, &template(), &bench("x", "Chat", Label::A), Order::AB);
        assert_eq!(r.predicted, None);
        assert!(!r.correct());
        let failing = FnProvider::new("down", |_: &JudgeRequest<'_>| Err(ProviderError("offline".into())));
        assert_eq!(judge_pairwise(&failing, &template(), &bench("x", "Chat", Label::A), Order::AB).predicted, None);
    }

    fn records(cat: &str, hits: usize, total: usize) -> Vec<EvalRecord> {
        (0..total)
            .map(|i| EvalRecord {
                sample_id: format!("{cat}{i}"),
                category: cat.into(),
                difficulty: None,
                gold: Label::A,
                predicted: Some(if i < hits { Label::A } else { Label::B }),
                presentation_order: Order::AB,
            })
            .collect()
    }

    #[test]
    fn macro_and_micro() {
        let mut rs = records("Chat", 10, 10);
        rs.extend(records("Safety", 15, 30));
        let macro_r = aggregate(&rs, Scheme::MacroCategory).unwrap();
        assert_eq!(macro_r.overall, 0.75);
        assert_eq!(aggregate(&rs, Scheme::Micro).unwrap().overall, 0.625);
        assert!(!macro_r.per_category.contains_key("Reasoning"));
        assert_eq!(macro_r.n["Safety"], 30);
        assert!(matches!(aggregate(&[], Scheme::Micro), Err(EvalError::Empty)));
    }

    fn report() -> EvalReport {
        let mut rs = records("Reasoning", 3, 4);
        rs.extend(records("Chat_Hard", 1, 3));
        rs.extend(records("Safety", 2, 2));
        rs.extend(records("Chat", 1, 1));
        rs[0].difficulty = Some(Difficulty::Hard);
        let mut r = aggregate(&rs, Scheme::MacroCategory).unwrap();
        r.seed = Some(7);
        r.order_mode = Some(OrderMode::Seeded);
        r
    }

    #[test]
    fn table_columns_follow_benchmark_order() {
        let text = emit_report(&report(), ReportFormat::TableText);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# scheme=macro-category seed=7 order=seeded"));
        let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Chat", "Chat_Hard", "Safety", "Reasoning", "Overall"]);
        assert!(text.contains("hard"));
        let mut no_tiers = report();
        no_tiers.per_difficulty.clear();
        assert_eq!(emit_report(&no_tiers, ReportFormat::TableText).lines().count(), 3);
    }

    #[test]
    fn records_round_trip() {
        let r = report();
        assert_eq!(parse_report(&emit_report(&r, ReportFormat::Records)).unwrap(), r);
    }

    #[test]
    fn seeded_order_is_stable() {
        let orders: Vec<Order> = (0..64).map(|i| presentation_order(11, &format!("s{i}"))).collect();
        assert!(orders.contains(&Order::AB) && orders.contains(&Order::BA));
        assert_eq!(orders[5], presentation_order(11, "s5"));
    }

    fn rank_provider() -> impl JudgmentProvider {
        // Prefers the candidate carrying the larger number.
        FnProvider::new("rank", |r: &JudgeRequest<'_>| {
            let score = |s: &str| s.trim_start_matches("cand").parse::<i32>().unwrap_or(-1);
            say(if score(r.shown_a) >= score(r.shown_b) { "A" } else { "B" })
        })
    }

    fn bon(n: usize, best: usize) -> BonGroup {
        BonGroup {
            prompt_id: "g".into(),
            prompt: "q".into(),
            candidates: (0..n).map(|i| format!("cand{}", if i == best { 100 } else { i as i32 })).collect(),
            best_index: best,
            category: "bon".into(),
        }
    }

    #[test]
    fn perfect_ranker_finds_best() {
        for n in 2..9 {
            for best in 0..n {
                let out = judge_best_of_n(&rank_provider(), &template(), &bon(n, best), 3).unwrap();
                assert_eq!(out.picked, best);
                assert!(out.correct);
            }
        }
        assert!(judge_best_of_n(&rank_provider(), &template(), &bon(1, 0), 3).is_err());
    }
}
