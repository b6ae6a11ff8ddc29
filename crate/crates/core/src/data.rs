//! Preference records: schema, loading, cleaning and the distillation subset.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

/// Which of the two responses is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn other(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Label::A),
            "B" | "b" => Ok(Label::B),
            other => Err(format!("label must be A or B, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Chat,
    Safety,
    ReasoningMath,
    ReasoningCode,
    #[default]
    Unknown,
}

impl Domain {
    pub fn is_reasoning(self) -> bool {
        matches!(self, Domain::ReasoningMath | Domain::ReasoningCode)
    }
}

/// One preference pair: a prompt, two responses and the gold preference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub id: String,
    pub prompt: String,
    pub response_a: String,
    pub response_b: String,
    pub label: Label,
    pub source: String,
    #[serde(default)]
    pub domain: Domain,
}

impl PreferenceSample {
    pub fn chosen(&self) -> &str {
        self.response(self.label)
    }

    pub fn rejected(&self) -> &str {
        self.response(self.label.other())
    }

    pub fn response(&self, side: Label) -> &str {
        match side {
            Label::A => &self.response_a,
            Label::B => &self.response_b,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Read(#[from] JsonlError),
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: response_a and response_b are identical")]
    IdenticalResponses { line: usize },
    #[error("{0}")]
    Argument(String),
    #[error("unknown cleaning rule {0:?}")]
    UnknownRule(String),
    #[error("write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An ordered collection of samples with per-source counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<PreferenceSample>,
    provenance: BTreeMap<String, usize>,
}

impl Dataset {
    /// Validates ids and responses. `line` numbers in errors are 1-based record positions.
    pub fn new(samples: Vec<PreferenceSample>) -> Result<Self, DataError> {
        let numbered: Vec<(usize, PreferenceSample)> =
            samples.into_iter().enumerate().map(|(i, s)| (i + 1, s)).collect();
        Self::from_numbered(numbered)
    }

    fn from_numbered(records: Vec<(usize, PreferenceSample)>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        let mut samples = Vec::with_capacity(records.len());
        for (line, s) in records {
            if s.response_a.as_bytes() == s.response_b.as_bytes() {
                return Err(DataError::IdenticalResponses { line });
            }
            if !seen.insert(s.id.clone()) {
                return Err(DataError::DuplicateId { line, id: s.id });
            }
            samples.push(s);
        }
        Ok(Self::from_validated(samples))
    }

    fn from_validated(samples: Vec<PreferenceSample>) -> Self {
        let mut provenance = BTreeMap::new();
        for s in &samples {
            *provenance.entry(s.source.clone()).or_insert(0) += 1;
        }
        Dataset { samples, provenance }
    }

    pub fn samples(&self) -> &[PreferenceSample] {
        &self.samples
    }

    pub fn provenance(&self) -> &BTreeMap<String, usize> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<PreferenceSample> {
        self.samples
    }
}

/// Loads a line-delimited preference file and validates every record.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let records = jsonl::read_records::<PreferenceSample>(path)?;
    Dataset::from_numbered(records)
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let records = jsonl::parse_lines::<PreferenceSample, _>(text.as_bytes())?;
    Dataset::from_numbered(records)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<(), DataError> {
    jsonl::write_records(path, d.samples()).map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Which response a spurious token must be confined to for the rule to fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenSide {
    /// Token in the rejected response and absent from the chosen one.
    RejectedOnly,
    /// Token in the chosen response and absent from the rejected one.
    ChosenOnly,
    /// Token in either response.
    Either,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum CleaningRule {
    SpuriousToken { token: String, side: TokenSide },
    /// Chosen response single-turn while the rejected one is multi-turn.
    TurnCountBias,
    SourceBlocklist { source: String },
}

impl CleaningRule {
    pub fn name(&self) -> String {
        match self {
            CleaningRule::SpuriousToken { token, side } => {
                let side = match side {
                    TokenSide::RejectedOnly => "rejected-only",
                    TokenSide::ChosenOnly => "chosen-only",
                    TokenSide::Either => "either",
                };
                format!("spurious-token {token} {side}")
            }
            CleaningRule::TurnCountBias => "turn-count-bias".to_string(),
            CleaningRule::SourceBlocklist { source } => format!("source-blocklist {source}"),
        }
    }

    pub fn matches(&self, s: &PreferenceSample) -> bool {
        match self {
            CleaningRule::SpuriousToken { token, side } => {
                let in_chosen = s.chosen().contains(token.as_str());
                let in_rejected = s.rejected().contains(token.as_str());
                match side {
                    TokenSide::RejectedOnly => in_rejected && !in_chosen,
                    TokenSide::ChosenOnly => in_chosen && !in_rejected,
                    TokenSide::Either => in_chosen || in_rejected,
                }
            }
            CleaningRule::TurnCountBias => {
                turn_count(s.chosen()) == 1 && turn_count(s.rejected()) > 1
            }
            CleaningRule::SourceBlocklist { source } => &s.source == source,
        }
    }
}

/// Parses `spurious-token <token> [rejected-only|chosen-only|either]`,
/// `turn-count-bias` or `source-blocklist <source>`.
impl FromStr for CleaningRule {
    type Err = DataError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        match (name, args.as_slice()) {
            ("spurious-token", [token]) => Ok(CleaningRule::SpuriousToken {
                token: token.to_string(),
                side: TokenSide::RejectedOnly,
            }),
            ("spurious-token", [token, side]) => {
                let side = match *side {
                    "rejected-only" => TokenSide::RejectedOnly,
                    "chosen-only" => TokenSide::ChosenOnly,
                    "either" => TokenSide::Either,
                    other => {
                        return Err(DataError::Argument(format!(
                            "spurious-token side must be rejected-only, chosen-only or either, got {other:?}"
                        )))
                    }
                };
                Ok(CleaningRule::SpuriousToken {
                    token: token.to_string(),
                    side,
                })
            }
            ("turn-count-bias", []) => Ok(CleaningRule::TurnCountBias),
            ("source-blocklist", [source]) => Ok(CleaningRule::SourceBlocklist {
                source: source.to_string(),
            }),
            ("spurious-token" | "turn-count-bias" | "source-blocklist", _) => Err(
                DataError::Argument(format!("wrong arguments for rule {name:?}: {line:?}")),
            ),
            _ => Err(DataError::UnknownRule(name.to_string())),
        }
    }
}

/// Reads one rule per line; blank lines and `#` comments are skipped.
pub fn parse_rules(text: &str) -> Result<Vec<CleaningRule>, DataError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

const TURN_MARKERS: &[&str] = &[
    "<im_start>",
    "<|im_start|>",
    "\nHuman:",
    "\nUser:",
    "\nAssistant:",
    "\nuser:",
    "\nassistant:",
];

/// Number of conversational turns in a response: one plus the number of role markers.
pub fn turn_count(text: &str) -> usize {
    1 + TURN_MARKERS
        .iter()
        .map(|m| text.matches(m).count())
        .sum::<usize>()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub removed_spurious_token: usize,
    pub removed_turn_bias: usize,
    pub removed_source_blocklist: usize,
    pub retained: usize,
    pub rules_applied: Vec<String>,
}

impl CleaningReport {
    pub fn removed(&self) -> usize {
        self.removed_spurious_token + self.removed_turn_bias + self.removed_source_blocklist
    }
}

/// Drops every sample matched by any rule. A sample is attributed to the first
/// rule (in list order) that matches it.
pub fn clean_dataset(d: &Dataset, rules: &[CleaningRule]) -> (Dataset, CleaningReport) {
    let mut report = CleaningReport {
        rules_applied: rules.iter().map(CleaningRule::name).collect(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(d.len());
    for s in d.samples() {
        match rules.iter().find(|r| r.matches(s)) {
            Some(CleaningRule::SpuriousToken { .. }) => report.removed_spurious_token += 1,
            Some(CleaningRule::TurnCountBias) => report.removed_turn_bias += 1,
            Some(CleaningRule::SourceBlocklist { .. }) => report.removed_source_blocklist += 1,
            None => kept.push(s.clone()),
        }
    }
    report.retained = kept.len();
    (Dataset::from_validated(kept), report)
}

/// Number of samples a fraction selects: the ceiling of `fraction * n`, with
/// products that sit within rounding noise of an integer taken as that integer.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Seeded uniform draw without replacement of `ceil(fraction * N)` samples,
/// returned in their original order.
pub fn draw_distill_subset(d: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Argument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if d.is_empty() {
        return Err(DataError::Argument("cannot subsample an empty dataset".into()));
    }
    let n = d.len();
    let k = subset_size(fraction, n).min(n);
    if k == n {
        return Ok(d.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let samples = picked.into_iter().map(|i| d.samples[i].clone()).collect();
    Ok(Dataset::from_validated(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: &str, source: &str, a: &str, b: &str, label: Label) -> PreferenceSample {
        PreferenceSample {
            id: id.into(),
            prompt: format!("prompt {id}"),
            response_a: a.into(),
            response_b: b.into(),
            label,
            source: source.into(),
            domain: Domain::Unknown,
        }
    }

    fn numbered(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| sample(&format!("s{i}"), "src", &format!("a{i}"), &format!("b{i}"), Label::A))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_three_lines() {
        let text = r#"{"id":"1","prompt":"p","response_a":"x","response_b":"y","label":"A","source":"helpsteer2","domain":"chat"}
{"id":"2","prompt":"p","response_a":"x","response_b":"y","label":"B","source":"helpsteer2"}

{"id":"3","prompt":"p","response_a":"x","response_b":"z","label":"A","source":"wildguard","domain":"safety"}
"#;
        let d = parse_dataset(text).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples()[1].domain, Domain::Unknown);
        assert_eq!(d.samples()[2].domain, Domain::Safety);
    }

    #[test]
    fn duplicate_id_names_line() {
        let text = r#"{"id":"1","prompt":"p","response_a":"x","response_b":"y","label":"A","source":"s"}
{"id":"1","prompt":"p","response_a":"x","response_b":"z","label":"A","source":"s"}
"#;
        match parse_dataset(text) {
            Err(DataError::DuplicateId { line, id }) => {
                assert_eq!(line, 2);
                assert_eq!(id, "1");
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"1\",\"prompt\":\"p\",\"response_a\":\"x\",\"response_b\":\"y\",\"label\":\"A\",\"source\":\"s\"}\n{not json}\n";
        let err = parse_dataset(text).unwrap_err();
        assert!(matches!(err, DataError::Read(JsonlError::Parse { line: 2, .. })), "{err}");
    }

    #[test]
    fn rejects_bad_label_and_identical_responses() {
        let bad_label = r#"{"id":"1","prompt":"p","response_a":"x","response_b":"y","label":"C","source":"s"}"#;
        assert!(parse_dataset(bad_label).is_err());
        let same = r#"{"id":"1","prompt":"p","response_a":"x","response_b":"x","label":"A","source":"s"}"#;
        assert!(matches!(
            parse_dataset(same),
            Err(DataError::IdenticalResponses { line: 1 })
        ));
    }

    #[test]
    fn provenance_counts_sources() {
        let mut v = Vec::new();
        for i in 0..5 {
            v.push(sample(&format!("h{i}"), "helpsteer2", "a", "b", Label::A));
        }
        for i in 0..3 {
            v.push(sample(&format!("m{i}"), "Math-DPO-10K", "a", "b", Label::B));
        }
        let d = Dataset::new(v).unwrap();
        let expected: BTreeMap<String, usize> =
            [("Math-DPO-10K".to_string(), 3), ("helpsteer2".to_string(), 5)].into();
        assert_eq!(d.provenance(), &expected);
        assert_eq!(d.provenance().values().sum::<usize>(), d.len());
    }

    #[test]
    fn spurious_token_rejected_only() {
        let hit = sample("1", "magpie_ultra", "clean answer", "<im_start>user\nmore", Label::A);
        let both = sample("2", "magpie_ultra", "<im_start>x", "<im_start>y", Label::A);
        let chosen_has = sample("3", "magpie_ultra", "<im_start>x", "y", Label::A);
        let d = Dataset::new(vec![hit, both, chosen_has]).unwrap();
        let rule = CleaningRule::SpuriousToken {
            token: "<im_start>".into(),
            side: TokenSide::RejectedOnly,
        };
        let (clean, report) = clean_dataset(&d, &[rule]);
        assert_eq!(report.removed_spurious_token, 1);
        assert_eq!(report.retained, 2);
        let ids: Vec<_> = clean.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["2", "3"]);
    }

    #[test]
    fn no_match_is_identity() {
        let d = numbered(5);
        let rule = CleaningRule::SourceBlocklist { source: "nope".into() };
        let (clean, report) = clean_dataset(&d, &[rule]);
        assert_eq!(clean, d);
        assert_eq!(report.retained, 5);
        assert_eq!(report.removed(), 0);
    }

    #[test]
    fn empty_rules_zeroed_report() {
        let d = numbered(4);
        let (clean, report) = clean_dataset(&d, &[]);
        assert_eq!(clean, d);
        assert_eq!(
            report,
            CleaningReport {
                retained: 4,
                ..Default::default()
            }
        );
    }

    #[test]
    fn blocklist_removes_four_of_ten() {
        // sources: 4 x magpie_ultra at positions 1, 3, 6, 9
        let blocked = [1, 3, 6, 9];
        let v = (0..10)
            .map(|i| {
                let src = if blocked.contains(&i) { "magpie_ultra" } else { "helpsteer2" };
                sample(&format!("s{i}"), src, "a", "b", Label::A)
            })
            .collect();
        let d = Dataset::new(v).unwrap();
        let (clean, report) = clean_dataset(
            &d,
            &[CleaningRule::SourceBlocklist {
                source: "magpie_ultra".into(),
            }],
        );
        assert_eq!(report.retained, 6);
        assert_eq!(report.removed_source_blocklist, 4);
        assert_eq!(report.removed() + report.retained, 10);
        let ids: Vec<_> = clean.samples().iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids, ["s0", "s2", "s4", "s5", "s7", "s8"]);
    }

    #[test]
    fn turn_bias_rule() {
        let biased = sample("1", "m", "single answer", "answer\nHuman: more?\nAssistant: yes", Label::A);
        let fine = sample("2", "m", "one", "two", Label::B);
        let d = Dataset::new(vec![biased, fine]).unwrap();
        let (clean, report) = clean_dataset(&d, &[CleaningRule::TurnCountBias]);
        assert_eq!(report.removed_turn_bias, 1);
        assert_eq!(clean.samples()[0].id, "2");
    }

    #[test]
    fn rule_parsing() {
        let rules = parse_rules(
            "# audit\nspurious-token <im_start> rejected-only\nturn-count-bias\n\nsource-blocklist magpie_ultra\n",
        )
        .unwrap();
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[0].name(), "spurious-token <im_start> rejected-only");
        match parse_rules("dedupe-everything") {
            Err(DataError::UnknownRule(name)) => assert_eq!(name, "dedupe-everything"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subset_sizes() {
        let d = numbered(100);
        assert_eq!(draw_distill_subset(&d, 0.12, 7).unwrap().len(), 12);
        assert_eq!(draw_distill_subset(&d, 1.0, 7).unwrap(), d);
        assert_eq!(subset_size(0.125, 10), 2);
        assert_eq!(subset_size(0.3, 10), 3);
        assert_eq!(subset_size(0.31, 10), 4);
    }

    #[test]
    fn subset_is_deterministic_subsequence() {
        let d = numbered(50);
        let a = draw_distill_subset(&d, 0.3, 42).unwrap();
        let b = draw_distill_subset(&d, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let pos: Vec<usize> = a
            .samples()
            .iter()
            .map(|s| d.samples().iter().position(|t| t == s).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subset_argument_errors() {
        let d = numbered(3);
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(draw_distill_subset(&d, f, 1), Err(DataError::Argument(_))));
        }
        let empty = Dataset::new(vec![]).unwrap();
        assert!(draw_distill_subset(&empty, 0.5, 1).is_err());
    }
}
