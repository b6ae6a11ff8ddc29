use serde::{Deserialize, Serialize};

use super::parse::{Judgment, SpanKind};
use super::template::Order;
use crate::data::PreferenceSample;

/// Tolerance on the rubric weight total.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "kebab-case")]
pub enum LintFinding {
    WeightSum { sum: f64 },
    MissingWeight { item: usize },
    WeightOutOfRange { item: usize, weight: f64 },
    QuoteFidelity { kind: SpanKind, content: String },
    EmptyEvaluation,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Audits a judgment of `s` rendered under `order`. Quotes are compared to the
/// response shown under the same chatbot name, whitespace-normalized.
pub fn lint_judgment(j: &Judgment, s: &PreferenceSample, order: Order) -> Vec<LintFinding> {
    let mut findings = Vec::new();
    if let Some(items) = &j.rubric {
        let mut sum = 0.0;
        for (i, item) in items.iter().enumerate() {
            match item.weight {
                None => findings.push(LintFinding::MissingWeight { item: i }),
                Some(w) => {
                    if !(0.0..=1.0).contains(&w) {
                        findings.push(LintFinding::WeightOutOfRange { item: i, weight: w });
                    }
                    sum += w;
                }
            }
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            findings.push(LintFinding::WeightSum { sum });
        }
    }
    for span in &j.evaluation.spans {
        if !span.kind.is_quote() {
            continue;
        }
        let response = s.response(order.unmap(span.kind.side()));
        if !normalize_ws(response).contains(&normalize_ws(&span.content)) {
            findings.push(LintFinding::QuoteFidelity {
                kind: span.kind,
                content: span.content.clone(),
            });
        }
    }
    if j.evaluation.text.trim().is_empty() {
        findings.push(LintFinding::EmptyEvaluation);
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cor::parse_judgment;
    use crate::data::{Domain, Label};

    fn sample() -> PreferenceSample {
        PreferenceSample {
            id: "1".into(),
            prompt: "p".into(),
            response_a: "The sky is blue because of Rayleigh scattering.".into(),
            response_b: "The sky is green.".into(),
            label: Label::A,
            source: "s".into(),
            domain: Domain::Chat,
        }
    }

    fn judgment(rubric: &str, eval: &str) -> Judgment {
        parse_judgment(&format!(
            "<type>Chat</type><rubric>{rubric}<justify>j</justify></rubric><eval>{eval}</eval><answer>[[A]]</answer>"
        ))
        .unwrap()
    }

    #[test]
    fn verbatim_quote_is_clean() {
        let j = judgment("acc (0.6)\nclarity (0.4)", "<quote_A>Rayleigh scattering</quote_A>");
        assert!(lint_judgment(&j, &sample(), Order::AB).is_empty());
    }

    #[test]
    fn missing_quote_flagged() {
        let j = judgment("acc (1.0)", "<quote_B>the sky is purple</quote_B>");
        let f = lint_judgment(&j, &sample(), Order::AB);
        assert_eq!(
            f,
            [LintFinding::QuoteFidelity {
                kind: SpanKind::QuoteB,
                content: "the sky is purple".into()
            }]
        );
    }

    #[test]
    fn quotes_follow_presentation_order() {
        let j = judgment("acc (1.0)", "<quote_A>The sky is green.</quote_A>");
        assert!(lint_judgment(&j, &sample(), Order::BA).is_empty());
        assert_eq!(lint_judgment(&j, &sample(), Order::AB).len(), 1);
    }

    #[test]
    fn weight_sum_point_nine() {
        // 0.5 + 0.4 = 0.9
        let j = judgment("a (50%)\nb (40%)", "fine");
        match lint_judgment(&j, &sample(), Order::AB).as_slice() {
            [LintFinding::WeightSum { sum }] => assert!((sum - 0.9).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_eval_and_missing_weight() {
        let j = judgment("- unweighted", "  ");
        let f = lint_judgment(&j, &sample(), Order::AB);
        assert!(f.contains(&LintFinding::MissingWeight { item: 0 }));
        assert!(f.contains(&LintFinding::EmptyEvaluation));
    }
}
