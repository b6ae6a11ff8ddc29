use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::parse::{checked_answer, parse_judgment, tokenize, Node, Tag};

/// Tag skeleton a cold-start rollout must follow, one per ablation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatSpec {
    /// Only a single well-formed verdict block.
    NoRubrics,
    /// A rubric holding a justification, then an evaluation, then the verdict.
    Rubrics,
    /// The full chain-of-rubrics structure, task type included.
    RubricsQc,
}

impl FromStr for FormatSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-rubrics" => Ok(FormatSpec::NoRubrics),
            "rubrics" => Ok(FormatSpec::Rubrics),
            "rubrics-qc" => Ok(FormatSpec::RubricsQc),
            other => Err(format!(
                "format spec must be no-rubrics, rubrics or rubrics-qc, got {other:?}"
            )),
        }
    }
}

impl FormatSpec {
    pub fn name(self) -> &'static str {
        match self {
            FormatSpec::NoRubrics => "no-rubrics",
            FormatSpec::Rubrics => "rubrics",
            FormatSpec::RubricsQc => "rubrics-qc",
        }
    }
}

fn only(nodes: &[Node], tag: Tag) -> Option<&Node> {
    let mut it = nodes.iter().filter(|n| n.tag == tag);
    let first = it.next()?;
    it.next().is_none().then_some(first)
}

/// Checks the tag skeleton only; content quality is not inspected.
pub fn format_matches(text: &str, spec: FormatSpec) -> bool {
    match spec {
        FormatSpec::RubricsQc => parse_judgment(text).is_ok(),
        FormatSpec::NoRubrics => {
            let Ok(roots) = tokenize(text) else {
                return false;
            };
            checked_answer(text, &roots).is_ok()
        }
        FormatSpec::Rubrics => {
            let Ok(roots) = tokenize(text) else {
                return false;
            };
            if checked_answer(text, &roots).is_err() {
                return false;
            }
            let (Some(rubric), Some(eval), Some(answer)) = (
                only(&roots, Tag::Rubric),
                only(&roots, Tag::Eval),
                only(&roots, Tag::Answer),
            ) else {
                return false;
            };
            only(&rubric.children, Tag::Justify).is_some()
                && rubric.inner_end < eval.open
                && eval.inner_end < answer.open
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUBRIC_OK: &str = "<rubric>c (1.0)<justify>j</justify></rubric><eval>e</eval><answer>[[B]]</answer>";

    #[test]
    fn no_rubrics_needs_only_verdict() {
        assert!(format_matches("B is better. <answer>[[B]]</answer>", FormatSpec::NoRubrics));
        assert!(!format_matches("B is better.", FormatSpec::NoRubrics));
        assert!(!format_matches("<answer>[[B]]</answer><answer>[[B]]</answer>", FormatSpec::NoRubrics));
        assert!(!format_matches("<eval>x <answer>[[B]]</answer>", FormatSpec::NoRubrics));
    }

    #[test]
    fn rubrics_skeleton() {
        assert!(format_matches(RUBRIC_OK, FormatSpec::Rubrics));
        assert!(!format_matches(RUBRIC_OK, FormatSpec::RubricsQc));
        let no_justify = "<rubric>c</rubric><eval>e</eval><answer>[[B]]</answer>";
        assert!(!format_matches(no_justify, FormatSpec::Rubrics));
        let out_of_order = "<eval>e</eval><rubric>c<justify>j</justify></rubric><answer>[[B]]</answer>";
        assert!(!format_matches(out_of_order, FormatSpec::Rubrics));
    }

    #[test]
    fn qc_is_full_parse() {
        let full = format!("<type>Chat</type>{RUBRIC_OK}");
        assert!(format_matches(&full, FormatSpec::RubricsQc));
        assert!(format_matches(&full, FormatSpec::Rubrics));
    }
}
