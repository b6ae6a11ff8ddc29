use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Label, PreferenceSample};

/// Which response is shown under the Chatbot A heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    AB,
    BA,
}

impl Order {
    /// Maps a verdict about the presented chatbots back to the sample's own sides.
    pub fn unmap(self, shown: Label) -> Label {
        match self {
            Order::AB => shown,
            Order::BA => shown.other(),
        }
    }

    pub fn swapped(self) -> Order {
        match self {
            Order::AB => Order::BA,
            Order::BA => Order::AB,
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::AB => "AB",
            Order::BA => "BA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateFamily {
    /// Task-type classification, then rubrics or a self-solution.
    InstructCor,
    /// Plain user prompt for models that reason without a system prompt.
    ReasoningPlain,
    /// Cold-start ablation with no structured-reasoning guidance.
    ColdStartNoRubrics,
    /// Cold-start ablation with rubrics but no task-type classification.
    ColdStartRubricsNoQc,
}

impl TemplateFamily {
    pub const ALL: [TemplateFamily; 4] = [
        TemplateFamily::InstructCor,
        TemplateFamily::ReasoningPlain,
        TemplateFamily::ColdStartNoRubrics,
        TemplateFamily::ColdStartRubricsNoQc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateFamily::InstructCor => "instruct-cor",
            TemplateFamily::ReasoningPlain => "reasoning-plain",
            TemplateFamily::ColdStartNoRubrics => "cold-start-no-rubrics",
            TemplateFamily::ColdStartRubricsNoQc => "cold-start-rubrics-no-qc",
        }
    }

    pub fn builtin_body(self) -> &'static str {
        match self {
            TemplateFamily::InstructCor => INSTRUCT_COR,
            TemplateFamily::ReasoningPlain => REASONING_PLAIN,
            TemplateFamily::ColdStartNoRubrics => COLD_START_NO_RUBRICS,
            TemplateFamily::ColdStartRubricsNoQc => COLD_START_RUBRICS_NO_QC,
        }
    }
}

impl FromStr for TemplateFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown template family {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} is missing from the template")]
    MissingPlaceholder(&'static str),
    #[error("placeholder {{{0}}} appears more than once")]
    RepeatedPlaceholder(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Question,
    ResponseA,
    ResponseB,
}

const PLACEHOLDERS: [(&str, Segment); 3] = [
    ("question", Segment::Question),
    ("response_a", Segment::ResponseA),
    ("response_b", Segment::ResponseB),
];

/// A prompt body with the `{question}`, `{response_a}` and `{response_b}`
/// placeholders, each present exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    family: TemplateFamily,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(family: TemplateFamily, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let segments = split_segments(&body);
        for (name, seg) in PLACEHOLDERS {
            match segments.iter().filter(|s| **s == seg).count() {
                0 => return Err(TemplateError::MissingPlaceholder(name)),
                1 => {}
                _ => return Err(TemplateError::RepeatedPlaceholder(name)),
            }
        }
        Ok(PromptTemplate {
            family,
            body,
            segments,
        })
    }

    pub fn builtin(family: TemplateFamily) -> Self {
        Self::new(family, family.builtin_body()).expect("built-in templates are well-formed")
    }

    pub fn family(&self) -> TemplateFamily {
        self.family
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

fn split_segments(body: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    'scan: while let Some(pos) = rest.find('{') {
        for (name, seg) in PLACEHOLDERS {
            let tail = &rest[pos + 1..];
            if tail.starts_with(name) && tail[name.len()..].starts_with('}') {
                literal.push_str(&rest[..pos]);
                if !literal.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut literal)));
                }
                out.push(seg);
                rest = &tail[name.len() + 1..];
                continue 'scan;
            }
        }
        literal.push_str(&rest[..=pos]);
        rest = &rest[pos + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        out.push(Segment::Text(literal));
    }
    out
}

/// Substitutes the sample into the template in one pass, so placeholder-like
/// text inside the sample is never expanded.
pub fn render_prompt(t: &PromptTemplate, s: &PreferenceSample, order: Order) -> String {
    let (first, second) = match order {
        Order::AB => (&s.response_a, &s.response_b),
        Order::BA => (&s.response_b, &s.response_a),
    };
    let mut out = String::with_capacity(t.body.len() + s.prompt.len() + first.len() + second.len());
    for seg in &t.segments {
        match seg {
            Segment::Text(text) => out.push_str(text),
            Segment::Question => out.push_str(&s.prompt),
            Segment::ResponseA => out.push_str(first),
            Segment::ResponseB => out.push_str(second),
        }
    }
    out
}

pub const CHATBOT_A_HEADING: &str = "[The Start of Chatbot A's Response]";
pub const CHATBOT_B_HEADING: &str = "[The Start of Chatbot B's Response]";

macro_rules! pairwise_input {
    () => {
        "[Client Question]
{question}

[The Start of Chatbot A's Response]
{response_a}
[The End of Chatbot A's Response]

[The Start of Chatbot B's Response]
{response_b}
[The End of Chatbot B's Response]"
    };
}

const INSTRUCT_COR: &str = concat!(
    "Please act as an impartial judge and evaluate the quality of the responses provided by two AI Chatbots to the Client's question displayed below.

First, classify the task into one of two categories: <type>Reasoning</type> or <type>Chat</type>.
- Use <type>Reasoning</type> for tasks that involve math, coding, or require domain knowledge, multi-step inference, logical deduction, or combining information to reach a conclusion.
- Use <type>Chat</type> for tasks that involve open-ended or factual conversation, stylistic rewrites, safety questions, or general helpfulness requests without deep reasoning.

If the task is Reasoning:
1. Solve the Client's question yourself and present your final answer within <solution>...</solution> tags.
2. Evaluate the two Chatbot responses based on correctness, completeness, and reasoning quality, referencing your own solution.
3. Include your evaluation inside <eval>...</eval> tags, quoting or summarizing the Chatbots using the following tags:
   - <quote_A>...</quote_A> for direct quotes from Chatbot A
   - <summary_A>...</summary_A> for paraphrases of Chatbot A
   - <quote_B>...</quote_B> for direct quotes from Chatbot B
   - <summary_B>...</summary_B> for paraphrases of Chatbot B
4. End with your final judgment in the format: <answer>[[A]]</answer> or <answer>[[B]]</answer>

If the task is Chat:
1. Generate evaluation criteria (rubric) tailored to the Client's question and context, enclosed in <rubric>...</rubric> tags.
2. Assign weights to each rubric item based on their relative importance.
3. Inside <rubric>, include a <justify>...</justify> section explaining why you chose those rubric criteria and weights.
4. Compare both Chatbot responses according to the rubric.
5. Provide your evaluation inside <eval>...</eval> tags, using <quote_A>, <summary_A>, <quote_B>, and <summary_B> as described above.
6. End with your final judgment in the format: <answer>[[A]]</answer> or <answer>[[B]]</answer>

",
    pairwise_input!(),
    "\n"
);

pub const VERDICT_INSTRUCTION: &str = "Output your final verdict at last by strictly following this format: '<answer>[[A]]</answer>' if Chatbot A is better, or '<answer>[[B]]</answer>' if Chatbot B is better.";

const REASONING_PLAIN: &str = concat!(
    "Please act as an impartial judge and evaluate the quality of the responses provided by two AI Chatbots to the Client question displayed below.

",
    pairwise_input!(),
    "

Output your final verdict at last by strictly following this format: '<answer>[[A]]</answer>' if Chatbot A is better, or '<answer>[[B]]</answer>' if Chatbot B is better."
);

const COLD_START_NO_RUBRICS: &str = concat!(
    "Please act as an impartial judge and evaluate the quality of the responses provided by two AI Chatbots to the Client's question displayed below.

You should choose the chatbot that follows the client's instructions and answers the client's question better. Do not allow the length of the responses to influence your evaluation. Do not favor certain names of the chatbots. Be as objective as possible. First, compare the chatbot responses and provide your evaluations. Then, conclude with your verdict using exactly this format: <answer>[[A]]</answer> if Chatbot A is better, <answer>[[B]]</answer> if Chatbot B is better.

",
    pairwise_input!(),
    "\n"
);

const COLD_START_RUBRICS_NO_QC: &str = concat!(
    "Please act as an impartial judge and evaluate the quality of the responses provided by two AI Chatbots to the Client's question displayed below.

Instructions
1. Begin your evaluation by generating the rubric criteria tailored to the Client's question and context.
  Enclose the rubric in <rubric> ... </rubric> tags.
2. Assign weights to each rubric item based on their relative importance.
3. Within <rubric>, include a <justify> ... </justify> section explaining the rationale behind the chosen criteria and weights.
4. Compare both Chatbot responses using the rubric.
5. Include your evaluation in <eval> ... </eval> tags.
  Support your analysis using:
   - <quote_A> ... </quote_A> for direct quotes from Chatbot A
   - <summary_A> ... </summary_A> for paraphrased summaries of Chatbot A
   - <quote_B> ... </quote_B> for direct quotes from Chatbot B
   - <summary_B> ... </summary_B> for paraphrased summaries of Chatbot B
6. Conclude with your final judgment using:
   <answer>[[A]]</answer> or <answer>[[B]]</answer>

Important Notes:
- Be objective and base your evaluation strictly on the content of the responses.
- Do not let the response order, length, or Chatbot names bias your judgment.

",
    pairwise_input!(),
    "\n"
);
