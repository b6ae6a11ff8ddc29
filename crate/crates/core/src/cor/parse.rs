use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskType {
    Chat,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricItem {
    pub criterion: String,
    /// Fraction of the total; percentages are divided by 100. Absent when the
    /// item carries no recognisable weight.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    #[serde(rename = "quote_A")]
    QuoteA,
    #[serde(rename = "summary_A")]
    SummaryA,
    #[serde(rename = "quote_B")]
    QuoteB,
    #[serde(rename = "summary_B")]
    SummaryB,
}

impl SpanKind {
    pub fn tag(self) -> Tag {
        match self {
            SpanKind::QuoteA => Tag::QuoteA,
            SpanKind::SummaryA => Tag::SummaryA,
            SpanKind::QuoteB => Tag::QuoteB,
            SpanKind::SummaryB => Tag::SummaryB,
        }
    }

    pub fn side(self) -> Label {
        match self {
            SpanKind::QuoteA | SpanKind::SummaryA => Label::A,
            SpanKind::QuoteB | SpanKind::SummaryB => Label::B,
        }
    }

    pub fn is_quote(self) -> bool {
        matches!(self, SpanKind::QuoteA | SpanKind::QuoteB)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub kind: SpanKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Trimmed inner text of the `<eval>` block, span tags included.
    pub text: String,
    /// Evidence spans in document order.
    pub spans: Vec<EvidenceSpan>,
}

/// A parsed chain-of-rubrics rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_type: TaskType,
    pub rubric: Option<Vec<RubricItem>>,
    pub justification: Option<String>,
    pub solution: Option<String>,
    pub evaluation: Evaluation,
    pub answer: Label,
    /// The rollout exactly as received.
    pub raw: String,
}

impl Judgment {
    /// Equality of everything except the raw text.
    pub fn same_structure(&self, other: &Judgment) -> bool {
        self.task_type == other.task_type
            && self.rubric == other.rubric
            && self.justification == other.justification
            && self.solution == other.solution
            && self.evaluation == other.evaluation
            && self.answer == other.answer
    }

    /// Canonical rollout text for this judgment; parsing it yields a
    /// structurally equal judgment.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ty = match self.task_type {
            TaskType::Chat => "Chat",
            TaskType::Reasoning => "Reasoning",
        };
        out.push_str(&format!("<type>{ty}</type>\n"));
        if let Some(items) = &self.rubric {
            out.push_str("<rubric>\n");
            for (i, item) in items.iter().enumerate() {
                match item.weight {
                    Some(w) => out.push_str(&format!("{}. {} ({})\n", i + 1, item.criterion, w)),
                    None => out.push_str(&format!("{}. {}\n", i + 1, item.criterion)),
                }
            }
            if let Some(j) = &self.justification {
                out.push_str(&format!("<justify>\n{j}\n</justify>\n"));
            }
            out.push_str("</rubric>\n");
        }
        if let Some(sol) = &self.solution {
            out.push_str(&format!("<solution>\n{sol}\n</solution>\n"));
        }
        out.push_str(&format!("<eval>\n{}\n</eval>\n", self.evaluation.text));
        out.push_str(&format!("<answer>[[{}]]</answer>", self.answer));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Type,
    Rubric,
    Justify,
    Solution,
    Eval,
    QuoteA,
    SummaryA,
    QuoteB,
    SummaryB,
    Answer,
}

impl Tag {
    const ALL: [Tag; 10] = [
        Tag::Type,
        Tag::Rubric,
        Tag::Justify,
        Tag::Solution,
        Tag::Eval,
        Tag::QuoteA,
        Tag::SummaryA,
        Tag::QuoteB,
        Tag::SummaryB,
        Tag::Answer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Type => "type",
            Tag::Rubric => "rubric",
            Tag::Justify => "justify",
            Tag::Solution => "solution",
            Tag::Eval => "eval",
            Tag::QuoteA => "quote_A",
            Tag::SummaryA => "summary_A",
            Tag::QuoteB => "quote_B",
            Tag::SummaryB => "summary_B",
            Tag::Answer => "answer",
        }
    }

    /// The only parent this tag may appear under; `None` means top level.
    fn parent(self) -> Option<Tag> {
        match self {
            Tag::Justify => Some(Tag::Rubric),
            Tag::QuoteA | Tag::SummaryA | Tag::QuoteB | Tag::SummaryB => Some(Tag::Eval),
            _ => None,
        }
    }

    fn span_kind(self) -> Option<SpanKind> {
        match self {
            Tag::QuoteA => Some(SpanKind::QuoteA),
            Tag::SummaryA => Some(SpanKind::SummaryA),
            Tag::QuoteB => Some(SpanKind::QuoteB),
            Tag::SummaryB => Some(SpanKind::SummaryB),
            _ => None,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("{tag} opened at byte {offset} is never closed")]
    Unclosed { tag: Tag, offset: usize },
    #[error("closing {tag} at byte {offset} has no matching open tag")]
    UnexpectedClose { tag: Tag, offset: usize },
    #[error("{tag} at byte {offset} may not appear {}", match .parent { Some(p) => format!("inside {p}"), None => "at top level".to_string() })]
    IllegalNesting {
        tag: Tag,
        parent: Option<Tag>,
        offset: usize,
    },
}

impl TagError {
    pub fn offset(&self) -> usize {
        match self {
            TagError::Unclosed { offset, .. }
            | TagError::UnexpectedClose { offset, .. }
            | TagError::IllegalNesting { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("Chat judgment without a rubric")]
    ChatNoRubric,
    #[error("Reasoning judgment without a solution")]
    ReasoningNoSolution,
    #[error("Chat judgment carries a solution")]
    ChatWithSolution,
    #[error("Reasoning judgment carries a rubric")]
    ReasoningWithRubric,
    #[error("missing <type> block")]
    MissingType,
    #[error("unknown task type {0:?}")]
    UnknownTaskType(String),
    #[error("missing <eval> block")]
    MissingEval,
    #[error("{0} appears more than once")]
    Duplicate(Tag),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("input is not UTF-8 (valid up to byte {valid_up_to})")]
    Encoding { valid_up_to: usize },
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("no <answer> block")]
    MissingAnswer,
    #[error("{count} <answer> blocks")]
    AmbiguousAnswer { count: usize },
    #[error("answer must be [[A]] or [[B]], got {content:?}")]
    InvalidAnswer { content: String },
    #[error(transparent)]
    Structure(#[from] StructureError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no <answer> block")]
    Missing,
    #[error("{count} <answer> blocks")]
    Ambiguous { count: usize },
    #[error("<answer> block is never closed")]
    Unclosed,
    #[error("answer must be [[A]] or [[B]], got {content:?}")]
    Invalid { content: String },
}

const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

fn answer_from_content(content: &str) -> Option<Label> {
    match content.trim() {
        "[[A]]" => Some(Label::A),
        "[[B]]" => Some(Label::B),
        _ => None,
    }
}

/// The serialized verdict block shared by rollouts and distillation traces.
pub fn answer_block(label: Label) -> String {
    format!("{ANSWER_OPEN}[[{label}]]{ANSWER_CLOSE}")
}

/// Lenient verdict read: only the `<answer>` block is inspected, the rest of
/// the rollout may be arbitrarily malformed.
pub fn extract_answer(text: &str) -> Result<Label, ExtractError> {
    let count = text.matches(ANSWER_OPEN).count();
    match count {
        0 => return Err(ExtractError::Missing),
        1 => {}
        n => return Err(ExtractError::Ambiguous { count: n }),
    }
    let start = text.find(ANSWER_OPEN).expect("counted above") + ANSWER_OPEN.len();
    let len = text[start..].find(ANSWER_CLOSE).ok_or(ExtractError::Unclosed)?;
    let content = &text[start..start + len];
    answer_from_content(content).ok_or_else(|| ExtractError::Invalid {
        content: content.to_string(),
    })
}

/// Byte range of the single answer block, open tag to end of close tag.
pub fn answer_block_range(text: &str) -> Option<std::ops::Range<usize>> {
    if text.matches(ANSWER_OPEN).count() != 1 {
        return None;
    }
    let start = text.find(ANSWER_OPEN)?;
    let close = text[start..].find(ANSWER_CLOSE)? + start;
    Some(start..close + ANSWER_CLOSE.len())
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub tag: Tag,
    pub open: usize,
    pub inner_start: usize,
    pub inner_end: usize,
    pub children: Vec<Node>,
}

impl Node {
    pub fn inner<'a>(&self, text: &'a str) -> &'a str {
        &text[self.inner_start..self.inner_end]
    }
}

fn tag_at(rest: &str) -> Option<(Tag, bool, usize)> {
    let (closing, body) = match rest.strip_prefix("</") {
        Some(b) => (true, b),
        None => (false, rest.strip_prefix('<')?),
    };
    for tag in Tag::ALL {
        if let Some(after) = body.strip_prefix(tag.name()) {
            if after.starts_with('>') {
                let len = if closing { 3 } else { 2 } + tag.name().len();
                return Some((tag, closing, len));
            }
        }
    }
    None
}

/// Builds the tag tree, enforcing the fixed nesting rules.
pub(crate) fn tokenize(text: &str) -> Result<Vec<Node>, TagError> {
    let mut roots: Vec<Node> = Vec::new();
    let mut stack: Vec<Node> = Vec::new();
    let mut pos = 0;
    while let Some(found) = text[pos..].find('<') {
        let at = pos + found;
        let Some((tag, closing, len)) = tag_at(&text[at..]) else {
            pos = at + 1;
            continue;
        };
        if closing {
            match stack.pop() {
                Some(mut node) if node.tag == tag => {
                    node.inner_end = at;
                    match stack.last_mut() {
                        Some(parent) => parent.children.push(node),
                        None => roots.push(node),
                    }
                }
                _ => return Err(TagError::UnexpectedClose { tag, offset: at }),
            }
        } else {
            let parent = stack.last().map(|n| n.tag);
            if tag.parent() != parent {
                return Err(TagError::IllegalNesting {
                    tag,
                    parent,
                    offset: at,
                });
            }
            stack.push(Node {
                tag,
                open: at,
                inner_start: at + len,
                inner_end: at + len,
                children: Vec::new(),
            });
        }
        pos = at + len;
    }
    if let Some(node) = stack.into_iter().next() {
        return Err(TagError::Unclosed {
            tag: node.tag,
            offset: node.open,
        });
    }
    Ok(roots)
}

fn single(nodes: &[Node], tag: Tag) -> Result<Option<&Node>, StructureError> {
    let mut it = nodes.iter().filter(|n| n.tag == tag);
    let first = it.next();
    if it.next().is_some() {
        return Err(StructureError::Duplicate(tag));
    }
    Ok(first)
}

pub(crate) fn checked_answer(text: &str, roots: &[Node]) -> Result<Label, ParseError> {
    let answers: Vec<&Node> = roots.iter().filter(|n| n.tag == Tag::Answer).collect();
    match answers.as_slice() {
        [] => Err(ParseError::MissingAnswer),
        [one] => answer_from_content(one.inner(text)).ok_or_else(|| ParseError::InvalidAnswer {
            content: one.inner(text).to_string(),
        }),
        many => Err(ParseError::AmbiguousAnswer { count: many.len() }),
    }
}

/// Strict parse of a rollout into a typed [`Judgment`].
pub fn parse_judgment(text: &str) -> Result<Judgment, ParseError> {
    let roots = tokenize(text)?;
    let answer = checked_answer(text, &roots)?;

    let ty = single(&roots, Tag::Type)?.ok_or(StructureError::MissingType)?;
    let task_type = match ty.inner(text).trim() {
        t if t.eq_ignore_ascii_case("chat") => TaskType::Chat,
        t if t.eq_ignore_ascii_case("reasoning") => TaskType::Reasoning,
        other => return Err(StructureError::UnknownTaskType(other.to_string()).into()),
    };
    let rubric = single(&roots, Tag::Rubric)?;
    let solution = single(&roots, Tag::Solution)?;
    match task_type {
        TaskType::Chat if rubric.is_none() => return Err(StructureError::ChatNoRubric.into()),
        TaskType::Chat if solution.is_some() => return Err(StructureError::ChatWithSolution.into()),
        TaskType::Reasoning if solution.is_none() => {
            return Err(StructureError::ReasoningNoSolution.into())
        }
        TaskType::Reasoning if rubric.is_some() => {
            return Err(StructureError::ReasoningWithRubric.into())
        }
        _ => {}
    }
    let eval = single(&roots, Tag::Eval)?.ok_or(StructureError::MissingEval)?;

    let (items, justification) = match rubric {
        Some(node) => {
            let justify = single(&node.children, Tag::Justify)?;
            let mut body = String::new();
            let mut cursor = node.inner_start;
            if let Some(j) = justify {
                body.push_str(&text[cursor..j.open]);
                body.push('\n');
                cursor = j.inner_end + "</justify>".len();
            }
            body.push_str(&text[cursor..node.inner_end]);
            (
                Some(parse_rubric_items(&body)),
                justify.map(|j| j.inner(text).trim().to_string()),
            )
        }
        None => (None, None),
    };

    let spans = eval
        .children
        .iter()
        .filter_map(|c| {
            c.tag.span_kind().map(|kind| EvidenceSpan {
                kind,
                content: c.inner(text).trim().to_string(),
            })
        })
        .collect();

    Ok(Judgment {
        task_type,
        rubric: items,
        justification,
        solution: solution.map(|s| s.inner(text).trim().to_string()),
        evaluation: Evaluation {
            text: eval.inner(text).trim().to_string(),
            spans,
        },
        answer,
        raw: text.to_string(),
    })
}

/// Same as [`parse_judgment`] for input that may not be UTF-8.
pub fn parse_judgment_bytes(bytes: &[u8]) -> Result<Judgment, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::Encoding {
        valid_up_to: e.valid_up_to(),
    })?;
    parse_judgment(text)
}

fn weight_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\(\s*(\d+(?:\.\d+)?)\s*(%?)\s*\)|(\d+(?:\.\d+)?)\s*%").expect("valid regex")
    })
}

fn enumeration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+[.)]?\s+|[-*•·–—]\s*)").expect("valid regex"))
}

const SEPARATORS: &[char] = &['–', '—', '·', '-', ',', ';', '•', '*', '|'];

fn clean_criterion(piece: &str) -> String {
    let trimmed = piece.trim_start_matches(|c: char| c.is_whitespace() || SEPARATORS.contains(&c));
    let trimmed = enumeration_re().replace(trimmed, "");
    let trimmed = trimmed.trim_end_matches(|c: char| c.is_whitespace() || SEPARATORS.contains(&c));
    trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace(" :", ":")
}

/// Splits rubric text into weighted items. A weight is a parenthesised number
/// (`(0.4)`, `(40 %)`) or a percent-suffixed number (`40 %`); one line may
/// hold several items. Unweighted lines start a new item when enumerated and
/// otherwise continue the previous one.
pub fn parse_rubric_items(body: &str) -> Vec<RubricItem> {
    let mut items: Vec<RubricItem> = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let matches: Vec<regex::Captures> = weight_re().captures_iter(line).collect();
        if matches.is_empty() {
            let enumerated = enumeration_re().is_match(line.trim_start());
            let text = clean_criterion(line);
            match items.last_mut() {
                Some(last) if !enumerated => {
                    if !text.is_empty() {
                        if !last.criterion.is_empty() {
                            last.criterion.push(' ');
                        }
                        last.criterion.push_str(&text);
                    }
                }
                _ if enumerated => items.push(RubricItem {
                    criterion: text,
                    weight: None,
                }),
                _ => {}
            }
            continue;
        }
        let mut piece_start = 0;
        for (k, caps) in matches.iter().enumerate() {
            let m = caps.get(0).expect("group 0");
            let piece_end = if k + 1 == matches.len() { line.len() } else { m.end() };
            let piece = format!(
                "{}{}",
                &line[piece_start..m.start()],
                &line[m.end()..piece_end]
            );
            let weight = if let Some(num) = caps.get(1) {
                let v: f64 = num.as_str().parse().unwrap_or(f64::NAN);
                if caps.get(2).is_some_and(|p| !p.as_str().is_empty()) {
                    v / 100.0
                } else {
                    v
                }
            } else {
                let v: f64 = caps[3].parse().unwrap_or(f64::NAN);
                v / 100.0
            };
            items.push(RubricItem {
                criterion: clean_criterion(&piece),
                weight: Some(weight),
            });
            piece_start = piece_end;
        }
    }
    items
}
