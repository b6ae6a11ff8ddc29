//! Chain-of-rubrics grammar: prompt templates, the strict judgment parser,
//! the lenient verdict extractor, skeleton checks and lint.
//!
//! Legal nesting is fixed: `<justify>` only inside `<rubric>`, the four
//! evidence tags only inside `<eval>`, everything else at top level.
//! Unrecognised `<...>` text is treated as literal.

mod format;
mod lint;
mod parse;
mod template;

pub use format::{format_matches, FormatSpec};
pub use lint::{lint_judgment, LintFinding, WEIGHT_SUM_TOLERANCE};
pub use parse::{
    answer_block, answer_block_range, extract_answer, parse_judgment, parse_judgment_bytes,
    parse_rubric_items, EvidenceSpan, Evaluation, ExtractError, Judgment, ParseError, RubricItem,
    SpanKind, StructureError, Tag, TagError, TaskType,
};
pub use template::{
    render_prompt, Order, PromptTemplate, TemplateError, TemplateFamily, CHATBOT_A_HEADING,
    CHATBOT_B_HEADING, VERDICT_INSTRUCTION,
};
