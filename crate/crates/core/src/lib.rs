//! Toolkit for reasoning reward models that judge preference pairs.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`data`]: preference records, loading, cleaning and subset draws
//! - [`cor`]: the chain-of-rubrics prompt templates and the judgment parser
//! - [`reward`]: verifiable rewards computed from rollout text
//! - [`policy`] and [`grpo`]: a toy categorical policy and group-relative
//!   policy optimization with analytic gradients
//! - [`distill`]: distillation traces, the NLL objective and the two-stage
//!   oracle workflow
//! - [`theory`]: exact-enumeration checks of the SFT-vs-RL filtering gap
//! - [`eval`]: pairwise and best-of-N evaluation with category aggregation
//! - [`synthetic`], [`config`] and [`cli`]: the training task and the
//!   command-line driver

pub mod cli;
pub mod config;
pub mod cor;
pub mod data;
pub mod distill;
pub mod eval;
pub mod grpo;
pub mod jsonl;
pub mod policy;
pub mod reward;
pub mod synthetic;
pub mod theory;

pub use cor::{extract_answer, parse_judgment, render_prompt, Judgment, Order, PromptTemplate};
pub use data::{Dataset, Label, PreferenceSample};
pub use grpo::{GrpoConfig, RolloutGroup};
pub use policy::{TokenSequence, ToyPolicy};
pub use reward::{RewardKind, RewardValue};
