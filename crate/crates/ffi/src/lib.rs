//! C ABI over `rubric-rl`.
//!
//! Every fallible call returns an [`RrlStatus`]; on failure the message is
//! available from [`rrl_last_error`] on the same thread. Policies and
//! judgments cross the boundary as opaque handles freed by their `_free`
//! function. Strings returned to the caller are freed with [`rrl_string_free`].
//! Panics never unwind into the caller; they surface as `RRL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rubric_rl::cor::{extract_answer, parse_judgment, Judgment, TaskType};
use rubric_rl::data::Label;
use rubric_rl::grpo::{self, GrpoConfig, KlEstimator, RolloutGroup};
use rubric_rl::policy::{TokenSequence, ToyPolicy};
use rubric_rl::reward::{reward, RewardKind};
use rubric_rl::theory::{self, TheoryInstance};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numeric = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrlLabel {
    A = 0,
    B = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrlTaskType {
    Chat = 0,
    Reasoning = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrlKlEstimator {
    K1 = 0,
    K3 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrlGrpoConfig {
    pub clip_epsilon: f64,
    pub kl_coefficient: f64,
    pub group_size: usize,
    pub kl_estimator: RrlKlEstimator,
}

/// A rollout group as flat arrays. Sequence `i` has `lengths[i]` tokens;
/// `tokens`, `contexts`, `old_logprobs` and `ref_logprobs` hold all
/// sequences back to back.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RrlGroupView {
    pub group_size: usize,
    pub lengths: *const usize,
    pub tokens: *const usize,
    pub contexts: *const usize,
    pub rewards: *const f64,
    pub old_logprobs: *const f64,
    pub ref_logprobs: *const f64,
}

/// Filtering-gap quantities. Conditional probabilities whose event has
/// measure zero are reported as NaN with their `_defined` flag cleared.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrlGapResult {
    pub alpha: f64,
    pub eps_train: f64,
    pub eps_train_defined: bool,
    pub delta: f64,
    pub disagreement_given_l: f64,
    pub disagreement_given_l_defined: bool,
    pub assumption_train_defined: bool,
    pub assumption_nontrivial_filter: bool,
    pub assumption_low_reward_disagrees_more: bool,
    /// 1 when `eps_train < delta`, 0 when not, -1 when the assumptions fail.
    pub gap_holds: i32,
}

/// Opaque softmax policy.
pub struct RrlPolicy {
    inner: ToyPolicy,
}

/// Opaque parsed judgment.
pub struct RrlJudgment {
    inner: Judgment,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RrlStatus, String);

type FfiResult = Result<(), Failure>;

fn fail(status: RrlStatus, msg: impl std::fmt::Display) -> Failure {
    Failure(status, msg.to_string())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> RrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RrlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            RrlStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(RrlStatus::NullPointer, format!("{name} is null")))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(RrlStatus::NullPointer, format!("{name} is null")))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RrlStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn in_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(RrlStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(RrlStatus::Parse, format!("{name} is not UTF-8: {e}")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| fail(RrlStatus::InvalidArgument, format!("string holds a nul byte: {e}")))
}

fn label_out(l: Label) -> RrlLabel {
    match l {
        Label::A => RrlLabel::A,
        Label::B => RrlLabel::B,
    }
}

fn label_in(l: RrlLabel) -> Label {
    match l {
        RrlLabel::A => Label::A,
        RrlLabel::B => Label::B,
    }
}

fn grpo_status(e: grpo::GrpoError) -> Failure {
    match e {
        grpo::GrpoError::Numeric(m) => fail(RrlStatus::Numeric, m),
        other => fail(RrlStatus::InvalidArgument, other),
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Standardized advantages of `n >= 2` rewards, written to `out[0..n]`.
///
/// # Safety
/// `rewards` and `out` must point to `n` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rrl_group_advantages(rewards: *const f64, n: usize, out: *mut f64) -> RrlStatus {
    guard(|| {
        let r = in_slice(rewards, n, "rewards")?;
        if out.is_null() {
            return Err(fail(RrlStatus::NullPointer, "out is null"));
        }
        let adv = grpo::group_advantages(r).map_err(grpo_status)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rrl_kl_penalty(
    cur_logprob: f64,
    ref_logprob: f64,
    estimator: RrlKlEstimator,
    out: *mut f64,
) -> RrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let est = match estimator {
            RrlKlEstimator::K1 => KlEstimator::K1,
            RrlKlEstimator::K3 => KlEstimator::K3,
        };
        *out = grpo::kl_penalty(cur_logprob, ref_logprob, est).map_err(grpo_status)?;
        Ok(())
    })
}

/// Reads the verdict of a rollout. Missing, repeated or malformed answer
/// blocks give `RRL_STATUS_PARSE`.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_extract_answer(text: *const c_char, out: *mut RrlLabel) -> RrlStatus {
    guard(|| {
        let text = in_str(text, "text")?;
        let out = out_ref(out, "out")?;
        *out = label_out(extract_answer(text).map_err(|e| fail(RrlStatus::Parse, e))?);
        Ok(())
    })
}

/// Reward of a rollout; `kind` is `rm-r1`, `cold-start` or `cold-start:<format>`.
///
/// # Safety
/// `rollout` and `kind` must be nul-terminated strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_reward(
    rollout: *const c_char,
    gold: RrlLabel,
    kind: *const c_char,
    out: *mut f64,
) -> RrlStatus {
    guard(|| {
        let rollout = in_str(rollout, "rollout")?;
        let kind: RewardKind = in_str(kind, "kind")?
            .parse()
            .map_err(|e: String| fail(RrlStatus::InvalidArgument, e))?;
        *out_ref(out, "out")? = reward(rollout, label_in(gold), kind).value;
        Ok(())
    })
}

/// # Safety
/// `logits` must point to `contexts * vocab` doubles in row-major order;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_policy_new(
    contexts: usize,
    vocab: usize,
    logits: *const f64,
    out: *mut *mut RrlPolicy,
) -> RrlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let n = contexts
            .checked_mul(vocab)
            .ok_or_else(|| fail(RrlStatus::InvalidArgument, "shape overflows"))?;
        let data = in_slice(logits, n, "logits")?.to_vec();
        let inner = ToyPolicy::new(contexts, vocab, data).map_err(|e| fail(RrlStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(RrlPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `text` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_policy_from_checkpoint(text: *const c_char, out: *mut *mut RrlPolicy) -> RrlStatus {
    guard(|| {
        let text = in_str(text, "text")?;
        let out = out_ref(out, "out")?;
        let inner = ToyPolicy::from_checkpoint(text).map_err(|e| fail(RrlStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(RrlPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrl_policy_free(policy: *mut RrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_policy_log_prob(
    policy: *const RrlPolicy,
    context: usize,
    token: usize,
    out: *mut f64,
) -> RrlStatus {
    guard(|| {
        let p = &in_ref(policy, "policy")?.inner;
        if context >= p.contexts() || token >= p.vocab() {
            return Err(fail(
                RrlStatus::InvalidArgument,
                format!("({context}, {token}) outside {}x{}", p.contexts(), p.vocab()),
            ));
        }
        *out_ref(out, "out")? = p.log_prob(context, token);
        Ok(())
    })
}

/// Text checkpoint; free the result with [`rrl_string_free`].
///
/// # Safety
/// `policy` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_policy_to_checkpoint(policy: *const RrlPolicy, out: *mut *mut c_char) -> RrlStatus {
    guard(|| {
        let p = &in_ref(policy, "policy")?.inner;
        *out_ref(out, "out")? = to_c_string(p.to_checkpoint())?;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_grpo_config_default(out: *mut RrlGrpoConfig) -> RrlStatus {
    guard(|| {
        let d = GrpoConfig::default();
        *out_ref(out, "out")? = RrlGrpoConfig {
            clip_epsilon: d.clip_epsilon,
            kl_coefficient: d.kl_coefficient,
            group_size: d.group_size,
            kl_estimator: RrlKlEstimator::K3,
        };
        Ok(())
    })
}

fn config_in(c: &RrlGrpoConfig) -> GrpoConfig {
    GrpoConfig {
        clip_epsilon: c.clip_epsilon,
        kl_coefficient: c.kl_coefficient,
        group_size: c.group_size,
        kl_estimator: match c.kl_estimator {
            RrlKlEstimator::K1 => KlEstimator::K1,
            RrlKlEstimator::K3 => KlEstimator::K3,
        },
    }
}

unsafe fn group_in(v: &RrlGroupView) -> Result<RolloutGroup, Failure> {
    let g = v.group_size;
    let lengths = in_slice(v.lengths, g, "lengths")?;
    let total = lengths
        .iter()
        .try_fold(0usize, |acc, &l| acc.checked_add(l))
        .ok_or_else(|| fail(RrlStatus::InvalidArgument, "lengths overflow"))?;
    let tokens = in_slice(v.tokens, total, "tokens")?;
    let contexts = in_slice(v.contexts, total, "contexts")?;
    let rewards = in_slice(v.rewards, g, "rewards")?;
    let old = in_slice(v.old_logprobs, total, "old_logprobs")?;
    let reference = in_slice(v.ref_logprobs, total, "ref_logprobs")?;
    let mut sequences = Vec::with_capacity(g);
    let mut old_logprobs = Vec::with_capacity(g);
    let mut ref_logprobs = Vec::with_capacity(g);
    let mut at = 0;
    for &len in lengths {
        let span = at..at + len;
        sequences.push(
            TokenSequence::new(tokens[span.clone()].to_vec(), contexts[span.clone()].to_vec())
                .map_err(|e| fail(RrlStatus::InvalidArgument, e))?,
        );
        old_logprobs.push(old[span.clone()].to_vec());
        ref_logprobs.push(reference[span].to_vec());
        at += len;
    }
    Ok(RolloutGroup {
        prompt_id: "ffi".into(),
        sequences,
        rewards: rewards.to_vec(),
        old_logprobs,
        ref_logprobs,
    })
}

/// # Safety
/// All pointers must be valid; the arrays in `group` must match its lengths.
#[no_mangle]
pub unsafe extern "C" fn rrl_grpo_objective(
    policy: *const RrlPolicy,
    group: *const RrlGroupView,
    config: *const RrlGrpoConfig,
    out: *mut f64,
) -> RrlStatus {
    guard(|| {
        let p = &in_ref(policy, "policy")?.inner;
        let g = group_in(in_ref(group, "group")?)?;
        let cfg = config_in(in_ref(config, "config")?);
        *out_ref(out, "out")? = grpo::grpo_objective(&g, p, &cfg).map_err(grpo_status)?;
        Ok(())
    })
}

/// Writes the `contexts * vocab` gradient in row-major order to `out`.
///
/// # Safety
/// As [`rrl_grpo_objective`]; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rrl_grpo_gradient(
    policy: *const RrlPolicy,
    group: *const RrlGroupView,
    config: *const RrlGrpoConfig,
    out: *mut f64,
    out_len: usize,
) -> RrlStatus {
    guard(|| {
        let p = &in_ref(policy, "policy")?.inner;
        let g = group_in(in_ref(group, "group")?)?;
        let cfg = config_in(in_ref(config, "config")?);
        let grad = grpo::grpo_gradient(&g, p, &cfg).map_err(grpo_status)?;
        if out.is_null() {
            return Err(fail(RrlStatus::NullPointer, "out is null"));
        }
        if out_len != grad.data.len() {
            return Err(fail(
                RrlStatus::InvalidArgument,
                format!("out holds {out_len} values, gradient has {}", grad.data.len()),
            ));
        }
        slice::from_raw_parts_mut(out, out_len).copy_from_slice(&grad.data);
        Ok(())
    })
}

/// Strict chain-of-rubrics parse. Failures give `RRL_STATUS_PARSE`.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_parse(text: *const c_char, out: *mut *mut RrlJudgment) -> RrlStatus {
    guard(|| {
        let text = in_str(text, "text")?;
        let out = out_ref(out, "out")?;
        let inner = parse_judgment(text).map_err(|e| fail(RrlStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(RrlJudgment { inner }));
        Ok(())
    })
}

/// # Safety
/// `judgment` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_free(judgment: *mut RrlJudgment) {
    if !judgment.is_null() {
        drop(Box::from_raw(judgment));
    }
}

/// # Safety
/// `judgment` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_answer(judgment: *const RrlJudgment, out: *mut RrlLabel) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        *out_ref(out, "out")? = label_out(j.answer);
        Ok(())
    })
}

/// # Safety
/// `judgment` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_task_type(judgment: *const RrlJudgment, out: *mut RrlTaskType) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        *out_ref(out, "out")? = match j.task_type {
            TaskType::Chat => RrlTaskType::Chat,
            TaskType::Reasoning => RrlTaskType::Reasoning,
        };
        Ok(())
    })
}

/// Number of rubric items; 0 for reasoning judgments.
///
/// # Safety
/// `judgment` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_rubric_len(judgment: *const RrlJudgment, out: *mut usize) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        *out_ref(out, "out")? = j.rubric.as_ref().map_or(0, Vec::len);
        Ok(())
    })
}

/// Weight of rubric item `index`; NaN with `present` false when the item has none.
///
/// # Safety
/// `judgment` must be a live handle; `weight` and `present` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_rubric_weight(
    judgment: *const RrlJudgment,
    index: usize,
    weight: *mut f64,
    present: *mut bool,
) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        let item = j
            .rubric
            .as_ref()
            .and_then(|r| r.get(index))
            .ok_or_else(|| fail(RrlStatus::InvalidArgument, format!("no rubric item {index}")))?;
        *out_ref(weight, "weight")? = item.weight.unwrap_or(f64::NAN);
        *out_ref(present, "present")? = item.weight.is_some();
        Ok(())
    })
}

/// Canonical rollout text; free the result with [`rrl_string_free`].
///
/// # Safety
/// `judgment` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_to_text(judgment: *const RrlJudgment, out: *mut *mut c_char) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        *out_ref(out, "out")? = to_c_string(j.to_text())?;
        Ok(())
    })
}

/// The judgment as a JSON object; free the result with [`rrl_string_free`].
///
/// # Safety
/// `judgment` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_judgment_to_json(judgment: *const RrlJudgment, out: *mut *mut c_char) -> RrlStatus {
    guard(|| {
        let j = &in_ref(judgment, "judgment")?.inner;
        let text = serde_json::to_string(j).map_err(|e| fail(RrlStatus::InvalidArgument, e))?;
        *out_ref(out, "out")? = to_c_string(text)?;
        Ok(())
    })
}

/// Filtering-gap check on an `n`-point instance.
///
/// # Safety
/// `mu`, `phi_rob`, `phi_triv` and `reward` must each hold `n` values; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rrl_verify_filtering_gap(
    n: usize,
    mu: *const f64,
    phi_rob: *const bool,
    phi_triv: *const bool,
    reward: *const f64,
    tau: f64,
    out: *mut RrlGapResult,
) -> RrlStatus {
    guard(|| {
        let inst = TheoryInstance::new(
            in_slice(mu, n, "mu")?.to_vec(),
            in_slice(phi_rob, n, "phi_rob")?.to_vec(),
            in_slice(phi_triv, n, "phi_triv")?.to_vec(),
            in_slice(reward, n, "reward")?.to_vec(),
            tau,
        )
        .map_err(|e| fail(RrlStatus::InvalidArgument, e))?;
        let g = theory::verify_filtering_gap(&inst);
        *out_ref(out, "out")? = RrlGapResult {
            alpha: g.alpha,
            eps_train: g.eps_train.unwrap_or(f64::NAN),
            eps_train_defined: g.eps_train.is_some(),
            delta: g.delta,
            disagreement_given_l: g.disagreement_given_l.unwrap_or(f64::NAN),
            disagreement_given_l_defined: g.disagreement_given_l.is_some(),
            assumption_train_defined: g.assumptions.train_defined,
            assumption_nontrivial_filter: g.assumptions.nontrivial_filter,
            assumption_low_reward_disagrees_more: g.assumptions.low_reward_disagrees_more,
            gap_holds: g.gap_holds.map_or(-1, i32::from),
        };
        Ok(())
    })
}

/// `miss = (1 - eps)^n_sft`, `hit = 1 - (1 - delta)^m_rl`.
///
/// # Safety
/// `miss` and `hit` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rrl_sampling_amplification(
    eps: f64,
    delta: f64,
    n_sft: u64,
    m_rl: u64,
    miss: *mut f64,
    hit: *mut f64,
) -> RrlStatus {
    guard(|| {
        let (m, h) = theory::sampling_amplification(eps, delta, n_sft, m_rl)
            .map_err(|e| fail(RrlStatus::InvalidArgument, e))?;
        *out_ref(miss, "miss")? = m;
        *out_ref(hit, "hit")? = h;
        Ok(())
    })
}
