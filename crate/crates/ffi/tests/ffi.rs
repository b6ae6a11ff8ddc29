use std::ffi::{CStr, CString};
use std::ptr;

use rubric_rl::grpo::{self, GrpoConfig, RolloutGroup};
use rubric_rl::policy::{TokenSequence, ToyPolicy};
use rubric_rl_ffi::*;

const CHAT_A: &str = "<type>Chat</type><rubric>tone (40%)<justify>j</justify>\nfacts (60%)</rubric><eval>e</eval><answer>[[A]]</answer>";

fn last_error() -> String {
    let p = rrl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn advantages_match_core() {
    let r = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0];
    let mut out = [0.0; 7];
    let st = unsafe { rrl_group_advantages(r.as_ptr(), r.len(), out.as_mut_ptr()) };
    assert_eq!(st, RrlStatus::Ok);
    assert_eq!(out.to_vec(), grpo::group_advantages(&r).unwrap());
}

#[test]
fn null_and_bad_arguments_set_error() {
    let mut out = [0.0; 1];
    let st = unsafe { rrl_group_advantages(ptr::null(), 3, out.as_mut_ptr()) };
    assert_eq!(st, RrlStatus::NullPointer);
    assert!(last_error().contains("rewards"));

    let r = [1.0];
    let st = unsafe { rrl_group_advantages(r.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, RrlStatus::InvalidArgument);
    assert!(last_error().contains("at least 2"));
}

#[test]
fn kl_estimators() {
    let mut k = f64::NAN;
    assert_eq!(unsafe { rrl_kl_penalty(-1.0, -1.0, RrlKlEstimator::K3, &mut k) }, RrlStatus::Ok);
    assert_eq!(k, 0.0);
    assert_eq!(unsafe { rrl_kl_penalty(-1.0, -2.0, RrlKlEstimator::K1, &mut k) }, RrlStatus::Ok);
    assert!((k - 1.0).abs() < 1e-15);
}

#[test]
fn answers_and_rewards() {
    let text = CString::new(CHAT_A).unwrap();
    let mut label = RrlLabel::B;
    assert_eq!(unsafe { rrl_extract_answer(text.as_ptr(), &mut label) }, RrlStatus::Ok);
    assert_eq!(label, RrlLabel::A);

    let missing = CString::new("no verdict").unwrap();
    assert_eq!(unsafe { rrl_extract_answer(missing.as_ptr(), &mut label) }, RrlStatus::Parse);

    let kind = CString::new("rm-r1").unwrap();
    let mut r = 0.0;
    assert_eq!(unsafe { rrl_reward(text.as_ptr(), RrlLabel::A, kind.as_ptr(), &mut r) }, RrlStatus::Ok);
    assert_eq!(r, 1.0);
    assert_eq!(unsafe { rrl_reward(text.as_ptr(), RrlLabel::B, kind.as_ptr(), &mut r) }, RrlStatus::Ok);
    assert_eq!(r, -1.0);

    let bad = CString::new("ppo").unwrap();
    assert_eq!(
        unsafe { rrl_reward(text.as_ptr(), RrlLabel::A, bad.as_ptr(), &mut r) },
        RrlStatus::InvalidArgument
    );
}

#[test]
fn policy_handle_round_trip() {
    let logits = [0.0, 1.0, 2.0, -1.0, 0.5, 0.25];
    let mut p: *mut RrlPolicy = ptr::null_mut();
    assert_eq!(unsafe { rrl_policy_new(2, 3, logits.as_ptr(), &mut p) }, RrlStatus::Ok);
    let core = ToyPolicy::new(2, 3, logits.to_vec()).unwrap();

    let mut lp = 0.0;
    assert_eq!(unsafe { rrl_policy_log_prob(p, 1, 2, &mut lp) }, RrlStatus::Ok);
    assert_eq!(lp, core.log_prob(1, 2));
    assert_eq!(unsafe { rrl_policy_log_prob(p, 2, 0, &mut lp) }, RrlStatus::InvalidArgument);

    let mut text: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(unsafe { rrl_policy_to_checkpoint(p, &mut text) }, RrlStatus::Ok);
    let mut q: *mut RrlPolicy = ptr::null_mut();
    assert_eq!(unsafe { rrl_policy_from_checkpoint(text, &mut q) }, RrlStatus::Ok);
    assert_eq!(unsafe { rrl_policy_log_prob(q, 0, 1, &mut lp) }, RrlStatus::Ok);
    assert_eq!(lp, core.log_prob(0, 1));
    unsafe {
        rrl_string_free(text);
        rrl_policy_free(p);
        rrl_policy_free(q);
        rrl_policy_free(ptr::null_mut());
    }
}

#[test]
fn grpo_through_flat_view_matches_core() {
    let logits = [0.3, -0.2, 0.1, 0.0, 0.4, -0.5, 0.2, 0.1];
    let core = ToyPolicy::new(2, 4, logits.to_vec()).unwrap();
    let reference = ToyPolicy::uniform(2, 4).unwrap();
    let seqs = vec![
        TokenSequence::new(vec![0, 2], vec![0, 1]).unwrap(),
        TokenSequence::new(vec![3], vec![0]).unwrap(),
        TokenSequence::new(vec![1, 1, 2], vec![0, 1, 1]).unwrap(),
    ];
    let rewards = vec![1.0, -1.0, 0.5];
    let group = RolloutGroup::from_policies("g", seqs.clone(), rewards.clone(), &reference, &reference).unwrap();
    let cfg = GrpoConfig {
        group_size: 3,
        ..GrpoConfig::default()
    };

    let lengths: Vec<usize> = seqs.iter().map(TokenSequence::len).collect();
    let tokens: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|(_, t)| t)).collect();
    let contexts: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|(c, _)| c)).collect();
    let old: Vec<f64> = group.old_logprobs.concat();
    let refs: Vec<f64> = group.ref_logprobs.concat();
    let view = RrlGroupView {
        group_size: 3,
        lengths: lengths.as_ptr(),
        tokens: tokens.as_ptr(),
        contexts: contexts.as_ptr(),
        rewards: rewards.as_ptr(),
        old_logprobs: old.as_ptr(),
        ref_logprobs: refs.as_ptr(),
    };
    let mut c = RrlGrpoConfig {
        clip_epsilon: 0.0,
        kl_coefficient: 0.0,
        group_size: 0,
        kl_estimator: RrlKlEstimator::K1,
    };
    assert_eq!(unsafe { rrl_grpo_config_default(&mut c) }, RrlStatus::Ok);
    assert_eq!((c.clip_epsilon, c.kl_coefficient, c.group_size), (0.2, 1e-3, 7));
    c.group_size = 3;

    let mut p: *mut RrlPolicy = ptr::null_mut();
    assert_eq!(unsafe { rrl_policy_new(2, 4, logits.as_ptr(), &mut p) }, RrlStatus::Ok);
    let mut obj = f64::NAN;
    assert_eq!(unsafe { rrl_grpo_objective(p, &view, &c, &mut obj) }, RrlStatus::Ok);
    assert_eq!(obj, grpo::grpo_objective(&group, &core, &cfg).unwrap());

    let mut grad = [0.0; 8];
    assert_eq!(unsafe { rrl_grpo_gradient(p, &view, &c, grad.as_mut_ptr(), 8) }, RrlStatus::Ok);
    assert_eq!(grad.to_vec(), grpo::grpo_gradient(&group, &core, &cfg).unwrap().data);
    assert_eq!(
        unsafe { rrl_grpo_gradient(p, &view, &c, grad.as_mut_ptr(), 7) },
        RrlStatus::InvalidArgument
    );
    unsafe { rrl_policy_free(p) };
}

#[test]
fn judgment_accessors() {
    let text = CString::new(CHAT_A).unwrap();
    let mut j: *mut RrlJudgment = ptr::null_mut();
    assert_eq!(unsafe { rrl_judgment_parse(text.as_ptr(), &mut j) }, RrlStatus::Ok);

    let mut ty = RrlTaskType::Reasoning;
    let mut label = RrlLabel::B;
    let mut n = 0;
    unsafe {
        assert_eq!(rrl_judgment_task_type(j, &mut ty), RrlStatus::Ok);
        assert_eq!(rrl_judgment_answer(j, &mut label), RrlStatus::Ok);
        assert_eq!(rrl_judgment_rubric_len(j, &mut n), RrlStatus::Ok);
    }
    assert_eq!((ty, label, n), (RrlTaskType::Chat, RrlLabel::A, 2));

    let (mut w, mut present) = (0.0, false);
    assert_eq!(unsafe { rrl_judgment_rubric_weight(j, 0, &mut w, &mut present) }, RrlStatus::Ok);
    assert!(present);
    assert!((w - 0.4).abs() < 1e-12);
    assert_eq!(
        unsafe { rrl_judgment_rubric_weight(j, 5, &mut w, &mut present) },
        RrlStatus::InvalidArgument
    );

    let mut out: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(unsafe { rrl_judgment_to_text(j, &mut out) }, RrlStatus::Ok);
    let mut again: *mut RrlJudgment = ptr::null_mut();
    assert_eq!(unsafe { rrl_judgment_parse(out, &mut again) }, RrlStatus::Ok);
    unsafe { rrl_string_free(out) };

    assert_eq!(unsafe { rrl_judgment_to_json(again, &mut out) }, RrlStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert_eq!(json["answer"], "A");
    unsafe {
        rrl_string_free(out);
        rrl_judgment_free(j);
        rrl_judgment_free(again);
    }

    let broken = CString::new("<type>Chat</type><answer>[[A]]").unwrap();
    assert_eq!(unsafe { rrl_judgment_parse(broken.as_ptr(), &mut j) }, RrlStatus::Parse);
    assert!(!last_error().is_empty());
}

#[test]
fn theory_entry_points() {
    let mu = [0.25; 4];
    let rob = [true, true, false, false];
    let triv = [true, false, true, false];
    let reward = [0.9, 0.8, 0.1, 0.7];
    let mut g = std::mem::MaybeUninit::<RrlGapResult>::uninit();
    let st = unsafe {
        rrl_verify_filtering_gap(4, mu.as_ptr(), rob.as_ptr(), triv.as_ptr(), reward.as_ptr(), 0.5, g.as_mut_ptr())
    };
    assert_eq!(st, RrlStatus::Ok);
    let g = unsafe { g.assume_init() };
    assert!((g.alpha - 0.75).abs() < 1e-15);
    assert!(g.eps_train_defined);
    assert!((g.eps_train - 1.0 / 3.0).abs() < 1e-15);
    assert!((g.delta - 0.5).abs() < 1e-15);
    assert_eq!(g.gap_holds, 1);

    let (mut miss, mut hit) = (0.0, 0.0);
    assert_eq!(
        unsafe { rrl_sampling_amplification(0.25, 0.5, 10, 3, &mut miss, &mut hit) },
        RrlStatus::Ok
    );
    assert!((miss - 0.75f64.powi(10)).abs() < 1e-15);
    assert!((hit - 0.875).abs() < 1e-15);
    assert_eq!(
        unsafe { rrl_sampling_amplification(1.5, 0.5, 10, 3, &mut miss, &mut hit) },
        RrlStatus::InvalidArgument
    );
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rubric_rl.h")).unwrap();
    for name in [
        "rrl_last_error",
        "rrl_string_free",
        "rrl_group_advantages",
        "rrl_kl_penalty",
        "rrl_extract_answer",
        "rrl_reward",
        "rrl_policy_new",
        "rrl_policy_free",
        "rrl_policy_log_prob",
        "rrl_policy_to_checkpoint",
        "rrl_policy_from_checkpoint",
        "rrl_grpo_config_default",
        "rrl_grpo_objective",
        "rrl_grpo_gradient",
        "rrl_judgment_parse",
        "rrl_judgment_free",
        "rrl_judgment_answer",
        "rrl_judgment_task_type",
        "rrl_judgment_rubric_len",
        "rrl_judgment_rubric_weight",
        "rrl_judgment_to_text",
        "rrl_judgment_to_json",
        "rrl_verify_filtering_gap",
        "rrl_sampling_amplification",
        "RRL_STATUS_PANIC",
        "typedef struct RrlPolicy RrlPolicy;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
