use proptest::prelude::*;
use rubric_rl::cor::{extract_answer, render_prompt, Order, PromptTemplate, TemplateFamily};
use rubric_rl::data::{clean_dataset, draw_distill_subset, parse_rules, Dataset, Domain, PreferenceSample};
use rubric_rl::distill::{build_trace, nll_loss};
use rubric_rl::eval::{aggregate_scores, presentation_order, Score, Scheme};
use rubric_rl::grpo::{grpo_objective, group_advantages, kl_penalty, unclipped_objective, GrpoConfig, KlEstimator, RolloutGroup};
use rubric_rl::policy::{TokenSequence, ToyPolicy};
use rubric_rl::reward::{reward, FormatSpec, RewardKind};
use rubric_rl::theory::{check_instance, random_instance, verify_filtering_gap};
use rubric_rl::Label;

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::A), Just(Label::B)]
}

fn rewards(g: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, g)
}

prop_compose! {
    fn policy_and_group(max_vocab: usize)(
        contexts in 1usize..=3,
        vocab in 2usize..=max_vocab,
        g in 2usize..=7,
    )(
        logits in proptest::collection::vec(-3.0f64..3.0, contexts * vocab),
        old_shift in proptest::collection::vec(-0.5f64..0.5, contexts * vocab),
        ref_logits in proptest::collection::vec(-3.0f64..3.0, contexts * vocab),
        seqs in proptest::collection::vec(
            proptest::collection::vec((0..contexts, 0..vocab), 1..=6), g),
        rewards in rewards(g),
        contexts in Just(contexts),
        vocab in Just(vocab),
    ) -> (ToyPolicy, ToyPolicy, RolloutGroup) {
        let current = ToyPolicy::new(contexts, vocab, logits.clone()).unwrap();
        let old_logits: Vec<f64> = logits.iter().zip(&old_shift).map(|(a, b)| a + b).collect();
        let old = ToyPolicy::new(contexts, vocab, old_logits).unwrap();
        let reference = ToyPolicy::new(contexts, vocab, ref_logits).unwrap();
        let seqs = seqs
            .into_iter()
            .map(|s| {
                let (c, t): (Vec<usize>, Vec<usize>) = s.into_iter().unzip();
                TokenSequence::new(t, c).unwrap()
            })
            .collect();
        let group = RolloutGroup::from_policies("p", seqs, rewards, &old, &reference).unwrap();
        (current, old, group)
    }
}

fn sample(id: String, source: String, good: String, bad: String, label: Label) -> PreferenceSample {
    let (a, b) = match label {
        Label::A => (good, bad),
        Label::B => (bad, good),
    };
    PreferenceSample {
        id,
        prompt: "q".into(),
        response_a: a,
        response_b: b,
        label,
        source,
        domain: Domain::Chat,
    }
}

prop_compose! {
    fn dataset()(rows in proptest::collection::vec(
        (prop_oneof![Just("hs"), Just("sky"), Just("magpie")], "g[a-z ]{0,12}", "(Sure! )?b[a-z ]{0,12}", label()),
        1..30,
    )) -> Dataset {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (src, good, bad, l))| sample(format!("s{i}"), src.to_string(), good, bad, l))
            .collect();
        Dataset::new(samples).unwrap()
    }
}

proptest! {
    #[test]
    fn advantages_are_standardized(r in rewards(7)) {
        let a = group_advantages(&r).unwrap();
        let spread = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread == 0.0 {
            prop_assert!(a.iter().all(|&x| x == 0.0));
        } else if spread > 1e-6 {
            let mean = a.iter().sum::<f64>() / 7.0;
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 7.0;
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn advantages_ignore_affine_reward_changes(r in rewards(5), shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        prop_assume!(r.iter().any(|&v| (v - r[0]).abs() > 1e-3));
        let a = group_advantages(&r).unwrap();
        let moved: Vec<f64> = r.iter().map(|v| scale * v + shift).collect();
        let b = group_advantages(&moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn k3_is_non_negative_and_zero_at_equality(cur in -20.0f64..0.0, reference in -20.0f64..0.0) {
        let k = kl_penalty(cur, reference, KlEstimator::K3).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert_eq!(kl_penalty(cur, cur, KlEstimator::K3).unwrap(), 0.0);
        prop_assert_eq!(kl_penalty(cur, cur, KlEstimator::K1).unwrap(), 0.0);
    }

    #[test]
    fn clipped_objective_never_exceeds_unclipped((current, _old, group) in policy_and_group(6)) {
        let cfg = GrpoConfig::default();
        let clipped = grpo_objective(&group, &current, &cfg).unwrap();
        let plain = unclipped_objective(&group, &current, &cfg).unwrap();
        prop_assert!(clipped <= plain + 1e-12);
    }

    #[test]
    fn ratio_one_objective_is_zero((_current, old, group) in policy_and_group(8)) {
        let cfg = GrpoConfig { kl_coefficient: 0.0, ..GrpoConfig::default() };
        prop_assert_eq!(grpo_objective(&group, &old, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn constant_rewards_leave_only_the_kl_term((current, _old, mut group) in policy_and_group(5), v in -3.0f64..3.0) {
        for r in &mut group.rewards {
            *r = v;
        }
        let cfg = GrpoConfig { kl_coefficient: 0.0, ..GrpoConfig::default() };
        prop_assert_eq!(grpo_objective(&group, &current, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn rm_r1_reward_is_plus_or_minus_one(body in "[a-z<>/\\[\\] ]{0,40}", l in label(), gold in label(), answered in any::<bool>()) {
        let text = if answered { format!("{body}<answer>[[{l}]]</answer>") } else { body };
        let r = reward(&text, gold, RewardKind::RmR1).value;
        prop_assert!(r == 1.0 || r == -1.0);
        prop_assert_eq!(r == 1.0, extract_answer(&text).ok() == Some(gold));
    }

    #[test]
    fn cold_start_reward_counts_indicators(body in "[a-z<>/\\[\\] ]{0,40}", gold in label(), spec in prop_oneof![
        Just(FormatSpec::NoRubrics), Just(FormatSpec::Rubrics), Just(FormatSpec::RubricsQc)
    ]) {
        let r = reward(&body, gold, RewardKind::ColdStart(spec));
        prop_assert!([0.0, 1.0, 2.0].contains(&r.value));
        prop_assert_eq!(r.value, r.parts.values().sum::<f64>());
    }

    #[test]
    fn cleaning_is_idempotent_and_accounted(d in dataset()) {
        let rules = parse_rules("spurious-token Sure!\nturn-count-bias\nsource-blocklist magpie\n").unwrap();
        let (once, report) = clean_dataset(&d, &rules);
        prop_assert_eq!(report.removed() + report.retained, d.len());
        let (twice, again) = clean_dataset(&once, &rules);
        prop_assert_eq!(twice, once);
        prop_assert_eq!(again.removed(), 0);
    }

    #[test]
    fn subset_is_seeded_ordered_and_sized(d in dataset(), fraction in 0.01f64..=1.0, seed in any::<u64>()) {
        let a = draw_distill_subset(&d, fraction, seed).unwrap();
        let b = draw_distill_subset(&d, fraction, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let want = ((fraction * d.len() as f64).ceil() as usize).clamp(1, d.len());
        prop_assert!(a.len() == want || a.len() + 1 == want);
        let positions: Vec<usize> = a
            .samples()
            .iter()
            .map(|s| d.samples().iter().position(|t| t.id == s.id).unwrap())
            .collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn traces_end_with_one_verdict(r in "[a-zA-Z .]{1,60}", l in label()) {
        let t = build_trace(&r, l).unwrap();
        prop_assert_eq!(extract_answer(&t).unwrap(), l);
        prop_assert!(t.starts_with(&r));
    }

    #[test]
    fn nll_is_non_negative(logits in proptest::collection::vec(-4.0f64..4.0, 6), toks in proptest::collection::vec((0usize..2, 0usize..3), 1..8)) {
        let p = ToyPolicy::new(2, 3, logits).unwrap();
        let (c, t): (Vec<usize>, Vec<usize>) = toks.into_iter().unzip();
        prop_assert!(nll_loss(&p, &TokenSequence::new(t, c).unwrap()).unwrap() >= 0.0);
    }

    #[test]
    fn checkpoints_round_trip(logits in proptest::collection::vec(-1e3f64..1e3, 12)) {
        let p = ToyPolicy::new(3, 4, logits).unwrap();
        prop_assert_eq!(ToyPolicy::from_checkpoint(&p.to_checkpoint()).unwrap(), p);
    }

    #[test]
    fn prompt_order_maps_back(good in "[a-z]{1,10}", bad in "[A-Z]{1,10}", l in label(), shown in label()) {
        let s = sample("x".into(), "s".into(), good, bad, l);
        let t = PromptTemplate::builtin(TemplateFamily::InstructCor);
        let ab = render_prompt(&t, &s, Order::AB);
        let ba = render_prompt(&t, &s, Order::BA);
        prop_assert!(ab.contains(&s.response_a) && ba.contains(&s.response_b));
        prop_assert_eq!(Order::BA.unmap(Order::BA.unmap(shown)), shown);
        prop_assert_eq!(Order::AB.unmap(shown), shown);
    }

    #[test]
    fn presentation_order_is_a_function_of_seed_and_id(seed in any::<u64>(), id in "[a-z0-9-]{1,12}") {
        prop_assert_eq!(presentation_order(seed, &id), presentation_order(seed, &id));
    }

    #[test]
    fn accuracies_are_bounded(rows in proptest::collection::vec((0usize..4, any::<bool>()), 1..60)) {
        let cats = ["Chat", "Chat_Hard", "Safety", "Reasoning"];
        let scores: Vec<Score> = rows
            .iter()
            .map(|&(c, ok)| Score { category: cats[c], difficulty: None, correct: ok })
            .collect();
        let macro_r = aggregate_scores(scores.clone(), Scheme::MacroCategory).unwrap();
        let micro = aggregate_scores(scores, Scheme::Micro).unwrap();
        let hits = rows.iter().filter(|r| r.1).count();
        prop_assert_eq!(micro.overall, hits as f64 / rows.len() as f64);
        prop_assert!((0.0..=1.0).contains(&macro_r.overall));
        let lo = macro_r.per_category.values().cloned().fold(1.0, f64::min);
        let hi = macro_r.per_category.values().cloned().fold(0.0, f64::max);
        prop_assert!(lo - 1e-12 <= macro_r.overall && macro_r.overall <= hi + 1e-12);
    }

    #[test]
    fn enforced_instances_show_the_gap(size in 2usize..=10, seed in any::<u64>()) {
        let inst = random_instance(size, seed, true).unwrap();
        let g = verify_filtering_gap(&inst);
        prop_assert_eq!(g.gap_holds, Some(true));
        prop_assert!(check_instance(&inst).violations.is_empty());
    }

    #[test]
    fn unenforced_instances_only_report_conditional_failures(size in 2usize..=10, seed in any::<u64>()) {
        let inst = random_instance(size, seed, false).unwrap();
        let check = check_instance(&inst);
        prop_assert!(check.violations.is_empty());
        prop_assert_eq!(check.gap.gap_holds.is_some(), check.gap.assumptions.all());
    }
}
