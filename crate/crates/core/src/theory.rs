//! Exact checks of the filtering-gap argument on finite spaces.
//!
//! An instance is a finite space with weights `mu`, two binary features and a
//! reward with threshold `tau`. `H` is the high-reward event `R >= tau`, `L` its
//! complement, and the disagreement set holds the points where the robust and
//! trivial features differ. Every probability is computed by enumeration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest space enumerated point by point.
pub const MAX_SIZE: usize = 1_000_000;
/// Largest space whose `2^size` deterministic policies are enumerated.
pub const MAX_POLICY_ENUMERATION: usize = 12;
/// Attempts made by [`random_instance`] before giving up.
pub const REJECTION_BUDGET: usize = 10_000;

const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("conditioning on {0:?}, which has measure zero")]
    Conditioning(Condition),
    #[error("{0}")]
    Argument(String),
    #[error("no instance satisfying the assumptions after {attempts} attempts")]
    Generation { attempts: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInstance {
    pub mu: Vec<f64>,
    pub phi_rob: Vec<bool>,
    pub phi_triv: Vec<bool>,
    pub reward: Vec<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    None,
    H,
    L,
}

impl TheoryInstance {
    pub fn new(
        mu: Vec<f64>,
        phi_rob: Vec<bool>,
        phi_triv: Vec<bool>,
        reward: Vec<f64>,
        tau: f64,
    ) -> Result<Self, TheoryError> {
        let inst = TheoryInstance {
            mu,
            phi_rob,
            phi_triv,
            reward,
            tau,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let n = self.mu.len();
        if n == 0 || n > MAX_SIZE {
            return Err(TheoryError::Instance(format!("size must be in 1..={MAX_SIZE}, got {n}")));
        }
        if self.phi_rob.len() != n || self.phi_triv.len() != n || self.reward.len() != n {
            return Err(TheoryError::Instance(format!(
                "mu has {n} points but phi_rob {}, phi_triv {}, reward {}",
                self.phi_rob.len(),
                self.phi_triv.len(),
                self.reward.len()
            )));
        }
        if let Some(w) = self.mu.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(TheoryError::Instance(format!("weight {w} is not a finite non-negative number")));
        }
        let total: f64 = self.mu.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(TheoryError::Instance(format!("weights sum to {total}")));
        }
        if self.reward.iter().any(|r| r.is_nan()) || self.tau.is_nan() {
            return Err(TheoryError::Instance("reward and tau must not be NaN".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.mu.len()
    }

    pub fn in_high(&self, x: usize) -> bool {
        self.reward[x] >= self.tau
    }

    pub fn in_condition(&self, x: usize, c: Condition) -> bool {
        match c {
            Condition::None => true,
            Condition::H => self.in_high(x),
            Condition::L => !self.in_high(x),
        }
    }

    pub fn disagrees(&self, x: usize) -> bool {
        self.phi_rob[x] != self.phi_triv[x]
    }

    pub fn measure(&self, c: Condition) -> f64 {
        (0..self.size())
            .filter(|&x| self.in_condition(x, c))
            .map(|x| self.mu[x])
            .sum()
    }
}

/// Exact `Pr[D | condition]`.
pub fn disagreement_probability(inst: &TheoryInstance, condition: Condition) -> Result<f64, TheoryError> {
    let mass = inst.measure(condition);
    if mass <= 0.0 {
        return Err(TheoryError::Conditioning(condition));
    }
    let joint: f64 = (0..inst.size())
        .filter(|&x| inst.in_condition(x, condition) && inst.disagrees(x))
        .map(|x| inst.mu[x])
        .sum();
    // A plain ratio overshoots 1 by an ulp when every point disagrees.
    Ok((joint / mass).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumptions {
    /// The filtered distribution `mu(. | H)` exists: `mu(H) > 0`.
    pub train_defined: bool,
    /// The filter is nontrivial: `0 < mu(H) < 1`.
    pub nontrivial_filter: bool,
    /// `Pr[D | L] > Pr[D | H]`.
    pub low_reward_disagrees_more: bool,
}

impl Assumptions {
    pub fn all(&self) -> bool {
        self.train_defined && self.nontrivial_filter && self.low_reward_disagrees_more
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    /// `mu(H)`.
    pub alpha: f64,
    /// `Pr[D | H]`; undefined when `mu(H) = 0`.
    pub eps_train: Option<f64>,
    /// `Pr[D]`.
    pub delta: f64,
    pub disagreement_given_h: Option<f64>,
    pub disagreement_given_l: Option<f64>,
    pub assumptions: Assumptions,
    /// `eps_train < delta`, checked only when every assumption holds.
    pub gap_holds: Option<bool>,
}

pub fn verify_filtering_gap(inst: &TheoryInstance) -> GapResult {
    let alpha = inst.measure(Condition::H);
    let given_h = disagreement_probability(inst, Condition::H).ok();
    let given_l = disagreement_probability(inst, Condition::L).ok();
    let delta = disagreement_probability(inst, Condition::None).expect("validated mass is 1");
    let low_more = matches!((given_h, given_l), (Some(h), Some(l)) if l > h);
    let assumptions = Assumptions {
        train_defined: alpha > 0.0,
        nontrivial_filter: given_h.is_some() && given_l.is_some(),
        low_reward_disagrees_more: low_more,
    };
    let gap_holds = assumptions.all().then(|| given_h.expect("defined") < delta);
    GapResult {
        alpha,
        eps_train: given_h,
        delta,
        disagreement_given_h: given_h,
        disagreement_given_l: given_l,
        assumptions,
        gap_holds,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Trivial,
    Robust,
    Explicit(Vec<bool>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyObjectives {
    /// Error rate on the filtered distribution against `y = phi_rob`.
    pub sft_loss: f64,
    /// Accuracy on the unfiltered distribution.
    pub rl_reward: f64,
}

fn policy_bits<'a>(inst: &'a TheoryInstance, policy: &'a PolicyChoice) -> Result<&'a [bool], TheoryError> {
    match policy {
        PolicyChoice::Trivial => Ok(&inst.phi_triv),
        PolicyChoice::Robust => Ok(&inst.phi_rob),
        PolicyChoice::Explicit(bits) if bits.len() == inst.size() => Ok(bits),
        PolicyChoice::Explicit(bits) => Err(TheoryError::Argument(format!(
            "policy has {} bits for a space of {}",
            bits.len(),
            inst.size()
        ))),
    }
}

fn objectives_of(inst: &TheoryInstance, pi: &[bool], high_mass: f64) -> PolicyObjectives {
    let mut high_err = 0.0;
    let mut hit = 0.0;
    for (x, &choice) in pi.iter().enumerate().take(inst.size()) {
        if choice == inst.phi_rob[x] {
            hit += inst.mu[x];
        } else if inst.in_high(x) {
            high_err += inst.mu[x];
        }
    }
    PolicyObjectives {
        sft_loss: high_err / high_mass,
        rl_reward: hit,
    }
}

pub fn policy_objectives(inst: &TheoryInstance, policy: &PolicyChoice) -> Result<PolicyObjectives, TheoryError> {
    let pi = policy_bits(inst, policy)?;
    let high_mass = inst.measure(Condition::H);
    if high_mass <= 0.0 {
        return Err(TheoryError::Conditioning(Condition::H));
    }
    Ok(objectives_of(inst, pi, high_mass))
}

/// Objectives of all `2^size` deterministic policies, indexed by bitmask
/// (bit `x` is the action at point `x`).
pub fn enumerate_policies(inst: &TheoryInstance) -> Result<Vec<PolicyObjectives>, TheoryError> {
    let n = inst.size();
    if n > MAX_POLICY_ENUMERATION {
        return Err(TheoryError::Argument(format!(
            "policy enumeration is limited to size {MAX_POLICY_ENUMERATION}, got {n}"
        )));
    }
    let high_mass = inst.measure(Condition::H);
    if high_mass <= 0.0 {
        return Err(TheoryError::Conditioning(Condition::H));
    }
    Ok((0u32..1 << n)
        .map(|mask| {
            let pi: Vec<bool> = (0..n).map(|x| mask >> x & 1 == 1).collect();
            objectives_of(inst, &pi, high_mass)
        })
        .collect())
}

/// Chance that `n_sft` filtered draws miss the disagreement set, and that
/// `m_rl` unfiltered draws hit it.
pub fn sampling_amplification(eps: f64, delta: f64, n_sft: u64, m_rl: u64) -> Result<(f64, f64), TheoryError> {
    for (name, v) in [("eps", eps), ("delta", delta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(TheoryError::Argument(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let miss = (1.0 - eps).powf(n_sft as f64);
    let hit = 1.0 - (1.0 - delta).powf(m_rl as f64);
    Ok((miss, hit))
}

fn draw_instance(rng: &mut ChaCha8Rng, size: usize) -> TheoryInstance {
    let mut weights: Vec<f64> = (0..size)
        .map(|_| {
            if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights[rng.gen_range(0..size)] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let mu = weights.iter().map(|w| w / total).collect();
    let phi_rob: Vec<bool> = (0..size).map(|_| rng.gen()).collect();
    let flip = rng.gen_range(0.1..0.6);
    let phi_triv = phi_rob.iter().map(|&b| b ^ rng.gen_bool(flip)).collect();
    let reward = (0..size).map(|_| rng.gen_range(0.0..1.0)).collect();
    TheoryInstance {
        mu,
        phi_rob,
        phi_triv,
        reward,
        tau: rng.gen_range(0.2..0.8),
    }
}

/// Seeded generator. With `enforce_assumptions`, draws until all three
/// assumptions hold, up to [`REJECTION_BUDGET`] attempts.
pub fn random_instance(size: usize, seed: u64, enforce_assumptions: bool) -> Result<TheoryInstance, TheoryError> {
    if !(2..=MAX_SIZE).contains(&size) {
        return Err(TheoryError::Argument(format!("size must be in 2..={MAX_SIZE}, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..REJECTION_BUDGET {
        let inst = draw_instance(&mut rng, size);
        if !enforce_assumptions || verify_filtering_gap(&inst).assumptions.all() {
            return Ok(inst);
        }
    }
    Err(TheoryError::Generation {
        attempts: REJECTION_BUDGET,
    })
}

/// Tolerance for the closed-form and identity checks.
pub const CHECK_TOLERANCE: f64 = 1e-12;

/// Outcome of every check on one instance. Checks whose preconditions fail
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub gap: GapResult,
    /// `(delta - eps_train) - (1 - alpha)(Pr[D | L] - eps_train)`.
    pub identity_residual: Option<f64>,
    pub closed_forms_hold: Option<bool>,
    /// Every reward-optimal policy agrees with `phi_rob` on the support of `mu`, and vice versa.
    pub unique_optimum: Option<bool>,
    pub violations: Vec<String>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CHECK_TOLERANCE
}

pub fn check_instance(inst: &TheoryInstance) -> InstanceCheck {
    let gap = verify_filtering_gap(inst);
    let mut violations = Vec::new();
    if gap.gap_holds == Some(false) {
        violations.push(format!(
            "eps_train {} is not below delta {}",
            gap.eps_train.unwrap_or(f64::NAN),
            gap.delta
        ));
    }
    let identity_residual = match (gap.eps_train, gap.disagreement_given_l) {
        (Some(eps), Some(low)) => Some((gap.delta - eps) - (1.0 - gap.alpha) * (low - eps)),
        _ => None,
    };
    if let Some(r) = identity_residual.filter(|r| r.abs() > CHECK_TOLERANCE) {
        violations.push(format!("gap identity residual {r}"));
    }
    let closed_forms_hold = gap.eps_train.map(|eps| {
        let rob = policy_objectives(inst, &PolicyChoice::Robust).expect("mu(H) > 0");
        let triv = policy_objectives(inst, &PolicyChoice::Trivial).expect("mu(H) > 0");
        close(rob.sft_loss, 0.0)
            && close(rob.rl_reward, 1.0)
            && close(triv.sft_loss, eps)
            && close(triv.rl_reward, 1.0 - gap.delta)
    });
    if closed_forms_hold == Some(false) {
        violations.push("policy objectives differ from their closed forms".into());
    }
    let unique_optimum = enumerate_policies(inst).ok().map(|all| {
        let n = inst.size();
        all.iter().enumerate().all(|(mask, obj)| {
            let agrees = (0..n).all(|x| inst.mu[x] == 0.0 || (mask >> x & 1 == 1) == inst.phi_rob[x]);
            agrees == (obj.rl_reward >= 1.0 - CHECK_TOLERANCE)
        })
    });
    if unique_optimum == Some(false) {
        violations.push("reward-optimal policies differ from phi_rob on the support".into());
    }
    InstanceCheck {
        gap,
        identity_residual,
        closed_forms_hold,
        unique_optimum,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_point() -> TheoryInstance {
        // D = {x3, x4}, H = {x1, x2, x3}
        TheoryInstance::new(
            vec![0.25; 4],
            vec![true, false, true, false],
            vec![true, false, false, true],
            vec![1.0, 1.0, 1.0, 0.0],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn four_point_by_hand() {
        let inst = four_point();
        assert_eq!(disagreement_probability(&inst, Condition::None), Ok(0.5));
        let h = disagreement_probability(&inst, Condition::H).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(disagreement_probability(&inst, Condition::L), Ok(1.0));

        let g = verify_filtering_gap(&inst);
        assert!(g.assumptions.all());
        assert_eq!(g.gap_holds, Some(true));
        let gap = g.delta - g.eps_train.unwrap();
        assert!((gap - 1.0 / 6.0).abs() < 1e-15);
        assert!((gap - (1.0 - g.alpha) * (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn no_disagreement() {
        let mut inst = four_point();
        inst.phi_triv = inst.phi_rob.clone();
        for c in [Condition::None, Condition::H, Condition::L] {
            assert_eq!(disagreement_probability(&inst, c), Ok(0.0));
        }
        let g = verify_filtering_gap(&inst);
        assert!(!g.assumptions.low_reward_disagrees_more);
        assert_eq!(g.gap_holds, None);
        assert_eq!(g.eps_train, Some(g.delta));
    }

    #[test]
    fn empty_condition() {
        let mut inst = four_point();
        inst.reward = vec![1.0; 4];
        assert_eq!(
            disagreement_probability(&inst, Condition::L),
            Err(TheoryError::Conditioning(Condition::L))
        );
        let g = verify_filtering_gap(&inst);
        assert!(g.assumptions.train_defined);
        assert!(!g.assumptions.nontrivial_filter);
        inst.tau = 2.0;
        assert!(policy_objectives(&inst, &PolicyChoice::Robust).is_err());
    }

    #[test]
    fn invalid_instances() {
        assert!(TheoryInstance::new(vec![0.5, 0.6], vec![true; 2], vec![true; 2], vec![0.0; 2], 0.0).is_err());
        assert!(TheoryInstance::new(vec![1.5, -0.5], vec![true; 2], vec![true; 2], vec![0.0; 2], 0.0).is_err());
        assert!(TheoryInstance::new(vec![1.0], vec![true; 2], vec![true], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn closed_forms_on_four_point() {
        let inst = four_point();
        let rob = policy_objectives(&inst, &PolicyChoice::Robust).unwrap();
        assert_eq!((rob.sft_loss, rob.rl_reward), (0.0, 1.0));
        let triv = policy_objectives(&inst, &PolicyChoice::Trivial).unwrap();
        assert!((triv.sft_loss - 1.0 / 3.0).abs() < 1e-15);
        assert!((triv.rl_reward - 0.5).abs() < 1e-15);
        assert!(policy_objectives(&inst, &PolicyChoice::Explicit(vec![true])).is_err());
    }

    #[test]
    fn amplification() {
        assert_eq!(sampling_amplification(0.0, 0.5, 1000, 0).unwrap().0, 1.0);
        assert_eq!(sampling_amplification(0.1, 1.0, 3, 1).unwrap().1, 1.0);
        let (miss, _) = sampling_amplification(0.01, 0.0, 100, 0).unwrap();
        assert!((miss - 0.99f64.powi(100)).abs() < 1e-15);
        assert!(sampling_amplification(1.1, 0.5, 1, 1).is_err());
        assert!(sampling_amplification(0.5, -0.1, 1, 1).is_err());
    }

    #[test]
    fn generator_is_seeded() {
        let a = random_instance(9, 5, true).unwrap();
        assert_eq!(a, random_instance(9, 5, true).unwrap());
        assert!(verify_filtering_gap(&a).assumptions.all());
        assert!(a.validate().is_ok());
        assert!(random_instance(1, 0, false).is_err());
    }
}
