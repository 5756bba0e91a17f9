//! Group-relative policy optimisation over ladder groups.
//!
//! Each trajectory's advantage is its reward minus the group mean. The
//! objective for one group of `G` trajectories is
//!
//! ```text
//! J = 1/G * sum_g sum_t min(rho_t A_g, clip(rho_t, 1-eps, 1+eps) A_g) - beta * mean_t KL_t
//! ```
//!
//! where `rho_t = pi(a_t|s_t) / pi_old(a_t|s_t)` per decision and `KL_t` is
//! the low-variance estimator `k - ln k - 1`, `k = pi_ref / pi`, averaged
//! over every decision in the group. The trajectory-level advantage applies
//! to every decision of that trajectory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::{GroupBatch, Observation, Policy, PolicyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("a group needs at least 2 rewards, got {0}")]
    TooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
}

/// `reward - mean(rewards)` for every member.
///
/// Computed as `(G * r - sum) / G`: when the sums are exact, adding a
/// constant to every reward leaves the result bit-for-bit unchanged.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageVector, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::TooSmall(rewards.len()));
    }
    let g = rewards.len() as f64;
    let sum = rewards.iter().sum::<f64>();
    Ok(AdvantageVector { values: rewards.iter().map(|r| (g * r - sum) / g).collect() })
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Low-variance KL estimate for one decision; always `>= 0`.
pub fn kl_low_var(logp_current: f64, logp_reference: f64) -> f64 {
    let log_ratio = logp_reference - logp_current;
    log_ratio.exp() - log_ratio - 1.0
}

/// A policy whose decision log-probabilities are differentiable in a flat
/// parameter vector.
pub trait Differentiable: Policy + Clone {
    fn params(&self) -> &[f64];

    fn set_params(&mut self, params: &[f64]);

    /// `(log_prob, d log_prob / d params)` for each decision behind `turn`, in
    /// the same order as [`Policy::log_prob`].
    fn log_prob_grad(&self, obs: &Observation, turn: &str) -> Result<Vec<(f64, Vec<f64>)>, PolicyError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRole {
    Old,
    Reference,
}

/// A frozen copy of a policy.
#[derive(Debug, Clone)]
pub struct PolicySnapshot<P> {
    policy: P,
    role: SnapshotRole,
}

impl<P: Clone> PolicySnapshot<P> {
    pub fn capture(policy: &P, role: SnapshotRole) -> Self {
        PolicySnapshot { policy: policy.clone(), role }
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub clip_epsilon: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    pub max_turns: usize,
    pub max_grad_norm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clip_epsilon: 0.2,
            kl_coef: 1e-3,
            learning_rate: 0.5,
            group_size: 8,
            max_turns: 3,
            max_grad_norm: 1.0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip_epsilon > 0.0) {
            return Err(format!("clip_epsilon must be > 0, got {}", self.clip_epsilon));
        }
        if !(self.kl_coef >= 0.0) {
            return Err(format!("kl_coef must be >= 0, got {}", self.kl_coef));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.group_size < 2 {
            return Err(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.max_turns < 1 {
            return Err("max_turns must be >= 1".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(format!("max_grad_norm must be > 0, got {}", self.max_grad_norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("batch voided: {0}")]
    Policy(#[from] PolicyError),
    #[error("batch voided: decision count mismatch ({0})")]
    DecisionMismatch(String),
    #[error("batch voided: advantages missing ({trajectories} trajectories, {advantages} advantages)")]
    Advantages { trajectories: usize, advantages: usize },
    #[error("no batches to train on")]
    Empty,
}

/// Objective value with its gradient and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub objective: f64,
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub decisions: usize,
}

struct TrajectoryTerms {
    policy_sum: f64,
    policy_grad: Vec<f64>,
    kl_sum: f64,
    kl_grad: Vec<f64>,
    clipped: usize,
    decisions: usize,
}

fn trajectory_terms<P: Differentiable>(
    traj: &crate::rollout::Trajectory,
    advantage: f64,
    policy: &P,
    old: &PolicySnapshot<P>,
    reference: &PolicySnapshot<P>,
    epsilon: f64,
    with_grad: bool,
) -> Result<TrajectoryTerms, SurrogateError> {
    let n = policy.params().len();
    let mut out = TrajectoryTerms {
        policy_sum: 0.0,
        policy_grad: vec![0.0; n],
        kl_sum: 0.0,
        kl_grad: vec![0.0; n],
        clipped: 0,
        decisions: 0,
    };
    for turn in &traj.turns {
        let obs = &turn.observation;
        let text = &turn.output.raw;
        let current: Vec<(f64, Vec<f64>)> = if with_grad {
            policy.log_prob_grad(obs, text)?
        } else {
            policy.log_prob(obs, text)?.into_iter().map(|d| (d.log_prob, Vec::new())).collect()
        };
        let old_lp = old.policy().log_prob(obs, text)?;
        let ref_lp = reference.policy().log_prob(obs, text)?;
        if old_lp.len() != current.len() || ref_lp.len() != current.len() {
            return Err(SurrogateError::DecisionMismatch(format!(
                "turn {}: current {}, old {}, reference {}",
                turn.index,
                current.len(),
                old_lp.len(),
                ref_lp.len()
            )));
        }
        for ((lp, grad), (o, r)) in current.iter().zip(old_lp.iter().zip(&ref_lp)) {
            let ratio = (lp - o.log_prob).exp();
            let term = clipped_term(ratio, advantage, epsilon);
            out.policy_sum += term;
            out.kl_sum += kl_low_var(*lp, r.log_prob);
            out.decisions += 1;
            if ratio < 1.0 - epsilon || ratio > 1.0 + epsilon {
                out.clipped += 1;
            }
            if with_grad {
                // The unclipped branch is the active one exactly when it is the min.
                if ratio * advantage <= term {
                    let w = advantage * ratio;
                    out.policy_grad.iter_mut().zip(grad).for_each(|(a, g)| *a += w * g);
                }
                let dk = 1.0 - (r.log_prob - lp).exp();
                out.kl_grad.iter_mut().zip(grad).for_each(|(a, g)| *a += dk * g);
            }
        }
    }
    Ok(out)
}

fn evaluate<P: Differentiable>(
    batch: &GroupBatch,
    policy: &P,
    old: &PolicySnapshot<P>,
    reference: &PolicySnapshot<P>,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<SurrogateEval, SurrogateError> {
    let g = batch.trajectories.len();
    if batch.advantages.len() != g || g == 0 {
        return Err(SurrogateError::Advantages { trajectories: g, advantages: batch.advantages.len() });
    }
    let terms: Vec<TrajectoryTerms> = batch
        .trajectories
        .par_iter()
        .zip(batch.advantages.par_iter())
        .map(|(t, &a)| trajectory_terms(t, a, policy, old, reference, cfg.clip_epsilon, with_grad))
        .collect::<Result<_, _>>()?;

    let n = policy.params().len();
    let decisions: usize = terms.iter().map(|t| t.decisions).sum();
    let clipped: usize = terms.iter().map(|t| t.clipped).sum();
    let policy_sum: f64 = terms.iter().map(|t| t.policy_sum).sum();
    let kl_sum: f64 = terms.iter().map(|t| t.kl_sum).sum();
    let per_decision = if decisions > 0 { 1.0 / decisions as f64 } else { 0.0 };
    let mean_kl = kl_sum * per_decision;
    let objective = policy_sum / g as f64 - cfg.kl_coef * mean_kl;

    let mut grad = vec![0.0; if with_grad { n } else { 0 }];
    if with_grad {
        for t in &terms {
            for i in 0..n {
                grad[i] += t.policy_grad[i] / g as f64 - cfg.kl_coef * per_decision * t.kl_grad[i];
            }
        }
    }
    Ok(SurrogateEval {
        objective,
        grad,
        mean_kl,
        clip_fraction: clipped as f64 * per_decision,
        decisions,
    })
}

/// Value of the clipped, KL-regularised surrogate on one group.
pub fn surrogate_objective<P: Differentiable>(
    batch: &GroupBatch,
    policy: &P,
    old: &PolicySnapshot<P>,
    reference: &PolicySnapshot<P>,
    cfg: &TrainConfig,
) -> Result<f64, SurrogateError> {
    evaluate(batch, policy, old, reference, cfg, false).map(|e| e.objective)
}

/// Surrogate value and its analytic gradient in the policy parameters.
pub fn surrogate_with_grad<P: Differentiable>(
    batch: &GroupBatch,
    policy: &P,
    old: &PolicySnapshot<P>,
    reference: &PolicySnapshot<P>,
    cfg: &TrainConfig,
) -> Result<SurrogateEval, SurrogateError> {
    evaluate(batch, policy, old, reference, cfg, true)
}

/// Gradient-ascent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Optimizer { kind, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// Moves `params` uphill along `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p += lr * g),
            OptimizerKind::Adam => {
                self.step += 1;
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub objective: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
    pub skipped: bool,
    pub mean_reward: f64,
    pub mean_acc: f64,
    pub mean_format: f64,
    pub mean_tool_reward: f64,
    pub mean_turn_reward: f64,
    pub mean_turns: f64,
    pub trajectories: usize,
}

/// One policy update over `batches`. The pre-step policy serves as the old
/// policy; `reference` stays fixed for the whole run.
pub fn update<P: Differentiable + Sync>(
    policy: &mut P,
    reference: &PolicySnapshot<P>,
    batches: &[GroupBatch],
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
) -> Result<UpdateStats, SurrogateError> {
    if batches.is_empty() {
        return Err(SurrogateError::Empty);
    }
    let old = PolicySnapshot::capture(policy, SnapshotRole::Old);
    let n = policy.params().len();
    let mut grad = vec![0.0; n];
    let (mut objective, mut kl, mut clip) = (0.0, 0.0, 0.0);
    for batch in batches {
        let e = surrogate_with_grad(batch, policy, &old, reference, cfg)?;
        objective += e.objective;
        kl += e.mean_kl;
        clip += e.clip_fraction;
        grad.iter_mut().zip(&e.grad).for_each(|(a, g)| *a += g);
    }
    let nb = batches.len() as f64;
    grad.iter_mut().for_each(|g| *g /= nb);

    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let skipped = !(grad_norm.is_finite() && objective.is_finite());
    if !skipped {
        if grad_norm > cfg.max_grad_norm {
            let s = cfg.max_grad_norm / grad_norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let mut params = policy.params().to_vec();
        optimizer.ascend(&mut params, &grad, cfg.learning_rate);
        policy.set_params(&params);
    }

    let rewards: Vec<_> = batches
        .iter()
        .flat_map(|b| &b.trajectories)
        .map(|t| (t.reward.unwrap_or_default_breakdown(), t.turns.len()))
        .collect();
    let m = rewards.len().max(1) as f64;
    let mean = |f: fn(&crate::reward::RewardBreakdown) -> f64| rewards.iter().map(|(r, _)| f(r)).sum::<f64>() / m;
    Ok(UpdateStats {
        objective: objective / nb,
        mean_kl: kl / nb,
        clip_fraction: clip / nb,
        grad_norm,
        skipped,
        mean_reward: mean(|r| r.total),
        mean_acc: mean(|r| r.acc),
        mean_format: mean(|r| r.format),
        mean_tool_reward: mean(|r| r.tool),
        mean_turn_reward: mean(|r| r.turn),
        mean_turns: rewards.iter().map(|(_, t)| *t as f64).sum::<f64>() / m,
        trajectories: rewards.len(),
    })
}

trait BreakdownOrZero {
    fn unwrap_or_default_breakdown(self) -> crate::reward::RewardBreakdown;
}

impl BreakdownOrZero for Option<crate::reward::RewardBreakdown> {
    fn unwrap_or_default_breakdown(self) -> crate::reward::RewardBreakdown {
        self.unwrap_or(crate::reward::RewardBreakdown {
            acc: 0.0,
            format: 0.0,
            tool: 0.0,
            turn: 0.0,
            total: 0.0,
            tool_score: 0.0,
            turn_sums: 0,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::drfs::{build_ladder, LadderEndpoints};
    use crate::reward::{Question, QuestionKind, RewardConfig, StubJudge};
    use crate::rollout::{run_group, Decision, GroupSettings};
    use crate::videotool::VideoSource;
    use image::RgbImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    /// Softmax over arms; answers the arm index.
    #[derive(Debug, Clone)]
    pub(crate) struct Bandit {
        pub logits: Vec<f64>,
    }

    impl Bandit {
        fn probs(&self) -> Vec<f64> {
            let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = self.logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        }

        fn arm(turn: &str) -> Result<usize, PolicyError> {
            crate::protocol::parse_turn(turn)
                .answer()
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| PolicyError::Unrecognized(turn.to_string()))
        }
    }

    impl Policy for Bandit {
        fn act(&self, _: &Observation, seed: u64) -> Result<String, PolicyError> {
            let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
            let mut acc = 0.0;
            let p = self.probs();
            let arm = p.iter().position(|pi| {
                acc += pi;
                u < acc
            });
            Ok(format!("<think>pick</think><answer>{}</answer>", arm.unwrap_or(p.len() - 1)))
        }

        fn log_prob(&self, _: &Observation, turn: &str) -> Result<Vec<Decision>, PolicyError> {
            let a = Self::arm(turn)?;
            Ok(vec![Decision { label: format!("arm {a}"), log_prob: self.probs()[a].ln() }])
        }
    }

    impl Differentiable for Bandit {
        fn params(&self) -> &[f64] {
            &self.logits
        }
        fn set_params(&mut self, p: &[f64]) {
            self.logits.copy_from_slice(p);
        }
        fn log_prob_grad(&self, _: &Observation, turn: &str) -> Result<Vec<(f64, Vec<f64>)>, PolicyError> {
            let a = Self::arm(turn)?;
            let p = self.probs();
            let grad = (0..p.len()).map(|i| f64::from(u8::from(i == a)) - p[i]).collect();
            Ok(vec![(p[a].ln(), grad)])
        }
    }

    fn bandit_group(policy: &Bandit, seed: u64, gold: &str) -> GroupBatch {
        let src = VideoSource::from_images("v", 4.0, 1.0, vec![Arc::new(RgbImage::new(2, 2)); 4]).unwrap();
        let q = Question { id: "q".into(), text: "pick".into(), gold: gold.into(), kind: QuestionKind::ExactMatch };
        let ladder = build_ladder(&LadderEndpoints::default(), 8).unwrap();
        let seeds: Vec<u64> = (0..8).map(|i| seed * 100 + i).collect();
        let judge = StubJudge::default();
        let reward = RewardConfig::default();
        let settings = GroupSettings { max_turns: 3, reward: &reward, judge: &judge };
        run_group(policy, &src, &q, &ladder, &seeds, &settings).unwrap()
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0]).unwrap().values, vec![0.0; 3]);
        assert_eq!(group_advantages(&[1.0, 0.0, 2.5, 0.5]).unwrap().values, vec![0.0, -1.0, 1.5, -0.5]);
        let a = group_advantages(&[2.7, -0.8]).unwrap().values;
        assert!((a[0] - 1.75).abs() < 1e-12 && (a[1] + 1.75).abs() < 1e-12);
        assert_eq!(group_advantages(&[1.0]), Err(AdvantageError::TooSmall(1)));
    }

    #[test]
    fn clipped_term_examples() {
        for a in [-3.0, 0.0, 2.5] {
            assert_eq!(clipped_term(1.0, a, 0.2), a);
        }
        assert!((clipped_term(1.5, 2.0, 0.2) - 2.4).abs() < 1e-12);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_low_var(-1.3, -1.3), 0.0);
        let ln2 = 2f64.ln();
        assert!((kl_low_var(0.0, ln2) - (1.0 - ln2)).abs() < 1e-12);
        assert!((kl_low_var(0.0, ln2) - 0.3069).abs() < 1e-4);
        assert!((kl_low_var(0.0, -ln2) - 0.1931).abs() < 1e-4);
    }

    #[test]
    fn zero_advantage_zero_objective() {
        let p = Bandit { logits: vec![0.3, -0.2, 0.1] };
        let mut batch = bandit_group(&p, 1, "0");
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        let snap = PolicySnapshot::capture(&p, SnapshotRole::Old);
        let cfg = TrainConfig { kl_coef: 0.0, ..TrainConfig::default() };
        assert_eq!(surrogate_objective(&batch, &p, &snap, &snap, &cfg).unwrap(), 0.0);

        let mut q = p.clone();
        let reference = PolicySnapshot::capture(&p, SnapshotRole::Reference);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 3);
        update(&mut q, &reference, &[batch], &cfg, &mut opt).unwrap();
        assert_eq!(q.logits, p.logits);
    }

    #[test]
    fn positive_advantage_raises_logit() {
        // Arm 1 is the only correct answer, so it gets the positive advantage.
        let p = Bandit { logits: vec![0.0, 0.0] };
        let batch = bandit_group(&p, 3, "1");
        assert!(batch.rewards.iter().any(|&r| r > 0.5) && batch.rewards.iter().any(|&r| r < 0.5));
        let reference = PolicySnapshot::capture(&p, SnapshotRole::Reference);
        let mut q = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 2);
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let stats = update(&mut q, &reference, &[batch], &cfg, &mut opt).unwrap();
        assert!(q.logits[1] > p.logits[1]);
        assert!(q.logits[0] < p.logits[0]);
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(!stats.skipped);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = Bandit { logits: (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let batch = bandit_group(&base, 5, "3");
        let perturb = |p: &Bandit, rng: &mut ChaCha8Rng, s: f64| Bandit {
            logits: p.logits.iter().map(|l| l + rng.gen_range(-s..s)).collect(),
        };
        let current = perturb(&base, &mut rng, 0.3);
        let old = PolicySnapshot::capture(&base, SnapshotRole::Old);
        let reference = PolicySnapshot::capture(&perturb(&base, &mut rng, 0.5), SnapshotRole::Reference);
        let cfg = TrainConfig { kl_coef: 0.5, ..TrainConfig::default() };
        let eval = surrogate_with_grad(&batch, &current, &old, &reference, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..10 {
            let mut plus = current.clone();
            plus.logits[i] += h;
            let mut minus = current.clone();
            minus.logits[i] -= h;
            let fd = (surrogate_objective(&batch, &plus, &old, &reference, &cfg).unwrap()
                - surrogate_objective(&batch, &minus, &old, &reference, &cfg).unwrap())
                / (2.0 * h);
            let rel = (fd - eval.grad[i]).abs() / fd.abs().max(eval.grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: fd {fd} analytic {}", eval.grad[i]);
        }
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let p = Bandit { logits: vec![0.0, 0.0] };
        let mut batch = bandit_group(&p, 3, "1");
        batch.advantages[0] = f64::NAN;
        let reference = PolicySnapshot::capture(&p, SnapshotRole::Reference);
        let mut q = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 2);
        let stats = update(&mut q, &reference, &[batch], &TrainConfig::default(), &mut opt).unwrap();
        assert!(stats.skipped);
        assert_eq!(q.logits, p.logits);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { clip_epsilon: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { kl_coef: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
