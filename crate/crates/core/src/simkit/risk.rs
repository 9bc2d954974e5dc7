use serde::{Deserialize, Serialize};

use super::{batch_init, rollout, rollout_seed, InstanceRef, Trajectory};
use crate::funclass::Estimate;
use crate::instances::Instance;
use crate::policies::{ExpertPolicy, History, Policy};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub horizon: usize,
    /// Number of rollouts.
    pub m: usize,
    /// Policy draws per (trajectory, t) in the expert-distribution risk.
    pub noise_samples: usize,
    /// Tail level of the quantile risk.
    pub delta: f64,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(horizon: usize, m: usize, seed: u64) -> Self {
        EvalConfig { horizon, m, noise_samples: 16, delta: 0.1, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub expert_l2: Estimate,
    pub cost_risk: Estimate,
    /// Mean trajectory cost of the expert on the same inits.
    pub expert_cost: f64,
    pub traj_l1: Estimate,
    /// `(delta, (1 − delta)-quantile of the learner's trajectory cost)`.
    pub quantile: (f64, f64),
    pub m_rollouts: usize,
    pub horizon: usize,
    pub blowups: usize,
}

/// Sum by recursive halving, so the rounding pattern depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Estimate { value: f64::NAN, stderr: f64::NAN };
    }
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return Estimate { value: mean, stderr: 0.0 };
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    Estimate { value: mean, stderr: (pairwise_sum(&dev) / (n - 1.0) / n).sqrt() }
}

/// `max_t min(1, cost(x_t, u_t, t))`; a blown-up trajectory costs 1.
pub fn traj_cost(inst: &dyn Instance, traj: &Trajectory) -> f64 {
    if traj.blowup.is_some() {
        return 1.0;
    }
    traj.states
        .iter()
        .zip(&traj.inputs)
        .enumerate()
        .map(|(t, (x, u))| inst.cost(x, u, t + 1).min(1.0))
        .fold(0.0, f64::max)
}

struct Coupled {
    expert: Vec<Trajectory>,
    learner: Vec<Trajectory>,
}

fn coupled_rollouts(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig) -> Coupled {
    let expert_policy = ExpertPolicy::new(std::sync::Arc::new(InstanceRef(inst)));
    let mut expert = Vec::with_capacity(cfg.m);
    let mut learner = Vec::with_capacity(cfg.m);
    for i in 0..cfg.m {
        let init = batch_init(inst, cfg.seed, i);
        let seed = rollout_seed(cfg.seed, i);
        expert.push(rollout(&expert_policy, inst, &init, cfg.horizon, seed));
        learner.push(rollout(policy, inst, &init, cfg.horizon, seed));
    }
    Coupled { expert, learner }
}

/// Action the policy would take at time `t` along a fixed state sequence, honoring chunk boundaries.
fn action_along(policy: &dyn Policy, traj: &Trajectory, t: usize, rng: &mut dyn rand::RngCore) -> crate::matkit::Vector {
    let chunk = policy.chunk_len().max(1);
    let offset = (t - 1) % chunk;
    let replan = t - offset;
    let hist = History { states: traj.states[..replan].to_vec(), inputs: traj.inputs[..replan - 1].to_vec() };
    if chunk == 1 {
        policy.act(&hist, rng)
    } else {
        policy.plan(&hist, rng).swap_remove(offset)
    }
}

fn expert_l2_from(policy: &dyn Policy, expert: &[Trajectory], cfg: &EvalConfig) -> Estimate {
    let draws = if policy.kind().is_deterministic() { 1 } else { cfg.noise_samples.max(1) };
    let mut value = 0.0;
    let mut stderr = 0.0;
    for t in 1..=cfg.horizon {
        let per_traj: Vec<f64> = expert
            .iter()
            .enumerate()
            .filter(|(_, traj)| traj.states.len() >= t)
            .map(|(i, traj)| {
                let target = &traj.inputs[t - 1];
                let sq: Vec<f64> = (0..draws)
                    .map(|j| {
                        let label = ((i as u64) << 32) ^ ((t as u64) << 12) ^ j as u64;
                        let mut rng = seeded(derive_seed(cfg.seed ^ 0xE7E1_2222, label));
                        (action_along(policy, traj, t, &mut rng) - target).norm_squared()
                    })
                    .collect();
                pairwise_sum(&sq) / draws as f64
            })
            .collect();
        if per_traj.is_empty() {
            continue;
        }
        let mse = mean_estimate(&per_traj);
        let rmse = mse.value.sqrt();
        value += rmse;
        if rmse > 0.0 {
            stderr += mse.stderr / (2.0 * rmse);
        }
    }
    Estimate { value, stderr }
}

fn l1_gap(inst_h: usize, expert: &Trajectory, learner: &Trajectory) -> f64 {
    let gaps: Vec<f64> = (0..inst_h)
        .map(|t| {
            if t >= learner.states.len() || t >= expert.states.len() {
                return 1.0;
            }
            let g = (&expert.states[t] - &learner.states[t]).norm() + (&expert.inputs[t] - &learner.inputs[t]).norm();
            g.min(1.0)
        })
        .collect();
    pairwise_sum(&gaps)
}

fn quantile_of(costs: &[f64], delta: f64) -> f64 {
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((1.0 - delta) * sorted.len() as f64).ceil() as usize;
    sorted[idx.clamp(1, sorted.len()) - 1]
}

/// All four risks from one batch of coupled rollouts.
pub fn evaluate(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig) -> RiskReport {
    assert!(cfg.m >= 1 && cfg.horizon >= 1, "evaluation needs m ≥ 1 and H ≥ 1");
    let roll = coupled_rollouts(policy, inst, cfg);
    let expert_costs: Vec<f64> = roll.expert.iter().map(|t| traj_cost(inst, t)).collect();
    let learner_costs: Vec<f64> = roll.learner.iter().map(|t| traj_cost(inst, t)).collect();
    let diffs: Vec<f64> = learner_costs.iter().zip(&expert_costs).map(|(l, e)| l - e).collect();
    let l1: Vec<f64> = roll.expert.iter().zip(&roll.learner).map(|(e, l)| l1_gap(cfg.horizon, e, l)).collect();
    RiskReport {
        expert_l2: expert_l2_from(policy, &roll.expert, cfg),
        cost_risk: mean_estimate(&diffs),
        expert_cost: pairwise_sum(&expert_costs) / cfg.m as f64,
        traj_l1: mean_estimate(&l1),
        quantile: (cfg.delta, quantile_of(&learner_costs, cfg.delta)),
        m_rollouts: cfg.m,
        horizon: cfg.horizon,
        blowups: roll.learner.iter().filter(|t| t.blowup.is_some()).count(),
    }
}

/// `Σ_t E[‖û_t − π*(x_t)‖²]^{1/2}` over expert rollouts.
pub fn expert_l2_risk(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig) -> Estimate {
    let expert_policy = ExpertPolicy::new(std::sync::Arc::new(InstanceRef(inst)));
    let expert: Vec<Trajectory> = (0..cfg.m)
        .map(|i| rollout(&expert_policy, inst, &batch_init(inst, cfg.seed, i), cfg.horizon, rollout_seed(cfg.seed, i)))
        .collect();
    expert_l2_from(policy, &expert, cfg)
}

/// Mean learner trajectory cost minus the expert's, paired over shared inits.
pub fn cost_risk(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig) -> Estimate {
    let roll = coupled_rollouts(policy, inst, cfg);
    let diffs: Vec<f64> =
        roll.learner.iter().zip(&roll.expert).map(|(l, e)| traj_cost(inst, l) - traj_cost(inst, e)).collect();
    mean_estimate(&diffs)
}

/// Empirical `(1 − delta)`-quantile of the learner's trajectory cost.
pub fn quantile_risk(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig, delta: f64) -> f64 {
    let costs: Vec<f64> = (0..cfg.m)
        .map(|i| {
            let traj = rollout(policy, inst, &batch_init(inst, cfg.seed, i), cfg.horizon, rollout_seed(cfg.seed, i));
            traj_cost(inst, &traj)
        })
        .collect();
    quantile_of(&costs, delta)
}

/// Clipped, summed state and input gaps under the canonical coupling.
pub fn traj_l1_risk(policy: &dyn Policy, inst: &dyn Instance, cfg: &EvalConfig) -> Estimate {
    let roll = coupled_rollouts(policy, inst, cfg);
    let l1: Vec<f64> = roll.expert.iter().zip(&roll.learner).map(|(e, l)| l1_gap(cfg.horizon, e, l)).collect();
    mean_estimate(&l1)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::funclass::sample_hard_function;
    use crate::instances::{make_stable_instance, Sign, StableInstance, StableParams};
    use crate::matkit::{PairIndex, Vector};
    use crate::policies::{gaussian_wrap, FnPolicy};

    fn inst() -> Arc<StableInstance> {
        let g = sample_hard_function(2, 2, 0.25, &mut seeded(4)).unwrap();
        Arc::new(make_stable_instance(g, PairIndex::Second, Sign::Minus, StableParams::default()).unwrap())
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn expert_has_zero_risk() {
        let inst = inst();
        let expert = ExpertPolicy::new(inst.clone());
        let r = evaluate(&expert, inst.as_ref(), &EvalConfig::new(12, 200, 3));
        assert_eq!(r.expert_l2.value, 0.0);
        assert_eq!(r.cost_risk.value, 0.0);
        assert_eq!(r.expert_cost, 0.0);
        assert_eq!(r.traj_l1.value, 0.0);
        assert_eq!(r.quantile.1, 0.0);
    }

    #[test]
    fn patch_offset_matches_two_branch_enumeration() {
        // offset c·e1 on the regression patch only; the expert leaves the patch after one step
        let inst = inst();
        let c = 0.3;
        let inner = inst.clone();
        let policy = FnPolicy::new("offset", move |x: &Vector, t| {
            let mut u = inner.expert_action(x, t);
            u[0] += c * inner.restrict(x);
            u
        });
        let cfg = EvalConfig::new(6, 4000, 8);
        let r = expert_l2_risk(&policy, inst.as_ref(), &cfg);
        // the patch weight is 1 on every regression init, and only t = 1 sits on the patch
        let p: f64 = 0.5;
        let want = (p * c * c).sqrt();
        assert!((r.value - want).abs() <= 4.0 * r.stderr + 1e-3, "{} vs {want}", r.value);
    }

    #[test]
    fn gaussian_noise_contributes_sigma_root_d() {
        let inst = inst();
        let sigma = 0.05;
        let policy = gaussian_wrap(Arc::new(ExpertPolicy::new(inst.clone())), sigma).unwrap();
        let cfg = EvalConfig::new(5, 200, 2);
        let r = expert_l2_risk(&policy, inst.as_ref(), &cfg);
        let want = 5.0 * sigma * 2.0;
        assert!((r.value - want).abs() <= 4.0 * r.stderr, "{} vs {want} ± {}", r.value, r.stderr);
    }

    #[test]
    fn single_step_offset_gives_clipped_l1() {
        let inst = inst();
        for delta in [0.2, 3.0] {
            let inner = inst.clone();
            let policy = FnPolicy::new("shift", move |x: &Vector, t| {
                let mut u = inner.expert_action(x, t);
                u[1] += delta;
                u
            });
            let r = traj_l1_risk(&policy, inst.as_ref(), &EvalConfig::new(1, 50, 0));
            assert!((r.value - f64::min(1.0, delta)).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_dominates_cost_risk() {
        let inst = inst();
        let inner = inst.clone();
        let policy = FnPolicy::new("bad", move |x: &Vector, t| inner.expert_action(x, t) + x * 0.2);
        let r = evaluate(&policy, inst.as_ref(), &EvalConfig::new(16, 300, 5));
        assert!(r.cost_risk.value > 0.0);
        assert!(r.traj_l1.value >= r.cost_risk.value);
    }

    #[test]
    fn stderr_shrinks_with_m() {
        let inst = inst();
        let policy = gaussian_wrap(Arc::new(ExpertPolicy::new(inst.clone())), 0.5).unwrap();
        let a = evaluate(&policy, inst.as_ref(), &EvalConfig::new(8, 400, 1)).traj_l1.stderr;
        let b = evaluate(&policy, inst.as_ref(), &EvalConfig::new(8, 1600, 1)).traj_l1.stderr;
        let ratio = a / b;
        assert!((1.6..2.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn evaluation_is_deterministic() {
        let inst = inst();
        let policy = gaussian_wrap(Arc::new(ExpertPolicy::new(inst.clone())), 0.1).unwrap();
        let cfg = EvalConfig::new(8, 50, 11);
        assert_eq!(evaluate(&policy, inst.as_ref(), &cfg), evaluate(&policy, inst.as_ref(), &cfg));
        assert_eq!(quantile_risk(&policy, inst.as_ref(), &cfg, 0.5), quantile_risk(&policy, inst.as_ref(), &cfg, 0.5));
    }
}
