//! The invariant suite behind `ilbench verify`.

use std::sync::Arc;
use std::time::Instant;

use ilbench_core::funclass::{rate_sweep, RateSweepConfig};
use ilbench_core::instances::{
    AnyInstance, GamblerSystem, InitBranch, InitState, Instance, Sign, StableInstance, UnstableVariant, CLOSED_LOOP_EIISS,
    OPEN_LOOP_EIISS,
};
use ilbench_core::matkit::{challenging_pair, cross_instability, sample_unit_ball, spectral_radius2, PairIndex};
use ilbench_core::policies::{
    bc_learn, BcOptions, BcTemplate, Completion, ConcentricPolicy, ExpertPolicy, GamblersRuinPolicy, SwitchingPolicy,
};
use ilbench_core::rng::seeded;
use ilbench_core::simkit::{
    batch_init, cost_risk, eiiss_check, expert_l2_risk, orthogonal_compounding_mc, rollout, sample_dataset, traj_cost,
    EiissConfig, EvalConfig, GreedyCancel, ZeroController,
};
use ilbench_core::{Matrix, Vector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, Construction};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The property the check witnesses.
    pub anchor: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

type Outcome = Result<(bool, String)>;

fn run(name: &str, anchor: &str, body: impl FnOnce() -> Outcome) -> Check {
    let start = Instant::now();
    let (pass, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check { name: name.into(), anchor: anchor.into(), pass, detail, seconds: start.elapsed().as_secs_f64() }
}

fn stable_instance(cfg: &BenchConfig) -> Result<Arc<StableInstance>> {
    let mut cfg = cfg.clone();
    cfg.instance.construction = Construction::Stable;
    match cfg.build_instance()? {
        AnyInstance::Stable(s) => Ok(Arc::new(s)),
        _ => unreachable!("stable construction requested"),
    }
}

/// Spectral radii of both open loops and both expert closed loops at `mu`.
pub fn challenging_pair_spectra(mu: f64) -> Check {
    run("challenging_pair_spectra", "open loops 1 - mu/2 and 1 - mu/4, expert closed loops 1 - 2mu", || {
        let pair = challenging_pair(mu)?;
        let measured = [
            spectral_radius2(&pair.a1),
            spectral_radius2(&pair.a2),
            spectral_radius2(&pair.closed_loop(PairIndex::First)),
            spectral_radius2(&pair.closed_loop(PairIndex::Second)),
        ];
        let want = [1.0 - mu / 2.0, 1.0 - mu / 4.0, 1.0 - 2.0 * mu, 1.0 - 2.0 * mu];
        let worst = measured.iter().zip(&want).map(|(m, w)| (m - w).abs()).fold(0.0, f64::max);
        Ok((worst <= 1e-9, format!("radii {measured:?}, max deviation {worst:.1e}")))
    })
}

/// Every gain sharing the first system's second column destabilizes one of the pair.
pub fn cross_destabilization(mus: &[f64], draws: usize, max_horizon: u32, seed: u64) -> Check {
    run("cross_destabilization", "a gain matching K1 on e2 grows some (A_i + K)^H e1 like (1 + mu/4)^H", || {
        let mut rng = seeded(seed);
        let mut worst = f64::INFINITY;
        for &mu in mus {
            let pair = challenging_pair(mu)?;
            for _ in 0..draws {
                let mut khat = pair.k1;
                khat[(0, 0)] = rng.random_range(-3.0..3.0);
                khat[(1, 0)] = rng.random_range(-3.0..3.0);
                for h in 1..=max_horizon {
                    let growth = cross_instability(&pair, &khat, h)?;
                    worst = worst.min(growth / (1.0 + mu / 4.0).powi(h as i32));
                }
            }
        }
        Ok((worst >= 1.0 - 1e-12, format!("smallest growth / bound {worst:.4}")))
    })
}

pub fn expert_cost_vanishes(cfg: &BenchConfig, rollouts: usize, horizon: usize) -> Check {
    run("expert_cost_vanishes", "the expert's trajectory cost is zero on the stable construction", || {
        let inst = stable_instance(cfg)?;
        let expert = ExpertPolicy::new(inst.clone());
        let worst = (0..rollouts)
            .map(|i| traj_cost(inst.as_ref(), &rollout(&expert, inst.as_ref(), &batch_init(inst.as_ref(), 3, i), horizon, i as u64)))
            .fold(0.0, f64::max);
        Ok((worst <= 1e-12, format!("max cost {worst:.1e} over {rollouts} rollouts")))
    })
}

pub fn linear_region_indistinguishable(cfg: &BenchConfig) -> Check {
    run("linear_region_indistinguishable", "expert data near the origin is identical under either hidden index", || {
        let first = stable_instance(cfg)?;
        let second = Arc::new(first.same_with(first.i.other(), first.omega));
        let (e1, e2) = (ExpertPolicy::new(first.clone()), ExpertPolicy::new(second.clone()));
        let mut compared = 0;
        for i in 0..2000 {
            let init = batch_init(first.as_ref(), 5, i);
            if !matches!(init.branch, InitBranch::Linear { .. }) {
                continue;
            }
            compared += 1;
            let a = rollout(&e1, first.as_ref(), &init, 24, i as u64);
            let b = rollout(&e2, second.as_ref(), &init, 24, i as u64);
            if a.states != b.states || a.inputs != b.inputs {
                return Ok((false, format!("rollout {i} differs")));
            }
        }
        Ok((compared > 0, format!("{compared} rollouts identical")))
    })
}

pub fn cost_lipschitz(cfg: &BenchConfig, samples: usize) -> Check {
    run("cost_lipschitz", "per-step cost is nonnegative and 1-Lipschitz on the working region", || {
        let inst = stable_instance(cfg)?;
        let d = inst.state_dim();
        let mut rng = seeded(21);
        let mut worst: f64 = 0.0;
        for trial in 0..samples {
            let centre = if trial % 3 == 1 { inst.x_offset.clone() } else { Vector::zeros(d) };
            let radius = [2.2, 2.2, 4.0][trial % 3];
            let x = &centre + sample_unit_ball(d, &mut rng) * radius;
            let u = sample_unit_ball(d, &mut rng);
            let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
            let dx = sample_unit_ball(d, &mut rng) * scale;
            let du = sample_unit_ball(d, &mut rng) * scale;
            let gap = (dx.norm_squared() + du.norm_squared()).sqrt();
            let c = inst.cost(&x, &u, 1);
            if c < 0.0 {
                return Ok((false, format!("negative cost {c}")));
            }
            worst = worst.max((c - inst.cost(&(&x + &dx), &(&u + &du), 1)).abs() / gap);
        }
        Ok((worst <= 1.0, format!("max difference quotient {worst:.4}")))
    })
}

/// Identity-input dynamics pass with (1, 0); the stable loops pass with their frozen
/// constants; an expanding linear system fails against (1, 0.9).
pub fn eiiss_suite(cfg: &BenchConfig, horizon: usize, trials: usize, seed: u64) -> Check {
    run("eiiss_suite", "exponential incremental input-to-state stability with calibrated (C, rho)", || {
        let settings = EiissConfig::default();
        let unit_ball = |d: usize| move |rng: &mut dyn RngCore| sample_unit_ball(d, rng);
        let identity = |_: &Vector, u: &Vector, _: usize| u.clone();
        let r_id = eiiss_check(&identity, &unit_ball(2), 2, 1.0, 0.0, horizon, trials, &settings, seed);

        let inst = stable_instance(cfg)?;
        let base = |rng: &mut dyn RngCore| inst.sample_init(rng).x1;
        let d = inst.input_dim();
        let open = |x: &Vector, u: &Vector, t: usize| inst.step(x, u, t);
        let closed = |x: &Vector, u: &Vector, t: usize| inst.step(x, &(inst.expert_action(x, t) + u), t);
        let (c, rho) = OPEN_LOOP_EIISS;
        let r_open = eiiss_check(&open, &base, d, c, rho, horizon, trials, &settings, seed + 1);
        let (cc, rc) = CLOSED_LOOP_EIISS;
        let r_closed = eiiss_check(&closed, &base, d, cc, rc, horizon, trials, &settings, seed + 2);

        let expanding = Matrix::identity(2, 2) * 1.1;
        let grow = |x: &Vector, u: &Vector, _: usize| &expanding * x + u;
        let r_grow = eiiss_check(&grow, &unit_ball(2), 2, 1.0, 0.9, horizon, trials.min(200), &settings, seed + 3);

        let pass = r_id.pass && r_open.pass && r_closed.pass && !r_grow.pass;
        Ok((
            pass,
            format!(
                "identity {:.3}, open {:.3}, closed {:.3}, expanding {:.3} (ratios; expanding must exceed 1)",
                r_id.max_ratio, r_open.max_ratio, r_closed.max_ratio, r_grow.max_ratio
            ),
        ))
    })
}

/// Cost-to-imitation-loss ratio of behavior cloning with and without knowledge of the index.
pub fn bc_ratios(cfg: &BenchConfig, n: usize, horizon: usize, m: usize) -> Result<(f64, f64)> {
    let inst = stable_instance(cfg)?;
    let data = sample_dataset(inst.as_ref(), n, horizon, cfg.data_seed());
    let template = BcTemplate::from_instance(&inst);
    let ec = EvalConfig::new(horizon, m, cfg.eval_seed());
    let ratio = |completion| -> Result<f64> {
        let p = bc_learn(&data, &template, &BcOptions { completion })?;
        Ok(cost_risk(&p, inst.as_ref(), &ec).value / expert_l2_risk(&p, inst.as_ref(), &ec).value)
    };
    Ok((ratio(Completion::Adversarial { truth: inst.i })?, ratio(Completion::AssumeIndex(inst.i))?))
}

pub fn bc_compounding(cfg: &BenchConfig, n: usize, horizon: usize, m: usize) -> Check {
    run("bc_compounding", "cloning without the hidden index compounds; with it, cost stays linear in imitation loss", || {
        let (adversarial, oracle) = bc_ratios(cfg, n, horizon, m)?;
        Ok((adversarial >= 20.0 && oracle <= 5.0, format!("ratio {adversarial:.3e} adversarial, {oracle:.3} with the index")))
    })
}

/// Survival probability and clipped error of the gambler's-ruin strategy, each within 3 standard errors.
pub fn gambler_laws(rho: f64, eps: f64, runs: usize, steps: usize) -> Check {
    run("gambler_laws", "survival 2^-t and clipped error 2^-t min(1, (2 rho)^t eps)", || {
        let sys = GamblerSystem { rho, xi: Sign::Plus, eps0: eps };
        let policy = GamblersRuinPolicy { rho };
        let init = InitState::point(Vector::from_element(1, eps));
        let mut alive = vec![0usize; steps];
        let mut clipped = vec![0.0f64; steps];
        let mut clipped_sq = vec![0.0f64; steps];
        for run in 0..runs {
            let traj = rollout(&policy, &sys, &init, steps, run as u64);
            for t in 1..=steps {
                let x = traj.state(t + 1)[0].abs();
                alive[t - 1] += usize::from(x != 0.0);
                let c = x.min(1.0);
                clipped[t - 1] += c;
                clipped_sq[t - 1] += c * c;
            }
        }
        let n = runs as f64;
        let mut worst: f64 = 0.0;
        for t in 1..=steps {
            let p = 0.5f64.powi(t as i32);
            let freq = alive[t - 1] as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            worst = worst.max((freq - p).abs() / se);
            let want = p * ((2.0 * rho).powi(t as i32) * eps).min(1.0);
            let mean = clipped[t - 1] / n;
            let se = ((clipped_sq[t - 1] / n - mean * mean) / n).sqrt().max(1e-15);
            worst = worst.max((mean - want).abs() / se);
        }
        Ok((worst <= 3.0, format!("largest deviation {worst:.2} standard errors")))
    })
}

pub fn concentric_stabilization(rhos: &[f64], draws: usize) -> Check {
    run("concentric_stabilization", "the concentric strategy reaches zero by the fourth state and never exceeds (2 rho)^2 |x_1|", || {
        let mut rng = seeded(17);
        for &rho in rhos {
            let policy = ConcentricPolicy { rho };
            for _ in 0..draws {
                let x1: f64 = rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-6.0..3.0));
                let xi = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
                let sys = GamblerSystem { rho, xi, eps0: x1 };
                let traj = rollout(&policy, &sys, &InitState::point(Vector::from_element(1, x1)), 8, 0);
                for t in 1..=9 {
                    let x = traj.state(t)[0];
                    if (t > 3 && x != 0.0) || x.abs() > (2.0 * rho).powi(2) * x1.abs() * (1.0 + 1e-12) {
                        return Ok((false, format!("rho {rho}, x1 {x1}: x_{t} = {x}")));
                    }
                }
            }
        }
        Ok((true, format!("{} rollouts settled", rhos.len() * draws)))
    })
}

pub fn action_switching(rho: f64, draws: usize) -> Check {
    run("action_switching", "switching actions zeroes the third state for either sign", || {
        let mut rng = seeded(3);
        for _ in 0..draws {
            let x1: f64 = rng.random_range(-100.0..100.0);
            for xi in [Sign::Plus, Sign::Minus] {
                let sys = GamblerSystem { rho, xi, eps0: x1 };
                let traj = rollout(&SwitchingPolicy { rho }, &sys, &InitState::point(Vector::from_element(1, x1)), 4, 0);
                let x3 = traj.state(3)[0];
                if x3 != 0.0 {
                    return Ok((false, format!("x1 {x1}, {xi:?}: x_3 = {x3}")));
                }
            }
        }
        Ok((true, format!("{} rollouts", 2 * draws)))
    })
}

/// Greedy cancellation cannot beat random rotations in high dimension. In one dimension it
/// survives each controlled step with probability 1/2, so the frequency decays like 2^{-(H-1)}.
pub fn orthogonal_compounding(d: usize, rho: f64, horizon: usize, trials: usize) -> Check {
    run("orthogonal_compounding", "under random rotations the state grows like rho^{t/2} in high dimension only", || {
        let high = orthogonal_compounding_mc(d, rho, horizon, &GreedyCancel, trials, 3);
        let one = orthogonal_compounding_mc(1, rho, horizon, &GreedyCancel, trials, 4);
        let p = 0.5f64.powi(horizon as i32 - 1);
        let one_ok = (one.value - p).abs() <= 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
        let long = orthogonal_compounding_mc(1, rho, 20, &GreedyCancel, trials, 4);
        Ok((
            high.value >= 0.77 && one_ok && long.value == 0.0,
            format!(
                "frequency {:.4} at d = {d}; at d = 1, {:.4} against {p:.4} and {} at H = 20",
                high.value, one.value, long.value
            ),
        ))
    })
}

pub fn rotation_conservation(d: usize, rho: f64, horizon: usize, trials: usize) -> Check {
    run("rotation_conservation", "with zero input a rotation scaled by rho grows the norm by exactly rho per step", || {
        let freq = orthogonal_compounding_mc(d, rho, horizon, &ZeroController, trials, 5);
        Ok((freq.value == 1.0, format!("frequency {:.4}", freq.value)))
    })
}

pub fn dataset_determinism(cfg: &BenchConfig) -> Check {
    run("dataset_determinism", "datasets regenerate bit-identically from their seed", || {
        let inst = cfg.build_instance()?;
        let a = sample_dataset(&inst, 64, cfg.data.horizon, cfg.data_seed());
        let b = sample_dataset(&inst, 64, cfg.data.horizon, cfg.data_seed());
        let c = sample_dataset(&inst, 64, cfg.data.horizon, cfg.data_seed() ^ 1);
        Ok((a == b && a != c, "same seed equal, different seed differs".into()))
    })
}

pub fn unstable_expert_cost(cfg: &BenchConfig) -> Check {
    run("unstable_expert_cost", "the expert has zero cost on both unstable variants", || {
        let mut worst: f64 = 0.0;
        for variant in [UnstableVariant::TimeVarying, UnstableVariant::TimeInvariant] {
            let mut c = cfg.clone();
            c.instance.construction = Construction::Unstable;
            c.instance.variant = variant;
            let inst = Arc::new(c.build_instance()?);
            let expert = ExpertPolicy::new(inst.clone());
            worst = worst.max(cost_risk(&expert, inst.as_ref(), &EvalConfig::new(16, 500, cfg.eval_seed())).value);
        }
        Ok((worst == 0.0, format!("max cost risk {worst:.1e}")))
    })
}

pub fn regression_rate(k: usize, s: usize, seeds: usize) -> Check {
    run("regression_rate", "local polynomial regression risk decays like n^{-s/k}", || {
        let grid: Vec<usize> = (6..=12).map(|p| 1usize << p).collect();
        let sweep = rate_sweep(&RateSweepConfig::new(k, s, grid, seeds), &mut seeded(5))?;
        let want = -(s as f64) / k as f64;
        let ok = sweep.slope >= 1.35 * want && sweep.slope <= 0.65 * want;
        Ok((ok, format!("slope {:.3} against {want:.3}", sweep.slope)))
    })
}

/// Every check at its default size; the challenging-pair check uses the configured `mu`.
pub fn run_all(cfg: &BenchConfig) -> Vec<Check> {
    let i = &cfg.instance;
    vec![
        challenging_pair_spectra(i.mu),
        cross_destabilization(&[0.125, 0.25, 0.5], 100, 30, 8),
        expert_cost_vanishes(cfg, 10_000, 32),
        linear_region_indistinguishable(cfg),
        cost_lipschitz(cfg, 20_000),
        eiiss_suite(cfg, 40, 10_000, 2024),
        bc_compounding(cfg, 256, 32, 1000),
        gambler_laws(i.rho, i.eps0, 100_000, 10),
        concentric_stabilization(&[1.25, 1.5, 2.0], 1000),
        action_switching(i.rho, 200),
        orthogonal_compounding(64, 1.5, 8, 10_000),
        rotation_conservation(64, 1.5, 8, 1000),
        dataset_determinism(cfg),
        unstable_expert_cost(cfg),
        regression_rate(2, 2, 10),
    ]
}

pub fn report_text(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        out.push_str(&format!("{verdict} {:<32} {:>7.2}s  {}\n      {}\n", c.name, c.seconds, c.anchor, c.detail));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    out.push_str(&format!("{} of {} checks passed\n", checks.len() - failed, checks.len()));
    out
}

pub fn failures(checks: &[Check]) -> Result<()> {
    match checks.iter().filter(|c| !c.pass).count() {
        0 => Ok(()),
        n => Err(CliError::VerifyFailed(n)),
    }
}
