use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{rollout, rollout_seed, BLOWUP_NORM};
use crate::funclass::Estimate;
use crate::instances::{InitState, Instance};
use crate::matkit::{gaussian_vector, random_orthogonal, sample_unit_ball, Vector};
use crate::policies::Policy;
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiissConfig {
    /// Largest initial-state gap.
    pub init_gap: f64,
    /// Largest per-step input gap.
    pub input_gap: f64,
    /// Radius of the nominal input stream.
    pub input_scale: f64,
}

impl Default for EiissConfig {
    fn default() -> Self {
        EiissConfig { init_gap: 0.1, input_gap: 0.05, input_scale: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiissReport {
    /// Largest observed `LHS / RHS`.
    pub max_ratio: f64,
    /// Largest observed `LHS − RHS`.
    pub max_violation: f64,
    pub pass: bool,
    pub trials: usize,
}

/// Empirical check of `‖x_{t+1} − x'_{t+1}‖ ≤ Cρ^t‖x_1 − x'_1‖ + Σ_k Cρ^{t−k}‖u_k − u'_k‖`.
///
/// `base` draws a nominal initial state; gaps are drawn uniformly from balls of the configured radii.
#[allow(clippy::too_many_arguments)]
pub fn eiiss_check(
    step: &dyn Fn(&Vector, &Vector, usize) -> Vector,
    base: &dyn Fn(&mut dyn RngCore) -> Vector,
    input_dim: usize,
    c: f64,
    rho: f64,
    horizon: usize,
    trials: usize,
    cfg: &EiissConfig,
    seed: u64,
) -> EiissReport {
    let mut max_ratio: f64 = 0.0;
    let mut max_violation = f64::NEG_INFINITY;
    for trial in 0..trials {
        let mut rng = stream(seed, trial as u64);
        let mut x = base(&mut rng);
        let mut xp = &x + sample_unit_ball(x.len(), &mut rng) * cfg.init_gap;
        // weighted[k] = ‖Δ_k‖, with Δ_0 the initial gap
        let mut gaps = vec![(&x - &xp).norm()];
        for t in 1..=horizon {
            let u = sample_unit_ball(input_dim, &mut rng) * cfg.input_scale;
            let up = &u + sample_unit_ball(input_dim, &mut rng) * cfg.input_gap;
            gaps.push((&u - &up).norm());
            x = step(&x, &u, t);
            xp = step(&xp, &up, t);
            let lhs = (&x - &xp).norm();
            let rhs: f64 = c * rho.powi(t as i32) * gaps[0]
                + (1..=t).map(|k| c * rho.powi((t - k) as i32) * gaps[k]).sum::<f64>();
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            } else if lhs > 0.0 {
                max_ratio = f64::INFINITY;
            }
            max_violation = max_violation.max(lhs - rhs);
        }
    }
    EiissReport { max_ratio, max_violation, pass: max_ratio <= 1.0 + 1e-6, trials }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    /// `⟨e1, x̃_t − x_t⟩ / delta` for `t = 1..=H+1`.
    pub gap: Vec<f64>,
    /// Running maximum `max_{s≤t} |⟨e1, x_s − x̃_s⟩| / delta`.
    pub curve: Vec<f64>,
    pub blowup: Option<usize>,
}

/// Two rollouts sharing all noise, from `init` and from `init + delta·e1`.
pub fn compounding_probe(
    policy: &dyn Policy,
    inst: &dyn Instance,
    init: &InitState,
    horizon: usize,
    delta: f64,
    seed: u64,
) -> ProbeCurve {
    if delta == 0.0 {
        return ProbeCurve { gap: vec![0.0; horizon + 1], curve: vec![0.0; horizon + 1], blowup: None };
    }
    let mut shifted = init.clone();
    shifted.x1[0] += delta;
    let a = rollout(policy, inst, init, horizon, seed);
    let b = rollout(policy, inst, &shifted, horizon, seed);
    let blowup = match (a.blowup, b.blowup) {
        (Some(s), Some(t)) => Some(s.min(t)),
        (s, t) => s.or(t),
    };
    let len = match blowup {
        Some(t) => t + 1,
        None => horizon + 1,
    };
    let gap: Vec<f64> = (1..=len).map(|t| (b.state(t)[0] - a.state(t)[0]) / delta).collect();
    let mut running: f64 = 0.0;
    let curve = gap
        .iter()
        .map(|g| {
            running = running.max(g.abs());
            running * delta.signum()
        })
        .collect();
    ProbeCurve { gap, curve, blowup }
}

/// Mean over initial states of `max_{s≤t} |⟨e1, x_s⟩|`, for `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionCurve {
    pub mean: Vec<Estimate>,
    pub blowups: usize,
}

/// Rollout `i` starts at `inits[i]` with seed `rollout_seed(seed, i)`; after a blow-up
/// the excursion is held at the blow-up norm.
pub fn excursion_curve(policy: &dyn Policy, inst: &dyn Instance, inits: &[InitState], horizon: usize, seed: u64) -> ExcursionCurve {
    let mut per_t = vec![Vec::with_capacity(inits.len()); horizon];
    let mut blowups = 0;
    for (i, init) in inits.iter().enumerate() {
        let traj = rollout(policy, inst, init, horizon, rollout_seed(seed, i));
        blowups += usize::from(traj.blowup.is_some());
        let mut running: f64 = 0.0;
        for (t, samples) in per_t.iter_mut().enumerate() {
            running = match traj.states.get(t) {
                Some(x) => running.max(x[0].abs()),
                None => BLOWUP_NORM,
            };
            samples.push(running);
        }
    }
    ExcursionCurve { mean: per_t.iter().map(|xs| Estimate::from_samples(xs)).collect(), blowups }
}

/// Causal rule for `x_{t+1} = ρ O_t x_t + u_t` that never sees `O_t`.
pub trait Controller: Sync {
    /// `u_t` from states `x_1..x_t` and inputs `u_1..u_{t−1}`.
    fn control(&self, states: &[Vector], inputs: &[Vector], rho: f64) -> Vector;
}

pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&self, states: &[Vector], _inputs: &[Vector], _rho: f64) -> Vector {
        Vector::zeros(states[0].len())
    }
}

/// Cancels with the last rotation as seen through its action on `x_{t−1}`.
///
/// The estimate is the plane rotation carrying `x_{t−1}` onto `(x_t − u_{t−1})/ρ`;
/// in one dimension this is the previous sign.
pub struct GreedyCancel;

impl Controller for GreedyCancel {
    fn control(&self, states: &[Vector], inputs: &[Vector], rho: f64) -> Vector {
        let t = states.len();
        let x = &states[t - 1];
        if t < 2 {
            return Vector::zeros(x.len());
        }
        let prev = &states[t - 2];
        let image = (x - &inputs[t - 2]) / rho;
        let (na, nb) = (prev.norm(), image.norm());
        if na == 0.0 || nb == 0.0 {
            return Vector::zeros(x.len());
        }
        let a = prev / na;
        let b = image / nb;
        let cos = a.dot(&b);
        let perp = &b - &a * cos;
        let sin = perp.norm();
        let ya = x.dot(&a);
        let mut rotated = x + &a * ((cos - 1.0) * ya);
        if sin > 1e-12 {
            let p = perp / sin;
            let yp = x.dot(&p);
            rotated += &p * ((cos - 1.0) * yp) + (&p * ya - &a * yp) * sin;
        }
        rotated * -rho
    }
}

/// Lower bound `1 − H·exp(−d/18)` on the growth-event probability.
pub fn orthogonal_bound(d: usize, horizon: usize) -> f64 {
    (1.0 - horizon as f64 * (-(d as f64) / 18.0).exp()).max(0.0)
}

fn orthogonal_trial(d: usize, rho: f64, horizon: usize, controller: &dyn Controller, rng: &mut dyn RngCore, full: bool) -> bool {
    let g = gaussian_vector(d, rng);
    let x1 = &g / g.norm();
    let mut states = vec![x1.clone()];
    let mut inputs = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let x = states.last().unwrap().clone();
        let u = controller.control(&states, &inputs, rho);
        // a Haar rotation independent of the past moves x_t to a uniform point of its sphere
        let rotated = if full {
            random_orthogonal(d, rng) * &x
        } else {
            let dir = gaussian_vector(d, rng);
            &dir * (x.norm() / dir.norm())
        };
        let next = rotated * rho + &u;
        if next.norm() < rho.powf(t as f64 / 2.0) * x1.norm() {
            return false;
        }
        inputs.push(u);
        states.push(next);
    }
    true
}

/// Frequency of `{∀t ≤ H: ‖x_{t+1}‖ ≥ ρ^{t/2}‖x_1‖}` with i.i.d. Haar rotations.
pub fn orthogonal_compounding_mc(
    d: usize,
    rho: f64,
    horizon: usize,
    controller: &dyn Controller,
    trials: usize,
    seed: u64,
) -> Estimate {
    orthogonal_mc(d, rho, horizon, controller, trials, seed, false)
}

fn orthogonal_mc(
    d: usize,
    rho: f64,
    horizon: usize,
    controller: &dyn Controller,
    trials: usize,
    seed: u64,
    full: bool,
) -> Estimate {
    let mut rng = seeded(seed);
    let hits: Vec<f64> = (0..trials)
        .map(|_| if orthogonal_trial(d, rho, horizon, controller, &mut rng, full) { 1.0 } else { 0.0 })
        .collect();
    Estimate::from_samples(&hits)
}
