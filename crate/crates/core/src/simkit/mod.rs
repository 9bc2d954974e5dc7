//! Rollouts, datasets, risk estimators and verification probes.

mod probes;
mod risk;

pub use probes::{
    compounding_probe, eiiss_check, excursion_curve, orthogonal_compounding_mc, orthogonal_bound, Controller, EiissConfig, EiissReport, ExcursionCurve, GreedyCancel,
    ProbeCurve, ZeroController,
};
pub use risk::{cost_risk, evaluate, expert_l2_risk, quantile_risk, traj_cost, traj_l1_risk, EvalConfig, RiskReport};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::instances::{InitBranch, InitState, Instance};
use crate::matkit::Vector;
use crate::policies::{ExpertPolicy, History, Policy};
use crate::rng::{derive_seed, seeded};

/// States beyond this norm abort a rollout.
pub const BLOWUP_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x_1..x_H`, shorter when the rollout blew up.
    pub states: Vec<Vector>,
    /// `u_1..u_H`, one per state.
    pub inputs: Vec<Vector>,
    /// `x_{H+1}`, or the offending state after a blow-up.
    pub terminal: Vector,
    pub seed: u64,
    pub instance_id: String,
    pub branch: InitBranch,
    /// Time step whose successor left the finite, bounded region.
    pub blowup: Option<usize>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `x_t` for `t = 1..=H+1`.
    pub fn state(&self, t: usize) -> &Vector {
        if t <= self.states.len() {
            &self.states[t - 1]
        } else {
            &self.terminal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub horizon: usize,
    pub instance_id: String,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Closed-loop rollout of `h` steps. Plans are requested only at re-plan steps.
pub fn rollout_with(
    policy: &dyn Policy,
    inst: &dyn Instance,
    init: &InitState,
    h: usize,
    rng: &mut dyn RngCore,
) -> (Vec<Vector>, Vec<Vector>, Vector, Option<usize>) {
    let chunk = policy.chunk_len().max(1);
    let mut hist = History::start(init.x1.clone());
    let mut buffer: Vec<Vector> = Vec::new();
    let mut blowup = None;
    let mut terminal = init.x1.clone();
    for t in 1..=h {
        let offset = (t - 1) % chunk;
        if offset == 0 {
            buffer = policy.plan(&hist, rng);
            assert_eq!(buffer.len(), chunk, "policy returned a plan of the wrong length");
        }
        let u = buffer[offset].clone();
        let next = inst.step(hist.current(), &u, t);
        let bad = !next.iter().all(|v| v.is_finite()) || next.norm() > BLOWUP_NORM;
        if bad {
            hist.inputs.push(u);
            terminal = next;
            blowup = Some(t);
            break;
        }
        if t == h {
            hist.inputs.push(u);
            terminal = next;
        } else {
            hist.push(u, next);
        }
    }
    (hist.states, hist.inputs, terminal, blowup)
}

pub fn rollout(policy: &dyn Policy, inst: &dyn Instance, init: &InitState, h: usize, seed: u64) -> Trajectory {
    let mut rng = seeded(seed);
    let (states, inputs, terminal, blowup) = rollout_with(policy, inst, init, h, &mut rng);
    Trajectory { states, inputs, terminal, seed, instance_id: inst.id(), branch: init.branch.clone(), blowup }
}

/// Seed of the `i`-th rollout of a batch.
pub fn rollout_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, i as u64)
}

/// Initial state of the `i`-th rollout of a batch.
pub fn batch_init(inst: &dyn Instance, seed: u64, i: usize) -> InitState {
    let mut rng = seeded(derive_seed(seed ^ 0x5EED_1D17, i as u64));
    inst.sample_init(&mut rng)
}

pub fn sample_dataset(inst: &dyn Instance, n: usize, h: usize, seed: u64) -> Dataset {
    let expert = ExpertPolicy::new(std::sync::Arc::new(InstanceRef(inst)));
    let trajectories = (0..n)
        .map(|i| {
            let init = batch_init(inst, seed, i);
            rollout(&expert, inst, &init, h, rollout_seed(seed, i))
        })
        .collect();
    Dataset { trajectories, horizon: h, instance_id: inst.id(), seed }
}

/// Borrowing adapter so an `&dyn Instance` can back an [`ExpertPolicy`].
pub(crate) struct InstanceRef<'a>(pub &'a dyn Instance);

impl Instance for InstanceRef<'_> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn step(&self, x: &Vector, u: &Vector, t: usize) -> Vector {
        self.0.step(x, u, t)
    }
    fn expert_action(&self, x: &Vector, t: usize) -> Vector {
        self.0.expert_action(x, t)
    }
    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState {
        self.0.sample_init(rng)
    }
    fn cost(&self, x: &Vector, u: &Vector, t: usize) -> f64 {
        self.0.cost(x, u, t)
    }
    fn id(&self) -> String {
        self.0.id()
    }
}
