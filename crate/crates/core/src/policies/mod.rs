//! Policies: expert wrappers, simple and stochastic learners, non-simple strategies,
//! and small gradient-trained networks.
//!
//! A policy sees the full history when it is asked to plan. Chunked policies plan
//! `chunk_len` actions at once; the rollout engine only calls [`Policy::plan`] on
//! re-plan steps and replays the stored actions in between, so a chunk can never
//! react to a state it did not plan from.

mod anticonc;
mod bc;
mod chunk;
mod diffusion;
mod net;
mod scalar;
mod stochastic;

pub use anticonc::{anti_concentration_estimate, AntiConcentration, Coupling, ALPHA_GRID};
pub use bc::{bc_learn, BcFit, BcOptions, BcPolicy, BcTemplate, Completion, FitStatus};
pub use chunk::{chunk_wrap, ChunkedPolicy, LinearModel};
pub use diffusion::{toy_diffusion_pairs, toy_diffusion_train, DiffusionConfig, DiffusionNet, DiffusionPolicy, Schedule, Standardizer};
pub use net::{
    chunk_targets, mlp_train, mlp_train_pairs, mlp_train_snapshots, AdamW, MlpConfig, MlpPolicy, OptimizerConfig, TinyNet, TracePoint, TrainOutcome,
};
pub use scalar::{ConcentricPolicy, GamblersRuinPolicy, ProbeSwitchingPolicy, SwitchingPolicy};
pub use stochastic::{gaussian_wrap, GaussianPolicy, GaussianWrap, MixturePolicy, RandomNoisePolicy};

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::instances::Instance;
use crate::matkit::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Deterministic,
    SimplyStochastic,
    Gaussian,
    Mixture,
    GamblersRuin,
    Concentric,
    Switching,
    Chunked,
    Mlp,
    ToyDiffusion,
}

impl PolicyKind {
    pub fn is_deterministic(self) -> bool {
        matches!(self, PolicyKind::Deterministic | PolicyKind::Concentric | PolicyKind::Switching | PolicyKind::Mlp)
    }
}

/// States `x_1..x_t` and the inputs `u_1..u_{t-1}` applied so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl History {
    pub fn start(x1: Vector) -> Self {
        History { states: vec![x1], inputs: Vec::new() }
    }

    /// Current time index, starting at 1.
    pub fn t(&self) -> usize {
        self.states.len()
    }

    pub fn current(&self) -> &Vector {
        self.states.last().expect("history holds at least the initial state")
    }

    pub fn push(&mut self, u: Vector, next: Vector) {
        self.inputs.push(u);
        self.states.push(next);
    }
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// Action at the current time, `history.t()`.
    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector;

    /// Number of actions produced per plan; 1 for closed-loop policies.
    fn chunk_len(&self) -> usize {
        1
    }

    /// Actions for times `t..t + chunk_len`.
    fn plan(&self, history: &History, rng: &mut dyn RngCore) -> Vec<Vector> {
        vec![self.act(history, rng)]
    }

    /// Period of an explicitly time-periodic rule.
    fn period(&self) -> Option<usize> {
        None
    }

    /// Mean action at a state, for policies whose noise does not depend on the state.
    fn mean_action(&self, _x: &Vector, _t: usize) -> Option<Vector> {
        None
    }

    fn name(&self) -> String {
        format!("{:?}", self.kind()).to_lowercase()
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn kind(&self) -> PolicyKind {
        (**self).kind()
    }
    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        (**self).act(history, rng)
    }
    fn chunk_len(&self) -> usize {
        (**self).chunk_len()
    }
    fn plan(&self, history: &History, rng: &mut dyn RngCore) -> Vec<Vector> {
        (**self).plan(history, rng)
    }
    fn period(&self) -> Option<usize> {
        (**self).period()
    }
    fn mean_action(&self, x: &Vector, t: usize) -> Option<Vector> {
        (**self).mean_action(x, t)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// The instance's own expert.
pub struct ExpertPolicy<I: Instance + ?Sized> {
    pub inst: Arc<I>,
}

impl<I: Instance + ?Sized> ExpertPolicy<I> {
    pub fn new(inst: Arc<I>) -> Self {
        ExpertPolicy { inst }
    }
}

impl<I: Instance + ?Sized> Policy for ExpertPolicy<I> {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Deterministic
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        self.inst.expert_action(history.current(), history.t())
    }

    fn mean_action(&self, x: &Vector, t: usize) -> Option<Vector> {
        Some(self.inst.expert_action(x, t))
    }

    fn name(&self) -> String {
        "expert".into()
    }
}

/// `u = K x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub gain: Matrix,
}

impl Policy for LinearPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Deterministic
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        &self.gain * history.current()
    }

    fn mean_action(&self, x: &Vector, _t: usize) -> Option<Vector> {
        Some(&self.gain * x)
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

type ActionFn = dyn Fn(&Vector, usize) -> Vector + Send + Sync;

/// Deterministic Markov policy from a closure of `(x, t)`.
pub struct FnPolicy {
    label: String,
    f: Box<ActionFn>,
}

impl FnPolicy {
    pub fn new(label: impl Into<String>, f: impl Fn(&Vector, usize) -> Vector + Send + Sync + 'static) -> Self {
        FnPolicy { label: label.into(), f: Box::new(f) }
    }

    pub fn zero(d: usize) -> Self {
        FnPolicy::new("zero", move |_, _| Vector::zeros(d))
    }
}

impl Policy for FnPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Deterministic
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        (self.f)(history.current(), history.t())
    }

    fn mean_action(&self, x: &Vector, t: usize) -> Option<Vector> {
        Some((self.f)(x, t))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}
