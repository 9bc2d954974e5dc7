//! The hard constructions, each bundling expert, dynamics, initial distribution and cost.

mod control;
mod gambler;
mod linear;
mod stable;
mod unstable;

pub use control::one_step_control;
pub use gambler::{gambler_step, GamblerSystem};
pub use linear::LinearSystem;
pub use stable::{make_stable_instance, StableInstance, StableParams, CLOSED_LOOP_EIISS, OPEN_LOOP_EIISS};
pub use unstable::{make_unstable_instance, UnstableInstance, UnstableParams, UnstableVariant};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::matkit::Vector;

/// `±1` parameter carried by an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Which part of the initial distribution a draw came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitBranch {
    /// The regression patch: the state encodes a query `z` of the hidden function.
    Regression { z: Vec<f64> },
    /// The linear region near the origin, scaled by `2^{-y_level}`.
    Linear { y_level: u32 },
    /// A fixed initial state.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub x1: Vector,
    pub branch: InitBranch,
}

impl InitState {
    pub fn point(x1: Vector) -> Self {
        InitState { x1, branch: InitBranch::Point }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.branch, InitBranch::Regression { .. })
    }
}

/// A control problem with a known expert. Time indices start at 1.
pub trait Instance: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize {
        self.state_dim()
    }

    fn step(&self, x: &Vector, u: &Vector, t: usize) -> Vector;

    fn expert_action(&self, x: &Vector, t: usize) -> Vector;

    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState;

    /// Per-step cost before clipping.
    fn cost(&self, x: &Vector, u: &Vector, t: usize) -> f64;

    fn id(&self) -> String;
}

/// Any of the constructions, serializable with its full parameter payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "snake_case")]
pub enum AnyInstance {
    Stable(StableInstance),
    Unstable(UnstableInstance),
    Gambler(GamblerSystem),
}

impl AnyInstance {
    fn inner(&self) -> &dyn Instance {
        match self {
            AnyInstance::Stable(s) => s,
            AnyInstance::Unstable(u) => u,
            AnyInstance::Gambler(g) => g,
        }
    }

    pub fn as_stable(&self) -> Option<&StableInstance> {
        match self {
            AnyInstance::Stable(s) => Some(s),
            _ => None,
        }
    }
}

impl Instance for AnyInstance {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn step(&self, x: &Vector, u: &Vector, t: usize) -> Vector {
        self.inner().step(x, u, t)
    }

    fn expert_action(&self, x: &Vector, t: usize) -> Vector {
        self.inner().expert_action(x, t)
    }

    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState {
        self.inner().sample_init(rng)
    }

    fn cost(&self, x: &Vector, u: &Vector, t: usize) -> f64 {
        self.inner().cost(x, u, t)
    }

    fn id(&self) -> String {
        self.inner().id()
    }
}
