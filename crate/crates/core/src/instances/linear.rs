use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{InitState, Instance};
use crate::matkit::{sample_unit_ball, Matrix, Vector};

/// `x_{t+1} = A x_t + u_t` with a linear expert and cost `‖x‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: Matrix,
    pub expert_gain: Matrix,
}

impl LinearSystem {
    pub fn open_loop(a: Matrix) -> Self {
        let d = a.nrows();
        LinearSystem { a, expert_gain: Matrix::zeros(d, d) }
    }
}

impl Instance for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn step(&self, x: &Vector, u: &Vector, _t: usize) -> Vector {
        &self.a * x + u
    }

    fn expert_action(&self, x: &Vector, _t: usize) -> Vector {
        &self.expert_gain * x
    }

    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState {
        InitState::point(sample_unit_ball(self.state_dim(), rng))
    }

    fn cost(&self, x: &Vector, _u: &Vector, _t: usize) -> f64 {
        x.norm()
    }

    fn id(&self) -> String {
        format!("linear-d{}", self.state_dim())
    }
}
