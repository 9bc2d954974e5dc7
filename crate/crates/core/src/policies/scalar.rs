use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{History, Policy, PolicyKind};
use crate::matkit::Vector;

fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

/// Plays `ρx` or `−ρx` on a fair coin: the state either doubles or is cancelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamblersRuinPolicy {
    pub rho: f64,
}

impl Policy for GamblersRuinPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::GamblersRuin
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        let x = history.current()[0];
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        scalar(sign * self.rho * x)
    }

    fn name(&self) -> String {
        "gamblers_ruin".into()
    }
}

/// Deterministic gain whose sign alternates across the shells
/// `((2ρ)^{-2j}, (2ρ)^{-2(j-1)}]` of `|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentricPolicy {
    pub rho: f64,
}

impl ConcentricPolicy {
    /// Index `j` of the shell containing `|x| > 0`.
    pub fn shell(&self, x: f64) -> i32 {
        let q = (2.0 * self.rho).powi(2);
        let a = x.abs();
        let mut j = (-a.ln() / q.ln()).floor() as i32 + 1;
        // repair rounding at the closed upper endpoints
        while a > q.powi(1 - j) {
            j -= 1;
        }
        while a <= q.powi(-j) {
            j += 1;
        }
        j
    }

    pub fn gain(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        if self.shell(x).rem_euclid(2) == 0 {
            self.rho * x
        } else {
            -self.rho * x
        }
    }
}

impl Policy for ConcentricPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Concentric
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        scalar(self.gain(history.current()[0]))
    }

    fn mean_action(&self, x: &Vector, _t: usize) -> Option<Vector> {
        Some(scalar(self.gain(x[0])))
    }

    fn name(&self) -> String {
        "concentric".into()
    }
}

/// `−ρx` at odd times, `ρx` at even times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingPolicy {
    pub rho: f64,
}

impl Policy for SwitchingPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Switching
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        let x = history.current()[0];
        let sign = if history.t() % 2 == 1 { -1.0 } else { 1.0 };
        scalar(sign * self.rho * x)
    }

    fn period(&self) -> Option<usize> {
        Some(2)
    }

    fn name(&self) -> String {
        "switching".into()
    }
}

/// Probes with `−ρx_1`, reads off the open-loop gain from `x_2`, then cancels it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSwitchingPolicy {
    pub rho: f64,
}

impl Policy for ProbeSwitchingPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Switching
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        let x = history.current()[0];
        if history.t() == 1 {
            return scalar(-self.rho * x);
        }
        let x1 = history.states[0][0];
        if x1 == 0.0 {
            return scalar(0.0);
        }
        let open_loop = (history.states[1][0] - history.inputs[0][0]) / x1;
        scalar(-open_loop * x)
    }

    fn name(&self) -> String {
        "probe_switching".into()
    }
}
