use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{InitState, Instance, Sign};
use crate::matkit::Vector;

/// Scalar system `x' = ξ·ρ·x + u` started at `x1 = eps0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamblerSystem {
    pub rho: f64,
    pub xi: Sign,
    pub eps0: f64,
}

pub fn gambler_step(sys: &GamblerSystem, x: f64, u: f64) -> f64 {
    sys.xi.value() * sys.rho * x + u
}

impl Instance for GamblerSystem {
    fn state_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &Vector, u: &Vector, _t: usize) -> Vector {
        Vector::from_element(1, gambler_step(self, x[0], u[0]))
    }

    fn expert_action(&self, x: &Vector, _t: usize) -> Vector {
        Vector::from_element(1, -self.xi.value() * self.rho * x[0])
    }

    fn sample_init(&self, _rng: &mut dyn RngCore) -> InitState {
        InitState::point(Vector::from_element(1, self.eps0))
    }

    /// `|x|` from the second step on; the initial error is given, not incurred.
    fn cost(&self, x: &Vector, _u: &Vector, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            x[0].abs()
        }
    }

    fn id(&self) -> String {
        format!("gambler-rho{}-xi{:+}-eps{}", self.rho, self.xi.value() as i32, self.eps0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancelling_input_zeroes() {
        for xi in [Sign::Plus, Sign::Minus] {
            let sys = GamblerSystem { rho: 1.5, xi, eps0: 0.01 };
            assert_eq!(gambler_step(&sys, 0.3, -xi.value() * 1.5 * 0.3), 0.0);
            let mut x = sys.eps0;
            for t in 1..=10 {
                x = gambler_step(&sys, x, 0.0);
                assert!((x.abs() - 1.5f64.powi(t) * 0.01).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_gain_cannot_serve_both_signs() {
        // max over ξ of |ξρ + k| is at least ρ for any gain k
        for i in -200..=200 {
            let k = i as f64 * 0.05;
            let worst = [Sign::Plus, Sign::Minus]
                .iter()
                .map(|xi| gambler_step(&GamblerSystem { rho: 1.5, xi: *xi, eps0: 1.0 }, 1.0, k).abs())
                .fold(0.0, f64::max);
            assert!(worst >= 1.5 - 1e-12);
        }
    }
}
