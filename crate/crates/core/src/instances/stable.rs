use nalgebra::Matrix2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{InitBranch, InitState, Instance, Sign};
use crate::error::{Error, Result};
use crate::funclass::SmoothFunction;
use crate::matkit::{bump, bump_between, bump_scaled, challenging_pair, sample_unit_ball, ChallengingPair, Matrix, PairIndex, Vector};

/// Construction parameters other than the hidden function and the hidden index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub mu: f64,
    pub tau: f64,
    pub delta: f64,
    /// Scale of every cost term.
    pub c_cost: f64,
    /// Radius, in units of `delta`, of the linear-region ball where the expert lives.
    pub c_delta: f64,
    /// Deepest scale level of the linear-region initial distribution.
    pub level_max: u32,
}

impl Default for StableParams {
    fn default() -> Self {
        StableParams { mu: 0.25, tau: 0.1, delta: 0.01, c_cost: 1.0 / 16.0, c_delta: 1.0, level_max: 30 }
    }
}

/// `(C, ρ)` under which the open loop `x' = f(x, u)` of the default stable instance
/// passes the incremental-stability check from its initial distribution.
/// Calibrated with 10^4 trials; the worst observed ratio needed `C ≈ 2.6`.
pub const OPEN_LOOP_EIISS: (f64, f64) = (4.0, 0.885);

/// `(C, ρ)` for the expert closed loop `x' = f(x, π*(x) + u)`; the worst observed ratio needed `C ≈ 0.97`.
pub const CLOSED_LOOP_EIISS: (f64, f64) = (1.25, 0.51);

/// The stable embedding: a challenging pair on `(e1, e2)` and a regression patch at `3·e3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableInstance {
    pub g: SmoothFunction,
    pub i: PairIndex,
    pub omega: Sign,
    pub params: StableParams,
    pub d: usize,
    pub pair: ChallengingPair,
    pub abar: Matrix,
    pub kbar: Matrix,
    pub x_offset: Vector,
}

pub(crate) fn embed(block: &Matrix2<f64>, d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for r in 0..2 {
        for c in 0..2 {
            m[(r, c)] = block[(r, c)];
        }
    }
    m
}

pub fn make_stable_instance(g: SmoothFunction, i: PairIndex, omega: Sign, params: StableParams) -> Result<StableInstance> {
    let pair = challenging_pair(params.mu)?;
    if !(params.tau > 0.0 && params.tau < 1.0) {
        return Err(Error::InvalidParameter { name: "tau", detail: format!("must lie in (0,1), got {}", params.tau) });
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Error::InvalidParameter { name: "delta", detail: format!("must lie in (0,1), got {}", params.delta) });
    }
    if !(params.c_cost > 0.0 && params.c_delta > 0.0) {
        return Err(Error::InvalidParameter { name: "c_cost", detail: "cost constants must be positive".into() });
    }
    if g.k == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    if let Some(c) = g.centers.first() {
        if c.len() != g.k {
            return Err(Error::DimensionMismatch { expected: g.k, got: c.len() });
        }
    }
    let d = g.k + 2;
    let mut x_offset = Vector::zeros(d);
    x_offset[2] = 3.0;
    Ok(StableInstance {
        abar: embed(pair.a(i), d),
        kbar: embed(pair.k(i), d),
        g,
        i,
        omega,
        params,
        d,
        pair,
        x_offset,
    })
}

impl StableInstance {
    /// Gate of the regression patch, `bump(x − x_offset)`.
    pub fn restrict(&self, x: &Vector) -> f64 {
        bump_between(x.as_slice(), self.x_offset.as_slice(), 1.0)
    }

    /// Regression query encoded by a state: coordinates 3..d of `x − x_offset`.
    pub fn query(&self, x: &Vector) -> Vec<f64> {
        (2..self.d).map(|j| x[j] - self.x_offset[j]).collect()
    }

    /// `g` evaluated at the query of `x`.
    pub fn lifted_g(&self, x: &Vector) -> f64 {
        self.g.eval(&self.query(x))
    }

    pub fn kbar_of(&self, i: PairIndex) -> Matrix {
        embed(self.pair.k(i), self.d)
    }

    pub fn same_with(&self, i: PairIndex, omega: Sign) -> StableInstance {
        make_stable_instance(self.g.clone(), i, omega, self.params).expect("parameters already validated")
    }

    /// Initial state on the regression patch for query `z`.
    pub fn regression_init(&self, z: &[f64]) -> InitState {
        let mut x1 = self.x_offset.clone();
        for (j, v) in z.iter().enumerate() {
            x1[2 + j] += v;
        }
        InitState { x1, branch: InitBranch::Regression { z: z.to_vec() } }
    }

    fn sample_level(&self, rng: &mut dyn RngCore) -> u32 {
        if rng.random::<bool>() {
            return 0;
        }
        let norm = 6.0 / std::f64::consts::PI.powi(2);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for level in 1..self.params.level_max {
            acc += norm / (level as f64).powi(2);
            if u < acc {
                return level;
            }
        }
        self.params.level_max
    }
}

impl Instance for StableInstance {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn step(&self, x: &Vector, u: &Vector, _t: usize) -> Vector {
        let mut next = &self.abar * x + u;
        let r = self.restrict(x);
        if r > 0.0 {
            let tau = self.params.tau;
            let tg = self.lifted_g(x);
            let correction = tg - u[0] * bump(u.as_slice()) / tau;
            next[0] += -tau * r * tg + self.omega.value() * tau * tau * r * correction;
        }
        next
    }

    fn expert_action(&self, x: &Vector, _t: usize) -> Vector {
        let mut u = &self.kbar * x;
        let r = self.restrict(x);
        if r > 0.0 {
            u[0] += self.params.tau * r * self.lifted_g(x);
        }
        u
    }

    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState {
        if rng.random::<bool>() {
            let z = sample_unit_ball(self.g.k, rng);
            self.regression_init(z.as_slice())
        } else {
            let w = sample_unit_ball(self.d - 1, rng);
            let level = self.sample_level(rng);
            let scale = self.params.delta * 0.5f64.powi(level as i32);
            let mut x1 = Vector::zeros(self.d);
            for j in 1..self.d {
                x1[j] = scale * w[j - 1];
            }
            InitState { x1, branch: InitBranch::Linear { y_level: level } }
        }
    }

    fn cost(&self, x: &Vector, u: &Vector, _t: usize) -> f64 {
        let StableParams { tau, delta, c_cost, c_delta, .. } = self.params;
        let xs = x.as_slice();
        let patch = self.restrict(x);
        let mut total = c_cost * x[0].abs();
        let near_origin = bump(xs);
        if near_origin > 0.0 {
            let k1 = self.kbar_of(PairIndex::First);
            let k2 = self.kbar_of(PairIndex::Second);
            total += c_cost * ((u - &k1 * x).norm() + (u - &k2 * x).norm()) * near_origin;
        }
        total += c_cost * delta * (1.0 - patch) * (1.0 - bump_scaled(xs, c_delta * delta));
        total += tau * c_cost * (1.0 - bump_scaled(u.as_slice(), tau));
        if patch > 0.0 {
            let off_axis = u.as_slice()[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            total += c_cost * patch * off_axis;
        }
        total
    }

    fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.g.centers.iter().flatten().chain(&self.g.signs).chain([&self.g.eps]) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        let i = match self.i {
            PairIndex::First => 1,
            PairIndex::Second => 2,
        };
        format!("stable-k{}-i{}-w{:+}-mu{}-{:016x}", self.g.k, i, self.omega.value() as i32, self.params.mu, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funclass::sample_hard_function;
    use crate::rng::seeded;

    fn default_instance(i: PairIndex, omega: Sign) -> StableInstance {
        let mut rng = seeded(1);
        let g = sample_hard_function(2, 2, 0.25, &mut rng).unwrap();
        make_stable_instance(g, i, omega, StableParams::default()).unwrap()
    }

    fn unit(d: usize, j: usize) -> Vector {
        let mut v = Vector::zeros(d);
        v[j] = 1.0;
        v
    }

    /// Hidden function with one bump at the origin of the query space whose value there is `value`.
    fn single_bump(value: f64) -> SmoothFunction {
        SmoothFunction { k: 2, s: 2, eps: 1.0, centers: vec![vec![0.0, 0.0]], signs: vec![1.0], amplitude: value }
    }

    #[test]
    fn block_embedding() {
        let inst = default_instance(PairIndex::First, Sign::Plus);
        assert_eq!(inst.d, 4);
        let p = challenging_pair(0.25).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let want = if r < 2 && c < 2 { p.a1[(r, c)] } else { 0.0 };
                assert_eq!(inst.abar[(r, c)], want);
            }
        }
        assert_eq!(inst.x_offset, unit(4, 2) * 3.0);
    }

    #[test]
    fn expert_on_patch() {
        let inst = make_stable_instance(single_bump(0.5), PairIndex::First, Sign::Plus, StableParams::default()).unwrap();
        let x = inst.regression_init(&[0.0, 0.0]).x1;
        let u = inst.expert_action(&x, 1);
        assert!((u - unit(4, 0) * 0.05).amax() < 1e-15);
        let next = inst.step(&x, &inst.expert_action(&x, 1), 1);
        assert!(next.amax() <= 1e-15, "{next}");
    }

    #[test]
    fn expert_in_linear_region_is_index_blind() {
        let a = default_instance(PairIndex::First, Sign::Plus);
        let b = a.same_with(PairIndex::Second, Sign::Minus);
        let x = unit(4, 1) * 0.01;
        let ua = a.expert_action(&x, 3);
        assert_eq!(ua, b.expert_action(&x, 3));
        assert!((ua - unit(4, 0) * (-0.375 * 0.01)).amax() < 1e-18);
        let far = Vector::from_vec(vec![5.0, -3.0, 0.0, 1.0]);
        assert_eq!(a.expert_action(&far, 1), &a.kbar * &far);
    }

    #[test]
    fn omega_difference_is_the_correction_term() {
        let plus = default_instance(PairIndex::Second, Sign::Plus);
        let minus = plus.same_with(PairIndex::Second, Sign::Minus);
        let mut rng = seeded(4);
        for _ in 0..50 {
            let x = &plus.x_offset + sample_unit_ball(4, &mut rng) * 1.8;
            let u = sample_unit_ball(4, &mut rng) * 0.3;
            let diff = plus.step(&x, &u, 1) - minus.step(&x, &u, 1);
            let tau = 0.1;
            let want = 2.0 * tau * tau * plus.restrict(&x) * (plus.lifted_g(&x) - u[0] * bump(u.as_slice()) / tau);
            assert!((diff[0] - want).abs() < 1e-15);
            assert!(diff.as_slice()[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_region_step_is_linear() {
        let inst = default_instance(PairIndex::First, Sign::Plus);
        let mut rng = seeded(2);
        for _ in 0..100 {
            let x = sample_unit_ball(4, &mut rng) * 0.9;
            let u = sample_unit_ball(4, &mut rng) * 0.2;
            let want = &inst.abar * &x + &u;
            assert!((inst.step(&x, &u, 1) - want).amax() <= 1e-12);
        }
    }

    #[test]
    fn learner_error_on_patch_is_damped_by_omega() {
        let mut rng = seeded(3);
        for omega in [Sign::Plus, Sign::Minus] {
            let inst = default_instance(PairIndex::First, omega);
            for _ in 0..20 {
                let z = sample_unit_ball(2, &mut rng);
                let x = inst.regression_init(z.as_slice()).x1;
                let delta_e1 = 0.01;
                let u = inst.expert_action(&x, 1) + unit(4, 0) * delta_e1;
                let next = inst.step(&x, &u, 1);
                let want = delta_e1 * (1.0 - omega.value() * 0.1);
                assert!((next[0] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_distribution() {
        let inst = default_instance(PairIndex::First, Sign::Plus);
        let mut rng = seeded(5);
        let m = 100_000;
        let (mut regression, mut top, mut l1, mut l2) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..m {
            let s = inst.sample_init(&mut rng);
            match s.branch {
                InitBranch::Regression { ref z } => {
                    regression += 1;
                    assert_eq!(s.x1, inst.regression_init(z).x1);
                }
                InitBranch::Linear { y_level } => {
                    assert_eq!(s.x1[0], 0.0);
                    assert!(s.x1.norm() <= 0.01);
                    match y_level {
                        0 => top += 1,
                        1 => l1 += 1,
                        2 => l2 += 1,
                        _ => {}
                    }
                }
                InitBranch::Point => unreachable!(),
            }
        }
        let sigma = (m as f64 * 0.25).sqrt();
        assert!((regression as f64 - m as f64 / 2.0).abs() < 3.0 * sigma);
        let linear = (m - regression) as f64;
        assert!((top as f64 - linear / 2.0).abs() < 3.0 * (linear * 0.25).sqrt());
        let ratio = l1 as f64 / l2 as f64;
        assert!((ratio - 4.0).abs() < 0.4, "level ratio {ratio}");
    }

    #[test]
    fn cost_terms() {
        let inst = default_instance(PairIndex::First, Sign::Plus);
        let c = 1.0 / 16.0;
        // first term only: far from the origin ball, the patch, and with a small input
        let x = Vector::from_vec(vec![0.2, 0.0, -2.5, 0.0]);
        let u = Vector::zeros(4);
        let expected = c * 0.2 + c * 0.01;
        assert!((inst.cost(&x, &u, 1) - expected).abs() < 1e-15);
        // large input at a point where everything else vanishes except the linear-region term
        let x = Vector::from_vec(vec![0.0, 0.0, -2.5, 0.0]);
        let u = unit(4, 0) * 0.2;
        assert!(inst.cost(&x, &u, 1) >= 0.1 * c);
        assert!(inst.cost(&Vector::zeros(4), &Vector::zeros(4), 1) == 0.0);
    }
}
