use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{InitBranch, InitState, Instance};
use crate::error::{Error, Result};
use crate::funclass::SmoothFunction;
use crate::matkit::{bump_between, greedy_packing, random_orthogonal, sample_unit_ball, Matrix, Packing, Vector};
use crate::rng::{seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnstableVariant {
    /// A fresh rotation at every time step.
    TimeVarying,
    /// One rotation per patch of a packing; the state hops from patch to patch.
    TimeInvariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableParams {
    pub rho: f64,
    pub d: usize,
    pub variant: UnstableVariant,
    pub rotation_seed: u64,
    pub packing_seed: u64,
    /// Patch radius of the time-invariant variant.
    pub r0: f64,
    /// Number of patches, one per time step.
    pub patches: usize,
    pub domain_radius: f64,
    pub c_cost: f64,
}

impl Default for UnstableParams {
    fn default() -> Self {
        UnstableParams {
            rho: 1.5,
            d: 4,
            variant: UnstableVariant::TimeVarying,
            rotation_seed: 0,
            packing_seed: 0,
            r0: 0.1,
            patches: 40,
            domain_radius: 4.0,
            c_cost: 1.0 / 16.0,
        }
    }
}

/// Expansive dynamics that the expert cancels exactly with state-dependent rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableInstance {
    pub g: SmoothFunction,
    pub params: UnstableParams,
    pub k: usize,
    /// Patch centers of the time-invariant variant, empty otherwise.
    pub packing: Option<Packing>,
    #[serde(skip)]
    rotations: Vec<Matrix>,
}

pub fn make_unstable_instance(g: SmoothFunction, params: UnstableParams) -> Result<UnstableInstance> {
    if !(params.rho > 1.0) {
        return Err(Error::InvalidParameter { name: "rho", detail: format!("must exceed 1, got {}", params.rho) });
    }
    if g.k > params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: g.k });
    }
    let mut inst = UnstableInstance { k: g.k, g, params, packing: None, rotations: Vec::new() };
    if params.variant == UnstableVariant::TimeInvariant {
        let mut rng = seeded(params.packing_seed);
        let packing = greedy_packing(params.d, 6.0 * params.r0, params.domain_radius, params.patches, &mut rng)?;
        if packing.len() < params.patches {
            return Err(Error::DegeneratePacking { placed: packing.len() });
        }
        inst.packing = Some(packing);
    }
    inst.materialize();
    Ok(inst)
}

impl UnstableInstance {
    /// Rebuild the per-patch rotation cache after deserialization.
    pub fn materialize(&mut self) {
        self.rotations = match &self.packing {
            Some(p) => (0..p.len()).map(|j| self.rotation(j as u64 + 1)).collect(),
            None => Vec::new(),
        };
    }

    /// Rotation keyed by `(rotation_seed, t)`.
    pub fn rotation(&self, t: u64) -> Matrix {
        random_orthogonal(self.params.d, &mut stream(self.params.rotation_seed, t))
    }

    fn rotation_cached(&self, j: usize) -> Matrix {
        self.rotations.get(j).cloned().unwrap_or_else(|| self.rotation(j as u64 + 1))
    }

    fn lead(&self, x: &[f64]) -> f64 {
        self.g.eval(&x[..self.k])
    }

    fn e1(&self, value: f64) -> Vector {
        let mut v = Vector::zeros(self.params.d);
        v[0] = value;
        v
    }

    fn centers(&self) -> &[Vector] {
        self.packing.as_ref().map(|p| p.centers.as_slice()).unwrap_or(&[])
    }

    /// Patch weights `bump((x − y_j)/r0)` that are nonzero at `x`.
    fn active_patches(&self, x: &Vector) -> Vec<(usize, f64)> {
        self.centers()
            .iter()
            .enumerate()
            .filter_map(|(j, y)| {
                let w = bump_between(x.as_slice(), y.as_slice(), self.params.r0);
                (w > 0.0).then_some((j, w))
            })
            .collect()
    }

    fn policy_time_invariant(&self, x: &Vector) -> Vector {
        let r0 = self.params.r0;
        let mut u = Vector::zeros(self.params.d);
        for (j, w) in self.active_patches(x) {
            let y = &self.centers()[j];
            if j == 0 {
                let q: Vec<f64> = (0..self.k).map(|c| (x[c] - y[c]) / r0).collect();
                u[0] += w * self.g.eval(&q);
            } else {
                u -= self.rotation_cached(j) * (x - y) * (self.params.rho * w);
            }
        }
        u
    }
}

impl Instance for UnstableInstance {
    fn state_dim(&self) -> usize {
        self.params.d
    }

    fn step(&self, x: &Vector, u: &Vector, t: usize) -> Vector {
        match self.params.variant {
            UnstableVariant::TimeVarying => u - self.expert_action(x, t),
            UnstableVariant::TimeInvariant => {
                let mut next = u - self.policy_time_invariant(x);
                let n = self.centers().len();
                for (j, w) in self.active_patches(x) {
                    next += &self.centers()[(j + 1).min(n - 1)] * w;
                }
                next
            }
        }
    }

    fn expert_action(&self, x: &Vector, t: usize) -> Vector {
        match self.params.variant {
            UnstableVariant::TimeVarying => {
                if t <= 1 {
                    self.e1(self.lead(x.as_slice()))
                } else {
                    self.rotation(t as u64) * x * (-self.params.rho)
                }
            }
            UnstableVariant::TimeInvariant => self.policy_time_invariant(x),
        }
    }

    fn sample_init(&self, rng: &mut dyn RngCore) -> InitState {
        let z = sample_unit_ball(self.k, rng);
        let mut x1 = match self.params.variant {
            UnstableVariant::TimeVarying => Vector::zeros(self.params.d),
            UnstableVariant::TimeInvariant => self.centers()[0].clone(),
        };
        let scale = match self.params.variant {
            UnstableVariant::TimeVarying => 1.0,
            UnstableVariant::TimeInvariant => self.params.r0,
        };
        for j in 0..self.k {
            x1[j] += scale * z[j];
        }
        InitState { x1, branch: InitBranch::Regression { z: z.as_slice().to_vec() } }
    }

    fn cost(&self, x: &Vector, _u: &Vector, t: usize) -> f64 {
        match self.params.variant {
            UnstableVariant::TimeVarying => {
                if t <= 1 {
                    0.0
                } else {
                    x.norm()
                }
            }
            UnstableVariant::TimeInvariant => {
                let total: f64 = self
                    .active_patches(x)
                    .into_iter()
                    .filter(|&(j, _)| j > 0)
                    .map(|(j, w)| w * (x - &self.centers()[j]).norm())
                    .sum();
                total / self.params.c_cost
            }
        }
    }

    fn id(&self) -> String {
        let v = match self.params.variant {
            UnstableVariant::TimeVarying => "tv",
            UnstableVariant::TimeInvariant => "ti",
        };
        format!("unstable-{v}-d{}-k{}-rho{}-seed{}", self.params.d, self.k, self.params.rho, self.params.rotation_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funclass::sample_hard_function;

    fn instance(variant: UnstableVariant, d: usize) -> UnstableInstance {
        let mut rng = seeded(3);
        let g = sample_hard_function(1, 1, 0.3, &mut rng).unwrap();
        make_unstable_instance(g, UnstableParams { variant, d, rotation_seed: 17, ..Default::default() }).unwrap()
    }

    #[test]
    fn expert_zeroes_time_varying() {
        let inst = instance(UnstableVariant::TimeVarying, 4);
        let mut rng = seeded(1);
        for _ in 0..20 {
            let mut x = inst.sample_init(&mut rng).x1;
            for t in 1..=10 {
                let u = inst.expert_action(&x, t);
                assert_eq!(inst.cost(&x, &u, t), 0.0);
                if t >= 2 {
                    assert!(x.iter().all(|&v| v == 0.0) && u.iter().all(|&v| v == 0.0));
                }
                x = inst.step(&x, &u, t);
            }
        }
    }

    #[test]
    fn expert_tracks_centers_time_invariant() {
        let inst = instance(UnstableVariant::TimeInvariant, 4);
        let centers = inst.packing.as_ref().unwrap().centers.clone();
        assert!(inst.packing.as_ref().unwrap().min_pairwise_distance() >= 0.6);
        let mut rng = seeded(2);
        for _ in 0..10 {
            let mut x = inst.sample_init(&mut rng).x1;
            for t in 1..=45 {
                let u = inst.expert_action(&x, t);
                assert_eq!(inst.cost(&x, &u, t), 0.0);
                if t >= 2 {
                    assert_eq!(x, centers[(t - 1).min(centers.len() - 1)]);
                }
                x = inst.step(&x, &u, t);
            }
        }
    }

    #[test]
    fn zero_controller_grows_at_rho() {
        let inst = instance(UnstableVariant::TimeVarying, 5);
        let eps = 1e-3;
        let mut x = Vector::zeros(5);
        x[0] = eps;
        let u = Vector::zeros(5);
        for t in 2..=12 {
            x = inst.step(&x, &u, t);
            let want = 1.5f64.powi(t as i32 - 1) * eps;
            assert!((x.norm() / want - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_time_varying_is_a_random_sign() {
        let inst = instance(UnstableVariant::TimeVarying, 1);
        let x = Vector::from_vec(vec![0.5]);
        let mut seen = [false; 2];
        for t in 2..40 {
            let next = inst.step(&x, &Vector::zeros(1), t)[0];
            assert!((next.abs() - 0.75).abs() < 1e-15);
            seen[(next > 0.0) as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn rotations_are_stateless() {
        let inst = instance(UnstableVariant::TimeVarying, 3);
        assert_eq!(inst.rotation(5), inst.rotation(5));
        assert_ne!(inst.rotation(5), inst.rotation(6));
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = SmoothFunction::zero(3, 1);
        assert!(make_unstable_instance(g.clone(), UnstableParams { rho: 0.9, ..Default::default() }).is_err());
        assert!(make_unstable_instance(g, UnstableParams { d: 2, ..Default::default() }).is_err());
    }
}
