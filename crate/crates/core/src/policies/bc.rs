//! Behavior cloning tailored to the stable construction: nonparametric regression
//! on the patch, linear least squares near the origin.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{History, Policy, PolicyKind};
use crate::error::Result;
use crate::funclass::{fit_default_estimator, LocalEstimator, RegressionSample};
use crate::instances::StableInstance;
use crate::matkit::{bump_between, spectral_radius, ChallengingPair, Matrix, PairIndex, Vector};
use crate::simkit::Dataset;

/// What the learner knows about the construction: everything except `g`, `i` and the sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcTemplate {
    pub tau: f64,
    pub d: usize,
    pub k: usize,
    pub s: usize,
    pub x_offset: Vector,
    pub pair: ChallengingPair,
}

impl BcTemplate {
    pub fn from_instance(inst: &StableInstance) -> Self {
        BcTemplate {
            tau: inst.params.tau,
            d: inst.d,
            k: inst.g.k,
            s: inst.g.s,
            x_offset: inst.x_offset.clone(),
            pair: inst.pair.clone(),
        }
    }

    fn restrict(&self, x: &Vector) -> f64 {
        bump_between(x.as_slice(), self.x_offset.as_slice(), 1.0)
    }

    fn query(&self, x: &Vector) -> Vec<f64> {
        (2..self.d).map(|j| x[j] - self.x_offset[j]).collect()
    }

    fn on_patch(&self, x: &Vector) -> bool {
        (x - &self.x_offset).norm() <= 1.0
    }
}

/// How the unobserved first column of the gain is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Zero column, the minimum-norm solution.
    LeastNorm,
    /// The column of the given index's gain.
    AssumeIndex(PairIndex),
    /// The candidate column that most destabilizes the true system.
    Adversarial { truth: PairIndex },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcOptions {
    pub completion: Completion,
}

impl Default for BcOptions {
    fn default() -> Self {
        BcOptions { completion: Completion::LeastNorm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// No patch trajectories; the regression part is identically zero.
    NoRegressionSamples,
    /// No data at all; the policy is zero.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcFit {
    pub g_hat: Option<LocalEstimator>,
    pub k_hat: Matrix,
    pub n_patch: usize,
    pub n_linear: usize,
    /// Largest least-squares residual over the linear-region pairs, relative to the state norm.
    pub residual: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcPolicy {
    pub template: BcTemplate,
    pub fit: BcFit,
}

impl BcPolicy {
    pub fn action(&self, x: &Vector) -> Vector {
        let r = self.template.restrict(x);
        let mut u = &self.fit.k_hat * x * (1.0 - r);
        if r > 0.0 {
            if let Some(g) = &self.fit.g_hat {
                u[0] += self.template.tau * r * g.predict(&self.template.query(x));
            }
        }
        u
    }
}

impl Policy for BcPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Deterministic
    }

    fn act(&self, history: &History, _rng: &mut dyn RngCore) -> Vector {
        self.action(history.current())
    }

    fn mean_action(&self, x: &Vector, _t: usize) -> Option<Vector> {
        Some(self.action(x))
    }

    fn name(&self) -> String {
        "bc".into()
    }
}

/// Least squares `u ≈ K x` over columns `2..d` of `K`, rows normalized by `‖x‖`.
fn fit_observed_columns(states: &[&Vector], inputs: &[&Vector], d: usize) -> (Matrix, f64) {
    let rows: Vec<usize> = (0..states.len()).filter(|&r| states[r].norm() > 0.0).collect();
    let mut gain = Matrix::zeros(d, d);
    if rows.is_empty() {
        return (gain, 0.0);
    }
    let mut x = Matrix::zeros(rows.len(), d - 1);
    let mut u = Matrix::zeros(rows.len(), d);
    for (r, &i) in rows.iter().enumerate() {
        let w = 1.0 / states[i].norm();
        for c in 1..d {
            x[(r, c - 1)] = states[i][c] * w;
        }
        for c in 0..d {
            u[(r, c)] = inputs[i][c] * w;
        }
    }
    let svd = x.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let coef = svd.solve(&u, tol).expect("both factors were computed");
    for c in 1..d {
        for r in 0..d {
            gain[(r, c)] = coef[(c - 1, r)];
        }
    }
    let residual = (x * coef - u).amax();
    (gain, residual)
}

fn complete_first_column(gain: &mut Matrix, template: &BcTemplate, completion: Completion) {
    let column = |i: PairIndex| template.pair.k(i).column(0).into_owned();
    let chosen = match completion {
        Completion::LeastNorm => return,
        Completion::AssumeIndex(i) => column(i),
        Completion::Adversarial { truth } => {
            let radius = |i: PairIndex| {
                let mut block = Matrix::zeros(2, 2);
                for r in 0..2 {
                    block[(r, 0)] = column(i)[r];
                    block[(r, 1)] = gain[(r, 1)];
                }
                let a = template.pair.a(truth);
                for r in 0..2 {
                    for c in 0..2 {
                        block[(r, c)] += a[(r, c)];
                    }
                }
                spectral_radius(&block).unwrap_or(f64::INFINITY)
            };
            let worst = PairIndex::both().into_iter().max_by(|&a, &b| radius(a).total_cmp(&radius(b))).unwrap();
            column(worst)
        }
    };
    gain[(0, 0)] = chosen[0];
    gain[(1, 0)] = chosen[1];
}

/// Splits trajectories by where they start, fits the patch regression and the linear gain.
pub fn bc_learn(dataset: &Dataset, template: &BcTemplate, opts: &BcOptions) -> Result<BcPolicy> {
    let d = template.d;
    let (patch, linear): (Vec<_>, Vec<_>) =
        dataset.trajectories.iter().filter(|t| !t.states.is_empty()).partition(|t| template.on_patch(&t.states[0]));

    let g_hat = if patch.is_empty() {
        None
    } else {
        let inputs = patch.iter().map(|t| template.query(&t.states[0])).collect();
        let labels = patch.iter().map(|t| t.inputs[0][0] / template.tau).collect();
        Some(fit_default_estimator(RegressionSample { inputs, labels }, template.s)?)
    };

    let states: Vec<&Vector> = linear.iter().flat_map(|t| t.states.iter()).collect();
    let inputs: Vec<&Vector> = linear.iter().flat_map(|t| t.inputs.iter()).collect();
    let (mut k_hat, residual) = fit_observed_columns(&states, &inputs, d);
    let status = if dataset.trajectories.is_empty() {
        FitStatus::Empty
    } else {
        complete_first_column(&mut k_hat, template, opts.completion);
        if g_hat.is_none() {
            FitStatus::NoRegressionSamples
        } else {
            FitStatus::Ok
        }
    };
    Ok(BcPolicy {
        template: template.clone(),
        fit: BcFit { g_hat, k_hat, n_patch: patch.len(), n_linear: linear.len(), residual, status },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::funclass::sample_hard_function;
    use crate::instances::{make_stable_instance, Instance, Sign, StableParams};
    use crate::policies::ExpertPolicy;
    use crate::rng::seeded;
    use crate::simkit::{expert_l2_risk, sample_dataset, EvalConfig};

    fn inst(i: PairIndex) -> StableInstance {
        let g = sample_hard_function(2, 2, 0.25, &mut seeded(5)).unwrap();
        make_stable_instance(g, i, Sign::Plus, StableParams::default()).unwrap()
    }

    #[test]
    fn observed_column_is_recovered_exactly() {
        let inst = inst(PairIndex::First);
        let data = sample_dataset(&inst, 256, 8, 1);
        let p = bc_learn(&data, &BcTemplate::from_instance(&inst), &BcOptions::default()).unwrap();
        let c = inst.pair.c_mu;
        assert!((p.fit.k_hat[(0, 1)] + c).abs() < 1e-6 && p.fit.k_hat[(1, 1)].abs() < 1e-6);
        for r in 0..4 {
            assert!(p.fit.k_hat[(r, 0)] == 0.0);
            for col in 2..4 {
                assert!(p.fit.k_hat[(r, col)].abs() < 1e-6);
            }
        }
        assert!(p.fit.residual < 1e-9);
        assert_eq!(p.fit.status, FitStatus::Ok);
        assert_eq!(p.fit.n_patch + p.fit.n_linear, 256);
    }

    #[test]
    fn completions_pick_the_expected_columns() {
        let inst = inst(PairIndex::Second);
        let data = sample_dataset(&inst, 64, 4, 2);
        let t = BcTemplate::from_instance(&inst);
        let fit = |c| bc_learn(&data, &t, &BcOptions { completion: c }).unwrap().fit.k_hat;
        let oracle = fit(Completion::AssumeIndex(PairIndex::Second));
        assert!((oracle[(0, 0)] - inst.pair.k2[(0, 0)]).abs() < 1e-15);
        let adv = fit(Completion::Adversarial { truth: PairIndex::Second });
        assert_eq!(adv[(0, 0)], inst.pair.k1[(0, 0)]);
        assert_eq!(adv[(1, 0)], inst.pair.k1[(1, 0)]);
    }

    #[test]
    fn empty_and_patchless_data_degrade_explicitly() {
        let inst = inst(PairIndex::First);
        let t = BcTemplate::from_instance(&inst);
        let empty = Dataset { trajectories: vec![], horizon: 4, instance_id: inst.id(), seed: 0 };
        let p = bc_learn(&empty, &t, &BcOptions::default()).unwrap();
        assert_eq!(p.fit.status, FitStatus::Empty);
        assert_eq!(p.action(&inst.x_offset), Vector::zeros(4));

        let mut data = sample_dataset(&inst, 40, 4, 3);
        data.trajectories.retain(|tr| !t.on_patch(&tr.states[0]));
        let p = bc_learn(&data, &t, &BcOptions::default()).unwrap();
        assert_eq!(p.fit.status, FitStatus::NoRegressionSamples);
    }

    #[test]
    fn expert_risk_tracks_regression_rate() {
        let inst = inst(PairIndex::First);
        let data = sample_dataset(&inst, 4096, 4, 4);
        let p = bc_learn(&data, &BcTemplate::from_instance(&inst), &BcOptions::default()).unwrap();
        let r = expert_l2_risk(&p, &inst, &EvalConfig::new(4, 2000, 9));
        let bound = 10.0 * (4096f64).powf(-1.0) * inst.params.tau + p.fit.residual;
        assert!(r.value <= bound, "{} > {bound}", r.value);
        let expert = ExpertPolicy::new(Arc::new(inst.clone()));
        assert_eq!(expert_l2_risk(&expert, &inst, &EvalConfig::new(4, 10, 0)).value, 0.0);
    }
}
