//! Open-loop action chunks built by simulating a base policy under a fitted model.
//!
//! The default chunked learner is an [`MlpPolicy`](super::MlpPolicy) trained to
//! regress whole chunks; this wrapper is the model-rollout ablation.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{History, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::matkit::{Matrix, Vector};
use crate::simkit::Dataset;

/// `x_{t+1} ≈ A x_t + B u_t`, fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Matrix,
}

impl LinearModel {
    pub fn predict(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    /// Minimum-norm least squares over every transition in the dataset.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let pairs: Vec<(&Vector, &Vector, &Vector)> = dataset
            .trajectories
            .iter()
            .flat_map(|t| (0..t.inputs.len()).map(move |s| (&t.states[s], &t.inputs[s], t.state(s + 2))))
            .collect();
        let Some(&(x0, u0, _)) = pairs.first() else {
            return Err(Error::EmptyDataset);
        };
        let (dx, du) = (x0.len(), u0.len());
        let mut design = Matrix::zeros(pairs.len(), dx + du);
        let mut target = Matrix::zeros(pairs.len(), dx);
        for (r, (x, u, next)) in pairs.iter().enumerate() {
            for c in 0..dx {
                design[(r, c)] = x[c];
                target[(r, c)] = next[c];
            }
            for c in 0..du {
                design[(r, dx + c)] = u[c];
            }
        }
        let svd = design.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        let coef = svd.solve(&target, tol).expect("both factors were computed");
        let a = coef.rows(0, dx).transpose();
        let b = coef.rows(dx, du).transpose();
        Ok(LinearModel { a, b })
    }
}

/// Plans `chunk_len` actions by rolling `base` forward under `model`, then executes them blind.
pub struct ChunkedPolicy {
    pub base: Arc<dyn Policy>,
    pub model: LinearModel,
    pub chunk_len: usize,
}

pub fn chunk_wrap(base: Arc<dyn Policy>, model: LinearModel, chunk_len: usize) -> Result<ChunkedPolicy> {
    if chunk_len == 0 {
        return Err(Error::InvalidParameter { name: "chunk_len", detail: "must be at least 1".into() });
    }
    Ok(ChunkedPolicy { base, model, chunk_len })
}

impl Policy for ChunkedPolicy {
    fn kind(&self) -> PolicyKind {
        if self.chunk_len == 1 {
            self.base.kind()
        } else {
            PolicyKind::Chunked
        }
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        self.base.act(history, rng)
    }

    fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    fn plan(&self, history: &History, rng: &mut dyn RngCore) -> Vec<Vector> {
        let mut imagined = history.clone();
        let mut plan = Vec::with_capacity(self.chunk_len);
        for j in 0..self.chunk_len {
            let u = self.base.act(&imagined, rng);
            if j + 1 < self.chunk_len {
                let next = self.model.predict(imagined.current(), &u);
                imagined.push(u.clone(), next);
            }
            plan.push(u);
        }
        plan
    }

    fn mean_action(&self, x: &Vector, t: usize) -> Option<Vector> {
        (self.chunk_len == 1).then(|| self.base.mean_action(x, t)).flatten()
    }

    fn name(&self) -> String {
        format!("{}-chunk{}", self.base.name(), self.chunk_len)
    }
}
