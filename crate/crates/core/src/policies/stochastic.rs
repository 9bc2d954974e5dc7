use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{History, Policy, PolicyKind};
use crate::error::{Error, Result};
use crate::matkit::{gaussian_vector, Vector};

/// Deterministic base plus state-independent isotropic Gaussian noise.
pub struct GaussianWrap {
    pub base: Arc<dyn Policy>,
    pub sigma: f64,
}

pub fn gaussian_wrap(base: Arc<dyn Policy>, sigma: f64) -> Result<GaussianWrap> {
    if !base.kind().is_deterministic() {
        return Err(Error::InvalidParameter { name: "base", detail: "gaussian_wrap needs a deterministic base".into() });
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter { name: "sigma", detail: format!("must be nonnegative, got {sigma}") });
    }
    Ok(GaussianWrap { base, sigma })
}

impl Policy for GaussianWrap {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SimplyStochastic
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        let mean = self.base.act(history, rng);
        let noise = gaussian_vector(mean.len(), rng);
        mean + noise * self.sigma
    }

    fn mean_action(&self, x: &Vector, t: usize) -> Option<Vector> {
        self.base.mean_action(x, t)
    }

    fn name(&self) -> String {
        format!("{}+gauss", self.base.name())
    }
}

/// Gaussian with a state-dependent scale `σ(x) = sigma0 + slope·‖x‖`.
pub struct GaussianPolicy {
    pub base: Arc<dyn Policy>,
    pub sigma0: f64,
    pub slope: f64,
}

impl Policy for GaussianPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Gaussian
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        let mean = self.base.act(history, rng);
        let sigma = self.sigma0 + self.slope * history.current().norm();
        let noise = gaussian_vector(mean.len(), rng);
        mean + noise * sigma
    }

    fn name(&self) -> String {
        "gaussian".into()
    }
}

/// Draws one component per call with the given weights.
pub struct MixturePolicy {
    pub components: Vec<(f64, Arc<dyn Policy>)>,
}

impl Policy for MixturePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Mixture
    }

    fn act(&self, history: &History, rng: &mut dyn RngCore) -> Vector {
        let total: f64 = self.components.iter().map(|c| c.0).sum();
        let mut u = rng.random::<f64>() * total;
        for (w, p) in &self.components {
            if u < *w {
                return p.act(history, rng);
            }
            u -= w;
        }
        self.components.last().expect("mixture has components").1.act(history, rng)
    }

    fn name(&self) -> String {
        "mixture".into()
    }
}

/// Pure noise `N(0, variance·I)`, fresh every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomNoisePolicy {
    pub d: usize,
    pub variance: f64,
}

impl Policy for RandomNoisePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SimplyStochastic
    }

    fn act(&self, _history: &History, rng: &mut dyn RngCore) -> Vector {
        gaussian_vector(self.d, rng) * self.variance.sqrt()
    }

    fn mean_action(&self, _x: &Vector, _t: usize) -> Option<Vector> {
        Some(Vector::zeros(self.d))
    }

    fn name(&self) -> String {
        "random_noise".into()
    }
}
