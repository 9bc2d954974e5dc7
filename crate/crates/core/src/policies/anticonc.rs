use serde::{Deserialize, Serialize};

use super::{History, Policy};
use crate::matkit::{gaussian_vector, Vector};
use crate::rng::{derive_seed, seeded};

/// How the two action draws at `x` and `x'` share randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    SharedNoise,
    Independent,
}

/// Spread levels at which tail probabilities are estimated.
pub const ALPHA_GRID: [f64; 7] = [0.25, 0.5, std::f64::consts::FRAC_1_SQRT_2, 1.0, 1.25, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntiConcentration {
    /// `(α, p(α))` with `p` the smallest tail frequency over the probed directions.
    pub frontier: Vec<(f64, f64)>,
    /// Frontier point with the largest `α·p`.
    pub best: (f64, f64),
}

impl AntiConcentration {
    pub fn p_at(&self, alpha: f64) -> Option<f64> {
        self.frontier.iter().find(|(a, _)| (a - alpha).abs() < 1e-12).map(|&(_, p)| p)
    }
}

/// Estimates `Pr[|⟨v, u − u'⟩ − mean| ≥ α·std]` over random unit directions `v`.
///
/// A direction along which the difference has no variance counts as fully
/// anti-concentrated, so deterministic policies report `(1, 1)`.
pub fn anti_concentration_estimate(
    policy: &dyn Policy,
    coupling: Coupling,
    x: &Vector,
    x_prime: &Vector,
    trials: usize,
    directions: usize,
    seed: u64,
) -> AntiConcentration {
    let (h, hp) = (History::start(x.clone()), History::start(x_prime.clone()));
    let diffs: Vec<Vector> = (0..trials)
        .map(|i| {
            let s = derive_seed(seed, 2 * i as u64);
            let u = policy.act(&h, &mut seeded(s));
            let sp = match coupling {
                Coupling::SharedNoise => s,
                Coupling::Independent => derive_seed(seed, 2 * i as u64 + 1),
            };
            u - policy.act(&hp, &mut seeded(sp))
        })
        .collect();
    let d = diffs.first().map_or(x.len(), |w| w.len());
    let mut dir_rng = seeded(derive_seed(seed, u64::MAX));
    let mut frontier: Vec<(f64, f64)> = ALPHA_GRID.iter().map(|&a| (a, 1.0)).collect();
    for _ in 0..directions.max(1) {
        let g = gaussian_vector(d, &mut dir_rng);
        let v: Vector = if d == 1 { Vector::from_element(1, 1.0) } else { &g / g.norm() };
        let proj: Vec<f64> = diffs.iter().map(|w| w.dot(&v)).collect();
        let n = proj.len() as f64;
        let mean = proj.iter().sum::<f64>() / n;
        let sd = (proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            continue;
        }
        for (alpha, p) in frontier.iter_mut() {
            let hit = proj.iter().filter(|&&s| (s - mean).abs() >= *alpha * sd).count() as f64 / n;
            *p = p.min(hit);
        }
    }
    let best = frontier.iter().copied().max_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1))).unwrap();
    let best = if frontier.iter().all(|&(_, p)| p == 1.0) { (1.0, 1.0) } else { best };
    AntiConcentration { frontier, best }
}
