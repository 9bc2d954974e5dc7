//! Bump-packing hard functions and the local polynomial estimator that learns them.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{bump_sq, pack_points, sample_unit_ball};

/// Measured sup of order-`p` directional derivatives of `bump`, for `p = 1..=4`.
///
/// Indexed by `p - 1`; each entry is rounded up from [`measure_bump_derivative_bound`].
pub const BUMP_DERIVATIVE_BOUNDS: [f64; 4] = [2.16, 14.3, 215.0, 5900.0];

/// `c'_s = max_{p ≤ s} c_p`, with `c_0 = 1` for the function value itself.
pub fn derivative_constant(s: usize) -> f64 {
    let s = s.clamp(1, BUMP_DERIVATIVE_BOUNDS.len());
    BUMP_DERIVATIVE_BOUNDS[..s].iter().cloned().fold(1.0, f64::max)
}

fn central_difference(f: impl Fn(f64) -> f64, t: f64, order: usize, h: f64) -> f64 {
    // p-th central difference: sum_j (-1)^j C(p, j) f(t + (p/2 - j) h) / h^p
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=order {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(t + (order as f64 / 2.0 - j as f64) * h);
        binom = binom * (order - j) as f64 / (j + 1) as f64;
    }
    acc / h.powi(order as i32)
}

/// Sup over points and unit directions of `|d^p/du^p bump(z + u v)|`.
///
/// By rotation invariance it suffices to scan the component of `z` along `v`
/// (`along`) and the orthogonal offset (`across`).
pub fn measure_bump_derivative_bound(order: usize, grid: usize) -> f64 {
    let h = match order {
        1 => 1e-6,
        2 => 1e-4,
        3 => 2e-3,
        _ => 5e-3,
    };
    let mut best: f64 = 0.0;
    for ia in 0..=grid {
        let along = 2.1 * ia as f64 / grid as f64;
        for ib in 0..=grid / 2 {
            let across = 2.1 * ib as f64 / (grid / 2) as f64;
            let b2 = across * across;
            if b2 >= 4.0 {
                continue;
            }
            let d = central_difference(|t| bump_sq(b2 + t * t), along, order, h);
            best = best.max(d.abs());
        }
    }
    best
}

/// Sum of scaled, signed bumps on a `2·eps`-separated packing of the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFunction {
    pub k: usize,
    pub s: usize,
    pub eps: f64,
    pub centers: Vec<Vec<f64>>,
    pub signs: Vec<f64>,
    pub amplitude: f64,
}

impl SmoothFunction {
    /// The zero function on `R^k`.
    pub fn zero(k: usize, s: usize) -> Self {
        SmoothFunction { k, s, eps: 1.0, centers: Vec::new(), signs: Vec::new(), amplitude: 0.0 }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let inv = 2.0 / self.eps;
        let reach2 = self.eps * self.eps;
        let mut total = 0.0;
        for (c, sign) in self.centers.iter().zip(&self.signs) {
            let r2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < reach2 {
                total += sign * bump_sq(r2 * inv * inv);
            }
        }
        self.amplitude * total
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }
}

pub fn eval_g(g: &SmoothFunction, z: &[f64]) -> f64 {
    g.eval(z)
}

pub fn sample_hard_function<R: Rng + ?Sized>(k: usize, s: usize, eps: f64, rng: &mut R) -> Result<SmoothFunction> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter { name: "eps", detail: format!("must lie in (0, 1], got {eps}") });
    }
    if s == 0 || k == 0 {
        return Err(Error::InvalidParameter { name: "s", detail: "order and dimension must be at least 1".into() });
    }
    let sep = 2.0 * eps;
    let cap = ((1.0 + 2.0 / sep).powi(k as i32)).ceil().min(1e7) as usize;
    let centers: Vec<Vec<f64>> = pack_points(k, sep, 1.0, cap, rng).into_iter().map(|c| c.as_slice().to_vec()).collect();
    let signs = centers.iter().map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let amplitude = eps.powi(s as i32) / (2f64.powi(s as i32) * derivative_constant(s));
    Ok(SmoothFunction { k, s, eps, centers, signs, amplitude })
}

/// Noiseless labelled inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl RegressionSample {
    pub fn from_function<R: Rng + ?Sized>(g: &SmoothFunction, n: usize, rng: &mut R) -> Self {
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| sample_unit_ball(g.k, rng).as_slice().to_vec()).collect();
        let labels = inputs.iter().map(|z| g.eval(z)).collect();
        RegressionSample { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Number of monomials of total degree at most `degree` in `k` variables.
pub fn num_coefficients(k: usize, degree: usize) -> usize {
    // C(k + degree, degree)
    (1..=degree).fold(1usize, |acc, j| acc * (k + j) / j)
}

fn monomial_exponents(k: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; k]];
    let mut frontier = vec![vec![0u32; k]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // extend only at or after the last nonzero slot to avoid repeats
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for j in start..k {
                let mut f = e.clone();
                f[j] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Local polynomial least squares over nearest neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimator {
    pub sample: RegressionSample,
    pub degree: usize,
    pub neighborhood_size: usize,
    exponents: Vec<Vec<u32>>,
}

pub fn fit_local_estimator(sample: RegressionSample, degree: usize, neighborhood_size: usize) -> Result<LocalEstimator> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = sample.inputs[0].len();
    let coeffs = num_coefficients(k, degree);
    if neighborhood_size < coeffs || neighborhood_size > sample.len() {
        return Err(Error::InvalidParameter {
            name: "neighborhood_size",
            detail: format!("need {coeffs} <= {neighborhood_size} <= n = {}", sample.len()),
        });
    }
    Ok(LocalEstimator { exponents: monomial_exponents(k, degree), sample, degree, neighborhood_size })
}

/// Estimator with the default neighborhood of four times the coefficient count,
/// shrunk to the sample size when the sample is small.
pub fn fit_default_estimator(sample: RegressionSample, s: usize) -> Result<LocalEstimator> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let k = sample.inputs[0].len();
    let mut degree = s.saturating_sub(1);
    while degree > 0 && num_coefficients(k, degree) > sample.len() {
        degree -= 1;
    }
    let hood = (4 * num_coefficients(k, degree)).min(sample.len());
    fit_local_estimator(sample, degree, hood)
}

impl LocalEstimator {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let n = self.sample.len();
        let mut dist: Vec<(f64, usize)> = self
            .sample
            .inputs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let m = self.neighborhood_size.min(n);
        if m < n {
            dist.select_nth_unstable_by(m - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dist.truncate(m);
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (d0, nearest) = dist[0];
        if d0 == 0.0 || self.degree == 0 && m == 1 {
            return self.sample.labels[nearest];
        }
        let labels: Vec<f64> = dist.iter().map(|&(_, i)| self.sample.labels[i]).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            return labels[0];
        }
        let scale = dist.last().unwrap().0.sqrt().max(f64::MIN_POSITIVE);
        let p = self.exponents.len();
        let design = DMatrix::from_fn(m, p, |r, c| {
            let x = &self.sample.inputs[dist[r].1];
            self.exponents[c]
                .iter()
                .enumerate()
                .map(|(j, &e)| ((x[j] - z[j]) / scale).powi(e as i32))
                .product::<f64>()
        });
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax).count();
        if rank < p {
            return self.sample.labels[nearest];
        }
        let rhs = nalgebra::DVector::from_vec(labels);
        match svd.solve(&rhs, 1e-12 * smax) {
            Ok(beta) => beta[0],
            Err(_) => self.sample.labels[nearest],
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { value: f64::NAN, stderr: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { value: mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Estimate { value: mean, stderr: (var / n).sqrt() }
    }
}

/// Root-mean-square error over uniform queries on the unit ball.
pub fn regression_risk<R: Rng + ?Sized>(
    est: &LocalEstimator,
    g: &SmoothFunction,
    m_queries: usize,
    rng: &mut R,
) -> Estimate {
    let sq: Vec<f64> = (0..m_queries.max(1))
        .map(|_| {
            let z = sample_unit_ball(g.k, rng);
            let e = est.predict(z.as_slice()) - g.eval(z.as_slice());
            e * e
        })
        .collect();
    let mse = Estimate::from_samples(&sq);
    let rmse = mse.value.sqrt();
    let stderr = if rmse > 0.0 { mse.stderr / (2.0 * rmse) } else { 0.0 };
    Estimate { value: rmse, stderr }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetFamily {
    /// Bump packing with bandwidth `n^{-1/k}`.
    Hard,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepConfig {
    pub k: usize,
    pub s: usize,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub queries: usize,
    pub family: TargetFamily,
}

impl RateSweepConfig {
    pub fn new(k: usize, s: usize, n_grid: Vec<usize>, seeds: usize) -> Self {
        RateSweepConfig { k, s, n_grid, seeds, queries: 2000, family: TargetFamily::Hard }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlopeStatus {
    Fitted,
    /// Risk vanished at some grid point so a log-log slope is undefined.
    SkippedZeroRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweep {
    pub status: SlopeStatus,
    pub slope: f64,
    /// `(n, mean risk over seeds)` per grid point.
    pub points: Vec<(usize, f64)>,
    pub per_seed_slopes: Vec<f64>,
}

pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Risk at one `(n, seed)` cell of the sweep.
pub fn rate_cell<R: Rng + ?Sized>(cfg: &RateSweepConfig, n: usize, rng: &mut R) -> Result<f64> {
    let g = match cfg.family {
        TargetFamily::Hard => sample_hard_function(cfg.k, cfg.s, (n as f64).powf(-1.0 / cfg.k as f64).min(1.0), rng)?,
        TargetFamily::Constant(c) => {
            // one bump wide enough to be flat on the whole ball
            let mut g = SmoothFunction::zero(cfg.k, cfg.s);
            g.centers = vec![vec![0.0; cfg.k]];
            g.signs = vec![1.0];
            g.amplitude = c;
            g.eps = 100.0;
            g
        }
    };
    let sample = RegressionSample::from_function(&g, n, rng);
    let est = fit_default_estimator(sample, cfg.s)?;
    Ok(regression_risk(&est, &g, cfg.queries, rng).value)
}

pub fn rate_sweep<R: Rng + ?Sized>(cfg: &RateSweepConfig, rng: &mut R) -> Result<RateSweep> {
    if cfg.n_grid.len() < 4 {
        return Err(Error::InvalidParameter { name: "n_grid", detail: "need at least 4 grid points".into() });
    }
    let mut table = vec![vec![0.0; cfg.n_grid.len()]; cfg.seeds];
    for row in table.iter_mut() {
        for (j, &n) in cfg.n_grid.iter().enumerate() {
            row[j] = rate_cell(cfg, n, rng)?;
        }
    }
    let points: Vec<(usize, f64)> = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| (n, table.iter().map(|r| r[j]).sum::<f64>() / cfg.seeds as f64))
        .collect();
    let xs: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    if table.iter().flatten().any(|&r| !(r > 1e-300)) {
        return Ok(RateSweep { status: SlopeStatus::SkippedZeroRisk, slope: f64::NAN, points, per_seed_slopes: Vec::new() });
    }
    let per_seed_slopes: Vec<f64> = table.iter().map(|r| log_log_slope(&xs, r)).collect();
    let slope = per_seed_slopes.iter().sum::<f64>() / per_seed_slopes.len() as f64;
    Ok(RateSweep { status: SlopeStatus::Fitted, slope, points, per_seed_slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn frozen_bounds_cover_measurement() {
        for p in 1..=2 {
            let measured = measure_bump_derivative_bound(p, 600);
            let frozen = BUMP_DERIVATIVE_BOUNDS[p - 1];
            assert!(measured <= frozen && frozen <= 1.05 * measured, "order {p}: {measured} vs {frozen}");
        }
        assert_eq!(derivative_constant(2), 14.3);
        assert_eq!(derivative_constant(1), 2.16);
    }

    #[test]
    fn central_difference_of_polynomial() {
        let d3 = central_difference(|t| t.powi(3), 0.7, 3, 1e-2);
        assert!((d3 - 6.0).abs() < 1e-6);
        let d2 = central_difference(|t| t * t, -1.3, 2, 1e-3);
        assert!((d2 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn center_values_and_support() {
        let mut rng = seeded(2);
        let g = sample_hard_function(2, 2, 0.2, &mut rng).unwrap();
        assert!(g.num_centers() > 5);
        for (c, sign) in g.centers.iter().zip(&g.signs) {
            assert_eq!(g.eval(c), sign * g.amplitude);
        }
        let amp = 0.2f64.powi(2) / (4.0 * 14.3);
        assert!((g.amplitude - amp).abs() < 1e-15);
        // points at least eps from every center vanish
        let mut checked = 0;
        for _ in 0..2000 {
            let z = sample_unit_ball(2, &mut rng);
            let far = g.centers.iter().all(|c| ((c[0] - z[0]).powi(2) + (c[1] - z[1]).powi(2)).sqrt() >= 0.2);
            if far {
                assert_eq!(g.eval(z.as_slice()), 0.0);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn midpoint_between_adjacent_centers_vanishes() {
        let mut rng = seeded(9);
        let g = sample_hard_function(1, 2, 0.5, &mut rng).unwrap();
        let mut xs: Vec<f64> = g.centers.iter().map(|c| c[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!(xs.len() >= 2);
        for w in xs.windows(2) {
            assert_eq!(g.eval(&[0.5 * (w[0] + w[1])]), 0.0);
        }
    }

    #[test]
    fn bounded_and_regular() {
        let mut rng = seeded(4);
        let g = sample_hard_function(2, 2, 0.1, &mut rng).unwrap();
        let h = 1e-4;
        for _ in 0..1000 {
            let z = sample_unit_ball(2, &mut rng);
            let v = sample_unit_ball(2, &mut rng).normalize();
            let f = |t: f64| g.eval(&[z[0] + t * v[0], z[1] + t * v[1]]);
            assert!(f(0.0).abs() <= 1.0);
            assert!(central_difference(f, 0.0, 1, h).abs() <= 1.0 + 1e-3);
            assert!(central_difference(f, 0.0, 2, h).abs() <= 1.0 + 1e-3);
        }
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let mut rng = seeded(0);
        assert!(sample_hard_function(2, 2, 0.0, &mut rng).is_err());
        assert!(sample_hard_function(2, 2, 1.5, &mut rng).is_err());
    }

    #[test]
    fn coefficient_counts_match_enumeration() {
        for k in 1..5 {
            for deg in 0..4 {
                assert_eq!(monomial_exponents(k, deg).len(), num_coefficients(k, deg));
            }
        }
        assert_eq!(num_coefficients(2, 1), 3);
        assert_eq!(num_coefficients(2, 2), 6);
    }

    #[test]
    fn estimator_interpolates_and_handles_zero() {
        let mut rng = seeded(6);
        let g = sample_hard_function(2, 2, 0.15, &mut rng).unwrap();
        let sample = RegressionSample::from_function(&g, 300, &mut rng);
        let est = fit_default_estimator(sample.clone(), 2).unwrap();
        assert_eq!(est.neighborhood_size, 12);
        for (z, y) in sample.inputs.iter().zip(&sample.labels) {
            assert!((est.predict(z) - y).abs() <= 1e-10);
        }
        let zero = SmoothFunction::zero(2, 2);
        let zs = RegressionSample::from_function(&zero, 50, &mut rng);
        let est0 = fit_default_estimator(zs, 2).unwrap();
        for _ in 0..100 {
            assert_eq!(est0.predict(sample_unit_ball(2, &mut rng).as_slice()), 0.0);
        }
        assert_eq!(fit_local_estimator(RegressionSample::default(), 1, 3), Err(Error::EmptySample));
    }

    #[test]
    fn local_linear_recovers_affine_targets() {
        let mut rng = seeded(8);
        let inputs: Vec<Vec<f64>> = (0..200).map(|_| sample_unit_ball(3, &mut rng).as_slice().to_vec()).collect();
        let labels = inputs.iter().map(|z| 0.3 + z[0] - 2.0 * z[2]).collect();
        let est = fit_local_estimator(RegressionSample { inputs, labels }, 1, 16).unwrap();
        let q = [0.1, -0.2, 0.05];
        assert!((est.predict(&q) - (0.3 + 0.1 - 0.1)).abs() < 1e-10);
    }

    #[test]
    fn risk_of_zero_predictor_matches_quadrature() {
        // one dimension: E|g|^2 on Unif[-1,1] by midpoint quadrature
        let mut rng = seeded(10);
        let g = sample_hard_function(1, 1, 0.1, &mut rng).unwrap();
        let zs = RegressionSample::from_function(&SmoothFunction::zero(1, 1), 20, &mut rng);
        let est0 = fit_default_estimator(zs, 1).unwrap();
        let m = 200_000;
        let quad = ((0..m).map(|i| {
            let z = -1.0 + (i as f64 + 0.5) * 2.0 / m as f64;
            g.eval(&[z]).powi(2)
        }).sum::<f64>() / m as f64).sqrt();
        let mc = regression_risk(&est0, &g, 40_000, &mut rng);
        assert!((mc.value - quad).abs() <= 4.0 * mc.stderr + 1e-6, "{} vs {quad}", mc.value);
    }

    #[test]
    fn risk_at_training_points_is_zero() {
        let mut rng = seeded(12);
        let g = sample_hard_function(2, 2, 0.2, &mut rng).unwrap();
        let sample = RegressionSample::from_function(&g, 100, &mut rng);
        let est = fit_default_estimator(sample.clone(), 2).unwrap();
        let worst = sample.inputs.iter().map(|z| (est.predict(z) - g.eval(z)).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10);
    }

    #[test]
    fn constant_family_skips_slope() {
        let mut rng = seeded(13);
        let mut cfg = RateSweepConfig::new(2, 2, vec![16, 32, 64, 128], 2);
        cfg.family = TargetFamily::Constant(0.4);
        cfg.queries = 100;
        let out = rate_sweep(&cfg, &mut rng).unwrap();
        assert_eq!(out.status, SlopeStatus::SkippedZeroRisk);
        cfg.n_grid.truncate(3);
        assert!(rate_sweep(&cfg, &mut rng).is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.75)).collect();
        assert!((log_log_slope(&xs, &ys) + 0.75).abs() < 1e-12);
    }
}
