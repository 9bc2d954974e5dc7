//! Dense linear algebra, bump functions, stability constants, Haar sampling and packings.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default additive margin between the spectral radius and the reported decay rate.
pub const STABILITY_MARGIN: f64 = 0.01;

/// `exp(1 - 1/u)` on `u > 0`, extended by zero.
pub fn phi(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / u).exp()
    }
}

/// Smooth step: 0 for `u <= 0`, 1 for `u >= 1`, infinitely differentiable everywhere.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = phi(u);
        a / (a + phi(1.0 - u))
    }
}

/// Bump as a function of the squared radius.
pub fn bump_sq(r2: f64) -> f64 {
    smooth_step((4.0 - r2) / 3.0)
}

/// Equals 1 exactly on the closed unit ball, 0 exactly outside radius 2.
pub fn bump(z: &[f64]) -> f64 {
    bump_sq(z.iter().map(|v| v * v).sum())
}

/// `bump(z / scale)` without allocating.
pub fn bump_scaled(z: &[f64], scale: f64) -> f64 {
    bump_sq(z.iter().map(|v| v * v).sum::<f64>() / (scale * scale))
}

/// `bump((a - b) / scale)`.
pub fn bump_between(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    bump_sq(r2 / (scale * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairIndex {
    First,
    Second,
}

impl PairIndex {
    pub fn other(self) -> Self {
        match self {
            PairIndex::First => PairIndex::Second,
            PairIndex::Second => PairIndex::First,
        }
    }

    pub fn both() -> [PairIndex; 2] {
        [PairIndex::First, PairIndex::Second]
    }
}

/// Two open-loop systems whose stabilizing gains destabilize each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengingPair {
    pub mu: f64,
    pub c_mu: f64,
    pub a1: Matrix2<f64>,
    pub a2: Matrix2<f64>,
    pub k1: Matrix2<f64>,
    pub k2: Matrix2<f64>,
}

impl ChallengingPair {
    pub fn a(&self, i: PairIndex) -> &Matrix2<f64> {
        match i {
            PairIndex::First => &self.a1,
            PairIndex::Second => &self.a2,
        }
    }

    pub fn k(&self, i: PairIndex) -> &Matrix2<f64> {
        match i {
            PairIndex::First => &self.k1,
            PairIndex::Second => &self.k2,
        }
    }

    pub fn closed_loop(&self, i: PairIndex) -> Matrix2<f64> {
        self.a(i) + self.k(i)
    }
}

pub fn challenging_pair(mu: f64) -> Result<ChallengingPair> {
    if !(mu > 0.0 && mu <= 0.5) {
        return Err(Error::MuOutOfRange(mu));
    }
    let c = 1.5 * mu;
    Ok(ChallengingPair {
        mu,
        c_mu: c,
        a1: Matrix2::new(1.0 + mu, c, -c, 1.0 - 2.0 * mu),
        a2: Matrix2::new(-(1.0 - mu / 4.0), c, 0.0, 1.0 - 2.0 * mu),
        k1: Matrix2::new(-(1.0 + mu), -c, c, 0.0),
        k2: Matrix2::new(1.0 - mu / 4.0, -c, 0.0, 0.0),
    })
}

fn spectral_radius_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let half_tr = 0.5 * (a + d);
    let half_gap = 0.5 * (a - d);
    let disc = half_gap * half_gap + b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (half_tr + s).abs().max((half_tr - s).abs())
    } else {
        // complex pair: modulus^2 = determinant
        (a * d - b * c).abs().sqrt()
    }
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    match a.nrows() {
        0 => Ok(0.0),
        1 => Ok(a[(0, 0)].abs()),
        2 => Ok(spectral_radius_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)])),
        _ => {
            let iterations = 10_000;
            let schur = a
                .clone()
                .try_schur(1e-15, iterations)
                .ok_or(Error::NotConverged { what: "Schur decomposition", iterations })?;
            Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
        }
    }
}

pub fn spectral_radius2(a: &Matrix2<f64>) -> f64 {
    spectral_radius_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)])
}

/// Operator 2-norm as the square root of the top eigenvalue of `AᵀA`.
pub fn op_norm(a: &Matrix) -> f64 {
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

pub fn to_dynamic(a: &Matrix2<f64>) -> Matrix {
    Matrix::from_fn(2, 2, |r, c| a[(r, c)])
}

/// Geometric envelope `‖Aˢ‖ ≤ C·ρˢ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    pub c: f64,
    pub rho: f64,
    pub horizon_used: usize,
}

impl StabilityEstimate {
    /// Largest `‖Aˢ‖ / (C ρˢ)` over the horizon; at most 1 when the envelope holds.
    pub fn worst_ratio(&self, a: &Matrix) -> f64 {
        let mut power = Matrix::identity(a.nrows(), a.ncols());
        let mut worst: f64 = 0.0;
        for s in 1..=self.horizon_used {
            power = &power * a;
            worst = worst.max(op_norm(&power) / (self.c * self.rho.powi(s as i32)));
        }
        worst
    }
}

pub fn stability_constants(a: &Matrix, horizon: usize) -> Result<StabilityEstimate> {
    stability_constants_with_margin(a, horizon, STABILITY_MARGIN)
}

pub fn stability_constants_with_margin(a: &Matrix, horizon: usize, margin: f64) -> Result<StabilityEstimate> {
    if horizon == 0 {
        return Err(Error::InvalidParameter { name: "horizon", detail: "must be at least 1".into() });
    }
    let sr = spectral_radius(a)?;
    if sr >= 1.0 {
        return Err(Error::Unstable(sr));
    }
    let rho = (sr + margin).min(0.5 * (1.0 + sr));
    let mut power = Matrix::identity(a.nrows(), a.ncols());
    let mut c: f64 = 1.0;
    for s in 1..=horizon {
        power = &power * a;
        c = c.max(op_norm(&power) / rho.powi(s as i32));
    }
    Ok(StabilityEstimate { c, rho, horizon_used: horizon })
}

/// `max_i ‖(A_i + K̂)^H e1‖` for a gain that matches `K1` on `e2`.
pub fn cross_instability(pair: &ChallengingPair, khat: &Matrix2<f64>, horizon: u32) -> Result<f64> {
    let gap = (khat.column(1) - pair.k1.column(1)).amax();
    if gap > 1e-12 {
        return Err(Error::GainConstraint(gap));
    }
    let growth = |a: &Matrix2<f64>| {
        let m = a + khat;
        let mut x = Vector2::new(1.0, 0.0);
        for _ in 0..horizon {
            x = m * x;
        }
        x.norm()
    };
    Ok(growth(&pair.a1).max(growth(&pair.a2)))
}

pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Uniform draw from the closed unit ball of `R^k`.
pub fn sample_unit_ball<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vector {
    loop {
        let g = gaussian_vector(k, rng);
        let n = g.norm();
        if n > 0.0 {
            let r: f64 = rng.random::<f64>().powf(1.0 / k as f64);
            return g * (r / n);
        }
    }
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Centers with pairwise distance at least `separation`, inside a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packing {
    pub centers: Vec<Vector>,
    pub separation: f64,
    pub domain_radius: f64,
}

impl Packing {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }

    pub fn is_valid(&self) -> bool {
        self.min_pairwise_distance() >= self.separation
            && self.centers.iter().all(|c| c.norm() <= self.domain_radius)
    }
}

struct CellIndex {
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellIndex {
    fn key(&self, p: &Vector) -> Vec<i64> {
        p.iter().map(|v| (v / self.cell).floor() as i64).collect()
    }

    fn neighbors(&self, key: &[i64]) -> Vec<usize> {
        let d = key.len();
        let mut out = Vec::new();
        let mut offset = vec![-1i64; d];
        loop {
            let probe: Vec<i64> = key.iter().zip(&offset).map(|(k, o)| k + o).collect();
            if let Some(ids) = self.cells.get(&probe) {
                out.extend_from_slice(ids);
            }
            let mut j = 0;
            loop {
                if j == d {
                    return out;
                }
                offset[j] += 1;
                if offset[j] <= 1 {
                    break;
                }
                offset[j] = -1;
                j += 1;
            }
        }
    }
}

/// Rejection-sampled packing without the two-center minimum.
pub(crate) fn pack_points<R: Rng + ?Sized>(
    d: usize,
    sep: f64,
    radius: f64,
    max_n: usize,
    rng: &mut R,
) -> Vec<Vector> {
    let budget = 64 * max_n;
    let mut centers: Vec<Vector> = Vec::new();
    let mut index = (d <= 3).then(|| CellIndex { cell: sep, cells: HashMap::new() });
    for _ in 0..budget {
        if centers.len() >= max_n {
            break;
        }
        let p = sample_unit_ball(d, rng) * radius;
        let ok = match &index {
            Some(idx) => idx
                .neighbors(&idx.key(&p))
                .into_iter()
                .all(|j| (&centers[j] - &p).norm() >= sep),
            None => centers.iter().all(|c| (c - &p).norm() >= sep),
        };
        if ok {
            if let Some(idx) = index.as_mut() {
                let key = idx.key(&p);
                idx.cells.entry(key).or_default().push(centers.len());
            }
            centers.push(p);
        }
    }
    centers
}

pub fn greedy_packing<R: Rng + ?Sized>(
    d: usize,
    sep: f64,
    domain_radius: f64,
    max_n: usize,
    rng: &mut R,
) -> Result<Packing> {
    if !(sep > 0.0) {
        return Err(Error::InvalidParameter { name: "sep", detail: format!("must be positive, got {sep}") });
    }
    let centers = pack_points(d, sep, domain_radius, max_n, rng);
    if centers.len() < 2 {
        return Err(Error::DegeneratePacking { placed: centers.len() });
    }
    Ok(Packing { centers, separation: sep, domain_radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dyn2(rows: [[f64; 2]; 2]) -> Matrix {
        Matrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    #[test]
    fn bump_plateaus() {
        assert_eq!(bump(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(bump(&[1.0]), 1.0);
        assert_eq!(bump(&[2.0]), 0.0);
        assert_eq!(bump(&[0.0, 2.0]), 0.0);
        let mid = bump(&[1.5]);
        assert!(mid > 0.0 && mid < 1.0);
        // oracle: direct composition at r = 1.5
        let u: f64 = (4.0 - 2.25) / 3.0;
        let a = (1.0 - 1.0 / u).exp();
        let b = (1.0 - 1.0 / (1.0 - u)).exp();
        assert!((mid - a / (a + b)).abs() < 1e-15);
    }

    #[test]
    fn bump_gradient_is_bounded_near_transition() {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            let r = 1.0 + i as f64 / 400.0;
            let g = (bump(&[r + h]) - bump(&[r - h])) / (2.0 * h);
            worst = worst.max(g.abs());
        }
        assert!(worst.is_finite() && worst < 3.0, "gradient {worst}");
    }

    #[test]
    fn smooth_step_is_flat_at_both_ends() {
        let h = 1e-3;
        assert!(smooth_step(h) < 1e-100);
        assert!(1.0 - smooth_step(1.0 - h) < 1e-100);
    }

    #[test]
    fn pair_entries_quarter() {
        let p = challenging_pair(0.25).unwrap();
        assert_eq!(p.a1, Matrix2::new(1.25, 0.375, -0.375, 0.5));
        assert_eq!(p.a2, Matrix2::new(-0.9375, 0.375, 0.0, 0.5));
        assert_eq!(p.k1, Matrix2::new(-1.25, -0.375, 0.375, 0.0));
        assert_eq!(p.k2, Matrix2::new(0.9375, -0.375, 0.0, 0.0));
        let target = Matrix2::new(0.0, 0.0, 0.0, 0.5);
        assert_eq!(p.closed_loop(PairIndex::First), target);
        assert_eq!(p.closed_loop(PairIndex::Second), target);
    }

    #[test]
    fn pair_eighth() {
        let p = challenging_pair(0.125).unwrap();
        assert_eq!(p.c_mu, 0.1875);
        assert_eq!(p.a1[(0, 0)], 1.125);
    }

    #[test]
    fn pair_rejects_bad_mu() {
        assert_eq!(challenging_pair(0.0), Err(Error::MuOutOfRange(0.0)));
        assert!(challenging_pair(0.6).is_err());
        assert!(challenging_pair(f64::NAN).is_err());
    }

    #[test]
    fn spectra_quarter() {
        let p = challenging_pair(0.25).unwrap();
        assert!((spectral_radius(&to_dynamic(&p.a1)).unwrap() - 0.875).abs() < 1e-12);
        assert!((spectral_radius(&to_dynamic(&p.a2)).unwrap() - 0.9375).abs() < 1e-12);
        assert_eq!(spectral_radius(&Matrix::identity(5, 5)).unwrap(), 1.0);
    }

    #[test]
    fn schur_path_matches_block_closed_form() {
        let p = challenging_pair(0.25).unwrap();
        let mut big = Matrix::zeros(4, 4);
        big.view_mut((0, 0), (2, 2)).copy_from(&to_dynamic(&p.a2));
        big[(3, 3)] = 0.1;
        assert!((spectral_radius(&big).unwrap() - 0.9375).abs() < 1e-10);
        // rotation: complex pair of modulus 0.9
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let mut rot = Matrix::zeros(3, 3);
        rot[(0, 0)] = 0.9 * c;
        rot[(0, 1)] = -0.9 * s;
        rot[(1, 0)] = 0.9 * s;
        rot[(1, 1)] = 0.9 * c;
        rot[(2, 2)] = 0.2;
        assert!((spectral_radius(&rot).unwrap() - 0.9).abs() < 1e-10);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, -2.0, 1.0]));
        assert!((op_norm(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stability_of_scaled_identity() {
        let est = stability_constants(&(Matrix::identity(3, 3) * 0.5), 20).unwrap();
        assert_eq!(est.c, 1.0);
        assert!((est.rho - 0.51).abs() < 1e-12);
        assert!(est.worst_ratio(&(Matrix::identity(3, 3) * 0.5)) <= 1.0);
    }

    #[test]
    fn stability_of_closed_loop_and_non_normal() {
        let p = challenging_pair(0.25).unwrap();
        let cl = to_dynamic(&p.closed_loop(PairIndex::First));
        let est = stability_constants(&cl, 30).unwrap();
        assert!((est.rho - 0.51).abs() < 1e-12 && est.c >= 1.0);
        let a1 = to_dynamic(&p.a1);
        let est = stability_constants(&a1, 60).unwrap();
        // oracle: ‖A1‖ itself exceeds the decay envelope at s = 1
        let first = op_norm(&a1) / est.rho;
        assert!(first > 1.0);
        assert!(est.c >= first);
        assert!(est.worst_ratio(&a1) <= 1.0 + 1e-12);
    }

    #[test]
    fn stability_rejects_unstable() {
        assert!(matches!(stability_constants(&dyn2([[1.1, 0.0], [0.0, 0.2]]), 5), Err(Error::Unstable(_))));
    }

    #[test]
    fn cross_instability_examples() {
        let p = challenging_pair(0.25).unwrap();
        let v = cross_instability(&p, &p.k1, 10).unwrap();
        assert!(v >= 2.1875f64.powi(10) * (1.0 - 1e-12));
        let balanced = Matrix2::new(-0.15625, -0.375, 0.0, 0.0);
        let v = cross_instability(&p, &balanced, 20).unwrap();
        assert!(v >= 1.0625f64.powi(20));
        // oracle: lower-triangular powers, [[a,0],[b,d]]^H e1 = (a^H, b (a^H - d^H) / (a - d))
        let (a, b, d): (f64, f64, f64) = (1.09375, -0.375, 0.5);
        let tail = b * (a.powi(20) - d.powi(20)) / (a - d);
        let expected = (a.powi(40) + tail * tail).sqrt();
        assert!((v / expected - 1.0).abs() < 1e-12, "balanced growth {v} vs {expected}");
        assert_eq!(cross_instability(&p, &p.k1, 0).unwrap(), 1.0);
        assert!(matches!(cross_instability(&p, &p.a1, 3), Err(Error::GainConstraint(_))));
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = seeded(3);
        for d in [1, 2, 5, 16] {
            let q = random_orthogonal(d, &mut rng);
            let err = (q.transpose() * &q - Matrix::identity(d, d)).amax();
            assert!(err < 1e-10);
        }
        let mut plus = 0;
        for _ in 0..2000 {
            let q = random_orthogonal(1, &mut rng);
            assert_eq!(q[(0, 0)].abs(), 1.0);
            plus += (q[(0, 0)] > 0.0) as usize;
        }
        assert!((plus as f64 - 1000.0).abs() < 3.0 * 22.37);
    }

    #[test]
    fn packing_one_dimensional_pigeonhole() {
        let mut rng = seeded(11);
        let pk = greedy_packing(1, 1.0, 2.0, 8, &mut rng).unwrap();
        assert!(pk.len() <= 5);
        assert!(pk.is_valid());
    }

    #[test]
    fn packing_degenerate() {
        let mut rng = seeded(1);
        assert!(matches!(greedy_packing(2, 10.0, 1.0, 8, &mut rng), Err(Error::DegeneratePacking { placed: 1 })));
        assert!(greedy_packing(2, 0.0, 1.0, 8, &mut rng).is_err());
    }

    #[test]
    fn unit_ball_samples_stay_inside() {
        let mut rng = seeded(5);
        for k in 1..6 {
            for _ in 0..200 {
                assert!(sample_unit_ball(k, &mut rng).norm() <= 1.0);
            }
        }
    }
}
