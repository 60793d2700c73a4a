//! Seeded randomness, small dense linear algebra and rank statistics.
//!
//! Everything here is deliberately small: the attribution solvers only ever
//! need a symmetric positive semidefinite solve, a few norms and an
//! eigenvalue routine for spectral norms of desk-scale matrices.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Relative asymmetry tolerated by [`solve_regularized`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Pivots below this fraction of the largest diagonal entry are treated as
/// singular when no ridge term was requested.
const SINGULAR_PIVOT: f64 = 1e-12;

// ---------------------------------------------------------------------------
// vectors
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// square matrices
// ---------------------------------------------------------------------------

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(|r| r.to_vec()).take(self.dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.dim).map(|row| dot(row, v)).collect()
    }

    /// `self += s · u uᵀ`
    pub fn add_outer(&mut self, s: f64, u: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let su = s * u[i];
            if su == 0.0 {
                continue;
            }
            let row = &mut self.data[i * d..(i + 1) * d];
            for (r, uj) in row.iter_mut().zip(u) {
                *r += su * uj;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SquareMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: f64) -> SquareMatrix {
        SquareMatrix { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &SquareMatrix) -> SquareMatrix {
        SquareMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn symmetrized(&self) -> SquareMatrix {
        let mut m = self.clone();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }
}

// ---------------------------------------------------------------------------
// solves
// ---------------------------------------------------------------------------

/// Solution of a ridge-regularized system together with the ridge actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub x: Vec<f64>,
    pub lambda: f64,
}

/// Lower-triangular Cholesky factor of `A + lambda I`, or `None` when a pivot
/// falls below `min_pivot`.
fn cholesky(a: &SquareMatrix, lambda: f64, min_pivot: f64) -> Option<Vec<f64>> {
    let d = a.dim();
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a.get(j, j) + lambda;
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > min_pivot) {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

fn ridge_residual(a: &SquareMatrix, lambda: f64, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    (0..b.len()).map(|i| b[i] - ax[i] - lambda * x[i]).collect()
}

/// The ridge used when `A` turns out to be singular and no ridge was requested.
pub fn fallback_ridge(a: &SquareMatrix) -> f64 {
    let tr = a.trace() / a.dim().max(1) as f64;
    if tr > 0.0 {
        1e-6 * tr
    } else {
        1e-9
    }
}

/// Solves `(A + lambda I) x = b` for symmetric positive semidefinite `A`.
///
/// With `lambda == 0` a singular `A` falls back to
/// `lambda = 1e-6 · trace(A)/d` (or `1e-9` for a zero trace).
pub fn solve_regularized(a: &SquareMatrix, b: &[f64], lambda: f64) -> Result<RidgeSolution> {
    let d = a.dim();
    check_dim(d, b.len())?;
    if !all_finite(a.as_slice()) {
        return Err(Error::NonFinite("matrix"));
    }
    if !all_finite(b) {
        return Err(Error::NonFinite("right-hand side"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    let asym = a.relative_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if d == 0 {
        return Ok(RidgeSolution { x: Vec::new(), lambda });
    }

    let max_diag = (0..d).fold(0.0_f64, |m, i| m.max(a.get(i, i).abs()));
    let (factor, used) = if lambda == 0.0 {
        match cholesky(a, 0.0, SINGULAR_PIVOT * max_diag) {
            Some(l) => (l, 0.0),
            None => {
                let fallback = fallback_ridge(a);
                let l = cholesky(a, fallback, 0.0)
                    .ok_or_else(|| Error::Degenerate("matrix is not positive semidefinite".into()))?;
                (l, fallback)
            }
        }
    } else {
        let l = cholesky(a, lambda, 0.0)
            .ok_or_else(|| Error::Degenerate("matrix is not positive semidefinite".into()))?;
        (l, lambda)
    };

    let mut x = cholesky_solve(&factor, d, b);
    // two rounds of iterative refinement
    for _ in 0..2 {
        let r = ridge_residual(a, used, &x, b);
        let dx = cholesky_solve(&factor, d, &r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    Ok(RidgeSolution { x, lambda: used })
}

/// Minimizes `xᵀAx − 2bᵀx` subject to `cᵀx = target`.
pub fn solve_constrained(
    a: &SquareMatrix,
    b: &[f64],
    c: &[f64],
    target: f64,
    lambda: f64,
) -> Result<RidgeSolution> {
    check_dim(a.dim(), c.len())?;
    let free = solve_regularized(a, b, lambda)?;
    let dir = solve_regularized(a, c, free.lambda)?;
    let denom = dot(c, &dir.x);
    if denom.abs() < f64::MIN_POSITIVE {
        return Err(Error::Degenerate("constraint direction lies in the null space".into()));
    }
    let nu = (dot(c, &free.x) - target) / denom;
    let x = free.x.iter().zip(&dir.x).map(|(f, g)| f - nu * g).collect();
    Ok(RidgeSolution { x, lambda: free.lambda })
}

// ---------------------------------------------------------------------------
// eigenvalues and norms
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &SquareMatrix) -> Vec<f64> {
    let d = m.dim();
    let mut a = m.symmetrized();
    let scale = a.frobenius();
    if scale == 0.0 {
        return vec![0.0; d];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..d).map(|i| a.get(i, i)).collect()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_spectral_norm(m: &SquareMatrix) -> f64 {
    symmetric_eigenvalues(m).iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Spectral norm of a rectangular matrix given as rows.
pub fn spectral_norm(rows: &[Vec<f64>]) -> f64 {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut gram = SquareMatrix::zeros(cols);
    for row in rows {
        gram.add_outer(1.0, row);
    }
    symmetric_spectral_norm(&gram).max(0.0).sqrt()
}

/// Spectral norm estimate of a symmetric matrix by power iteration.
pub fn power_iteration_norm(m: &SquareMatrix, iterations: usize) -> f64 {
    let d = m.dim();
    if d == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment to coordinate axes
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = m.mul_vec(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        estimate = nw;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    estimate
}

// ---------------------------------------------------------------------------
// random streams
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible ChaCha8 stream addressed by `(seed, stream_id)`.
///
/// Substreams are derived from the address alone, never from the current
/// position, so the draws for Monte Carlo sample `k` do not depend on how
/// work was scheduled.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// Returns the stream addressed by `(seed, stream_id)`.
pub fn derive_stream(seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(seed, stream_id)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh child stream `index`, independent of this stream's position.
    pub fn substream(&self, index: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_f42d_4c95_7f2d)));
        RngStream::new(child_seed, index)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Point drawn uniformly from the L∞ ball of `radius` around `center`.
pub fn sample_uniform_box(rng: &mut RngStream, center: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("radius must be >= 0, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(center.to_vec());
    }
    Ok(center.iter().map(|c| c + radius * (2.0 * rng.uniform() - 1.0)).collect())
}

/// `mean + sigma · ξ` with ξ standard normal.
pub fn sample_gaussian(rng: &mut RngStream, mean: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(mean.to_vec());
    }
    Ok(mean.iter().map(|m| m + sigma * rng.standard_normal()).collect())
}

/// Point drawn uniformly from the Euclidean ball of `radius` around `center`.
pub fn sample_l2_ball(rng: &mut RngStream, center: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("radius must be >= 0, got {radius}")));
    }
    let d = center.len();
    if radius == 0.0 || d == 0 {
        return Ok(center.to_vec());
    }
    let dir: Vec<f64> = loop {
        let g: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        if norm2(&g) > 0.0 {
            break g;
        }
    };
    let len = radius * rng.uniform().powf(1.0 / d as f64) / norm2(&dir);
    Ok(center.iter().zip(&dir).map(|(c, g)| c + len * g).collect())
}

// ---------------------------------------------------------------------------
// rank statistics
// ---------------------------------------------------------------------------

/// Spearman correlation plus a flag set when either input has constant ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub value: f64,
    pub degenerate: bool,
}

/// Ranks starting at 1, ties receive their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman_correlation(a: &[f64], b: &[f64]) -> Result<RankCorrelation> {
    check_dim(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(invalid("rank correlation needs at least two entries"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(RankCorrelation { value: 0.0, degenerate: true });
    }
    let value = (cov / (va * vb).sqrt()).clamp(-1.0, 1.0);
    Ok(RankCorrelation { value, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use proptest::prelude::*;

    #[test]
    fn identity_solve() {
        let s = solve_regularized(&SquareMatrix::identity(2), &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(s.x, vec![1.0, 2.0]);
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn small_ridge_on_singular_matrix() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = solve_regularized(&a, &[2.0, 0.0], 1e-6).unwrap();
        // (1 + 1e-6) x0 = 2
        assert!((s.x[0] - 2.0).abs() < 1e-5);
        assert!(s.x[1].abs() < 1e-5);
    }

    #[test]
    fn two_by_two_inverse() {
        let a = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = solve_regularized(&a, &[1.0, 1.0], 0.0).unwrap();
        assert!((s.x[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_without_ridge_falls_back() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let s = solve_regularized(&a, &[1.0, 2.0], 0.0).unwrap();
        assert!((s.lambda - 1e-6 * 5.0 / 2.0).abs() < 1e-20);
        let zero = solve_regularized(&SquareMatrix::zeros(3), &[0.0; 3], 0.0).unwrap();
        assert_eq!(zero.lambda, 1e-9);
    }

    #[test]
    fn rejects_asymmetric_and_non_finite() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(solve_regularized(&a, &[1.0, 1.0], 0.0), Err(Error::NotSymmetric { .. })));
        let a = SquareMatrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]).unwrap();
        assert!(matches!(solve_regularized(&a, &[1.0, 1.0], 0.0), Err(Error::NonFinite(_))));
        assert!(solve_regularized(&SquareMatrix::identity(2), &[1.0, f64::INFINITY], 0.0).is_err());
    }

    #[test]
    fn constrained_solve_meets_constraint() {
        let a = SquareMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let s = solve_constrained(&a, &[1.0, -1.0], &[1.0, 1.0], 3.0, 0.0).unwrap();
        assert!((s.x[0] + s.x[1] - 3.0).abs() < 1e-12);
        // KKT: A x - b is parallel to c
        let g = sub(&a.mul_vec(&s.x), &[1.0, -1.0]);
        assert!((g[0] - g[1]).abs() < 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues() {
        assert_eq!(symmetric_spectral_norm(&SquareMatrix::diagonal(&[3.0, 1.0])), 3.0);
        let m = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let mut ev = symmetric_eigenvalues(&m);
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        assert!((spectral_norm(&[vec![2.0, 0.0]]) - 2.0).abs() < 1e-15);
        assert!((power_iteration_norm(&m, 50) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn stream_determinism_and_separation() {
        let mut a = derive_stream(7, 0);
        let mut b = derive_stream(7, 0);
        let mut c = derive_stream(7, 1);
        let da: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let db: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        let dc: Vec<u64> = (0..100).map(|_| c.next_u64()).collect();
        assert_eq!(da, db);
        assert_ne!(da, dc);
    }

    #[test]
    fn clone_is_independent_value() {
        let mut a = derive_stream(3, 9);
        let mut b = a.clone();
        let _ = a.uniform();
        let mut fresh = derive_stream(3, 9);
        assert_eq!(b.uniform(), fresh.uniform());
        assert_eq!(a.substream(4).uniform(), derive_stream(3, 9).substream(4).uniform());
    }

    #[test]
    fn uniform_mean() {
        let mut rng = derive_stream(42, 3);
        let n = 100_000;
        let m = (0..n).map(|_| rng.uniform()).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.01);
    }

    #[test]
    fn uniform_box_moments_and_support() {
        let mut rng = derive_stream(1, 1);
        assert_eq!(sample_uniform_box(&mut rng, &[0.3, -2.0], 0.0).unwrap(), vec![0.3, -2.0]);
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let y = sample_uniform_box(&mut rng, &[0.0; 3], 1.0).unwrap();
            assert!(norm_inf(&y) <= 1.0);
            for (s, v) in sums.iter_mut().zip(&y) {
                *s += v;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 0.02);
        }
        assert!(sample_uniform_box(&mut rng, &[0.0], -1.0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = derive_stream(5, 0);
        assert_eq!(sample_gaussian(&mut rng, &[1.0, 2.0], 0.0).unwrap(), vec![1.0, 2.0]);
        let n = 100_000;
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let y = sample_gaussian(&mut rng, &[0.0, 0.0], 2.0).unwrap();
            sq[0] += y[0] * y[0];
            sq[1] += y[1] * y[1];
        }
        for s in sq {
            assert!((s / n as f64 - 4.0).abs() < 0.2);
        }
        let a = sample_gaussian(&mut derive_stream(9, 2), &[0.0; 4], 1.0).unwrap();
        let b = sample_gaussian(&mut derive_stream(9, 2), &[0.0; 4], 1.0).unwrap();
        assert_eq!(a, b);
        assert!(sample_gaussian(&mut rng, &[0.0], -0.5).is_err());
    }

    #[test]
    fn l2_ball_support() {
        let mut rng = derive_stream(11, 0);
        for _ in 0..1000 {
            let y = sample_l2_ball(&mut rng, &[1.0, 1.0, 1.0], 0.5).unwrap();
            assert!(norm2(&sub(&y, &[1.0, 1.0, 1.0])) <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn spearman_examples() {
        let c = spearman_correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.value, 1.0);
        let c = spearman_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.value, -1.0);
        let c = spearman_correlation(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
        assert!((c.value - 0.5).abs() < 1e-15);
        let c = spearman_correlation(&[1.0, 1.0, 1.0], &[2.0, 1.0, 3.0]).unwrap();
        assert!(c.degenerate && c.value == 0.0);
        assert!(spearman_correlation(&[1.0, 2.0], &[1.0]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    fn spd_strategy() -> impl Strategy<Value = (SquareMatrix, Vec<f64>, f64)> {
        (1usize..7).prop_flat_map(|d| {
            (
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 1..2 * d + 1),
                proptest::collection::vec(-5.0f64..5.0, d),
                prop_oneof![Just(0.0), 1e-6f64..1.0],
            )
                .prop_map(move |(rows, b, lambda)| {
                    let mut a = SquareMatrix::zeros(d);
                    for r in &rows {
                        a.add_outer(1.0, r);
                    }
                    (a, b, lambda)
                })
        })
    }

    proptest! {
        #[test]
        fn ridge_residual_is_small((a, b, lambda) in spd_strategy()) {
            let s = solve_regularized(&a, &b, lambda).unwrap();
            let r = ridge_residual(&a, s.lambda, &s.x, &b);
            prop_assert!(norm2(&r) <= 1e-8 * (norm2(&b) + 1.0), "residual {}", norm2(&r));
        }

        #[test]
        fn spearman_self_and_reversal(v in proptest::collection::hash_set(-1000i32..1000, 2..40)) {
            let a: Vec<f64> = v.into_iter().map(f64::from).collect();
            prop_assert!((spearman_correlation(&a, &a).unwrap().value - 1.0).abs() < 1e-12);
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + 3.0).collect();
            let rev: Vec<f64> = b.iter().map(|x| -x).collect();
            let fwd = spearman_correlation(&a, &b).unwrap().value;
            let bwd = spearman_correlation(&a, &rev).unwrap().value;
            prop_assert!((fwd + bwd).abs() < 1e-12);
        }
    }
}
