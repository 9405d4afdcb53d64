//! Randomized truncated SVD and the exact one-sided Jacobi SVD it is built on.
//!
//! The randomized path follows the usual range-finder recipe: sketch the
//! column space with a Gaussian test matrix, sharpen it with a few power
//! iterations, then solve a small dense SVD in the projected space. The
//! dense solve is one-sided Jacobi, which is also what [`singular_values`]
//! uses directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use super::{LinalgError, Matrix};

/// Sketch columns drawn beyond the requested rank.
pub const OVERSAMPLING: usize = 8;
/// Subspace (power) iterations applied to the sketch.
pub const POWER_ITERATIONS: usize = 2;

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;
const ORTHONORMAL_TOL: f64 = 1e-4;

/// Rank-`k` factors `U_k · diag(s) · V_kᵀ` of a `d × n` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedFactors {
    #[serde(with = "matrix_serde")]
    u: Matrix,
    s: Vec<f64>,
    #[serde(with = "matrix_serde")]
    v: Matrix,
}

impl TruncatedFactors {
    /// Validates and assembles factors; `u` is `d × k`, `v` is `n × k`.
    pub fn from_parts(u: Matrix, s: Vec<f64>, v: Matrix) -> Result<Self, LinalgError> {
        let k = s.len();
        if k == 0 || u.cols() != k || v.cols() != k {
            return Err(LinalgError::FactorShape {
                u: u.shape(),
                s: k,
                v: v.shape(),
            });
        }
        if k > u.rows().min(v.rows()) {
            return Err(LinalgError::RankOutOfRange {
                k,
                rows: u.rows(),
                cols: v.rows(),
            });
        }
        if !u.is_finite() || !v.is_finite() || s.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        if s.iter().any(|&x| x < 0.0) || s.windows(2).any(|w| w[1] > w[0]) {
            return Err(LinalgError::UnsortedSingularValues);
        }
        for (name, m) in [("u", &u), ("v", &v)] {
            let err = orthonormality_error(m);
            if err > ORTHONORMAL_TOL * k as f64 {
                return Err(LinalgError::NotOrthonormal {
                    factor: name,
                    error: err,
                });
            }
        }
        Ok(Self { u, s, v })
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn orig_rows(&self) -> usize {
        self.u.rows()
    }

    pub fn orig_cols(&self) -> usize {
        self.v.rows()
    }

    /// `U · diag(s) · Vᵀ`, the approximation Ĥ.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, &s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        gemm_nt(&us, &self.v)
    }
}

/// `‖MᵀM − I‖_F` for the columns of `m`.
pub fn orthonormality_error(m: &Matrix) -> f64 {
    let gram = gemm_tn(m, m);
    let mut acc = 0.0;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (gram.get(i, j) - target).powi(2);
        }
    }
    acc.sqrt()
}

/// Rank-`k` randomized SVD of `h`, deterministic for a fixed `seed`.
///
/// Each column of `U` is sign-normalized so that its first nonzero entry is
/// nonnegative.
pub fn truncated_svd(h: &Matrix, k: usize, seed: u64) -> Result<TruncatedFactors, LinalgError> {
    let (d, n) = h.shape();
    let full = d.min(n);
    if k == 0 || k > full {
        return Err(LinalgError::RankOutOfRange {
            k,
            rows: d,
            cols: n,
        });
    }
    if !h.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let sketch = (k + OVERSAMPLING).min(full);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test = Matrix::from_fn(n, sketch, |_, _| StandardNormal.sample(&mut rng));

    // Basis vectors are kept as rows: `qt` is the transpose of Q (sketch × d).
    let mut qt = gemm_nn(h, &test).transpose();
    orthonormalize_rows(&mut qt);
    for _ in 0..POWER_ITERATIONS {
        let mut zt = gemm_nn(&qt, h);
        orthonormalize_rows(&mut zt);
        qt = gemm_nt(&zt, h);
        orthonormalize_rows(&mut qt);
    }

    // B = Qᵀ H is sketch × n; its rows are the columns Jacobi rotates.
    let b = gemm_nn(&qt, h);
    let dense = jacobi_rows(&b);

    let mut ut = Matrix::zeros(k, d);
    let mut vt = Matrix::zeros(k, n);
    let mut s = Vec::with_capacity(k);
    for (slot, &j) in dense.order.iter().take(k).enumerate() {
        s.push(dense.sigma[j]);
        let u_row = ut.row_mut(slot);
        for (i, &w) in dense.rotation[j].iter().enumerate() {
            axpy(u_row, w, qt.row(i));
        }
        vt.row_mut(slot).copy_from_slice(&dense.left[j]);
    }
    // Right vectors of vanishing singular values are undefined; complete them.
    orthonormalize_rows(&mut vt);
    normalize_signs(&mut ut, &mut vt);

    TruncatedFactors::from_parts(ut.transpose(), s, vt.transpose())
}

/// All singular values of `h`, sorted non-increasing (exact Jacobi SVD).
pub fn singular_values(h: &Matrix) -> Result<Vec<f64>, LinalgError> {
    if !h.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let short = if h.rows() <= h.cols() {
        h.clone()
    } else {
        h.transpose()
    };
    let dense = jacobi_rows(&short);
    Ok(dense.order.iter().map(|&j| dense.sigma[j]).collect())
}

/// Sum of singular values.
pub fn nuclear_norm(h: &Matrix) -> Result<f64, LinalgError> {
    Ok(singular_values(h)?.iter().sum())
}

/// Converts a discarded fraction `p` into a kept rank over `min(d, n)`.
///
/// Selection is by index: `k = max(1, round((1 - p) · min(d, n)))`.
pub fn ratio_to_rank(p: f64, d: usize, n: usize) -> Result<usize, LinalgError> {
    if !(0.0..1.0).contains(&p) {
        return Err(LinalgError::RatioOutOfRange(p));
    }
    if d == 0 || n == 0 {
        return Err(LinalgError::EmptyShape { rows: d, cols: n });
    }
    let full = d.min(n);
    let k = ((1.0 - p) * full as f64).round() as usize;
    Ok(k.clamp(1, full))
}

struct JacobiResult {
    /// Normalized rotated rows (right singular vectors of the input rows).
    left: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    /// `rotation[j]` is column j of the accumulated orthogonal matrix.
    rotation: Vec<Vec<f64>>,
    /// Indices sorted by descending sigma.
    order: Vec<usize>,
}

/// One-sided Jacobi on the rows of `a` (`r × c`): finds orthogonal `W` with
/// `Aᵀ W = L Σ`, i.e. `A = W Σ Lᵀ`.
fn jacobi_rows(a: &Matrix) -> JacobiResult {
    let r = a.rows();
    let mut rows: Vec<Vec<f64>> = (0..r).map(|i| a.row(i).to_vec()).collect();
    let mut rotation: Vec<Vec<f64>> = (0..r)
        .map(|j| {
            let mut e = vec![0.0; r];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..r {
            for q in p + 1..r {
                let alpha = dot(&rows[p], &rows[p]);
                let beta = dot(&rows[q], &rows[q]);
                let gamma = dot(&rows[p], &rows[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut rows, p, q, c, s);
                rotate_pair(&mut rotation, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = Vec::with_capacity(r);
    for row in &mut rows {
        let norm = dot(row, row).sqrt();
        sigma.push(norm);
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    JacobiResult {
        left: rows,
        sigma,
        rotation,
        order,
    }
}

fn rotate_pair(vs: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = vs.split_at_mut(q);
    let (vp, vq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Orthonormalizes the rows of `m` in place (Gram–Schmidt, applied twice).
/// Rows that collapse numerically are replaced by the first standard basis
/// vector that is independent of the rows before them.
pub(crate) fn orthonormalize_rows(m: &mut Matrix) {
    let (r, c) = m.shape();
    debug_assert!(r <= c);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut next_unit = 0;
    for i in 0..r {
        let original = m.row(i).to_vec();
        let scale = dot(&original, &original).sqrt();
        let mut v = original;
        project_out(&mut v, &basis);
        let mut norm = dot(&v, &v).sqrt();
        if norm.is_nan() || norm <= 1e-10 * scale || scale == 0.0 {
            loop {
                let mut e = vec![0.0; c];
                e[next_unit % c] = 1.0;
                next_unit += 1;
                project_out(&mut e, &basis);
                norm = dot(&e, &e).sqrt();
                if norm > 0.5 {
                    v = e;
                    break;
                }
            }
        }
        v.iter_mut().for_each(|x| *x /= norm);
        m.row_mut(i).copy_from_slice(&v);
        basis.push(v);
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let coef = dot(v, b);
            axpy(v, -coef, b);
        }
    }
}

/// Flips paired rows of `ut`/`vt` so each `u` has a nonnegative leading entry.
fn normalize_signs(ut: &mut Matrix, vt: &mut Matrix) {
    for j in 0..ut.rows() {
        let lead = ut.row(j).iter().copied().find(|x| x.abs() > 1e-12);
        if matches!(lead, Some(x) if x < 0.0) {
            ut.row_mut(j).iter_mut().for_each(|x| *x = -*x);
            vt.row_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub(crate) mod matrix_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Matrix;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Repr::deserialize(d)?;
        Matrix::new(r.rows, r.cols, r.data).map_err(serde::de::Error::custom)
    }
}
