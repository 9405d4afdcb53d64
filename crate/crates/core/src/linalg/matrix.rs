use std::fmt;

use super::LinalgError;

/// Dense row-major matrix of `f64`.
///
/// Hidden states crossing a public boundary are laid out features × positions
/// (`d × n`); the transformer internals work on the transpose.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 36 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, checking length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for kernels whose output shape is known.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LinalgError::RaggedRows);
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, &x) in row.iter().enumerate() {
                out[j * self.rows + i] = x;
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(gemm_nn(self, other))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// `self + alpha * other`, elementwise.
    pub fn add_scaled(&self, other: &Matrix, alpha: f64) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add_scaled", |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|x| alpha * x).collect(),
        )
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Copies the column range `[start, end)` into a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let w = end - start;
        let mut out = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[start..end]);
        }
        Self::from_raw(self.rows, w, out)
    }
}

const MR: usize = 4;
const NR: usize = 8;

/// Register-blocked `C = A·B` where `a_at(i, k)` reads `A` and `b` is `K × N`
/// row-major. Every output element is summed over `k` in increasing order
/// starting from zero, exactly like the textbook triple loop.
#[inline(always)]
fn gemm_kernel(
    m: usize,
    n: usize,
    kd: usize,
    a_at: impl Fn(usize, usize) -> f64,
    b: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let mut panel = vec![0.0; kd * MR];
    let full_cols = n - n % NR;
    for i0 in (0..m).step_by(MR) {
        let mr = MR.min(m - i0);
        if mr < MR {
            for i in i0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for (k, brow) in b.chunks_exact(n).enumerate() {
                    axpy(row, a_at(i, k), brow);
                }
            }
            break;
        }
        for k in 0..kd {
            for r in 0..MR {
                panel[k * MR + r] = a_at(i0 + r, k);
            }
        }
        for j0 in (0..full_cols).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for (av, brow) in panel.chunks_exact(MR).zip(b.chunks_exact(n)) {
                let bv: &[f64; NR] = brow[j0..j0 + NR].try_into().unwrap();
                for r in 0..MR {
                    for c in 0..NR {
                        acc[r][c] += av[r] * bv[c];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                let at = (i0 + r) * n + j0;
                out[at..at + NR].copy_from_slice(acc_r);
            }
        }
        for j in full_cols..n {
            for r in 0..MR {
                let mut acc = 0.0;
                for (k, av) in panel.chunks_exact(MR).enumerate() {
                    acc += av[r] * b[k * n + j];
                }
                out[(i0 + r) * n + j] = acc;
            }
        }
    }
    out
}

/// `a · b` without shape checks.
pub(crate) fn gemm_nn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.rows);
    let kd = a.cols;
    let ad = &a.data;
    let out = gemm_kernel(a.rows, b.cols, kd, |i, k| ad[i * kd + k], &b.data);
    Matrix::from_raw(a.rows, b.cols, out)
}

/// `aᵀ · b` without shape checks.
pub(crate) fn gemm_tn(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.rows, b.rows);
    let w = a.cols;
    let ad = &a.data;
    let out = gemm_kernel(a.cols, b.cols, a.rows, |i, k| ad[k * w + i], &b.data);
    Matrix::from_raw(a.cols, b.cols, out)
}

/// `a · bᵀ` without shape checks.
pub(crate) fn gemm_nt(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert_eq!(a.cols, b.cols);
    gemm_nn(a, &b.transpose())
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_a_is_a() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 3.5);
        assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[5.0], &[6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(
            msg.contains("2x3") && msg.matches("2x3").count() == 2,
            "{msg}"
        );
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(LinalgError::DataLength { .. })
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite)
        ));
        assert!(matches!(
            Matrix::new(0, 2, vec![]),
            Err(LinalgError::EmptyShape { .. })
        ));
    }

    #[test]
    fn transposed_kernels_agree() {
        let a = Matrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = Matrix::from_fn(5, 4, |i, j| ((i * 2 + j) % 3) as f64 + 0.5);
        assert_eq!(gemm_tn(&a, &b), gemm_nn(&a.transpose(), &b));
        let c = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.25);
        assert_eq!(gemm_nt(&a, &c), gemm_nn(&a, &c.transpose()));
    }
}
