use serde::{Deserialize, Serialize};

use crate::linalg::{truncated_svd, Matrix};
use crate::protocol::{encode_packet, PacketRole};

/// Measured size of one encoded packet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRow {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub bytes: usize,
    /// Bytes for the same state sent uncompressed as binary32.
    pub dense_bytes: usize,
}

/// Encodes a real packet for every `(n, k)` with `k ≤ min(d, n)` and records
/// its length.
pub fn comm_table(d: usize, ns: &[usize], ks: &[usize]) -> Vec<CommRow> {
    let mut rows = Vec::new();
    for &n in ns {
        let h = Matrix::from_fn(d, n, |i, j| {
            ((i * 7 + j * 13) % 17) as f64 - 8.0 + 0.01 * (i * j) as f64
        });
        for &k in ks.iter().filter(|&&k| k >= 1 && k <= d.min(n)) {
            let f = truncated_svd(&h, k, 0).expect("k is within range");
            rows.push(CommRow {
                d,
                n,
                k,
                bytes: encode_packet(&f, PacketRole::ClientToServer, 0).len(),
                dense_bytes: 4 * d * n,
            });
        }
    }
    rows
}

/// Line through `(x, y)` points, checked exactly in integer arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest distance of a point from the line, in `y` units.
    pub max_residual: f64,
}

/// Fits `y = a + b·x` through the first two distinct `x` and measures every
/// point against it. `None` with fewer than two distinct `x`.
pub fn affine_fit(points: &[(usize, usize)]) -> Option<AffineFit> {
    let &(x0, y0) = points.first()?;
    let &(x1, y1) = points.iter().find(|p| p.0 != x0)?;
    let (x0, y0, x1, y1) = (x0 as i128, y0 as i128, x1 as i128, y1 as i128);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let max_residual = points
        .iter()
        .map(|&(x, y)| {
            let cross = (y as i128 - y0) * dx - dy * (x as i128 - x0);
            cross.unsigned_abs() as f64 / dx.unsigned_abs() as f64
        })
        .fold(0.0, f64::max);
    let slope = dy as f64 / dx as f64;
    Some(AffineFit {
        intercept: y0 as f64 - slope * x0 as f64,
        slope,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::packet_len;

    #[test]
    fn measured_bytes_match_formula_and_are_affine_in_k() {
        let rows = comm_table(16, &[5, 12], &[1, 2, 3, 5, 8, 12]);
        assert_eq!(rows.len(), 4 + 6);
        for r in &rows {
            assert_eq!(r.bytes, packet_len(r.d, r.n, r.k));
        }
        let pts: Vec<_> = rows
            .iter()
            .filter(|r| r.n == 12)
            .map(|r| (r.k, r.bytes))
            .collect();
        let fit = affine_fit(&pts).unwrap();
        assert_eq!(fit.max_residual, 0.0);
        assert_eq!(fit.slope, (4 * (16 + 12 + 1)) as f64);
        assert_eq!(fit.intercept, 32.0);
    }

    #[test]
    fn off_line_point_has_residual() {
        let fit = affine_fit(&[(0, 0), (1, 2), (2, 5)]).unwrap();
        assert_eq!(fit.max_residual, 1.0);
        assert!(affine_fit(&[(1, 1), (1, 2)]).is_none());
    }
}
