//! Dense linear-algebra helpers built on nalgebra.
//!
//! Tall data matrices (many samples, few channels) are reduced to their
//! triangular QR factor before any SVD. The factor has the same singular
//! values and column inner products as the original, so ranks, regressions
//! and pseudoinverses can be computed on a small square matrix.

use nalgebra::{DMatrix, DVector};

const CHUNK_ROWS: usize = 2048;

/// Streaming Householder QR that keeps only the triangular factor.
pub struct TriangularAccumulator {
    ncols: usize,
    r: DMatrix<f64>,
    pending: Vec<f64>,
    pending_rows: usize,
    total_rows: usize,
}

impl TriangularAccumulator {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            r: DMatrix::zeros(0, ncols),
            pending: Vec::with_capacity(CHUNK_ROWS * ncols),
            pending_rows: 0,
            total_rows: 0,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.ncols);
        self.pending.extend_from_slice(row);
        self.pending_rows += 1;
        self.total_rows += 1;
        if self.pending_rows == CHUNK_ROWS {
            self.flush();
        }
    }

    pub fn rows_seen(&self) -> usize {
        self.total_rows
    }

    fn flush(&mut self) {
        if self.pending_rows == 0 {
            return;
        }
        let top = self.r.nrows();
        let n = self.ncols;
        let stacked = DMatrix::from_fn(top + self.pending_rows, n, |i, j| {
            if i < top {
                self.r[(i, j)]
            } else {
                self.pending[(i - top) * n + j]
            }
        });
        self.r = stacked.qr().r();
        self.pending.clear();
        self.pending_rows = 0;
    }

    /// Square `ncols x ncols` upper-triangular factor (zero-padded when fewer
    /// rows than columns were pushed).
    pub fn finish(mut self) -> DMatrix<f64> {
        self.flush();
        let n = self.ncols;
        let mut out = DMatrix::zeros(n, n);
        let k = self.r.nrows().min(n);
        out.view_mut((0, 0), (k, n)).copy_from(&self.r.rows(0, k));
        out
    }
}

/// Triangular factor of a row-sample matrix.
pub fn triangular_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut acc = TriangularAccumulator::new(m.ncols());
    let mut row = vec![0.0; m.ncols()];
    for i in 0..m.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
        acc.push_row(&row);
    }
    acc.finish()
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let reduced;
    let target = if m.nrows() > 2 * m.ncols() {
        reduced = triangular_factor(m);
        &reduced
    } else if m.ncols() > 2 * m.nrows() {
        reduced = triangular_factor(&m.transpose());
        &reduced
    } else {
        m
    };
    let mut sv: Vec<f64> = target.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(m.nrows().min(m.ncols()));
    sv
}

/// Default relative rank tolerance: machine epsilon times the larger dimension.
pub fn default_rank_tolerance(rows: usize, cols: usize) -> f64 {
    f64::EPSILON * rows.max(cols) as f64
}

/// Count of singular values strictly above `rel_tol * sigma_max`.
pub fn rank_from_singular_values(sv: &[f64], rel_tol: f64) -> usize {
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Numerical rank. `rel_tol` defaults to [`default_rank_tolerance`].
pub fn matrix_rank(m: &DMatrix<f64>, rel_tol: Option<f64>) -> usize {
    let tol = rel_tol.unwrap_or_else(|| default_rank_tolerance(m.nrows(), m.ncols()));
    rank_from_singular_values(&singular_values(m), tol)
}

/// Minimum-norm least-squares solution of `design * x = rhs` via a truncated
/// SVD pseudoinverse.
pub fn lstsq(design: &DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DVector::zeros(design.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            let coeff = u.column(k).dot(rhs) / s;
            x += vt.row(k).transpose() * coeff;
        }
    }
    x
}

/// Spectral radius via complex eigenvalues.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_rank() {
        assert_eq!(matrix_rank(&DMatrix::identity(3, 3), None), 3);
    }

    #[test]
    fn dependent_column_drops_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(50, 3, |_, _| rng.random::<f64>());
        let mut m = m;
        for i in 0..50 {
            m[(i, 2)] = m[(i, 0)] + m[(i, 1)];
        }
        assert_eq!(matrix_rank(&m, None), 2);
    }

    #[test]
    fn triangular_factor_preserves_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(5000, 4, |_, _| rng.random::<f64>() - 0.5);
        let r = triangular_factor(&m);
        let g1 = m.transpose() * &m;
        let g2 = r.transpose() * &r;
        assert!((g1 - &g2).norm() < 1e-9 * g2.norm());
    }

    #[test]
    fn wide_and_tall_singular_values_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(3, 400, |_, _| rng.random::<f64>());
        let a = singular_values(&m);
        let b = singular_values(&m.transpose());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10 * x.max(1.0));
        }
    }
}
