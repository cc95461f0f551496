//! Dense helpers used by the kernel engine.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Pivots below `rel_tol * max(diag)` are treated as singular.
    pub fn factor(a: ArrayView2<f64>, rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let scale = a.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = rel_tol * scale.max(f64::MIN_POSITIVE);
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > floor) {
                return Err(Error::SingularGram { row: j, pivot: d });
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { l })
    }

    /// Solves `A x = b` column by column.
    pub fn solve(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let n = self.l.nrows();
        let mut x = b.to_owned();
        for mut col in x.axis_iter_mut(Axis(1)) {
            // forward: L y = b
            for i in 0..n {
                let mut s = col[i];
                for k in 0..i {
                    s -= self.l[[i, k]] * col[k];
                }
                col[i] = s / self.l[[i, i]];
            }
            // backward: L^T x = y
            for i in (0..n).rev() {
                let mut s = col[i];
                for k in (i + 1)..n {
                    s -= self.l[[k, i]] * col[k];
                }
                col[i] = s / self.l[[i, i]];
            }
        }
        x
    }
}

/// Euclidean norm of each row.
pub fn row_norms(m: ArrayView2<f64>) -> Array1<f64> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![[1.0, 0.0], [2.0, 1.0], [3.0, -1.0]];
        let x = Cholesky::factor(a.view(), 1e-14).unwrap().solve(b.view());
        let back = a.dot(&x);
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_rank_deficient() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            Cholesky::factor(a.view(), 1e-12),
            Err(Error::SingularGram { row: 1, .. })
        ));
    }
}
