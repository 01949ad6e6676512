use nalgebra::{Cholesky, Dyn};

use crate::{Mat, Vector};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub type Chol = Cholesky<f64, Dyn>;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub(crate) fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn frobenius(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Negative log-density of a zero-mean Gaussian with covariance factor
/// `chol` evaluated at `residual`, constants included.
pub(crate) fn gaussian_nll(residual: &Vector, chol: &Chol) -> f64 {
    let n = residual.len();
    if n == 0 {
        return 0.0;
    }
    let ln_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| libm::log(*v))
            .sum::<f64>();
    let white = chol.solve(residual);
    0.5 * ln_det + 0.5 * residual.dot(&white) + 0.5 * n as f64 * LN_2PI
}

/// `A S⁻¹` for a symmetric `S` given by its Cholesky factor.
pub(crate) fn right_solve(chol: &Chol, a: &Mat) -> Mat {
    chol.solve(&a.transpose()).transpose()
}

/// Writes `J x`, where `J = [I; [I 0]]` duplicates the leading `d` entries.
pub(crate) fn duplicate_head(x: &Vector, d: usize) -> Vector {
    let n = x.len();
    let mut out = Vector::zeros(n + d);
    out.rows_mut(0, n).copy_from(x);
    out.rows_mut(n, d).copy_from(&x.rows(0, d));
    out
}

/// Writes `J P Jᵀ` for the same duplication map.
pub(crate) fn duplicate_head_cov(p: &Mat, d: usize) -> Mat {
    let n = p.nrows();
    let mut out = Mat::zeros(n + d, n + d);
    out.view_mut((0, 0), (n, n)).copy_from(p);
    out.view_mut((n, 0), (d, n)).copy_from(&p.rows(0, d));
    out.view_mut((0, n), (n, d)).copy_from(&p.columns(0, d));
    out.view_mut((n, n), (d, d))
        .copy_from(&p.view((0, 0), (d, d)));
    out
}

/// `Jᵀ a`: folds the trailing `d` entries back onto the leading block.
pub(crate) fn fold_head(a: &Vector, d: usize) -> Vector {
    let n = a.len() - d;
    let mut out = a.rows(0, n).into_owned();
    let tail = a.rows(n, d);
    let mut head = out.rows_mut(0, d);
    head += tail;
    out
}

/// `Jᵀ A J` for the duplication map.
pub(crate) fn fold_head_cov(a: &Mat, d: usize) -> Mat {
    let n = a.nrows() - d;
    let mut out = a.view((0, 0), (n, n)).into_owned();
    {
        let mut rows = out.rows_mut(0, d);
        rows += a.view((n, 0), (d, n));
    }
    {
        let mut cols = out.columns_mut(0, d);
        cols += a.view((0, n), (n, d));
    }
    {
        let mut corner = out.view_mut((0, 0), (d, d));
        corner += a.view((n, n), (d, d));
    }
    out
}
