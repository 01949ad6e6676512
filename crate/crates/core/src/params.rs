//! Covariance parameterizations `θ ↦ (Q(θ), R(θ))`.
//!
//! Every map is built from [`Block`]s, each owning a contiguous range of the
//! parameter vector. The built-in kinds tune `R` only and hold `Q` at a
//! configured constant; [`CovKind::Custom`] combines arbitrary blocks, which
//! may also share coordinates between `Q` and `R`.
//!
//! Exponentiated coordinates are clamped to `±THETA_BOUND` first, and the
//! derivative is zero outside the clamp.

use alloc::vec::Vec;

use crate::{Error, Mat, Result, Vector};

/// Bound applied to exponentiated coordinates.
pub const THETA_BOUND: f64 = 20.0;

fn clamped_exp(v: f64) -> f64 {
    libm::exp(v.clamp(-THETA_BOUND, THETA_BOUND))
}

fn clamped_exp_deriv(v: f64) -> f64 {
    if v.abs() > THETA_BOUND {
        0.0
    } else {
        libm::exp(v)
    }
}

/// Functional form of one covariance block.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Constant matrix, independent of θ.
    Fixed(Mat),
    /// `exp(θ₀) I`.
    Isotropic,
    /// `diag(exp(θ₀), …, exp(θₙ₋₁))`.
    Diagonal,
    /// `L Lᵀ` with `L` lower triangular. The first `n` coordinates are the
    /// log-diagonal of `L`; the remaining `n(n−1)/2` are the strictly lower
    /// entries in row-major order.
    Cholesky,
}

impl Shape {
    pub fn n_params(&self, n: usize) -> usize {
        match self {
            Shape::Fixed(_) => 0,
            Shape::Isotropic => 1,
            Shape::Diagonal => n,
            Shape::Cholesky => n * (n + 1) / 2,
        }
    }
}

/// A [`Shape`] reading its coordinates from `theta[offset..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub shape: Shape,
    pub offset: usize,
}

impl Block {
    pub fn new(shape: Shape, offset: usize) -> Self {
        Block { shape, offset }
    }

    pub fn fixed(m: Mat) -> Self {
        Block {
            shape: Shape::Fixed(m),
            offset: 0,
        }
    }

    fn end(&self, n: usize) -> usize {
        match self.shape {
            Shape::Fixed(_) => 0,
            _ => self.offset + self.shape.n_params(n),
        }
    }

    fn cholesky_factor(&self, theta: &[f64], n: usize) -> Mat {
        let t = &theta[self.offset..];
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = clamped_exp(t[i]);
        }
        let mut idx = n;
        for a in 1..n {
            for b in 0..a {
                l[(a, b)] = t[idx];
                idx += 1;
            }
        }
        l
    }

    fn eval(&self, theta: &[f64], n: usize) -> Mat {
        match &self.shape {
            Shape::Fixed(m) => m.clone(),
            Shape::Isotropic => Mat::identity(n, n) * clamped_exp(theta[self.offset]),
            Shape::Diagonal => Mat::from_diagonal(&Vector::from_fn(n, |i, _| {
                clamped_exp(theta[self.offset + i])
            })),
            Shape::Cholesky => {
                let l = self.cholesky_factor(theta, n);
                &l * l.transpose()
            }
        }
    }

    /// Partial derivative in global coordinate `j`, or `None` when the block
    /// does not depend on it.
    fn deriv(&self, theta: &[f64], n: usize, j: usize) -> Option<Mat> {
        if j < self.offset || j >= self.end(n) {
            return None;
        }
        let local = j - self.offset;
        let t = theta[j];
        match &self.shape {
            Shape::Fixed(_) => None,
            Shape::Isotropic => Some(Mat::identity(n, n) * clamped_exp_deriv(t)),
            Shape::Diagonal => {
                let mut m = Mat::zeros(n, n);
                m[(local, local)] = clamped_exp_deriv(t);
                Some(m)
            }
            Shape::Cholesky => {
                let l = self.cholesky_factor(theta, n);
                let mut dl = Mat::zeros(n, n);
                if local < n {
                    dl[(local, local)] = clamped_exp_deriv(t);
                } else {
                    let (a, b) = lower_position(local - n);
                    dl[(a, b)] = 1.0;
                }
                let prod = &dl * l.transpose();
                Some(&prod + prod.transpose())
            }
        }
    }
}

/// Row/column of the `idx`-th strictly lower entry in row-major order.
fn lower_position(idx: usize) -> (usize, usize) {
    let mut a = 1;
    let mut start = 0;
    while start + a <= idx {
        start += a;
        a += 1;
    }
    (a, idx - start)
}

/// Which parameterization a [`CovParam`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovKind {
    Isotropic,
    Diagonal,
    Cholesky,
    Custom,
}

/// A parameterization of the process and measurement noise covariances.
///
/// `Isotropic`, `Diagonal` and `Cholesky` vary `R` and keep `Q` fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct CovParam {
    kind: CovKind,
    meas_dim: usize,
    proc_dim: usize,
    r: Block,
    q: Block,
    dim: usize,
}

impl CovParam {
    fn builtin(kind: CovKind, shape: Shape, meas_dim: usize, fixed_q: Mat) -> Result<Self> {
        let proc_dim = fixed_q.nrows();
        check_square("fixed Q", &fixed_q)?;
        let dim = shape.n_params(meas_dim);
        Ok(CovParam {
            kind,
            meas_dim,
            proc_dim,
            r: Block::new(shape, 0),
            q: Block::fixed(fixed_q),
            dim,
        })
    }

    /// `R(θ) = exp(θ) I`, one coordinate.
    pub fn isotropic(meas_dim: usize, fixed_q: Mat) -> Result<Self> {
        Self::builtin(CovKind::Isotropic, Shape::Isotropic, meas_dim, fixed_q)
    }

    /// `R(θ) = diag(exp θ)`, `meas_dim` coordinates.
    pub fn diagonal(meas_dim: usize, fixed_q: Mat) -> Result<Self> {
        Self::builtin(CovKind::Diagonal, Shape::Diagonal, meas_dim, fixed_q)
    }

    /// `R(θ) = L Lᵀ`, `meas_dim (meas_dim + 1) / 2` coordinates.
    pub fn cholesky(meas_dim: usize, fixed_q: Mat) -> Result<Self> {
        Self::builtin(CovKind::Cholesky, Shape::Cholesky, meas_dim, fixed_q)
    }

    /// Arbitrary blocks for `R` and `Q`. The parameter dimension is the
    /// largest coordinate either block reads.
    pub fn custom(r: Block, q: Block, meas_dim: usize, proc_dim: usize) -> Result<Self> {
        if let Shape::Fixed(m) = &r.shape {
            check_fixed("fixed R", m, meas_dim)?;
        }
        if let Shape::Fixed(m) = &q.shape {
            check_fixed("fixed Q", m, proc_dim)?;
        }
        let dim = r.end(meas_dim).max(q.end(proc_dim));
        Ok(CovParam {
            kind: CovKind::Custom,
            meas_dim,
            proc_dim,
            r,
            q,
            dim,
        })
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    /// Number of parameters `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    pub fn proc_dim(&self) -> usize {
        self.proc_dim
    }

    /// Neutral starting point: `θ = 0`, i.e. unit scales and `L = I`.
    pub fn default_theta(&self) -> Vector {
        Vector::zeros(self.dim)
    }

    fn check_theta(&self, theta: &Vector) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::ThetaDim {
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_coord(&self, j: usize) -> Result<()> {
        if j >= self.dim {
            return Err(Error::Coordinate {
                index: j,
                dim: self.dim,
            });
        }
        Ok(())
    }

    pub fn eval_r(&self, theta: &Vector) -> Result<Mat> {
        self.check_theta(theta)?;
        Ok(self.r.eval(theta.as_slice(), self.meas_dim))
    }

    /// `Q_k(θ)`. Every map here is time invariant; `k` is accepted so callers
    /// stay written against the time-varying model.
    pub fn eval_q(&self, theta: &Vector, _k: usize) -> Result<Mat> {
        self.check_theta(theta)?;
        Ok(self.q.eval(theta.as_slice(), self.proc_dim))
    }

    pub fn dr_dtheta(&self, theta: &Vector, j: usize) -> Result<Mat> {
        Ok(self
            .r_partial(theta, j)?
            .unwrap_or_else(|| Mat::zeros(self.meas_dim, self.meas_dim)))
    }

    pub fn dq_dtheta(&self, theta: &Vector, j: usize, k: usize) -> Result<Mat> {
        Ok(self
            .q_partial(theta, j, k)?
            .unwrap_or_else(|| Mat::zeros(self.proc_dim, self.proc_dim)))
    }

    /// Like [`dr_dtheta`](Self::dr_dtheta) but `None` for a structurally
    /// zero derivative.
    pub fn r_partial(&self, theta: &Vector, j: usize) -> Result<Option<Mat>> {
        self.check_theta(theta)?;
        self.check_coord(j)?;
        Ok(self.r.deriv(theta.as_slice(), self.meas_dim, j))
    }

    pub fn q_partial(&self, theta: &Vector, j: usize, _k: usize) -> Result<Option<Mat>> {
        self.check_theta(theta)?;
        self.check_coord(j)?;
        Ok(self.q.deriv(theta.as_slice(), self.proc_dim, j))
    }

    /// All `(∂R/∂θ_j, ∂Q/∂θ_j)` pairs at `theta`.
    pub fn partials(&self, theta: &Vector) -> Result<Vec<(Option<Mat>, Option<Mat>)>> {
        (0..self.dim)
            .map(|j| Ok((self.r_partial(theta, j)?, self.q_partial(theta, j, 0)?)))
            .collect()
    }

    /// Coordinates reproducing `r` exactly, for the built-in kinds that can.
    ///
    /// `Isotropic` requires `r` to be a multiple of the identity, `Diagonal`
    /// a diagonal matrix; `Cholesky` accepts any SPD matrix.
    pub fn theta_for_r(&self, r: &Mat) -> Option<Vector> {
        let m = self.meas_dim;
        if r.nrows() != m || r.ncols() != m {
            return None;
        }
        let off_diag_zero = (0..m).all(|i| (0..m).all(|j| i == j || r[(i, j)] == 0.0));
        match self.kind {
            CovKind::Isotropic => {
                let s = r[(0, 0)];
                let uniform = (0..m).all(|i| r[(i, i)] == s);
                (off_diag_zero && uniform && s > 0.0).then(|| Vector::from_element(1, libm::log(s)))
            }
            CovKind::Diagonal => (off_diag_zero && r.diagonal().iter().all(|v| *v > 0.0))
                .then(|| r.diagonal().map(libm::log)),
            CovKind::Cholesky => {
                let l = r.clone().cholesky()?.unpack();
                let mut theta = Vector::zeros(self.dim);
                for i in 0..m {
                    theta[i] = libm::log(l[(i, i)]);
                }
                let mut idx = m;
                for a in 1..m {
                    for b in 0..a {
                        theta[idx] = l[(a, b)];
                        idx += 1;
                    }
                }
                Some(theta)
            }
            CovKind::Custom => None,
        }
    }
}

fn check_square(what: &'static str, m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            what,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    Ok(())
}

fn check_fixed(what: &'static str, m: &Mat, n: usize) -> Result<()> {
    check_square(what, m)?;
    if m.nrows() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: m.nrows(),
        });
    }
    Ok(())
}
