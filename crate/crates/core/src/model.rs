//! The deterministic skeleton of the state-space system and the
//! supervisory measurement specification.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Mat, Result, Vector};

/// `x_k = F_k x_{k−1} + B_k u_k + w_k`, `y_k = H_k x_k + ν_k` for `k = 1..N`.
///
/// Sequences are stored zero-based: `f[k − 1]` is `F_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub f: Vec<Mat>,
    pub b: Vec<Mat>,
    pub h: Vec<Mat>,
    pub u: Vec<Vector>,
    pub x0: Vector,
    pub p0: Mat,
}

impl SystemModel {
    /// Repeats constant `F`, `B`, `H` over the horizon defined by `u`.
    pub fn time_invariant(f: Mat, b: Mat, h: Mat, u: Vec<Vector>, x0: Vector, p0: Mat) -> Self {
        let n = u.len();
        SystemModel {
            f: vec![f; n],
            b: vec![b; n],
            h: vec![h; n],
            u,
            x0,
            p0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    /// Checks mutual consistency of every dimension and that `P0` is SPD.
    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        let d = self.state_dim();
        for (what, len) in [
            ("F sequence", self.f.len()),
            ("B sequence", self.b.len()),
            ("H sequence", self.h.len()),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        let m = self.meas_dim();
        for k in 0..n {
            dims("F_k rows", d, self.f[k].nrows())?;
            dims("F_k cols", d, self.f[k].ncols())?;
            dims("B_k rows", d, self.b[k].nrows())?;
            dims("B_k cols", self.u[k].len(), self.b[k].ncols())?;
            dims("H_k cols", d, self.h[k].ncols())?;
            dims("H_k rows", m, self.h[k].nrows())?;
        }
        dims("P0 rows", d, self.p0.nrows())?;
        dims("P0 cols", d, self.p0.ncols())?;
        if self.p0.clone().cholesky().is_none() {
            return Err(Error::Invalid("P0 is not positive definite"));
        }
        Ok(())
    }
}

fn dims(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Jitter added to a singular supervisory noise covariance.
pub const PSI_JITTER: f64 = 1e-10;

/// `yˢ = Hˢ Xˢ_N + νˢ`, `νˢ ~ N(0, Ψ)`, where `Xˢ_N` stacks the states of
/// the (one-based, strictly increasing) time steps in `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisorySpec {
    pub indices: Vec<usize>,
    pub hs: Mat,
    pub psi: Mat,
    pub ys: Vector,
}

impl SupervisorySpec {
    /// No supervision: the filter reduces to a standard Kalman filter.
    pub fn empty() -> Self {
        SupervisorySpec {
            indices: Vec::new(),
            hs: Mat::zeros(0, 0),
            psi: Mat::zeros(0, 0),
            ys: Vector::zeros(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.ys.len()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }

    pub fn validate(&self, state_dim: usize, horizon: usize) -> Result<()> {
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(
                "supervisory indices must be strictly increasing",
            ));
        }
        if self.indices.iter().any(|&k| k == 0 || k > horizon) {
            return Err(Error::Invalid("supervisory index outside 1..=N"));
        }
        let s = self.ys.len();
        dims("Hs rows", s, self.hs.nrows())?;
        if s > 0 {
            dims("Hs cols", state_dim * self.indices.len(), self.hs.ncols())?;
        }
        dims("Psi rows", s, self.psi.nrows())?;
        dims("Psi cols", s, self.psi.ncols())?;
        if (&self.psi - self.psi.transpose()).amax() > 1e-12 * self.psi.amax().max(1.0) {
            return Err(Error::Invalid("Psi is not symmetric"));
        }
        Ok(())
    }

    /// `Ψ` itself when it is positive definite, otherwise `Ψ + 1e-10 I`.
    ///
    /// This covers the noiseless limit `Ψ = 0`, where `Hˢ P̂ˢ Hˢᵀ` alone may be
    /// singular.
    pub fn effective_psi(&self) -> Mat {
        if self.psi.nrows() == 0 || self.psi.clone().cholesky().is_some() {
            self.psi.clone()
        } else {
            &self.psi + Mat::identity(self.psi.nrows(), self.psi.ncols()) * PSI_JITTER
        }
    }
}
