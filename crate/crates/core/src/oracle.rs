//! Independent references for the filter and its gradients: the dense joint
//! Gaussian likelihood of all measurements, and central finite differences.

use alloc::vec::Vec;
use core::fmt;

use crate::filter::check_inputs;
use crate::{CovParam, Error, Mat, Result, SupervisorySpec, SystemModel, Vector};

/// Size limit for the dense assembly, applied to both the stacked state and
/// the stacked observation dimension.
pub const ORACLE_MAX_DIM: usize = 512;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `−log p(yᵒ, yˢ | θ)` assembled directly from the joint distribution.
///
/// The stacked states are written as `x = μ + T ξ` with
/// `ξ = (x₀ − x̄₀, w₁, …, w_N)` and `Cov ξ = blockdiag(P₀, Q₁, …, Q_N)`, where
/// block `(i, l)` of `T` is the transition from step `l` to step `i`. All
/// measurements are linear in `x` plus independent noise, so their joint law
/// is Gaussian with moments computed densely.
pub fn joint_nll(
    model: &SystemModel,
    spec: &SupervisorySpec,
    ys: &[Vector],
    param: &CovParam,
    theta: &Vector,
) -> Result<f64> {
    check_inputs(model, spec, ys, param, theta)?;
    let n = model.horizon();
    let d = model.state_dim();
    let m = model.meas_dim();
    let s = spec.obs_dim();
    let state_dim = n * d;
    let obs_dim = n * m + s;
    let dim = state_dim.max(obs_dim);
    if dim > ORACLE_MAX_DIM {
        return Err(Error::OracleScale {
            dim,
            limit: ORACLE_MAX_DIM,
        });
    }

    // means
    let mut mean = Vector::zeros(state_dim);
    let mut prev = model.x0.clone();
    for k in 0..n {
        let next = &model.f[k] * &prev + &model.b[k] * &model.u[k];
        mean.rows_mut(k * d, d).copy_from(&next);
        prev = next;
    }

    // x_i = Φ(i,0)(x₀ noise) + Σ_{l ≤ i} Φ(i,l) w_l, block column 0 is x₀
    let mut t = Mat::zeros(state_dim, (n + 1) * d);
    for i in 0..n {
        // Φ(i, i) = I for the noise entering at step i
        t.view_mut((i * d, (i + 1) * d), (d, d))
            .fill_with_identity();
        for l in 0..=i {
            // Φ(1, 0) = F_1 and Φ(i, l) = F_i Φ(i−1, l)
            let src = if i == 0 {
                model.f[0].clone()
            } else {
                &model.f[i] * t.view(((i - 1) * d, l * d), (d, d))
            };
            t.view_mut((i * d, l * d), (d, d)).copy_from(&src);
        }
    }
    let mut lambda = Mat::zeros((n + 1) * d, (n + 1) * d);
    lambda.view_mut((0, 0), (d, d)).copy_from(&model.p0);
    for k in 1..=n {
        let q = param.eval_q(theta, k)?;
        lambda.view_mut((k * d, k * d), (d, d)).copy_from(&q);
    }
    let state_cov = &t * lambda * t.transpose();

    // observation map and noise
    let mut obs = Mat::zeros(obs_dim, state_dim);
    let mut noise = Mat::zeros(obs_dim, obs_dim);
    let mut y = Vector::zeros(obs_dim);
    let r = param.eval_r(theta)?;
    for k in 0..n {
        obs.view_mut((k * m, k * d), (m, d)).copy_from(&model.h[k]);
        noise.view_mut((k * m, k * m), (m, m)).copy_from(&r);
        y.rows_mut(k * m, m).copy_from(&ys[k]);
    }
    if s > 0 {
        for (l, &idx) in spec.indices.iter().enumerate() {
            let block = spec.hs.view((0, l * d), (s, d));
            obs.view_mut((n * m, (idx - 1) * d), (s, d))
                .copy_from(&block);
        }
        noise
            .view_mut((n * m, n * m), (s, s))
            .copy_from(&spec.effective_psi());
        y.rows_mut(n * m, s).copy_from(&spec.ys);
    }

    let cov = &obs * state_cov * obs.transpose() + noise;
    let resid = y - &obs * mean;
    let chol = cov.cholesky().ok_or(Error::Invalid(
        "joint measurement covariance is not positive definite",
    ))?;
    let ln_det: f64 = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| 2.0 * libm::log(*v))
        .sum();
    let quad = resid.dot(&chol.solve(&resid));
    Ok(0.5 * ln_det + 0.5 * quad + 0.5 * obs_dim as f64 * LN_2PI)
}

/// Coordinates at which a finite-difference evaluation failed or was not
/// finite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FdFailure {
    pub coords: Vec<usize>,
}

impl fmt::Display for FdFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "finite difference failed at coordinates {:?}",
            self.coords
        )
    }
}

/// Default finite-difference step on the θ scale.
pub const FD_STEP: f64 = 1e-5;

/// Central differences `(ℒ(θ + h e_j) − ℒ(θ − h e_j)) / 2h`.
pub fn fd_gradient<F>(
    mut loss: F,
    theta: &Vector,
    h: f64,
) -> core::result::Result<Vector, FdFailure>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Vector::zeros(theta.len());
    let mut failed = Vec::new();
    for j in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        match (loss(&plus), loss(&minus)) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => grad[j] = (a - b) / (2.0 * h),
            _ => failed.push(j),
        }
    }
    if failed.is_empty() {
        Ok(grad)
    } else {
        Err(FdFailure { coords: failed })
    }
}

/// `max_j |a_j − b_j| / max(|a_j|, |b_j|, floor)`.
pub fn max_relative_error(a: &Vector, b: &Vector, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn fd_of_quadratic_is_exact() {
        let theta = Vector::from_vec(vec![0.3, -1.2, 2.5]);
        let g = fd_gradient(|t| Ok(0.5 * t.norm_squared()), &theta, 1e-5).unwrap();
        assert!((g - &theta).amax() < 1e-10);
    }

    #[test]
    fn fd_reports_failing_coordinates() {
        let theta = Vector::from_vec(vec![0.0, 1.0]);
        let err = fd_gradient(
            |t| Ok(if t[1] > 1.0 { f64::NAN } else { t[0] }),
            &theta,
            1e-3,
        )
        .unwrap_err();
        assert_eq!(err.coords, vec![1]);
    }

    #[test]
    fn one_step_scalar_matches_closed_form() {
        let f = Mat::from_element(1, 1, 0.9);
        let b = Mat::from_element(1, 1, 0.5);
        let h = Mat::from_element(1, 1, 2.0);
        let model = SystemModel::time_invariant(
            f,
            b,
            h,
            vec![Vector::from_element(1, 1.0)],
            Vector::from_element(1, 0.2),
            Mat::from_element(1, 1, 1.5),
        );
        let param = CovParam::isotropic(1, Mat::from_element(1, 1, 0.3)).unwrap();
        let theta = Vector::from_element(1, 0.4);
        let y = Vector::from_element(1, 1.7);
        let nll = joint_nll(
            &model,
            &SupervisorySpec::empty(),
            &[y.clone()],
            &param,
            &theta,
        )
        .unwrap();
        let mean = 2.0 * (0.9 * 0.2 + 0.5);
        let var = 4.0 * (0.81 * 1.5 + 0.3) + 0.4f64.exp();
        let expected = 0.5 * var.ln() + 0.5 * (1.7 - mean) * (1.7 - mean) / var + 0.5 * LN_2PI;
        assert!((nll - expected).abs() < 1e-13);
    }

    #[test]
    fn size_guard() {
        let n = 200;
        let model = SystemModel::time_invariant(
            Mat::identity(3, 3),
            Mat::zeros(3, 1),
            Mat::identity(3, 3),
            vec![Vector::zeros(1); n],
            Vector::zeros(3),
            Mat::identity(3, 3),
        );
        let param = CovParam::isotropic(3, Mat::identity(3, 3)).unwrap();
        let ys = vec![Vector::zeros(3); n];
        let err = joint_nll(
            &model,
            &SupervisorySpec::empty(),
            &ys,
            &param,
            &Vector::zeros(1),
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::OracleScale {
                dim: 600,
                limit: ORACLE_MAX_DIM
            }
        );
    }
}
