//! Seeded family of small random systems used for the exactness checks:
//! `d ≤ 3`, `N ≤ 8`, `p ∈ {1, 3, 6}`, up to three supervised steps.

use noisecal_core::params::{Block, Shape};
use noisecal_core::{CovParam, Mat, SupervisorySpec, SystemModel, Vector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub model: SystemModel,
    pub spec: SupervisorySpec,
    pub ys: Vec<Vector>,
    pub param: CovParam,
    pub theta: Vector,
}

pub fn uniform_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Mat {
    let a = uniform_mat(rng, n, n, 1.0);
    &a * a.transpose() / n as f64 + Mat::identity(n, n) * floor
}

/// Parameterization with `p` coordinates for a `d`-state system.
/// Returns the map and its measurement dimension.
fn random_param(rng: &mut ChaCha8Rng, p: usize, d: usize) -> (CovParam, usize) {
    let choice = rng.random_range(0..2);
    let q = spd(rng, d, 0.1);
    match (p, choice) {
        (1, 0) => {
            let m = rng.random_range(1..=3);
            (CovParam::isotropic(m, q).unwrap(), m)
        }
        (1, _) => {
            let m = rng.random_range(1..=3);
            let r = spd(rng, m, 0.3);
            (
                CovParam::custom(Block::fixed(r), Block::new(Shape::Isotropic, 0), m, d).unwrap(),
                m,
            )
        }
        (3, 0) => (CovParam::diagonal(3, q).unwrap(), 3),
        (3, _) if d == 2 => (
            // Q's Cholesky block shares coordinate 0 with R
            CovParam::custom(
                Block::new(Shape::Isotropic, 0),
                Block::new(Shape::Cholesky, 0),
                2,
                d,
            )
            .unwrap(),
            2,
        ),
        (3, _) => (CovParam::cholesky(2, q).unwrap(), 2),
        (6, 0) => (CovParam::cholesky(3, q).unwrap(), 3),
        (6, _) if d == 3 => (
            CovParam::custom(
                Block::new(Shape::Diagonal, 0),
                Block::new(Shape::Diagonal, 3),
                3,
                d,
            )
            .unwrap(),
            3,
        ),
        (6, _) => (
            CovParam::custom(
                Block::new(Shape::Cholesky, 0),
                Block::new(Shape::Isotropic, 2),
                3,
                d,
            )
            .unwrap(),
            3,
        ),
        _ => unreachable!("unsupported parameter dimension {p}"),
    }
}

/// A small random system: `d ≤ 3`, `N ≤ 8`, `p ∈ {1, 3, 6}`, up to three
/// supervised steps.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=8);
    let p = [1, 3, 6][rng.random_range(0..3)];
    let (param, m) = random_param(rng, p, d);
    let nu = rng.random_range(1..=2);

    let mut f = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for _ in 0..n {
        f.push(Mat::identity(d, d) * 0.9 + uniform_mat(rng, d, d, 0.4));
        b.push(uniform_mat(rng, d, nu, 1.0));
        h.push(uniform_mat(rng, m, d, 1.0) + Mat::identity(m, d));
        u.push(uniform_vec(rng, nu, 1.0));
    }
    let model = SystemModel {
        f,
        b,
        h,
        u,
        x0: uniform_vec(rng, d, 1.0),
        p0: spd(rng, d, 0.5),
    };
    let ys = (0..n).map(|_| uniform_vec(rng, m, 2.0)).collect();

    let n_sup = rng.random_range(0..=3.min(n));
    let spec = if n_sup == 0 {
        SupervisorySpec::empty()
    } else {
        let mut indices: Vec<usize> = sample(rng, n, n_sup).into_iter().map(|i| i + 1).collect();
        indices.sort_unstable();
        let s = rng.random_range(1..=4);
        SupervisorySpec {
            indices,
            hs: uniform_mat(rng, s, d * n_sup, 1.0),
            psi: spd(rng, s, 0.05),
            ys: uniform_vec(rng, s, 2.0),
        }
    };
    let theta = uniform_vec(rng, param.dim(), 1.0);
    Instance {
        model,
        spec,
        ys,
        param,
        theta,
    }
}
