//! Constant-velocity target simulation: trajectories, primary position
//! fixes and relative-position supervision between revisited states.

use nalgebra::Vector3;
use noisecal_core::{Mat, SupervisorySpec, SystemModel, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Position dimension; the state is `[p; v]`.
pub const POS_DIM: usize = 3;
pub const STATE_DIM: usize = 6;

/// `R_true = R_base + diag(axis_sd²)`, with `R_base` having `base_diag` on
/// the diagonal and `base_offdiag` elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub base_diag: f64,
    pub base_offdiag: f64,
    pub axis_sd: [f64; 3],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            base_diag: 0.36,
            base_offdiag: 0.18,
            axis_sd: [0.9, 1.3, 2.2],
        }
    }
}

impl NoiseSpec {
    pub fn matrix(&self) -> Mat {
        Mat::from_fn(POS_DIM, POS_DIM, |i, j| {
            if i == j {
                self.base_diag + self.axis_sd[i] * self.axis_sd[i]
            } else {
                self.base_offdiag
            }
        })
    }
}

/// Reference path the target is steered along:
/// `p_ref(t) = (A cos ω₁t + a cos ω₂t, A sin ω₁t + a sin ω₂t, h sin ½ω₁t)`
/// with `ω₁ = 2π / period` and `ω₂ = ratio · ω₁`. The applied acceleration
/// is the reference acceleration plus PD feedback on the tracking error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profile {
    pub radius: f64,
    pub period: f64,
    pub ratio: f64,
    pub wobble: f64,
    pub climb: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            radius: 1.2,
            period: 23.0,
            ratio: 2.7,
            wobble: 0.24,
            climb: 0.3,
            kp: 0.1,
            kd: 0.5,
        }
    }
}

impl Profile {
    /// Reference position, velocity and acceleration at time `t`.
    pub fn reference(&self, t: f64) -> [Vector3<f64>; 3] {
        let w1 = 2.0 * std::f64::consts::PI / self.period;
        let w2 = self.ratio * w1;
        let w3 = 0.5 * w1;
        let (a, b, h) = (self.radius, self.wobble, self.climb);
        let (s1, c1) = (w1 * t).sin_cos();
        let (s2, c2) = (w2 * t).sin_cos();
        let (s3, c3) = (w3 * t).sin_cos();
        let p = Vector3::new(a * c1 + b * c2, a * s1 + b * s2, h * s3);
        let v = Vector3::new(
            -a * w1 * s1 - b * w2 * s2,
            a * w1 * c1 + b * w2 * c2,
            h * w3 * c3,
        );
        let acc = Vector3::new(
            -a * w1 * w1 * c1 - b * w2 * w2 * c2,
            -a * w1 * w1 * s1 - b * w2 * w2 * s2,
            -h * w3 * w3 * s3,
        );
        [p, v, acc]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_calib: usize,
    pub n_test: usize,
    pub dt: f64,
    /// Process noise variance, `Q = qI`.
    pub q: f64,
    /// Supervisory noise variance, `Ψ = αI`.
    pub alpha: f64,
    pub r_true: NoiseSpec,
    pub downsample: usize,
    pub threshold: f64,
    pub trials: usize,
    pub seed: u64,
    pub profile: Profile,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_calib: 100,
            n_test: 600,
            dt: 1.0,
            q: 0.01,
            alpha: 0.01,
            r_true: NoiseSpec::default(),
            downsample: 5,
            threshold: 3.0,
            trials: 100,
            seed: 0,
            profile: Profile::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n_calib", self.n_calib as f64),
            ("n_test", self.n_test as f64),
            ("dt", self.dt),
            ("downsample", self.downsample as f64),
            ("threshold", self.threshold),
            ("trials", self.trials as f64),
            ("profile.period", self.profile.period),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("q", self.q), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        if self.r_true.matrix().cholesky().is_none() {
            return Err("r_true is not positive definite".into());
        }
        Ok(())
    }
}

/// Ground truth of one run. `states[k-1]` is `x_k` and `inputs[k-1]` is the
/// acceleration applied from `k-1` to `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x0: Vector,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn position(&self, k: usize) -> Vector3<f64> {
        self.states[k - 1].fixed_rows::<3>(0).into_owned()
    }
}

/// Independent RNG streams of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    CalibTrajectory = 1,
    CalibPrimary = 2,
    CalibSupervisory = 3,
    TestTrajectory = 4,
    TestPrimary = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of `stream` in trial `trial` of a study seeded with `seed`.
pub fn derive_seed(seed: u64, trial: u64, stream: Stream) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ trial) ^ stream as u64)
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Steered double integrator over `n` steps with process noise `N(0, qI)`.
pub fn generate_trajectory(cfg: &SimConfig, n: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prof = &cfg.profile;
    let dt = cfg.dt;
    let sd = cfg.q.sqrt();
    let [mut p, mut v, _] = prof.reference(0.0);
    let x0 = Vector::from_iterator(STATE_DIM, p.iter().chain(v.iter()).copied());
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    for k in 1..=n {
        let [pr, vr, ar] = prof.reference((k - 1) as f64 * dt);
        let u = ar + (pr - p) * prof.kp + (vr - v) * prof.kd;
        let wp = normal3(&mut rng) * sd;
        let wv = normal3(&mut rng) * sd;
        p += v * dt + wp;
        v += u * dt + wv;
        states.push(Vector::from_iterator(
            STATE_DIM,
            p.iter().chain(v.iter()).copied(),
        ));
        inputs.push(Vector::from_column_slice(u.as_slice()));
    }
    Trajectory { x0, states, inputs }
}

/// Symmetric square root by eigendecomposition, so a singular (even zero)
/// covariance is accepted.
fn sqrt_psd(r: &Mat) -> Mat {
    let eig = r.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
}

/// `y_k = p_k + ν_k`, `ν_k ~ N(0, R_true)`.
pub fn generate_primary(traj: &Trajectory, r_true: &Mat, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = sqrt_psd(r_true);
    (1..=traj.len())
        .map(|k| {
            let z = Vector::from_column_slice(normal3(&mut rng).as_slice());
            Vector::from_column_slice(traj.position(k).as_slice()) + &l * z
        })
        .collect()
}

/// A relative observation `y = p_i − p_j + ν`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
}

/// Supervision of one run, with the pairs that produced it.
#[derive(Clone, Debug)]
pub struct Supervision {
    pub spec: SupervisorySpec,
    pub pairs: Vec<Pair>,
}

impl Supervision {
    /// `(supervised states, pair observations)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.spec.indices.len(), self.pairs.len())
    }
}

/// Pairs `(i, j)`, `i < j`, among every `downsample`-th step whose
/// positions are within `threshold` of each other.
pub fn candidate_pairs(traj: &Trajectory, downsample: usize, threshold: f64) -> Vec<Pair> {
    let selected: Vec<usize> = (downsample..=traj.len()).step_by(downsample).collect();
    let mut pairs = Vec::new();
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            if (traj.position(i) - traj.position(j)).norm() <= threshold {
                pairs.push(Pair { i, j });
            }
        }
    }
    pairs
}

/// Relative-position supervision with `Ψ = αI`. Without pairs the spec is
/// empty and the run reduces to primary-only calibration.
pub fn generate_supervisory(
    traj: &Trajectory,
    downsample: usize,
    threshold: f64,
    alpha: f64,
    seed: u64,
) -> Supervision {
    let pairs = candidate_pairs(traj, downsample, threshold);
    if pairs.is_empty() {
        log::warn!("no supervisory pairs within {threshold} m at downsample {downsample}");
        return Supervision {
            spec: SupervisorySpec::empty(),
            pairs,
        };
    }
    let mut indices: Vec<usize> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
    indices.sort_unstable();
    indices.dedup();
    let slot = |k: usize| indices.binary_search(&k).expect("endpoint is supervised");

    let s = POS_DIM * pairs.len();
    let mut hs = Mat::zeros(s, STATE_DIM * indices.len());
    let mut ys = Vector::zeros(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = alpha.sqrt();
    for (row, pair) in pairs.iter().enumerate() {
        let r0 = POS_DIM * row;
        for a in 0..POS_DIM {
            hs[(r0 + a, STATE_DIM * slot(pair.i) + a)] = 1.0;
            hs[(r0 + a, STATE_DIM * slot(pair.j) + a)] = -1.0;
        }
        let y = traj.position(pair.i) - traj.position(pair.j) + normal3(&mut rng) * sd;
        ys.rows_mut(r0, POS_DIM).copy_from_slice(y.as_slice());
    }
    let psi = Mat::identity(s, s) * alpha;
    Supervision {
        spec: SupervisorySpec {
            indices,
            hs,
            psi,
            ys,
        },
        pairs,
    }
}

/// `F = [I dt·I; 0 I]`, `B = [0; dt·I]`, `H = [I 0]`.
pub fn cv_matrices(dt: f64) -> (Mat, Mat, Mat) {
    let mut f = Mat::identity(STATE_DIM, STATE_DIM);
    let mut b = Mat::zeros(STATE_DIM, POS_DIM);
    let mut h = Mat::zeros(POS_DIM, STATE_DIM);
    for a in 0..POS_DIM {
        f[(a, POS_DIM + a)] = dt;
        b[(POS_DIM + a, a)] = dt;
        h[(a, a)] = 1.0;
    }
    (f, b, h)
}

/// Filtering model of a trajectory: `x₀` is the true initial state and
/// `P₀ = p0_scale · I`.
pub fn cv_model(traj: &Trajectory, dt: f64, p0_scale: f64) -> SystemModel {
    let (f, b, h) = cv_matrices(dt);
    SystemModel::time_invariant(
        f,
        b,
        h,
        traj.inputs.clone(),
        traj.x0.clone(),
        Mat::identity(STATE_DIM, STATE_DIM) * p0_scale,
    )
}

/// Root mean square of the primary measurement errors.
pub fn measurement_rmse(traj: &Trajectory, ys: &[Vector]) -> f64 {
    let sq: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            (y - Vector::from_column_slice(traj.position(i + 1).as_slice())).norm_squared()
        })
        .sum();
    (sq / ys.len().max(1) as f64).sqrt()
}

/// Everything one calibration or test run consumes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub traj: Trajectory,
    pub model: SystemModel,
    pub ys: Vec<Vector>,
}

impl Dataset {
    pub fn simulate(
        cfg: &SimConfig,
        n: usize,
        p0_scale: f64,
        traj_seed: u64,
        meas_seed: u64,
    ) -> Self {
        let traj = generate_trajectory(cfg, n, traj_seed);
        let ys = generate_primary(&traj, &cfg.r_true.matrix(), meas_seed);
        let model = cv_model(&traj, cfg.dt, p0_scale);
        Dataset { traj, model, ys }
    }
}
