//! Wall-clock cost of forward and reverse gradients against parameter
//! count and horizon, and the reverse mode's retained trace size.

use std::io::Write;
use std::time::Instant;

use noisecal_core::filter::run_filter;
use noisecal_core::params::{Block, Shape};
use noisecal_core::{forward_gradient, reverse_gradient, CovParam, Mat, SupervisorySpec};

use crate::config::Mode;
use crate::sim::{Dataset, SimConfig, POS_DIM, STATE_DIM};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub ps: Vec<usize>,
    pub horizons: Vec<usize>,
    /// Timed runs per cell; the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ps: vec![1, 3, 6, 12],
            horizons: vec![100, 400, 1600],
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub p: usize,
    pub n: usize,
    pub mode: Mode,
    pub median_seconds: f64,
    /// Stored trace scalars, reverse mode only.
    pub retained: Option<usize>,
}

/// The maps timed for each `p`: isotropic, diagonal and Cholesky `R`, and
/// for `p = 12` a Cholesky `R` with a diagonal `Q` on coordinates 6..12.
pub fn bench_param(p: usize, q: f64) -> Option<CovParam> {
    let fixed_q = Mat::identity(STATE_DIM, STATE_DIM) * q;
    match p {
        1 => CovParam::isotropic(POS_DIM, fixed_q).ok(),
        3 => CovParam::diagonal(POS_DIM, fixed_q).ok(),
        6 => CovParam::cholesky(POS_DIM, fixed_q).ok(),
        12 => CovParam::custom(
            Block::new(Shape::Cholesky, 0),
            Block::new(Shape::Diagonal, 6),
            POS_DIM,
            STATE_DIM,
        )
        .ok(),
        _ => None,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time<F: FnMut()>(repeats: usize, mut f: F) -> f64 {
    f();
    median(
        (0..repeats.max(1))
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

/// Times one gradient evaluation per mode for every `(p, N)` cell, without
/// supervision so the state dimension stays fixed.
pub fn bench_modes(cfg: &BenchConfig) -> Vec<BenchRow> {
    let sim = SimConfig::default();
    let spec = SupervisorySpec::empty();
    let mut rows = Vec::new();
    for &n in &cfg.horizons {
        let data = Dataset::simulate(&sim, n, 1.0, cfg.seed, cfg.seed.wrapping_add(1));
        for &p in &cfg.ps {
            let Some(param) = bench_param(p, sim.q) else {
                continue;
            };
            // a point away from the default so no coordinate is degenerate
            let theta = param.default_theta().map(|t| t + 0.1);
            let forward = time(cfg.repeats, || {
                forward_gradient(&data.model, &spec, &data.ys, &param, &theta)
                    .expect("finite gradient");
            });
            rows.push(BenchRow {
                p,
                n,
                mode: Mode::Forward,
                median_seconds: forward,
                retained: None,
            });
            let reverse = time(cfg.repeats, || {
                reverse_gradient(&data.model, &spec, &data.ys, &param, &theta)
                    .expect("finite gradient");
            });
            let retained = run_filter(&data.model, &spec, &data.ys, &param, &theta, true)
                .ok()
                .and_then(|r| r.trace)
                .map(|t| t.retained_elements());
            rows.push(BenchRow {
                p,
                n,
                mode: Mode::Reverse,
                median_seconds: reverse,
                retained,
            });
        }
    }
    rows
}

pub fn find(rows: &[BenchRow], p: usize, n: usize, mode: Mode) -> Option<&BenchRow> {
    rows.iter().find(|r| r.p == p && r.n == n && r.mode == mode)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "n", "mode", "median_seconds", "retained_elements"])?;
    for r in rows {
        w.write_record([
            r.p.to_string(),
            r.n.to_string(),
            format!("{:?}", r.mode).to_lowercase(),
            r.median_seconds.to_string(),
            r.retained.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
