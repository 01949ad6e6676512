//! The seven acceptance criteria, run sequentially with one PASS/FAIL line
//! each. Criteria 3, 4 and 7 share one Monte-Carlo study. Nothing else runs
//! while the benchmark is timed.

use std::process::ExitCode;
use std::time::Instant;

use noisecal::bench::{bench_modes, find, BenchConfig};
use noisecal::config::{Config, Mode, ParamKind};
use noisecal::instances::random_instance;
use noisecal::montecarlo::{monte_carlo, Level, Method, Study};
use noisecal::sim::{generate_primary, generate_trajectory, measurement_rmse, SimConfig};
use noisecal_core::filter::run_filter;
use noisecal_core::oracle::{fd_gradient, joint_nll, max_relative_error, FD_STEP};
use noisecal_core::{forward_gradient, reverse_gradient};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 200;
const NLL_TOL: f64 = 1e-8;
const MODE_TOL: f64 = 1e-8;
const MODE_FLOOR: f64 = 1e-12;
const FD_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;
const RECOVERY_BOUND: f64 = 0.5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn likelihood_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..INSTANCES {
        let inst = random_instance(&mut rng);
        let filter = run_filter(
            &inst.model,
            &inst.spec,
            &inst.ys,
            &inst.param,
            &inst.theta,
            false,
        )
        .map(|r| r.loss.total);
        let oracle = joint_nll(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta);
        match (filter, oracle) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
            _ => failures += 1,
        }
    }
    verdict(
        failures == 0 && worst <= NLL_TOL,
        format!("{INSTANCES} instances, max |filter - joint| = {worst:.2e} (limit {NLL_TOL:.0e}), {failures} errors"),
    )
}

fn gradient_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut modes, mut fd) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..INSTANCES {
        let inst = random_instance(&mut rng);
        let fwd = forward_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta);
        let rev = reverse_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta);
        let num = fd_gradient(
            |t| {
                run_filter(&inst.model, &inst.spec, &inst.ys, &inst.param, t, false)
                    .map(|r| r.loss.total)
            },
            &inst.theta,
            FD_STEP,
        );
        match (fwd, rev, num) {
            (Ok(f), Ok(r), Ok(n)) => {
                modes = modes.max(max_relative_error(&f.grad, &r.grad, MODE_FLOOR));
                fd = fd
                    .max(max_relative_error(&f.grad, &n, FD_FLOOR))
                    .max(max_relative_error(&r.grad, &n, FD_FLOOR));
            }
            _ => failures += 1,
        }
    }
    verdict(
        failures == 0 && modes <= MODE_TOL && fd <= FD_TOL,
        format!(
            "{INSTANCES} instances, forward/reverse {modes:.2e} (limit {MODE_TOL:.0e}), analytic/FD {fd:.2e} (limit {FD_TOL:.0e}), {failures} errors"
        ),
    )
}

fn monotone(study: &Study) -> Verdict {
    let default = Method::tuned(ParamKind::Cholesky, Level::Dense);
    let idx = study.trials[0]
        .outcomes
        .iter()
        .position(|o| o.method == default)
        .expect("default method present");
    let is_monotone = |h: &[f64]| !h.is_empty() && h.windows(2).all(|w| w[1] <= w[0]);
    let good = study
        .trials
        .iter()
        .filter(|t| is_monotone(&t.outcomes[idx].loss_history))
        .count();
    let (mut all_runs, mut all_good) = (0, 0);
    for t in &study.trials {
        for o in t.outcomes.iter().filter(|o| o.method != Method::Untuned) {
            all_runs += 1;
            all_good += usize::from(is_monotone(&o.loss_history));
        }
    }
    verdict(
        good == study.trials.len() && all_good == all_runs,
        format!(
            "{default}: {good}/{} non-increasing; all methods {all_good}/{all_runs}",
            study.trials.len()
        ),
    )
}

fn ordering(study: &Study) -> Verdict {
    let get = |m: Method| study.method(m).expect("method present");
    let untuned = get(Method::Untuned);
    let tuned: Vec<_> = study
        .summary
        .iter()
        .filter(|s| s.method != Method::Untuned)
        .collect();
    let a = tuned.iter().all(|s| s.mean_rmse < untuned.mean_rmse);
    let worst_tuned = tuned.iter().map(|s| s.mean_rmse).fold(f64::MIN, f64::max);

    let lo = get(Method::tuned(ParamKind::Cholesky, Level::Primary));
    let full = get(Method::tuned(ParamKind::Cholesky, Level::Dense));
    let b = full.mean_rmse <= lo.mean_rmse;

    let mut c = true;
    let mut c_detail = Vec::new();
    for kind in ParamKind::ALL {
        let minus = get(Method::tuned(kind, Level::Sparse));
        let plus = get(Method::tuned(kind, Level::Dense));
        c &= plus.mean_rmse <= minus.mean_rmse + minus.se_rmse;
        c_detail.push(format!(
            "{} {:.5}<={:.5}+{:.5}",
            kind.name(),
            plus.mean_rmse,
            minus.mean_rmse,
            minus.se_rmse
        ));
    }
    let failed: usize = study.summary.iter().map(|s| s.failed).sum();
    let ((ss, sp), (ds, dp)) = study.mean_counts();
    verdict(
        a && b && c && failed == 0,
        format!(
            "(a) untuned {:.5} > worst tuned {worst_tuned:.5}: {a}; (b) cholesky L+ {:.5} <= lo {:.5}: {b}; (c) {}: {c}; supervision L- ({ss:.1}, {sp:.1}) L+ ({ds:.1}, {dp:.1}); {failed} failed runs",
            untuned.mean_rmse,
            full.mean_rmse,
            lo.mean_rmse,
            c_detail.join(", "),
        ),
    )
}

fn measurement_noise() -> Verdict {
    let cfg = SimConfig::default();
    let n = 10_000;
    let traj = generate_trajectory(&cfg, n, 5);
    let ys = generate_primary(&traj, &cfg.r_true.matrix(), 6);
    let rmse = measurement_rmse(&traj, &ys);
    verdict(
        (2.8..=3.0).contains(&rmse),
        format!("RMSE over {n} samples = {rmse:.4} m (range [2.8, 3.0])"),
    )
}

fn scaling() -> Verdict {
    let rows = bench_modes(&BenchConfig::default());
    let t = |p, n, mode| find(&rows, p, n, mode).expect("bench cell").median_seconds;
    let fwd_ratio = t(12, 400, Mode::Forward) / t(1, 400, Mode::Forward);
    let rev_ratio = t(12, 400, Mode::Reverse) / t(1, 400, Mode::Reverse);
    let retained = |n| {
        find(&rows, 1, n, Mode::Reverse)
            .and_then(|r| r.retained)
            .expect("retained count") as f64
    };
    let lin = [
        retained(400) / retained(100) / 4.0,
        retained(1600) / retained(400) / 4.0,
    ];
    let linear = lin.iter().all(|r| (r - 1.0).abs() <= 0.1);
    verdict(
        fwd_ratio >= 6.0 && rev_ratio <= 1.5 && linear,
        format!(
            "N=400: forward p12/p1 = {fwd_ratio:.2} (>= 6), reverse p12/p1 = {rev_ratio:.2} (<= 1.5); retained ratios /4: {:.3}, {:.3}",
            lin[0], lin[1]
        ),
    )
}

fn recovery(study: &Study) -> Verdict {
    let s = study
        .method(Method::tuned(ParamKind::Cholesky, Level::Dense))
        .expect("method present");
    verdict(
        s.ok == study.trials.len() && s.mean_recovery <= RECOVERY_BOUND,
        format!(
            "cholesky L+ mean ||R(theta) - R_true||_F / ||R_true||_F = {:.4} over {} trials (bound {RECOVERY_BOUND})",
            s.mean_recovery, s.ok
        ),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        all &= v.pass;
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} [{tag}] {name}: {} ({:.1} s)",
            v.detail,
            start.elapsed().as_secs_f64()
        );
    };

    report(1, "likelihood identity", &mut likelihood_identity);
    report(2, "gradient agreement", &mut gradient_agreement);

    let start = Instant::now();
    let study = monte_carlo(&Config::default(), &Method::standard());
    println!(
        "monte carlo: {} trials in {:.1} s",
        study.trials.len(),
        start.elapsed().as_secs_f64()
    );
    report(3, "monotone calibration", &mut || monotone(&study));
    report(4, "method ordering", &mut || ordering(&study));
    report(5, "measurement noise", &mut measurement_noise);
    report(6, "complexity scaling", &mut scaling);
    report(7, "parameter recovery", &mut || recovery(&study));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
