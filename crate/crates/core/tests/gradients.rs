mod common;

use common::*;
use noisecal_core::filter::run_filter;
use noisecal_core::grad_forward::forward_gradient_weighted;
use noisecal_core::grad_reverse::{
    reverse_gradient_weighted, reverse_gradient_with, PriorAdjointForm,
};
use noisecal_core::oracle::{fd_gradient, max_relative_error, FD_STEP};
use noisecal_core::params::{Block, Shape};
use noisecal_core::{forward_gradient, reverse_gradient, CovParam, LossWeights, SupervisorySpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_FLOOR: f64 = 1e-6;

fn fd(inst: &Instance) -> Vector {
    fd_gradient(
        |t| {
            run_filter(&inst.model, &inst.spec, &inst.ys, &inst.param, t, false)
                .map(|r| r.loss.total)
        },
        &inst.theta,
        FD_STEP,
    )
    .unwrap()
}

#[test]
fn forward_reverse_and_fd_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut worst_fr, mut worst_fd) = (0.0f64, 0.0f64);
    for i in 0..200 {
        let inst = random_instance(&mut rng);
        let fwd =
            forward_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
        let rev =
            reverse_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
        let num = fd(&inst);
        let fr = max_relative_error(&fwd.grad, &rev.grad, 1e-12);
        let ef = max_relative_error(&fwd.grad, &num, FD_FLOOR)
            .max(max_relative_error(&rev.grad, &num, FD_FLOOR));
        assert!(
            fr <= 1e-8,
            "instance {i}: forward vs reverse {fr:e}\n{}\n{}",
            fwd.grad,
            rev.grad
        );
        assert!(
            ef <= 1e-4,
            "instance {i}: analytic vs fd {ef:e}\n{}\n{}",
            fwd.grad,
            num
        );
        assert_eq!(fwd.loss.total, rev.loss.total);
        worst_fr = worst_fr.max(fr);
        worst_fd = worst_fd.max(ef);
    }
    println!("worst forward/reverse {worst_fr:e}, worst analytic/fd {worst_fd:e}");
}

#[test]
fn innovation_inverse_prior_adjoint_disagrees_with_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut bad = 0;
    let mut total = 0;
    for _ in 0..60 {
        let inst = random_instance(&mut rng);
        if inst.model.horizon() < 2 {
            continue;
        }
        total += 1;
        let num = fd(&inst);
        let weights = LossWeights::default();
        let printed = reverse_gradient_with(
            &inst.model,
            &inst.spec,
            &inst.ys,
            &inst.param,
            &inst.theta,
            weights,
            PriorAdjointForm::Printed,
        )
        .unwrap();
        let swapped = reverse_gradient_with(
            &inst.model,
            &inst.spec,
            &inst.ys,
            &inst.param,
            &inst.theta,
            weights,
            PriorAdjointForm::InnovationInverse,
        )
        .unwrap();
        assert!(max_relative_error(&printed.grad, &num, FD_FLOOR) <= 1e-4);
        if max_relative_error(&swapped.grad, &num, FD_FLOOR) > 1e-4 {
            bad += 1;
        }
    }
    assert!(
        bad * 10 >= total * 9,
        "swapped form matched fd on {} of {total}",
        total - bad
    );
}

#[test]
fn weighted_gradients_agree_and_primary_only_ignores_supervision() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0;
    while checked < 30 {
        let inst = random_instance(&mut rng);
        if inst.spec.is_empty() {
            continue;
        }
        checked += 1;
        let w = LossWeights {
            primary: 0.3,
            supervisory: 1.7,
        };
        let f = forward_gradient_weighted(
            &inst.model,
            &inst.spec,
            &inst.ys,
            &inst.param,
            &inst.theta,
            w,
        )
        .unwrap();
        let r = reverse_gradient_weighted(
            &inst.model,
            &inst.spec,
            &inst.ys,
            &inst.param,
            &inst.theta,
            w,
        )
        .unwrap();
        assert!(max_relative_error(&f.grad, &r.grad, 1e-12) <= 1e-8);
        let num = fd_gradient(
            |t| {
                run_filter(&inst.model, &inst.spec, &inst.ys, &inst.param, t, false)
                    .map(|run| w.objective(run.loss.ell_o, run.loss.ell_s))
            },
            &inst.theta,
            FD_STEP,
        )
        .unwrap();
        assert!(max_relative_error(&r.grad, &num, FD_FLOOR) <= 1e-4);

        let w = LossWeights::PRIMARY_ONLY;
        let empty = SupervisorySpec::empty();
        let base =
            reverse_gradient(&inst.model, &empty, &inst.ys, &inst.param, &inst.theta).unwrap();
        for g in [
            forward_gradient_weighted(
                &inst.model,
                &inst.spec,
                &inst.ys,
                &inst.param,
                &inst.theta,
                w,
            )
            .unwrap(),
            reverse_gradient_weighted(
                &inst.model,
                &inst.spec,
                &inst.ys,
                &inst.param,
                &inst.theta,
                w,
            )
            .unwrap(),
        ] {
            assert!(max_relative_error(&g.grad, &base.grad, 1e-12) <= 1e-10);
        }
    }
}

#[test]
fn unused_coordinates_have_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut inst = random_instance(&mut rng);
    let m = inst.ys[0].len();
    let d = inst.model.state_dim();
    let q = spd(&mut rng, d, 0.2);
    inst.param = CovParam::custom(Block::new(Shape::Isotropic, 1), Block::fixed(q), m, d).unwrap();
    inst.theta = Vector::from_vec(vec![0.4, -0.2]);
    let f = forward_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    let r = reverse_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    assert_eq!(f.grad[0], 0.0);
    assert_eq!(r.grad[0], 0.0);
    assert!(f.grad[1] != 0.0);
}

#[test]
fn gradients_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let inst = random_instance(&mut rng);
    let a = reverse_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    let b = reverse_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    assert_eq!(a.grad, b.grad);
    let a = forward_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    let b = forward_gradient(&inst.model, &inst.spec, &inst.ys, &inst.param, &inst.theta).unwrap();
    assert_eq!(a.grad, b.grad);
}
