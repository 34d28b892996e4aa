use lena::{FiniteQuadratic, Phase, RunStatus, SaddleQuartic, StochasticProblem, TraceOptions, Vector};
use lena_harness::baselines::{baseline_run, BaselineParams};
use nalgebra::DMatrix;

fn convex_quadratic() -> (FiniteQuadratic, Vector, f64, f64) {
    let eig = [4.0, 2.5, 1.0, 0.5];
    let h = DMatrix::from_diagonal(&Vector::from_row_slice(&eig));
    let b = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
    let minimizer = Vector::from_iterator(4, b.iter().zip(eig).map(|(bi, l)| bi / l));
    (FiniteQuadratic::single(h, b).unwrap(), minimizer, 4.0, 0.5)
}

#[test]
fn sgd_on_a_strongly_convex_quadratic_meets_the_linear_rate() {
    let (p, minimizer, l, mu) = convex_quadratic();
    let x0 = Vector::from_vec(vec![3.0, 3.0, -3.0, -3.0]);
    let tol = 1e-8;
    let params = BaselineParams::sgd(1.0 / l, 1, tol, 10_000_000);
    let out = baseline_run(&p, &params, &x0, &mut lena::stream(0), &TraceOptions::movement_only()).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    // ‖∇F(x_t)‖ ≤ L (1 − μ/L)^t ‖x0 − x*‖
    let bound = (l / mu) * (l * (&x0 - &minimizer).norm() / tol).ln();
    let steps = out.trace.last().unwrap().step as f64;
    assert!(steps <= bound.ceil(), "{steps} steps, bound {bound}");
    assert!((&out.x_out - &minimizer).norm() <= tol / mu * 1.0001);
}

#[test]
fn perturbed_sgd_without_radius_is_sgd() {
    let p = SaddleQuartic::standard(4, -1.0, 2.0).unwrap().with_noise(0.2, 50, 9).unwrap();
    let x0 = Vector::from_vec(vec![0.1, 0.0, -0.2, 0.3]);
    let opts = TraceOptions { log_every: 7, estimator_error: false };
    let plain = BaselineParams::sgd(0.01, 4, 1e-3, 40_000);
    let perturbed = BaselineParams::perturbed_sgd(0.01, 4, 0.0, 10, 1e-3, 40_000);
    let a = baseline_run(&p, &plain, &x0, &mut lena::stream(4), &opts).unwrap();
    let b = baseline_run(&p, &perturbed, &x0, &mut lena::stream(4), &opts).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.x_out, b.x_out);
    assert!(b.trace.iter().all(|r| r.phase != Phase::Perturb));
}

#[test]
fn perturbed_sgd_perturbs_on_schedule() {
    let p = SaddleQuartic::standard(3, -1.0, 2.0).unwrap();
    let x0 = Vector::from_vec(vec![0.5, 0.5, 0.5]);
    let params = BaselineParams::perturbed_sgd(0.05, 1, 0.01, 25, 0.0, 2_000);
    let out = baseline_run(&p, &params, &x0, &mut lena::stream(1), &TraceOptions::movement_only()).unwrap();
    let perturbs: Vec<_> = out.trace.iter().filter(|r| r.phase == Phase::Perturb).collect();
    assert!(!perturbs.is_empty());
    for r in perturbs {
        assert!(r.step_norm <= 0.01);
        assert_eq!(r.step % 26, 0, "perturbation at step {}", r.step);
    }
}

#[test]
fn noiseless_plain_spider_is_normalized_gradient_descent() {
    let p = SaddleQuartic::standard(5, -1.0, 3.0).unwrap();
    let x0 = Vector::from_vec(vec![0.3, -0.2, 0.1, 0.05, 0.4]);
    let eta = 0.01;
    let params = BaselineParams::plain_spider(eta, 1, 1, 4, 0.0, 3_000);
    let out = baseline_run(&p, &params, &x0, &mut lena::stream(2), &TraceOptions::movement_only()).unwrap();
    let steps = out.trace.last().unwrap().step;
    assert_eq!(out.status, RunStatus::BudgetExhausted);
    assert!(steps > 1000);
    let mut x = x0.clone();
    for _ in 0..steps {
        let g = p.full_gradient(&x).unwrap();
        x -= g.scale(eta / g.norm());
    }
    assert!((&x - &out.x_out).norm() <= 1e-9, "drift {}", (&x - &out.x_out).norm());
    assert!(out.trace.iter().filter(|r| r.phase == Phase::Gd).all(|r| (r.step_norm - eta).abs() <= 1e-12));
}

#[test]
fn baselines_respect_the_budget() {
    let p = SaddleQuartic::standard(3, -1.0, 2.0).unwrap().with_noise(0.1, 20, 1).unwrap();
    let x0 = Vector::zeros(3);
    for params in [
        BaselineParams::sgd(0.01, 7, 0.0, 1_000),
        BaselineParams::perturbed_sgd(0.01, 7, 0.01, 5, 0.0, 1_000),
        BaselineParams::plain_spider(0.01, 50, 7, 5, 0.0, 1_000),
    ] {
        let out = baseline_run(&p, &params, &x0, &mut lena::stream(0), &TraceOptions::movement_only()).unwrap();
        assert_eq!(out.status, RunStatus::BudgetExhausted);
        assert!(out.sgrad_evals <= 1_000);
        assert_eq!(out.sgrad_evals, out.trace.last().unwrap().sgrad_evals_cum.max(out.sgrad_evals));
    }
}

#[test]
fn invalid_baseline_parameters_are_rejected() {
    let p = SaddleQuartic::standard(3, -1.0, 2.0).unwrap();
    let x0 = Vector::zeros(3);
    let opts = TraceOptions::movement_only();
    for params in [
        BaselineParams::sgd(0.0, 1, 1e-3, 100),
        BaselineParams::sgd(0.1, 0, 1e-3, 100),
        BaselineParams::perturbed_sgd(0.1, 1, 0.01, 0, 1e-3, 100),
    ] {
        assert!(baseline_run(&p, &params, &x0, &mut lena::stream(0), &opts).is_err());
    }
    assert!(baseline_run(&p, &BaselineParams::sgd(0.1, 1, 1e-3, 100), &Vector::zeros(2), &mut lena::stream(0), &opts)
        .is_err());
}
