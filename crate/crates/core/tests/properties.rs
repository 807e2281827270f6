//! Property tests for the oracle and schedule invariants.

use expstep::linesearch::{armijo_backtrack, LineSearchConfig};
use expstep::lowerbounds::sum_prod_identity_check;
use expstep::problems::{component_value_grad, measure_noise, FiniteSumProblem};
use expstep::schedules::Schedule;
use expstep::{LinearModelProblem, Loss, QuadraticSum, SparseRow};

use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite difference of `f` at `w` along coordinate `j`.
fn central_diff<F: Fn(&[f64]) -> f64>(f: F, w: &[f64], j: usize) -> f64 {
    let h = 1e-5 * (1.0 + norm(w));
    let mut hi = w.to_vec();
    let mut lo = w.to_vec();
    hi[j] += h;
    lo[j] -= h;
    (f(&hi) - f(&lo)) / (2.0 * h)
}

fn small_quadratic_sum() -> impl Strategy<Value = QuadraticSum> {
    (
        prop::collection::vec(0.2f64..3.0, 1..6),
        prop::collection::vec(-2.0f64..2.0, 6),
    )
        .prop_map(|(xs, ys)| QuadraticSum::new_1d(&xs, &ys[..xs.len()]))
}

fn small_linear_model() -> impl Strategy<Value = LinearModelProblem> {
    (
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 2..6),
        any::<bool>(),
        0.01f64..0.5,
    )
        .prop_map(|(rows, logistic, lambda)| {
            let n = rows.len();
            let labels: Vec<f64> = (0..n)
                .map(|i| if logistic { if i % 2 == 0 { 1.0 } else { -1.0 } } else { i as f64 - 1.5 })
                .collect();
            let rows: Vec<SparseRow> = rows
                .into_iter()
                .map(|values| SparseRow {
                    indices: vec![0, 1, 2],
                    values,
                })
                .collect();
            let loss = if logistic { Loss::Logistic } else { Loss::Squared };
            LinearModelProblem::new(rows, labels, loss, lambda, 3)
        })
}

proptest! {
    #[test]
    fn decay_factor_is_non_increasing(
        kind in 0..3usize,
        delta in 0.0f64..=1.0,
        beta in 1.0f64..=50.0,
    ) {
        let horizon = 200usize;
        let schedule = match kind {
            0 => Schedule::constant(),
            1 => Schedule::polynomial(delta).unwrap(),
            _ => Schedule::exponential(beta.min(horizon as f64), horizon).unwrap(),
        };
        let mut prev = f64::INFINITY;
        for k in 0..=horizon {
            let a = schedule.alpha_at(k).unwrap();
            prop_assert!(a <= prev + 1e-15);
            prop_assert!(a > 0.0 && a <= 1.0);
            prev = a;
        }
    }

    #[test]
    fn step_size_schedule_is_non_increasing(
        l in 0.5f64..10.0,
        mu in 0.01f64..0.5,
        rho in 1.0f64..100.0,
    ) {
        let horizon = 300usize;
        let schedule = Schedule::kr20(l, mu, rho, horizon).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=horizon {
            let s = schedule.kr20_step(k).unwrap();
            prop_assert!(s <= prev);
            prop_assert!(s > 0.0);
            prev = s;
        }
    }

    #[test]
    fn quadratic_gradients_match_finite_differences(
        p in small_quadratic_sum(),
        w in -3.0f64..3.0,
    ) {
        for i in 0..p.num_components() {
            let (_, g) = component_value_grad(&p, i, &[w]).unwrap();
            let fd = central_diff(|v| p.component_value(i, v), &[w], 0);
            let scale = g[0].abs().max(1.0);
            prop_assert!((g[0] - fd).abs() <= 1e-6 * scale, "grad {} fd {}", g[0], fd);
        }
    }

    #[test]
    fn linear_model_gradients_match_finite_differences(
        p in small_linear_model(),
        w in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        for i in 0..p.num_components() {
            let (_, g) = component_value_grad(&p, i, &w).unwrap();
            for (j, gj) in g.iter().enumerate() {
                let fd = central_diff(|v| p.component_value(i, v), &w, j);
                let scale = gj.abs().max(1.0);
                prop_assert!((gj - fd).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn components_satisfy_their_smoothness_certificate(
        p in small_linear_model(),
        w in prop::collection::vec(-2.0f64..2.0, 3),
        v in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        for i in 0..p.num_components() {
            let (fw, g) = component_value_grad(&p, i, &w).unwrap();
            let fv = p.component_value(i, &v);
            let li = p.component_smoothness(i);
            let inner: f64 = g.iter().zip(w.iter().zip(&v)).map(|(gj, (wj, vj))| gj * (vj - wj)).sum();
            let dist_sq: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(fv <= fw + inner + 0.5 * li * dist_sq + 1e-9);
        }
    }

    #[test]
    fn average_satisfies_strong_convexity_certificate(
        p in small_linear_model(),
        w in prop::collection::vec(-2.0f64..2.0, 3),
        v in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let mu = p.strong_convexity();
        let fw = p.value(&w);
        let fv = p.value(&v);
        let g = expstep::problems::full_gradient(&p, &w).unwrap();
        let inner: f64 = g.iter().zip(w.iter().zip(&v)).map(|(gj, (wj, vj))| gj * (vj - wj)).sum();
        let dist_sq: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!(fv >= fw + inner + 0.5 * mu * dist_sq - 1e-9);
    }

    #[test]
    fn noise_measures_satisfy_the_curvature_sandwich(
        p in small_quadratic_sum(),
    ) {
        // every 1-d quadratic component is (min_i x_i^2)-strongly convex
        let w_star = p.reference().unwrap().w_star.clone();
        let (sigma_sq, z_sq) = measure_noise(&p, &w_star).unwrap();
        prop_assert!(sigma_sq >= -1e-15 && z_sq >= 0.0);
        let l = p.smoothness();
        let mu_comp = (0..p.num_components())
            .map(|i| p.component_smoothness(i))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(z_sq / (2.0 * l) <= sigma_sq + 1e-12);
        prop_assert!(sigma_sq <= z_sq / (2.0 * mu_comp) + 1e-12);
    }

    #[test]
    fn accepted_steps_satisfy_sufficient_decrease(
        x in 0.3f64..3.0,
        y in -2.0f64..2.0,
        w0 in -3.0f64..3.0,
        ceiling in 0.05f64..5.0,
        c in 0.1f64..0.9,
        shrink in 0.3f64..0.8,
    ) {
        let p = QuadraticSum::new_1d(&[x], &[y]);
        let (fw, g) = component_value_grad(&p, 0, &[w0]).unwrap();
        prop_assume!(g[0] != 0.0);
        let cfg = LineSearchConfig { c, shrink, ..LineSearchConfig::default() };
        let r = armijo_backtrack(|v| p.component_value(0, v), &[w0], &g, None, ceiling, &cfg).unwrap();
        let g_sq = g[0] * g[0];
        let f_trial = p.component_value(0, &[w0 - r.gamma * g[0]]);
        prop_assert!(r.satisfied);
        prop_assert!(f_trial <= fw - c * r.gamma * g_sq + 1e-12);
        // bracketing for smooth components
        let lower = ceiling.min(shrink * 2.0 * (1.0 - c) / p.component_smoothness(0));
        prop_assert!(r.gamma >= lower * (1.0 - 1e-12) && r.gamma <= ceiling);
    }

    #[test]
    fn telescoping_identity_residual_is_tiny(
        alphas in prop::collection::vec(0.0f64..=1.0, 1..300),
    ) {
        prop_assert!(sum_prod_identity_check(&alphas) <= 1e-12 * alphas.len() as f64);
    }

    #[test]
    fn exponential_partial_sums_respect_the_lower_bound(
        beta in 1.0f64..9.0,
        horizon in 10usize..2000,
    ) {
        prop_assume!((horizon as f64) > beta);
        let check = expstep::schedules::exp_sum_lower_bound(beta, horizon).unwrap();
        prop_assert!(check.holds, "lhs {} rhs {}", check.lhs, check.rhs);
    }
}
