//! Problem-independent decay sequences `alpha_k` and the constant-then-decay
//! full step-size schedule, plus the summation diagnostics used to verify
//! their convergence-rate guarantees.
//!
//! Index convention: schedule evaluation takes `k >= 0`; the optimizer loops
//! evaluate iteration `k` of a `T`-step run at index `k` in `1..=T` (the
//! polynomial schedule reads `(k+1)^-delta`, so there is no singularity at
//! either convention's origin).

use thiserror::Error;

use crate::util::CompensatedSum;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("operation not defined for this schedule kind: {0}")]
    WrongKind(&'static str),
}

/// Constants of the constant-then-decay schedule: smoothness `L`,
/// strong-convexity modulus `mu`, and growth-condition constant `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantThenDecay {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub growth: f64,
}

/// A decay schedule for the problem-independent step-size factor.
///
/// `Constant`, `Polynomial` and `Exponential` produce the multiplier
/// `alpha_k` in the step `eta_k = gamma_k * alpha_k`. `Kr20` is different in
/// kind: it produces the full step-size `eta_k` directly (see [`Schedule::kr20_step`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `alpha_k = 1`.
    Constant,
    /// `alpha_k = (k+1)^-delta` with `delta` in `[0, 1]`.
    Polynomial { delta: f64 },
    /// `alpha_k = alpha^k` with `alpha = (beta/T)^(1/T)`, `1 <= beta <= T`.
    Exponential { beta: f64, horizon: usize },
    /// Constant step `1/b` followed by an `O(1/k)` decay.
    Kr20 {
        params: ConstantThenDecay,
        horizon: usize,
    },
}

/// Base `alpha = (beta/T)^(1/T)` of the exponential schedule, computed as
/// `exp(ln(beta/T)/T)` for stability at large `T`. Result lies in `(0, 1]`.
pub fn exp_base(beta: f64, horizon: usize) -> Result<f64, ScheduleError> {
    if horizon == 0 {
        return Err(ScheduleError::ParameterDomain(
            "horizon must be positive".into(),
        ));
    }
    let t = horizon as f64;
    if !(1.0..=t).contains(&beta) {
        return Err(ScheduleError::ParameterDomain(format!(
            "beta must satisfy 1 <= beta <= T, got beta={beta}, T={horizon}"
        )));
    }
    Ok(((beta / t).ln() / t).exp())
}

impl Schedule {
    pub fn constant() -> Self {
        Schedule::Constant
    }

    pub fn polynomial(delta: f64) -> Result<Self, ScheduleError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(ScheduleError::ParameterDomain(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Schedule::Polynomial { delta })
    }

    pub fn exponential(beta: f64, horizon: usize) -> Result<Self, ScheduleError> {
        exp_base(beta, horizon)?;
        Ok(Schedule::Exponential { beta, horizon })
    }

    pub fn kr20(
        smoothness: f64,
        strong_convexity: f64,
        growth: f64,
        horizon: usize,
    ) -> Result<Self, ScheduleError> {
        if smoothness <= 0.0 || strong_convexity <= 0.0 || growth < 1.0 || horizon == 0 {
            return Err(ScheduleError::ParameterDomain(format!(
                "need L > 0, mu > 0, rho >= 1, T >= 1; got L={smoothness}, mu={strong_convexity}, rho={growth}, T={horizon}"
            )));
        }
        Ok(Schedule::Kr20 {
            params: ConstantThenDecay {
                smoothness,
                strong_convexity,
                growth,
            },
            horizon,
        })
    }

    pub fn horizon(&self) -> Option<usize> {
        match self {
            Schedule::Exponential { horizon, .. } | Schedule::Kr20 { horizon, .. } => {
                Some(*horizon)
            }
            _ => None,
        }
    }

    /// Decay factor `alpha_k`.
    ///
    /// Constant: 1. Polynomial: `(k+1)^-delta`. Exponential: `alpha^k`
    /// (requires `k <= T`). The constant-then-decay schedule produces a full
    /// step-size, not a decay factor; asking for its `alpha_k` is an error.
    pub fn alpha_at(&self, k: usize) -> Result<f64, ScheduleError> {
        match self {
            Schedule::Constant => Ok(1.0),
            Schedule::Polynomial { delta } => Ok((k as f64 + 1.0).powf(-delta)),
            Schedule::Exponential { beta, horizon } => {
                if k > *horizon {
                    return Err(ScheduleError::ParameterDomain(format!(
                        "iteration {k} past horizon {horizon}"
                    )));
                }
                let t = *horizon as f64;
                Ok((k as f64 / t * (beta / t).ln()).exp())
            }
            Schedule::Kr20 { .. } => Err(ScheduleError::WrongKind(
                "constant-then-decay defines a full step-size; use kr20_step",
            )),
        }
    }

    /// Full step-size of the constant-then-decay schedule at iteration `k`:
    /// with `b = max(2L^2/mu, 2 rho L)`, returns `1/b` while `T < b/mu` or
    /// `k < ceil(T/2)`, and `2 / (mu (2b/mu + k - ceil(T/2)))` afterwards.
    pub fn kr20_step(&self, k: usize) -> Result<f64, ScheduleError> {
        let Schedule::Kr20 { params, horizon } = self else {
            return Err(ScheduleError::WrongKind(
                "kr20_step requires the constant-then-decay schedule",
            ));
        };
        if k > *horizon {
            return Err(ScheduleError::ParameterDomain(format!(
                "iteration {k} past horizon {horizon}"
            )));
        }
        let l = params.smoothness;
        let mu = params.strong_convexity;
        let b = (2.0 * l * l / mu).max(2.0 * params.growth * l);
        let half = horizon.div_ceil(2);
        if (*horizon as f64) < b / mu || k < half {
            Ok(1.0 / b)
        } else {
            // 2 / (mu (2b/mu + k - half)), factored so the denominator is
            // monotone in k and coincides with 1/b at the switch
            Ok(2.0 / (2.0 * b + mu * (k - half) as f64))
        }
    }

    /// Compensated sums `(sum_{k=1..T} alpha_k, sum_{k=1..T} alpha_k^2)`.
    pub fn partial_sums(&self, horizon: usize) -> Result<(f64, f64), ScheduleError> {
        let mut s = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for k in 1..=horizon {
            let a = self.alpha_at(k)?;
            s.add(a);
            s2.add(a * a);
        }
        Ok((s.value(), s2.value()))
    }
}

/// Sum diagnostics against the two growth conditions a noise-adaptive
/// schedule would need in the convex setting (linear growth of the first
/// sum, root growth of the second). No schedule in this module can satisfy
/// both; the ratios are reported, not asserted.
#[derive(Debug, Clone, Copy)]
pub struct GrowthDiagnostic {
    pub sum_alpha: f64,
    pub sum_alpha_sq: f64,
    /// `sum_alpha / T`
    pub linear_ratio: f64,
    /// `sum_alpha_sq / sqrt(T)`
    pub root_ratio: f64,
}

pub fn growth_diagnostic(schedule: &Schedule, horizon: usize) -> Result<GrowthDiagnostic, ScheduleError> {
    let (sum_alpha, sum_alpha_sq) = schedule.partial_sums(horizon)?;
    Ok(GrowthDiagnostic {
        sum_alpha,
        sum_alpha_sq,
        linear_ratio: sum_alpha / horizon as f64,
        root_ratio: sum_alpha_sq / (horizon as f64).sqrt(),
    })
}

/// One verified bound on the exponential schedule's sums: left-hand side,
/// right-hand side, and the direction-adjusted check.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Lower bound on the plain sum: `sum_{t=1..T} alpha^t >= (alpha T - 2 beta) / ln(T/beta)`.
pub fn exp_sum_lower_bound(beta: f64, horizon: usize) -> Result<BoundCheck, ScheduleError> {
    let schedule = Schedule::exponential(beta, horizon)?;
    require_strict_horizon(beta, horizon)?;
    let alpha = exp_base(beta, horizon)?;
    let (sum, _) = schedule.partial_sums(horizon)?;
    let lt = (horizon as f64 / beta).ln();
    let rhs = alpha * horizon as f64 / lt - 2.0 * beta / lt;
    Ok(BoundCheck {
        lhs: sum,
        rhs,
        holds: sum >= rhs,
    })
}

/// Upper bound on the damped squared sum:
/// `sum_k alpha^{2k} exp(-(1/kappa) sum_{i=k+1..T} alpha^i)
///   <= 4 kappa^2 c2 ln(T/beta)^2 / (e^2 alpha^2 T)`
/// with `c2 = exp((1/kappa) 2 beta / ln(T/beta))`.
pub fn damped_square_sum_bound(
    beta: f64,
    horizon: usize,
    kappa: f64,
) -> Result<BoundCheck, ScheduleError> {
    let (sq, _) = damped_sums(beta, horizon, kappa)?;
    let alpha = exp_base(beta, horizon)?;
    let lt = (horizon as f64 / beta).ln();
    let c2 = ((1.0 / kappa) * 2.0 * beta / lt).exp();
    let e2 = std::f64::consts::E * std::f64::consts::E;
    let rhs = 4.0 * kappa * kappa * c2 * lt * lt / (e2 * alpha * alpha * horizon as f64);
    Ok(BoundCheck {
        lhs: sq,
        rhs,
        holds: sq <= rhs,
    })
}

/// Upper bound on the damped first-power sum:
/// `sum_k alpha^k exp(-(1/kappa) sum_{i=k+1..T} alpha^i) <= c2 kappa ln(T/beta) / (e alpha)`.
pub fn damped_sum_bound(beta: f64, horizon: usize, kappa: f64) -> Result<BoundCheck, ScheduleError> {
    let (_, first) = damped_sums(beta, horizon, kappa)?;
    let alpha = exp_base(beta, horizon)?;
    let lt = (horizon as f64 / beta).ln();
    let c2 = ((1.0 / kappa) * 2.0 * beta / lt).exp();
    let rhs = c2 * kappa * lt / (std::f64::consts::E * alpha);
    Ok(BoundCheck {
        lhs: first,
        rhs,
        holds: first <= rhs,
    })
}

/// `(sum alpha^{2k} exp(-S_k/kappa), sum alpha^k exp(-S_k/kappa))` with
/// `S_k = sum_{i=k+1..T} alpha^i`, computed with exact suffix sums.
fn damped_sums(beta: f64, horizon: usize, kappa: f64) -> Result<(f64, f64), ScheduleError> {
    if kappa <= 0.0 {
        return Err(ScheduleError::ParameterDomain(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    require_strict_horizon(beta, horizon)?;
    let schedule = Schedule::exponential(beta, horizon)?;
    let alphas: Vec<f64> = (1..=horizon)
        .map(|k| schedule.alpha_at(k))
        .collect::<Result<_, _>>()?;
    let mut suffix = vec![0.0; horizon + 1];
    for k in (0..horizon).rev() {
        suffix[k] = suffix[k + 1] + alphas[k];
    }
    let mut sq = CompensatedSum::default();
    let mut first = CompensatedSum::default();
    for (k, &a) in alphas.iter().enumerate() {
        let damp = (-suffix[k + 1] / kappa).exp();
        sq.add(a * a * damp);
        first.add(a * damp);
    }
    Ok((sq.value(), first.value()))
}

fn require_strict_horizon(beta: f64, horizon: usize) -> Result<(), ScheduleError> {
    if beta >= horizon as f64 {
        return Err(ScheduleError::ParameterDomain(format!(
            "bound requires T > beta, got T={horizon}, beta={beta}"
        )));
    }
    Ok(())
}

/// `1/(x-1) <= 2/ln(x)` for `x > 1`.
pub fn reciprocal_log_bound_holds(x: f64) -> bool {
    x > 1.0 && 1.0 / (x - 1.0) <= 2.0 / x.ln()
}

/// `exp(-x) <= (p/(e x))^p` for `x, p > 0`.
pub fn exp_power_bound_holds(x: f64, p: f64) -> bool {
    x > 0.0 && p > 0.0 && (-x).exp() <= (p / (std::f64::consts::E * x)).powf(p)
}
