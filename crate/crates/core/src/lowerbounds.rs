//! Closed-form trajectory oracles and verdict checks for the hard instances:
//! polynomial-decay gradient descent, the constant-step escape pair, the
//! correlated line-search expectation floor, and misestimated-smoothness
//! amplification, plus the sum-product identity their proofs rest on.
//!
//! The hard problems are hard-coded constructors so tests cannot drift from
//! the exact constants the constructions require.

use rayon::prelude::*;
use thiserror::Error;

use crate::linesearch::{LineSearchConfig, SearchMode};
use crate::optimizers::{run_sgd, GammaPolicy, OptimError, RunOptions};
use crate::problems::{FiniteSumProblem, QuadraticSum};
use crate::schedules::{exp_base, Schedule, ScheduleError};

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("insufficient samples: {got} seeds, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// The pair of one-dimensional quadratics `1/2 (w - 1)^2` and
/// `1/2 (2w + 1/2)^2`: unequal curvatures (1 and 4), sum minimized at 0,
/// noise `sigma^2 = 5/16` at the minimizer.
pub fn mismatched_quadratic_pair() -> QuadraticSum {
    QuadraticSum::new_1d(&[1.0, 2.0], &[1.0, -0.5])
}

/// Control variant with the second component replaced by `1/2 (2w - 2)^2`,
/// so both components share the minimizer 1 and the noise vanishes.
pub fn interpolating_pair() -> QuadraticSum {
    QuadraticSum::new_1d(&[1.0, 2.0], &[1.0, 2.0])
}

/// Closed-form scalar iterate sequence `w_{k+1} - w* = (w_k - w*) m_k`,
/// `k = 1..=T`, with precomputed per-step multipliers.
#[derive(Debug, Clone)]
pub struct AnalyticTrajectory {
    pub w_init: f64,
    pub w_star: f64,
    multipliers: Vec<f64>,
}

impl AnalyticTrajectory {
    /// `w_k` for `k` in `1..=T+1` (`w_1` is the initial point). May overflow
    /// to infinity for strongly amplifying multipliers; use
    /// [`Self::log2_abs_gap_ratio`] in that regime.
    pub fn iterate(&self, k: usize) -> f64 {
        assert!((1..=self.multipliers.len() + 1).contains(&k));
        let mut gap = self.w_init - self.w_star;
        for m in &self.multipliers[..k - 1] {
            gap *= m;
        }
        self.w_star + gap
    }

    pub fn gap(&self, k: usize) -> f64 {
        self.iterate(k) - self.w_star
    }

    /// `log2 |gap_k / gap_1| = sum_{j<k} log2 |m_j|`, overflow-free.
    pub fn log2_abs_gap_ratio(&self, k: usize) -> f64 {
        assert!((1..=self.multipliers.len() + 1).contains(&k));
        self.multipliers[..k - 1]
            .iter()
            .map(|m| m.abs().log2())
            .sum()
    }

    pub fn steps(&self) -> usize {
        self.multipliers.len()
    }
}

/// Gradient descent on `1/2 (x w - y)^2` with step `eta_k = (k+1)^-delta / L`:
/// the gap multiplier at step `k` is `1 - (k+1)^-delta`, so for `delta = 1`
/// the final gap is exactly `(w_1 - w*) / (T+1)`.
pub fn poly_gd_trajectory(
    x: f64,
    y: f64,
    delta: f64,
    horizon: usize,
    w_init: f64,
) -> Result<AnalyticTrajectory, LowerBoundError> {
    if x == 0.0 {
        return Err(LowerBoundError::ParameterDomain("x must be nonzero".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(LowerBoundError::ParameterDomain(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    let multipliers = (1..=horizon)
        .map(|k| 1.0 - (k as f64 + 1.0).powf(-delta))
        .collect();
    Ok(AnalyticTrajectory {
        w_init,
        w_star: y / x,
        multipliers,
    })
}

/// Lower bound on the final gap ratio of polynomial-decay gradient descent
/// with exponent `delta` in `(0, 1)`:
/// `(1 - 2^-delta)^(floor(2^(1/delta)) - 1) * 4^((2 delta - 1)/(1 - delta))
///  * 4^(-(T+1)^(1-delta)/(1-delta))`.
/// Valid once `T >= floor(2^(1/delta))`.
pub fn poly_gd_gap_lower_bound(delta: f64, horizon: usize) -> Result<f64, LowerBoundError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LowerBoundError::ParameterDomain(format!(
            "bound needs delta in (0, 1), got {delta}"
        )));
    }
    let threshold = (2.0f64.powf(1.0 / delta)).floor();
    if (horizon as f64) < threshold {
        return Err(LowerBoundError::ParameterDomain(format!(
            "bound needs T >= {threshold}, got {horizon}"
        )));
    }
    let head = (1.0 - 0.5f64.powf(delta)).powf(threshold - 1.0);
    let mid = 4.0f64.powf((2.0 * delta - 1.0) / (1.0 - delta));
    let tail = 4.0f64.powf(-((horizon as f64 + 1.0).powf(1.0 - delta)) / (1.0 - delta));
    Ok(head * mid * tail)
}

/// Both one-step successors of `w` on the mismatched pair under the
/// constant step `1/L = 1/4`: component 1 maps to `3/4 w + 1/4`, component 2
/// to `-1/4` regardless of `w`.
pub fn escape_successors(w: f64) -> (f64, f64) {
    (0.75 * w + 0.25, -0.25)
}

/// True iff `|w| < 1/8` implies both successors leave the `1/8`-ball
/// (vacuously true outside it).
pub fn constant_step_escape_check(w: f64) -> bool {
    if w.abs() >= 0.125 {
        return true;
    }
    let (a, b) = escape_successors(w);
    a.abs() > 0.125 && b.abs() > 0.125
}

/// Expected iterates `E w_1 .. E w_{T+1}` of online-line-search SGD on the
/// mismatched pair with sufficient-decrease constant `c >= 1/2` and ceiling
/// at least 1: `E w_{k+1} = (1 - 2(1-c) a_k) E w_k + (3/8) 2(1-c) a_k`.
pub fn sls_correlated_expectation_path(
    w_init: f64,
    c: f64,
    schedule: &Schedule,
    steps: usize,
) -> Result<Vec<f64>, LowerBoundError> {
    if !(0.5..1.0).contains(&c) {
        return Err(LowerBoundError::ParameterDomain(format!(
            "the expectation recursion requires c in [1/2, 1), got {c}"
        )));
    }
    let mut path = Vec::with_capacity(steps + 1);
    let mut w = w_init;
    path.push(w);
    for k in 1..=steps {
        let a = schedule.alpha_at(k)?;
        let pull = 2.0 * (1.0 - c) * a;
        w = (1.0 - pull) * w + 0.375 * pull;
        path.push(w);
    }
    Ok(path)
}

/// Final expected iterate of the recursion above.
pub fn sls_correlated_expectation(
    w_init: f64,
    c: f64,
    schedule: &Schedule,
    steps: usize,
) -> Result<f64, LowerBoundError> {
    Ok(*sls_correlated_expectation_path(w_init, c, schedule, steps)?
        .last()
        .expect("path holds at least the initial point"))
}

/// Exact product trajectory of gradient descent on `1/2 (x w - y)^2` with
/// the misestimated step `nu/L` and exponential decay: the gap multiplier at
/// step `i` is `1 - nu alpha^i`.
pub fn misestimated_trajectory(
    nu: f64,
    beta: f64,
    horizon: usize,
    w_init: f64,
    x: f64,
    y: f64,
) -> Result<AnalyticTrajectory, LowerBoundError> {
    if x == 0.0 {
        return Err(LowerBoundError::ParameterDomain("x must be nonzero".into()));
    }
    let alpha = exp_base(beta, horizon)?;
    let multipliers = (1..=horizon)
        .map(|i| 1.0 - nu * alpha.powi(i as i32))
        .collect();
    Ok(AnalyticTrajectory {
        w_init,
        w_star: y / x,
        multipliers,
    })
}

/// Certificate that misestimating the smoothness by `nu > 3` amplifies the
/// initial gap: up to `k' = (T / ln(T/beta)) ln(nu/3)` every gap multiplier
/// is at most `-2`, so after `floor(k')` steps the gap has grown by at least
/// `2^floor(k')`.
#[derive(Debug, Clone, Copy)]
pub struct MisestimationReport {
    /// Real-valued threshold `k'`; `nu * alpha^{k'} = 3` exactly.
    pub threshold: f64,
    pub floor_threshold: usize,
    /// `log2` of the exact gap amplification after `floor(k')` steps.
    pub log2_amplification: f64,
    /// Every multiplier up to `floor(k')` is `<= -2`.
    pub multipliers_below_minus_two: bool,
    /// `log2_amplification >= floor(k')` (vacuous for a zero initial gap).
    pub amplification_certified: bool,
}

pub fn misestimated_gd_check(
    nu: f64,
    beta: f64,
    horizon: usize,
    w_init: f64,
    x: f64,
    y: f64,
) -> Result<MisestimationReport, LowerBoundError> {
    if nu <= 3.0 {
        return Err(LowerBoundError::ParameterDomain(format!(
            "amplification certificate requires nu > 3, got {nu}"
        )));
    }
    let alpha = exp_base(beta, horizon)?;
    if alpha >= 1.0 {
        return Err(LowerBoundError::ParameterDomain(
            "amplification certificate requires beta < T".into(),
        ));
    }
    let t = horizon as f64;
    let threshold = t / (t / beta).ln() * (nu / 3.0).ln();
    let floor_threshold = threshold.floor() as usize;
    if floor_threshold + 1 > horizon {
        return Err(LowerBoundError::ParameterDomain(format!(
            "threshold {floor_threshold} exceeds horizon {horizon}"
        )));
    }
    let traj = misestimated_trajectory(nu, beta, horizon, w_init, x, y)?;
    let multipliers_below_minus_two = (1..=floor_threshold)
        .all(|k| 1.0 - nu * alpha.powi(k as i32) <= -2.0);
    let log2_amplification = traj.log2_abs_gap_ratio(floor_threshold + 1);
    let zero_gap = w_init == y / x;
    Ok(MisestimationReport {
        threshold,
        floor_threshold,
        log2_amplification,
        multipliers_below_minus_two,
        amplification_certified: zero_gap || log2_amplification >= floor_threshold as f64,
    })
}

/// `|prod(1 - a_k) + sum_k a_k prod_{i>k}(1 - a_i) - 1|`, the residual of
/// the telescoping identity behind the expectation floor.
pub fn sum_prod_identity_check(alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut suffix = vec![1.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] * (1.0 - alphas[k]);
    }
    let total: f64 = suffix[0]
        + alphas
            .iter()
            .enumerate()
            .map(|(k, &a)| a * suffix[k + 1])
            .sum::<f64>();
    (total - 1.0).abs()
}

/// Monte-Carlo mean and standard error of the final iterate of online
/// line-search SGD (exact mode, `c = 1/2`, ceiling 1) on a given problem.
pub fn simulate_online_sls<P: FiniteSumProblem + ?Sized>(
    p: &P,
    seeds: usize,
    horizon: usize,
    schedule: &Schedule,
    w_init: f64,
) -> Result<(f64, f64), LowerBoundError> {
    let cfg = LineSearchConfig {
        c: 0.5,
        gamma_max: 1.0,
        mode: SearchMode::ExactQuadratic,
        ..LineSearchConfig::default()
    };
    let finals: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let opts = RunOptions::new(horizon, seed).init(vec![w_init]);
            run_sgd(p, schedule, &GammaPolicy::OnlineSls(cfg), &opts)
                .map(|trace| trace.final_iterate[0])
        })
        .collect::<Result<_, _>>()?;
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte-Carlo certification runs on the mismatched pair. Requires at least
/// 10^3 seeds; returns `(mean of w_T, standard error)` for comparison with
/// the expectation recursion and its `min(w_1, 3/8)` floor.
pub fn simulate_sls_neighbourhood(
    seeds: usize,
    horizon: usize,
    schedule: &Schedule,
    w_init: f64,
) -> Result<(f64, f64), LowerBoundError> {
    if seeds < 1_000 {
        return Err(LowerBoundError::InsufficientSamples {
            got: seeds,
            need: 1_000,
        });
    }
    simulate_online_sls(&mismatched_quadratic_pair(), seeds, horizon, schedule, w_init)
}
