//! Stochastic gradient descent with factored step-sizes, the averaged-iterate
//! convex variant, and accelerated SGD in momentum and three-sequence forms,
//! all with per-checkpoint tracing.
//!
//! Randomness discipline: every run consumes two named ChaCha streams derived
//! from its seed. Update indices come only from the index stream, so all
//! methods see the same index sequence for a given seed; line-search probe
//! indices come only from the probe stream and are drawn before the update
//! index of the same iteration, which keeps the conservative search's step
//! measurable with respect to history strictly preceding the update draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linesearch::{
    armijo_backtrack, LineSearchConfig, LineSearchError, SearchMode,
};
use crate::problems::{FiniteSumProblem, ProblemError};
use crate::schedules::{exp_base, Schedule, ScheduleError};
use crate::util::{norm, norm_sq, CompensatedSum};

/// Runs abort cleanly once the iterate norm passes this radius; the
/// misestimation experiments enter the divergent regime on purpose and need
/// detection rather than infinities.
pub const DIVERGENCE_RADIUS: f64 = 1e12;

const INDEX_STREAM: u64 = 0x1;
const PROBE_STREAM: u64 = 0x2;

/// Stream of update-component indices for one run.
pub fn index_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INDEX_STREAM);
    rng
}

/// Stream of line-search probe indices for one run.
pub fn probe_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROBE_STREAM);
    rng
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        what: &'static str,
    },
    #[error("optimizer parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("line search failed at iteration {iteration}: {source}")]
    LineSearch {
        iteration: usize,
        source: LineSearchError,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// How the problem-dependent factor `gamma_k` is produced.
#[derive(Debug, Clone, Copy)]
pub enum GammaPolicy {
    /// `gamma_k = 1/L`.
    FixedInverseL { smoothness: f64 },
    /// `gamma_k = nu/L`: a deliberately misestimated fixed step.
    FixedScaled { nu: f64, smoothness: f64 },
    /// `gamma_k = 1/(rho L)`, the accelerated run's scaling.
    AcceleratedInverseRhoL { rho: f64, smoothness: f64 },
    /// Backtracking on the sampled component, restarted from `gamma_max`.
    OnlineSls(LineSearchConfig),
    /// Backtracking on a decorrelated probe component, never increasing.
    DecorrelatedConservativeSls {
        config: LineSearchConfig,
        probe: ProbeIndex,
    },
}

/// Probe component for the conservative search: the previously sampled
/// update index, or a fresh independent draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeIndex {
    Previous,
    Fresh,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Number of iterations `T`.
    pub horizon: usize,
    pub seed: u64,
    /// Checkpoint cadence; 0 records only iterations 0 and `T`.
    pub checkpoint_every: usize,
    pub batch_size: usize,
    /// Initial iterate; zero vector when absent.
    pub init: Option<Vec<f64>>,
    /// Keep the full iterate sequence in the trace (tests and small runs).
    pub record_iterates: bool,
}

impl RunOptions {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            checkpoint_every: 0,
            batch_size: 1,
            init: None,
            record_iterates: false,
        }
    }

    pub fn checkpoint_every(mut self, every: usize) -> Self {
        self.checkpoint_every = every;
        self
    }

    pub fn batch_size(mut self, batch: usize) -> Self {
        self.batch_size = batch;
        self
    }

    pub fn init(mut self, w: Vec<f64>) -> Self {
        self.init = Some(w);
        self
    }

    pub fn record_iterates(mut self) -> Self {
        self.record_iterates = true;
        self
    }

    fn initial_iterate(&self, dim: usize) -> Result<Vec<f64>, OptimError> {
        match &self.init {
            None => Ok(vec![0.0; dim]),
            Some(w) if w.len() == dim => Ok(w.clone()),
            Some(w) => Err(OptimError::ParameterDomain(format!(
                "initial iterate has dimension {}, problem has {}",
                w.len(),
                dim
            ))),
        }
    }

    /// Iterations recorded by a run with these options: 0, every
    /// `checkpoint_every`-th, and the final one.
    pub fn is_checkpoint(&self, k: usize) -> bool {
        k == 0
            || k == self.horizon
            || (self.checkpoint_every > 0 && k.is_multiple_of(self.checkpoint_every))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Component-gradient evaluations consumed by the optimizer so far;
    /// checkpoint measurements are not counted.
    pub gradient_evals: u64,
    /// Function-value evaluations consumed by line searches so far.
    pub function_evals: u64,
    /// Full gradient norm at this iterate (measurement only).
    pub grad_norm: f64,
    pub dist_sq_to_ref: Option<f64>,
    pub f_gap: Option<f64>,
    /// `gamma` used by the iteration that produced this iterate; 0 at k = 0.
    pub gamma: f64,
    /// `alpha` used by that iteration; 0 at k = 0.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Diverged { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub final_iterate: Vec<f64>,
    pub seed: u64,
    pub status: RunStatus,
    pub gradient_evals: u64,
    pub function_evals: u64,
    /// `w_0 .. w_T` when requested through [`RunOptions::record_iterates`].
    pub iterates: Option<Vec<Vec<f64>>>,
}

/// One descent step `w - gamma * alpha * g`.
pub fn sgd_step(w: &[f64], gamma: f64, alpha: f64, g: &[f64]) -> Result<Vec<f64>, OptimError> {
    if !(gamma > 0.0 && gamma.is_finite()) || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(OptimError::ParameterDomain(format!(
            "need gamma > 0 and alpha in (0, 1], got gamma={gamma}, alpha={alpha}"
        )));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::NonFinite {
            iteration: 0,
            what: "iterate",
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::NonFinite {
            iteration: 0,
            what: "gradient",
        });
    }
    Ok(w.iter()
        .zip(g)
        .map(|(wi, gi)| wi - gamma * alpha * gi)
        .collect())
}

/// Extrapolation coefficient of the accelerated update:
/// `b = (1 - r_prev) r_prev q / (r_curr + r_prev^2 q)` where `q` is the
/// step ratio `eta_k / eta_{k-1}` (equal to the base `alpha` for the
/// exponential schedule).
pub fn asgd_coeffs(r_prev: f64, r_curr: f64, step_ratio: f64) -> Result<f64, OptimError> {
    if !(r_prev > 0.0 && r_prev <= 1.0 && r_curr > 0.0 && r_curr <= 1.0) {
        return Err(OptimError::ParameterDomain(format!(
            "momentum parameters must lie in (0, 1], got r_prev={r_prev}, r_curr={r_curr}"
        )));
    }
    if !(step_ratio > 0.0 && step_ratio <= 1.0) {
        return Err(OptimError::ParameterDomain(format!(
            "step ratio must lie in (0, 1], got {step_ratio}"
        )));
    }
    let denom = r_curr + r_prev * r_prev * step_ratio;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(OptimError::NonFinite {
            iteration: 0,
            what: "extrapolation denominator",
        });
    }
    Ok((1.0 - r_prev) * r_prev * step_ratio / denom)
}

struct Tracer<'a, P: FiniteSumProblem + ?Sized> {
    problem: &'a P,
    checkpoints: Vec<Checkpoint>,
    grad_buf: Vec<f64>,
}

impl<'a, P: FiniteSumProblem + ?Sized> Tracer<'a, P> {
    fn new(problem: &'a P) -> Self {
        Self {
            problem,
            checkpoints: Vec::new(),
            grad_buf: vec![0.0; problem.dim()],
        }
    }

    fn record(
        &mut self,
        iteration: usize,
        w: &[f64],
        gradient_evals: u64,
        function_evals: u64,
        gamma: f64,
        alpha: f64,
    ) {
        self.problem.full_gradient_into(w, &mut self.grad_buf);
        let (dist_sq_to_ref, f_gap) = match self.problem.reference() {
            Some(r) => {
                let d: f64 = w
                    .iter()
                    .zip(&r.w_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (Some(d), Some(self.problem.value(w) - r.f_star))
            }
            None => (None, None),
        };
        self.checkpoints.push(Checkpoint {
            iteration,
            gradient_evals,
            function_evals,
            grad_norm: norm(&self.grad_buf),
            dist_sq_to_ref,
            f_gap,
            gamma,
            alpha,
        });
    }
}

fn diverged(w: &[f64]) -> bool {
    let n = norm_sq(w);
    !n.is_finite() || n > DIVERGENCE_RADIUS * DIVERGENCE_RADIUS
}

/// SGD (`w_{k+1} = w_k - gamma_k alpha_k grad f_{ik}(w_k)`) for `T`
/// iterations with uniformly sampled components. Iteration `k` of the run
/// evaluates the schedule at index `k` in `1..=T`. The constant-then-decay
/// schedule supplies the full step-size itself and requires a fixed policy.
pub fn run_sgd<P: FiniteSumProblem + ?Sized>(
    p: &P,
    schedule: &Schedule,
    policy: &GammaPolicy,
    opts: &RunOptions,
) -> Result<RunTrace, OptimError> {
    let n = p.num_components();
    let dim = p.dim();
    if opts.batch_size == 0 || opts.batch_size > n {
        return Err(OptimError::ParameterDomain(format!(
            "batch size {} out of range [1, {n}]",
            opts.batch_size
        )));
    }
    let uses_line_search = matches!(
        policy,
        GammaPolicy::OnlineSls(_) | GammaPolicy::DecorrelatedConservativeSls { .. }
    );
    if uses_line_search && opts.batch_size != 1 {
        return Err(OptimError::ParameterDomain(
            "line-search policies require batch size 1".into(),
        ));
    }
    if let Some(h) = schedule.horizon() {
        if opts.horizon > h {
            return Err(OptimError::ParameterDomain(format!(
                "run horizon {} exceeds schedule horizon {h}",
                opts.horizon
            )));
        }
    }
    let step_schedule = matches!(schedule, Schedule::Kr20 { .. });
    if step_schedule && uses_line_search {
        return Err(OptimError::ParameterDomain(
            "constant-then-decay schedule fixes the full step-size; use a fixed gamma policy"
                .into(),
        ));
    }
    if let GammaPolicy::OnlineSls(cfg) | GammaPolicy::DecorrelatedConservativeSls { config: cfg, .. } =
        policy
    {
        cfg.validate()
            .map_err(|source| OptimError::LineSearch { iteration: 0, source })?;
    }

    let mut w = opts.initial_iterate(dim)?;
    let mut index_rng = index_stream(opts.seed);
    let mut probe_rng = probe_stream(opts.seed);
    let mut grad = vec![0.0; dim];
    let mut grad_buf = vec![0.0; dim];
    let mut gradient_evals = 0u64;
    let mut function_evals = 0u64;
    let mut tracer = Tracer::new(p);
    tracer.record(0, &w, 0, 0, 0.0, 0.0);
    let mut iterates = opts.record_iterates.then(|| vec![w.clone()]);

    // conservative search state, carried by the run loop
    let mut prev_gamma = match policy {
        GammaPolicy::DecorrelatedConservativeSls { config, .. } => config.gamma_max,
        _ => 0.0,
    };
    let mut prev_index: Option<usize> = None;
    let mut status = RunStatus::Completed;

    for k in 1..=opts.horizon {
        let (gamma, alpha) = if step_schedule {
            (schedule.kr20_step(k)?, 1.0)
        } else {
            let alpha = schedule.alpha_at(k)?;
            let gamma = match policy {
                GammaPolicy::FixedInverseL { smoothness } => 1.0 / smoothness,
                GammaPolicy::FixedScaled { nu, smoothness } => nu / smoothness,
                GammaPolicy::AcceleratedInverseRhoL { rho, smoothness } => {
                    1.0 / (rho * smoothness)
                }
                GammaPolicy::OnlineSls(_) => f64::NAN, // resolved after the index draw
                GammaPolicy::DecorrelatedConservativeSls { config, probe } => {
                    let j = match (probe, prev_index) {
                        (ProbeIndex::Previous, Some(i)) => i,
                        _ => probe_rng.random_range(0..n),
                    };
                    let result = conservative_search(
                        p,
                        j,
                        &w,
                        prev_gamma,
                        config,
                        &mut grad_buf,
                        &mut gradient_evals,
                    )
                    .map_err(|source| OptimError::LineSearch { iteration: k, source })?;
                    function_evals += result.probes;
                    prev_gamma = result.gamma;
                    result.gamma
                }
            };
            (gamma, alpha)
        };

        let gamma = if opts.batch_size == 1 {
            let i = index_rng.random_range(0..n);
            p.component_gradient_into(i, &w, &mut grad);
            gradient_evals += 1;
            prev_index = Some(i);
            match policy {
                GammaPolicy::OnlineSls(cfg) => {
                    let result = armijo_backtrack(
                        |v| p.component_value(i, v),
                        &w,
                        &grad,
                        Some(p.component_smoothness(i)),
                        cfg.gamma_max,
                        cfg,
                    )
                    .map_err(|source| OptimError::LineSearch { iteration: k, source })?;
                    function_evals += result.probes;
                    result.gamma
                }
                _ => gamma,
            }
        } else {
            let mut idx =
                rand::seq::index::sample(&mut index_rng, n, opts.batch_size).into_vec();
            idx.sort_unstable();
            grad.fill(0.0);
            for &i in &idx {
                p.component_gradient_into(i, &w, &mut grad_buf);
                for (a, b) in grad.iter_mut().zip(&grad_buf) {
                    *a += b;
                }
            }
            let inv = 1.0 / opts.batch_size as f64;
            for x in grad.iter_mut() {
                *x *= inv;
            }
            gradient_evals += opts.batch_size as u64;
            gamma
        };

        let eta = gamma * alpha;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= eta * gi;
        }
        if let Some(hist) = iterates.as_mut() {
            hist.push(w.clone());
        }

        if diverged(&w) {
            status = RunStatus::Diverged { iteration: k };
            tracer.record(k, &w, gradient_evals, function_evals, gamma, alpha);
            break;
        }
        if opts.is_checkpoint(k) {
            tracer.record(k, &w, gradient_evals, function_evals, gamma, alpha);
        }
    }

    Ok(RunTrace {
        checkpoints: tracer.checkpoints,
        final_iterate: w,
        seed: opts.seed,
        status,
        gradient_evals,
        function_evals,
        iterates,
    })
}

fn conservative_search<P: FiniteSumProblem + ?Sized>(
    p: &P,
    probe_index: usize,
    w: &[f64],
    ceiling: f64,
    cfg: &LineSearchConfig,
    grad_buf: &mut [f64],
    gradient_evals: &mut u64,
) -> Result<crate::linesearch::LineSearchResult, LineSearchError> {
    if cfg.mode == SearchMode::Backtrack {
        p.component_gradient_into(probe_index, w, grad_buf);
        *gradient_evals += 1;
        armijo_backtrack(
            |v| p.component_value(probe_index, v),
            w,
            grad_buf,
            Some(p.component_smoothness(probe_index)),
            ceiling,
            cfg,
        )
    } else {
        // closed form needs only the smoothness constant, no evaluations
        let l = p.component_smoothness(probe_index);
        Ok(crate::linesearch::LineSearchResult {
            gamma: ceiling.min(2.0 * (1.0 - cfg.c) / l),
            probes: 0,
            satisfied: true,
        })
    }
}

/// SGD with step `eta_k = alpha_k / (2L)` that also returns the
/// `alpha`-weighted running average of the iterates `w_1..w_T`, the
/// convex-case reporting point.
pub fn run_sgd_averaged<P: FiniteSumProblem + ?Sized>(
    p: &P,
    schedule: &Schedule,
    smoothness: f64,
    opts: &RunOptions,
) -> Result<(RunTrace, Vec<f64>), OptimError> {
    if smoothness <= 0.0 {
        return Err(OptimError::ParameterDomain(format!(
            "smoothness must be positive, got {smoothness}"
        )));
    }
    let n = p.num_components();
    let dim = p.dim();
    let mut w = opts.initial_iterate(dim)?;
    let mut averaged = w.clone();
    let mut weight = CompensatedSum::default();
    let gamma = 0.5 / smoothness;
    let mut index_rng = index_stream(opts.seed);
    let mut grad = vec![0.0; dim];
    let mut gradient_evals = 0u64;
    let mut tracer = Tracer::new(p);
    tracer.record(0, &w, 0, 0, 0.0, 0.0);
    let mut iterates = opts.record_iterates.then(|| vec![w.clone()]);
    let mut status = RunStatus::Completed;
    let mut acc = vec![0.0; dim];

    for k in 1..=opts.horizon {
        let alpha = schedule.alpha_at(k)?;
        // the average weights the iterate entering iteration k
        weight.add(alpha);
        for (a, &wi) in acc.iter_mut().zip(&w) {
            *a += alpha * wi;
        }
        let i = index_rng.random_range(0..n);
        p.component_gradient_into(i, &w, &mut grad);
        gradient_evals += 1;
        let eta = gamma * alpha;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= eta * gi;
        }
        if let Some(hist) = iterates.as_mut() {
            hist.push(w.clone());
        }
        if diverged(&w) {
            status = RunStatus::Diverged { iteration: k };
            tracer.record(k, &w, gradient_evals, 0, gamma, alpha);
            break;
        }
        if opts.is_checkpoint(k) {
            tracer.record(k, &w, gradient_evals, 0, gamma, alpha);
        }
    }

    let total = weight.value();
    if total > 0.0 {
        for (a, out) in acc.iter().zip(averaged.iter_mut()) {
            *out = a / total;
        }
    }
    Ok((
        RunTrace {
            checkpoints: tracer.checkpoints,
            final_iterate: w,
            seed: opts.seed,
            status,
            gradient_evals,
            function_evals: 0,
            iterates,
        },
        averaged,
    ))
}

/// Constants of an accelerated run.
#[derive(Debug, Clone, Copy)]
pub struct AsgdParams {
    pub strong_convexity: f64,
    pub smoothness: f64,
    pub growth: f64,
    pub beta: f64,
}

impl AsgdParams {
    fn validate(&self, horizon: usize) -> Result<(f64, f64), OptimError> {
        let l = self.growth * self.smoothness;
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= l) {
            return Err(OptimError::ParameterDomain(format!(
                "need 0 < mu <= rho L, got mu={}, rho L={l}",
                self.strong_convexity
            )));
        }
        // a zero-length run never evaluates the schedule
        let alpha = if horizon == 0 {
            1.0
        } else {
            exp_base(self.beta, horizon)?
        };
        Ok((alpha, 1.0 / l))
    }
}

/// Accelerated SGD in momentum form: extrapolate, evaluate the stochastic
/// gradient at the extrapolated point, descend. `w_0 = y_0` (the first
/// extrapolation is inert: the momentum coefficient is built from
/// `r_{-1} := r_0` and `w_{-1} := w_0`). Iteration `k` of the run uses
/// `alpha_k = alpha^k` for `k` in `0..T`.
pub fn run_asgd<P: FiniteSumProblem + ?Sized>(
    p: &P,
    params: &AsgdParams,
    opts: &RunOptions,
) -> Result<RunTrace, OptimError> {
    let (alpha, gamma) = params.validate(opts.horizon)?;
    let n = p.num_components();
    let dim = p.dim();
    let r0 = (params.strong_convexity / (params.growth * params.smoothness)).sqrt();
    let t = opts.horizon as f64;
    let ln_ratio = (params.beta / t).ln();

    let mut w = opts.initial_iterate(dim)?;
    let mut w_prev = w.clone();
    let mut y = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut r_prev = r0;
    let mut index_rng = index_stream(opts.seed);
    let mut gradient_evals = 0u64;
    let mut tracer = Tracer::new(p);
    tracer.record(0, &w, 0, 0, 0.0, 0.0);
    let mut iterates = opts.record_iterates.then(|| vec![w.clone()]);
    let mut status = RunStatus::Completed;

    for k in 0..opts.horizon {
        let a_k = (k as f64 / t * ln_ratio).exp();
        let r_k = r0 * (k as f64 / (2.0 * t) * ln_ratio).exp();
        let b_k = asgd_coeffs(r_prev, r_k, alpha)?;
        for ((yj, &wj), &wp) in y.iter_mut().zip(&w).zip(&w_prev) {
            *yj = wj + b_k * (wj - wp);
        }
        let i = index_rng.random_range(0..n);
        p.component_gradient_into(i, &y, &mut grad);
        gradient_evals += 1;
        let eta = gamma * a_k;
        w_prev.copy_from_slice(&w);
        for ((wj, &yj), &gj) in w.iter_mut().zip(&y).zip(&grad) {
            *wj = yj - eta * gj;
        }
        r_prev = r_k;
        if let Some(hist) = iterates.as_mut() {
            hist.push(w.clone());
        }

        let done = k + 1;
        if diverged(&w) {
            status = RunStatus::Diverged { iteration: done };
            tracer.record(done, &w, gradient_evals, 0, gamma, a_k);
            break;
        }
        if opts.is_checkpoint(done) {
            tracer.record(done, &w, gradient_evals, 0, gamma, a_k);
        }
    }

    Ok(RunTrace {
        checkpoints: tracer.checkpoints,
        final_iterate: w,
        seed: opts.seed,
        status,
        gradient_evals,
        function_evals: 0,
        iterates,
    })
}

/// The same accelerated method in its three-sequence form (`y`, `w`, `z`
/// with weights `q_k`); with `z_0 = w_0` and `q_0 = mu` it produces the same
/// iterates as [`run_asgd`] under shared randomness, and `q_k` stays equal
/// to `mu` for every `k`.
pub fn run_asgd_reformulated<P: FiniteSumProblem + ?Sized>(
    p: &P,
    params: &AsgdParams,
    opts: &RunOptions,
) -> Result<RunTrace, OptimError> {
    let (_, gamma) = params.validate(opts.horizon)?;
    let n = p.num_components();
    let dim = p.dim();
    let mu = params.strong_convexity;
    let r0 = (mu / (params.growth * params.smoothness)).sqrt();
    let t = opts.horizon as f64;
    let ln_ratio = (params.beta / t).ln();

    let mut w = opts.initial_iterate(dim)?;
    let mut z = w.clone();
    let mut q = mu;
    let mut y = vec![0.0; dim];
    let mut w_next = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut index_rng = index_stream(opts.seed);
    let mut gradient_evals = 0u64;
    let mut tracer = Tracer::new(p);
    tracer.record(0, &w, 0, 0, 0.0, 0.0);
    let mut iterates = opts.record_iterates.then(|| vec![w.clone()]);
    let mut status = RunStatus::Completed;

    for k in 0..opts.horizon {
        let a_k = (k as f64 / t * ln_ratio).exp();
        let r_k = r0 * (k as f64 / (2.0 * t) * ln_ratio).exp();
        let eta = gamma * a_k;
        let pull = r_k * q / (q + r_k * mu);
        for ((yj, &wj), &zj) in y.iter_mut().zip(&w).zip(&z) {
            *yj = wj - pull * (wj - zj);
        }
        let i = index_rng.random_range(0..n);
        p.component_gradient_into(i, &y, &mut grad);
        gradient_evals += 1;
        for ((nj, &yj), &gj) in w_next.iter_mut().zip(&y).zip(&grad) {
            *nj = yj - eta * gj;
        }
        for ((zj, &wj), &nj) in z.iter_mut().zip(&w).zip(&w_next) {
            *zj = wj + (nj - wj) / r_k;
        }
        q = (1.0 - r_k) * q + r_k * mu;
        w.copy_from_slice(&w_next);
        if let Some(hist) = iterates.as_mut() {
            hist.push(w.clone());
        }

        let done = k + 1;
        if diverged(&w) {
            status = RunStatus::Diverged { iteration: done };
            tracer.record(done, &w, gradient_evals, 0, gamma, a_k);
            break;
        }
        if opts.is_checkpoint(done) {
            tracer.record(done, &w, gradient_evals, 0, gamma, a_k);
        }
    }

    Ok(RunTrace {
        checkpoints: tracer.checkpoints,
        final_iterate: w,
        seed: opts.seed,
        status,
        gradient_evals,
        function_evals: 0,
        iterates,
    })
}
