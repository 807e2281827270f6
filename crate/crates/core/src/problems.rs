//! Finite-sum objective oracles with exact per-component smoothness
//! constants, reference solutions, and noise measurement.
//!
//! Every problem is an average `f(w) = (1/n) sum_i f_i(w)` exposed through
//! [`FiniteSumProblem`]. Problem data is immutable after construction, so
//! oracle calls are safe from any number of threads; random-number state is
//! always owned by the caller.

use rand::Rng;
use thiserror::Error;

use crate::util::{axpy, dot, norm, norm_sq, CompensatedSum};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("component index {index} out of range for n={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch size {batch} out of range [1, {n}]")]
    BatchOutOfRange { batch: usize, n: usize },
    #[error("per-component minima unavailable for this problem")]
    ComponentMinUnavailable,
    #[error("reference solve did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    ConvergenceFailure { grad_norm: f64, iterations: usize },
    #[error("insufficient samples: {got} draws, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
}

/// Reference solution attached to a problem: minimizer, optimal value, and
/// the optimal-objective-difference noise at it.
#[derive(Debug, Clone)]
pub struct Reference {
    pub w_star: Vec<f64>,
    pub f_star: f64,
    pub sigma_sq: f64,
}

/// Oracle access to one finite-sum objective.
pub trait FiniteSumProblem: Sync {
    fn num_components(&self) -> usize;
    fn dim(&self) -> usize;
    fn component_value(&self, i: usize, w: &[f64]) -> f64;
    /// Writes the exact (closed-form) gradient of `f_i` at `w` into `out`.
    fn component_gradient_into(&self, i: usize, w: &[f64], out: &mut [f64]);
    /// Smoothness bound `L_i` of component `i`.
    fn component_smoothness(&self, i: usize) -> f64;
    /// `f_i^*` when known analytically or computable; `None` otherwise.
    fn component_min(&self, i: usize) -> Option<f64>;
    /// Strong-convexity modulus of the averaged objective.
    fn strong_convexity(&self) -> f64;
    fn reference(&self) -> Option<&Reference> {
        None
    }

    /// `L = max_i L_i`.
    fn smoothness(&self) -> f64 {
        (0..self.num_components())
            .map(|i| self.component_smoothness(i))
            .fold(0.0, f64::max)
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut s = CompensatedSum::default();
        for i in 0..self.num_components() {
            s.add(self.component_value(i, w));
        }
        s.value() / self.num_components() as f64
    }

    /// Average of the component gradients. Implementations may override with
    /// an algebraically equal faster path; the default is the plain average.
    fn full_gradient_into(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; self.dim()];
        for i in 0..self.num_components() {
            self.component_gradient_into(i, w, &mut buf);
            axpy(out, 1.0, &buf);
        }
        let inv = 1.0 / self.num_components() as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
}

/// `(f_i(w), grad f_i(w))` with argument checking.
pub fn component_value_grad<P: FiniteSumProblem + ?Sized>(
    p: &P,
    i: usize,
    w: &[f64],
) -> Result<(f64, Vec<f64>), ProblemError> {
    check_args(p, i, w)?;
    let mut g = vec![0.0; p.dim()];
    p.component_gradient_into(i, w, &mut g);
    Ok((p.component_value(i, w), g))
}

/// `(1/n) sum_i grad f_i(w)`.
pub fn full_gradient<P: FiniteSumProblem + ?Sized>(
    p: &P,
    w: &[f64],
) -> Result<Vec<f64>, ProblemError> {
    check_dim(p, w)?;
    let mut g = vec![0.0; p.dim()];
    p.full_gradient_into(w, &mut g);
    Ok(g)
}

/// Average gradient over a batch of `batch_size` indices drawn uniformly
/// without replacement; unbiased for the full gradient, and exactly equal to
/// it at `batch_size = n` (indices are accumulated in ascending order).
pub fn minibatch_gradient<P: FiniteSumProblem + ?Sized, R: Rng>(
    p: &P,
    batch_size: usize,
    rng: &mut R,
    w: &[f64],
) -> Result<Vec<f64>, ProblemError> {
    check_dim(p, w)?;
    let n = p.num_components();
    if batch_size == 0 || batch_size > n {
        return Err(ProblemError::BatchOutOfRange {
            batch: batch_size,
            n,
        });
    }
    let mut idx = rand::seq::index::sample(rng, n, batch_size).into_vec();
    idx.sort_unstable();
    let mut g = vec![0.0; p.dim()];
    let mut buf = vec![0.0; p.dim()];
    for &i in &idx {
        p.component_gradient_into(i, w, &mut buf);
        axpy(&mut g, 1.0, &buf);
    }
    let inv = 1.0 / batch_size as f64;
    for x in g.iter_mut() {
        *x *= inv;
    }
    Ok(g)
}

/// Both noise measures at the (approximate) minimizer: the optimal objective
/// difference `sigma^2 = E_i[f_i(w*) - f_i^*]` and the gradient noise
/// `z^2 = E_i ||grad f_i(w*)||^2`.
pub fn measure_noise<P: FiniteSumProblem + ?Sized>(
    p: &P,
    w_star: &[f64],
) -> Result<(f64, f64), ProblemError> {
    check_dim(p, w_star)?;
    let n = p.num_components();
    let mut sig = CompensatedSum::default();
    let mut z = CompensatedSum::default();
    let mut buf = vec![0.0; p.dim()];
    for i in 0..n {
        let fi_star = p
            .component_min(i)
            .ok_or(ProblemError::ComponentMinUnavailable)?;
        sig.add(p.component_value(i, w_star) - fi_star);
        p.component_gradient_into(i, w_star, &mut buf);
        z.add(norm_sq(&buf));
    }
    Ok((sig.value() / n as f64, z.value() / n as f64))
}

/// Deterministic full-batch gradient descent with step `1/L`, halving the
/// step whenever the objective fails to decrease, until `||grad f|| <= tol`.
pub fn solve_reference<P: FiniteSumProblem + ?Sized>(
    p: &P,
    tol: f64,
) -> Result<Vec<f64>, ProblemError> {
    const MAX_ITERS: usize = 2_000_000;
    let mut w = vec![0.0; p.dim()];
    let mut g = vec![0.0; p.dim()];
    let mut step = 1.0 / p.smoothness();
    let mut f_curr = p.value(&w);
    for it in 0..MAX_ITERS {
        p.full_gradient_into(&w, &mut g);
        let gn = norm(&g);
        if gn <= tol {
            return Ok(w);
        }
        let mut trial = w.clone();
        axpy(&mut trial, -step, &g);
        let f_trial = p.value(&trial);
        // rounding-level slack: descent with step 1/L is monotone for smooth
        // convex objectives, so only a genuine increase should halve the step
        if f_trial <= f_curr + 8.0 * f64::EPSILON * (1.0 + f_curr.abs()) {
            w = trial;
            f_curr = f_trial;
        } else {
            step *= 0.5;
            if step == 0.0 {
                return Err(ProblemError::ConvergenceFailure {
                    grad_norm: gn,
                    iterations: it,
                });
            }
        }
    }
    let gn = {
        p.full_gradient_into(&w, &mut g);
        norm(&g)
    };
    if gn <= tol {
        Ok(w)
    } else {
        Err(ProblemError::ConvergenceFailure {
            grad_norm: gn,
            iterations: MAX_ITERS,
        })
    }
}

/// Constants `(rho, sigma_growth^2)` of the second-moment growth condition
/// `E_i ||grad f_i(w)||^2 <= rho ||grad f(w)||^2 + sigma^2`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthConstants {
    pub rho: f64,
    pub sigma_sq: f64,
}

/// Estimates growth constants by taking `sigma^2 = E_i ||grad f_i(w*)||^2`
/// and maximizing `(E_i||grad f_i||^2 - sigma^2) / ||grad f||^2` over the
/// supplied sample points (clamped to `rho >= 1`).
pub fn estimate_growth_constants<P: FiniteSumProblem + ?Sized>(
    p: &P,
    w_star: &[f64],
    sample_points: &[Vec<f64>],
) -> Result<GrowthConstants, ProblemError> {
    let (_, z_sq) = measure_noise(p, w_star)?;
    let n = p.num_components();
    let mut rho = 1.0f64;
    let mut buf = vec![0.0; p.dim()];
    for w in sample_points {
        check_dim(p, w)?;
        let mut second = CompensatedSum::default();
        for i in 0..n {
            p.component_gradient_into(i, w, &mut buf);
            second.add(norm_sq(&buf));
        }
        let second = second.value() / n as f64;
        let g_sq = norm_sq(&full_gradient(p, w)?);
        if g_sq > 1e-18 {
            rho = rho.max((second - z_sq) / g_sq);
        }
    }
    Ok(GrowthConstants {
        rho,
        sigma_sq: z_sq,
    })
}

/// Outcome of the Monte-Carlo check of the mini-batch second-moment bound
/// `E_B ||grad f_B(w)||^2 <= ((rho-1)(n-B)/(nB) + 1) ||grad f(w)||^2 + ((n-B)/(nB)) sigma^2`.
#[derive(Debug, Clone, Copy)]
pub struct MinibatchReport {
    pub batch_size: usize,
    pub draws: usize,
    /// Monte-Carlo estimate of `E_B ||grad f_B(w)||^2`.
    pub estimate: f64,
    pub std_err: f64,
    pub bound: f64,
    pub rho: f64,
    pub sigma_growth_sq: f64,
    /// `estimate <= bound + 3 * std_err`
    pub holds: bool,
}

pub fn minibatch_bound_check<P: FiniteSumProblem + ?Sized, R: Rng>(
    p: &P,
    batch_size: usize,
    w: &[f64],
    draws: usize,
    rng: &mut R,
    growth: GrowthConstants,
) -> Result<MinibatchReport, ProblemError> {
    if draws < 1_000 {
        return Err(ProblemError::InsufficientSamples {
            got: draws,
            need: 1_000,
        });
    }
    check_dim(p, w)?;
    let n = p.num_components();
    let mut sum = CompensatedSum::default();
    let mut sum_sq = CompensatedSum::default();
    for _ in 0..draws {
        let v = norm_sq(&minibatch_gradient(p, batch_size, rng, w)?);
        sum.add(v);
        sum_sq.add(v * v);
    }
    let mean = sum.value() / draws as f64;
    let var = (sum_sq.value() / draws as f64 - mean * mean).max(0.0);
    let std_err = (var / draws as f64).sqrt();
    let fg_sq = norm_sq(&full_gradient(p, w)?);
    let fpc = (n - batch_size) as f64 / (n as f64 * batch_size as f64);
    let bound = ((growth.rho - 1.0) * fpc + 1.0) * fg_sq + fpc * growth.sigma_sq;
    // the ulp allowance covers the zero-variance full-batch case, where the
    // averaged estimate can round one ulp past the bound
    let slack = 3.0 * std_err + 4.0 * f64::EPSILON * bound.abs();
    Ok(MinibatchReport {
        batch_size,
        draws,
        estimate: mean,
        std_err,
        bound,
        rho: growth.rho,
        sigma_growth_sq: growth.sigma_sq,
        holds: mean <= bound + slack,
    })
}

/// Outcome of the Monte-Carlo check of the mini-batch noise bound
/// `sigma_B^2 = E_B[f_B(w*) - f_B^*] <= (L/mu) ((n-B)/(nB)) sigma^2`,
/// where `mu` is a strong-convexity modulus shared by every component.
#[derive(Debug, Clone, Copy)]
pub struct MinibatchNoiseReport {
    pub batch_size: usize,
    pub draws: usize,
    /// Monte-Carlo estimate of `sigma_B^2`.
    pub estimate: f64,
    pub std_err: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks the mini-batch noise bound on a one-dimensional quadratic sum,
/// where batch minima have closed form. The component modulus is the
/// smallest component curvature.
pub fn minibatch_noise_check<R: Rng>(
    p: &QuadraticSum,
    batch_size: usize,
    draws: usize,
    rng: &mut R,
) -> Result<MinibatchNoiseReport, ProblemError> {
    if p.dim() != 1 {
        return Err(ProblemError::ComponentMinUnavailable);
    }
    if draws < 1_000 {
        return Err(ProblemError::InsufficientSamples {
            got: draws,
            need: 1_000,
        });
    }
    let n = p.num_components();
    if batch_size == 0 || batch_size > n {
        return Err(ProblemError::BatchOutOfRange {
            batch: batch_size,
            n,
        });
    }
    let w_star = match p.reference() {
        Some(r) => r.w_star[0],
        None => solve_reference(p, 1e-12)?[0],
    };
    let (sigma_sq, _) = measure_noise(p, &[w_star])?;
    let smoothness = p.smoothness();
    let mu_component = (0..n)
        .map(|i| p.component_smoothness(i))
        .fold(f64::INFINITY, f64::min);
    let mut sum = CompensatedSum::default();
    let mut sum_sq = CompensatedSum::default();
    for _ in 0..draws {
        let idx = rand::seq::index::sample(rng, n, batch_size).into_vec();
        let mut xy = 0.0;
        let mut xx = 0.0;
        for &i in &idx {
            let c = &p.components()[i];
            xy += c.coeffs[0] * c.target;
            xx += c.coeffs[0] * c.coeffs[0];
        }
        let w_batch = xy / xx;
        let mut gap = 0.0;
        for &i in &idx {
            let c = &p.components()[i];
            let at_star = c.coeffs[0] * w_star - c.target;
            let at_batch = c.coeffs[0] * w_batch - c.target;
            gap += 0.5 * (at_star * at_star - at_batch * at_batch);
        }
        let v = gap / batch_size as f64;
        sum.add(v);
        sum_sq.add(v * v);
    }
    let mean = sum.value() / draws as f64;
    let var = (sum_sq.value() / draws as f64 - mean * mean).max(0.0);
    let std_err = (var / draws as f64).sqrt();
    let fpc = (n - batch_size) as f64 / (n as f64 * batch_size as f64);
    let bound = smoothness / mu_component * fpc * sigma_sq;
    let slack = 3.0 * std_err + 4.0 * f64::EPSILON * (1.0 + bound.abs());
    Ok(MinibatchNoiseReport {
        batch_size,
        draws,
        estimate: mean,
        std_err,
        bound,
        holds: mean <= bound + slack,
    })
}

fn check_args<P: FiniteSumProblem + ?Sized>(p: &P, i: usize, w: &[f64]) -> Result<(), ProblemError> {
    if i >= p.num_components() {
        return Err(ProblemError::IndexOutOfRange {
            index: i,
            n: p.num_components(),
        });
    }
    check_dim(p, w)
}

fn check_dim<P: FiniteSumProblem + ?Sized>(p: &P, w: &[f64]) -> Result<(), ProblemError> {
    if w.len() != p.dim() {
        return Err(ProblemError::DimensionMismatch {
            expected: p.dim(),
            got: w.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Concrete problems
// ---------------------------------------------------------------------------

/// One rank-one quadratic `f(w) = 1/2 (<x, w> - y)^2`; `L = ||x||^2` exactly
/// and the minimum value 0 is attained on the hyperplane `<x, w> = y`.
#[derive(Debug, Clone)]
pub struct QuadraticComponent {
    pub coeffs: Vec<f64>,
    pub target: f64,
}

impl QuadraticComponent {
    pub fn new(coeffs: Vec<f64>, target: f64) -> Self {
        Self { coeffs, target }
    }

    pub fn smoothness(&self) -> f64 {
        norm_sq(&self.coeffs)
    }

    fn residual(&self, w: &[f64]) -> f64 {
        dot(&self.coeffs, w) - self.target
    }
}

/// Average of rank-one quadratics.
#[derive(Debug, Clone)]
pub struct QuadraticSum {
    components: Vec<QuadraticComponent>,
    dim: usize,
    mu: f64,
    reference: Option<Reference>,
}

impl QuadraticSum {
    /// Multi-dimensional sum; the strong-convexity modulus of the average is
    /// supplied by the caller (constructions used in tests know it exactly).
    pub fn new(components: Vec<QuadraticComponent>, mu: f64) -> Self {
        assert!(!components.is_empty());
        let dim = components[0].coeffs.len();
        assert!(components.iter().all(|c| c.coeffs.len() == dim));
        Self {
            components,
            dim,
            mu,
            reference: None,
        }
    }

    /// One-dimensional sum `f_i(w) = 1/2 (x_i w - y_i)^2`; here the modulus
    /// is the mean curvature `mean(x_i^2)` and the minimizer has closed form.
    pub fn new_1d(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty());
        let components: Vec<_> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| QuadraticComponent::new(vec![x], y))
            .collect();
        let mu = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let w_star = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>()
            / xs.iter().map(|x| x * x).sum::<f64>();
        let mut p = Self {
            components,
            dim: 1,
            mu,
            reference: None,
        };
        let f_star = p.value(&[w_star]);
        let (sigma_sq, _) = measure_noise(&p, &[w_star]).expect("1d quadratics have closed minima");
        p.reference = Some(Reference {
            w_star: vec![w_star],
            f_star,
            sigma_sq,
        });
        p
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn components(&self) -> &[QuadraticComponent] {
        &self.components
    }
}

impl FiniteSumProblem for QuadraticSum {
    fn num_components(&self) -> usize {
        self.components.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        let r = self.components[i].residual(w);
        0.5 * r * r
    }

    fn component_gradient_into(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let c = &self.components[i];
        let r = c.residual(w);
        for (o, &x) in out.iter_mut().zip(&c.coeffs) {
            *o = r * x;
        }
    }

    fn component_smoothness(&self, i: usize) -> f64 {
        self.components[i].smoothness()
    }

    fn component_min(&self, _i: usize) -> Option<f64> {
        Some(0.0)
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }
}

/// A single separable quadratic `f(w) = 1/2 sum_j c_j (w_j - b_j)^2`
/// presented as a one-component finite sum; useful as a deterministic
/// strongly-convex instance with a prescribed spectrum.
#[derive(Debug, Clone)]
pub struct SeparableQuadratic {
    curvatures: Vec<f64>,
    targets: Vec<f64>,
    reference: Reference,
}

impl SeparableQuadratic {
    pub fn new(curvatures: Vec<f64>, targets: Vec<f64>) -> Self {
        assert_eq!(curvatures.len(), targets.len());
        assert!(curvatures.iter().all(|&c| c > 0.0));
        let reference = Reference {
            w_star: targets.clone(),
            f_star: 0.0,
            sigma_sq: 0.0,
        };
        Self {
            curvatures,
            targets,
            reference,
        }
    }
}

impl FiniteSumProblem for SeparableQuadratic {
    fn num_components(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.curvatures.len()
    }

    fn component_value(&self, _i: usize, w: &[f64]) -> f64 {
        0.5 * self
            .curvatures
            .iter()
            .zip(w.iter().zip(&self.targets))
            .map(|(c, (wi, bi))| c * (wi - bi) * (wi - bi))
            .sum::<f64>()
    }

    fn component_gradient_into(&self, _i: usize, w: &[f64], out: &mut [f64]) {
        for ((o, c), (wi, bi)) in out
            .iter_mut()
            .zip(&self.curvatures)
            .zip(w.iter().zip(&self.targets))
        {
            *o = c * (wi - bi);
        }
    }

    fn component_smoothness(&self, _i: usize) -> f64 {
        self.curvatures.iter().fold(0.0, |a, &c| a.max(c))
    }

    fn component_min(&self, _i: usize) -> Option<f64> {
        Some(0.0)
    }

    fn strong_convexity(&self) -> f64 {
        self.curvatures.iter().fold(f64::INFINITY, |a, &c| a.min(c))
    }

    fn reference(&self) -> Option<&Reference> {
        Some(&self.reference)
    }
}

/// Loss of a linear model component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Squared,
    Logistic,
}

/// Sparse feature vector as parallel `(index, value)` arrays, 0-based.
#[derive(Debug, Clone, Default)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v * w[i as usize])
            .sum()
    }

    /// out += scale * row
    pub fn add_scaled_into(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += scale * v;
        }
    }
}

/// L2-regularized linear model over sparse rows:
/// `f_i(w) = loss(<x_i, w>, y_i) + (lambda/2) ||w||^2`.
#[derive(Debug, Clone)]
pub struct LinearModelProblem {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    loss: Loss,
    lambda: f64,
    dim: usize,
    reference: Option<Reference>,
}

impl LinearModelProblem {
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, loss: Loss, lambda: f64, dim: usize) -> Self {
        assert_eq!(rows.len(), labels.len());
        assert!(!rows.is_empty());
        assert!(lambda >= 0.0);
        if loss == Loss::Logistic {
            assert!(labels.iter().all(|&y| y == 1.0 || y == -1.0));
        }
        Self {
            rows,
            labels,
            loss,
            lambda,
            dim,
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// d loss / d margin for one row at inner product `z`.
    fn loss_grad_scalar(&self, i: usize, z: f64) -> f64 {
        match self.loss {
            Loss::Squared => z - self.labels[i],
            // -y * sigmoid(-y z), computed through exp(y z) for stability
            Loss::Logistic => {
                let y = self.labels[i];
                -y / (1.0 + (y * z).exp())
            }
        }
    }

    fn loss_value_scalar(&self, i: usize, z: f64) -> f64 {
        match self.loss {
            Loss::Squared => {
                let r = z - self.labels[i];
                0.5 * r * r
            }
            Loss::Logistic => {
                // ln(1 + exp(-y z)) = max(-yz, 0) + ln(1 + exp(-|yz|))
                let m = -self.labels[i] * z;
                m.max(0.0) + (-m.abs()).exp().ln_1p()
            }
        }
    }
}

impl FiniteSumProblem for LinearModelProblem {
    fn num_components(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_value(&self, i: usize, w: &[f64]) -> f64 {
        let z = self.rows[i].dot(w);
        self.loss_value_scalar(i, z) + 0.5 * self.lambda * norm_sq(w)
    }

    fn component_gradient_into(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let z = self.rows[i].dot(w);
        let s = self.loss_grad_scalar(i, z);
        for (o, &wj) in out.iter_mut().zip(w) {
            *o = self.lambda * wj;
        }
        self.rows[i].add_scaled_into(s, out);
    }

    fn component_smoothness(&self, i: usize) -> f64 {
        let row_sq = self.rows[i].norm_sq();
        match self.loss {
            Loss::Squared => row_sq + self.lambda,
            Loss::Logistic => 0.25 * row_sq + self.lambda,
        }
    }

    /// For `lambda > 0` the component minimizer lies in the span of its row;
    /// squared loss has a closed form and logistic loss is solved by
    /// bisection on the directional derivative.
    fn component_min(&self, i: usize) -> Option<f64> {
        let row_sq = self.rows[i].norm_sq();
        if row_sq == 0.0 {
            return Some(self.loss_value_scalar(i, 0.0));
        }
        match self.loss {
            Loss::Squared => {
                let y = self.labels[i];
                if self.lambda == 0.0 {
                    Some(0.0)
                } else {
                    Some(self.lambda * y * y / (2.0 * (row_sq + self.lambda)))
                }
            }
            Loss::Logistic => {
                if self.lambda == 0.0 {
                    // infimum as the margin grows; not attained
                    return Some(0.0);
                }
                let y = self.labels[i];
                // minimize phi(t) = ln(1+exp(-y t r2)) + (lambda/2) t^2 r2 over w = t x_i
                let phi = |t: f64| {
                    let m = -y * t * row_sq;
                    m.max(0.0) + (-m.abs()).exp().ln_1p() + 0.5 * self.lambda * t * t * row_sq
                };
                let dphi =
                    |t: f64| row_sq * (self.lambda * t - y / (1.0 + (y * t * row_sq).exp()));
                let (mut lo, mut hi) = if y > 0.0 {
                    (0.0, 1.0 / self.lambda)
                } else {
                    (-1.0 / self.lambda, 0.0)
                };
                for _ in 0..200 {
                    if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if dphi(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(phi(0.5 * (lo + hi)))
            }
        }
    }

    fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    /// Accumulates the loss part once per row and the regularizer once,
    /// instead of adding `lambda w` per component.
    fn full_gradient_into(&self, w: &[f64], out: &mut [f64]) {
        for (o, &wj) in out.iter_mut().zip(w) {
            *o = self.lambda * wj;
        }
        let inv = 1.0 / self.rows.len() as f64;
        for i in 0..self.rows.len() {
            let z = self.rows[i].dot(w);
            let s = self.loss_grad_scalar(i, z) * inv;
            self.rows[i].add_scaled_into(s, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> QuadraticSum {
        // two 1-d quadratics with unequal curvature, minimizer of the sum at 0
        QuadraticSum::new_1d(&[1.0, 2.0], &[1.0, -0.5])
    }

    #[test]
    fn component_values_closed_form() {
        let p = pair();
        let (v, g) = component_value_grad(&p, 0, &[0.0]).unwrap();
        assert_eq!((v, g[0]), (0.5, -1.0));
        let (v, g) = component_value_grad(&p, 1, &[0.0]).unwrap();
        assert_eq!((v, g[0]), (0.125, 1.0));
        // at a component's own minimizer the gradient vanishes
        let (v, g) = component_value_grad(&p, 0, &[1.0]).unwrap();
        assert_eq!((v, g[0]), (0.0, 0.0));
    }

    #[test]
    fn component_index_checked() {
        let p = pair();
        assert!(matches!(
            component_value_grad(&p, 2, &[0.0]),
            Err(ProblemError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            component_value_grad(&p, 0, &[0.0, 1.0]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn full_gradient_of_pair() {
        let p = pair();
        assert_eq!(full_gradient(&p, &[0.0]).unwrap()[0], 0.0);
        // f(w) = (5/4) w^2 + 5/16, so f'(1) = 5/2
        assert_relative_eq!(full_gradient(&p, &[1.0]).unwrap()[0], 2.5, max_relative = 1e-15);
        let single = QuadraticSum::new_1d(&[2.0], &[3.0]);
        assert_eq!(full_gradient(&single, &[1.5]).unwrap()[0], 0.0);
    }

    #[test]
    fn pair_reference_and_noise() {
        let p = pair();
        let r = p.reference().unwrap();
        assert_relative_eq!(r.w_star[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.f_star, 5.0 / 16.0, max_relative = 1e-15);
        let (sigma_sq, z_sq) = measure_noise(&p, &[0.0]).unwrap();
        assert_relative_eq!(sigma_sq, 5.0 / 16.0, max_relative = 1e-15);
        assert_relative_eq!(z_sq, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn interpolation_has_zero_noise() {
        let p = QuadraticSum::new_1d(&[1.0, 2.0, 0.5], &[2.0, 4.0, 1.0]); // shared minimizer 2
        let (sigma_sq, z_sq) = measure_noise(&p, &[2.0]).unwrap();
        assert!(sigma_sq.abs() < 1e-28);
        assert!(z_sq.abs() < 1e-28);
    }

    #[test]
    fn minibatch_full_batch_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = QuadraticSum::new_1d(&[1.0, 2.0, 0.7, 1.3], &[0.3, -1.0, 2.0, 0.0]);
        let w = [0.37];
        let full = full_gradient(&p, &w).unwrap();
        let batch = minibatch_gradient(&p, 4, &mut rng, &w).unwrap();
        assert_eq!(full, batch);
    }

    #[test]
    fn minibatch_batch_size_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = pair();
        assert!(matches!(
            minibatch_gradient(&p, 0, &mut rng, &[0.0]),
            Err(ProblemError::BatchOutOfRange { .. })
        ));
        assert!(matches!(
            minibatch_gradient(&p, 3, &mut rng, &[0.0]),
            Err(ProblemError::BatchOutOfRange { .. })
        ));
    }

    #[test]
    fn minibatch_single_draw_is_one_component_gradient() {
        let p = QuadraticSum::new_1d(&[1.0, 2.0, 0.7], &[0.3, -1.0, 2.0]);
        let w = [0.9];
        let singles: Vec<f64> = (0..3)
            .map(|i| component_value_grad(&p, i, &w).unwrap().1[0])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let g = minibatch_gradient(&p, 1, &mut rng, &w).unwrap()[0];
            assert!(singles.contains(&g), "draw {g} is not a component gradient");
        }
    }

    #[test]
    fn minibatch_bound_exhaustive_two_outcomes() {
        // B = 1 on the two-component mismatched pair at w = 1: the
        // expectation is an exhaustive two-outcome average, no sampling
        let p = QuadraticSum::new_1d(&[1.0, 2.0], &[1.0, -0.5]);
        let w = [1.0];
        let exhaustive = (0..2)
            .map(|i| {
                let (_, g) = component_value_grad(&p, i, &w).unwrap();
                norm_sq(&g)
            })
            .sum::<f64>()
            / 2.0;
        assert_relative_eq!(exhaustive, 12.5, max_relative = 1e-15);
        let w_star = p.reference().unwrap().w_star.clone();
        let points: Vec<Vec<f64>> = (-40..=40)
            .map(|k| vec![w_star[0] + k as f64 * 0.125])
            .collect();
        let growth = estimate_growth_constants(&p, &w_star, &points).unwrap();
        let fg_sq = norm_sq(&full_gradient(&p, &w).unwrap());
        let fpc = 0.5; // (n - B) / (n B) with n = 2, B = 1
        let bound = ((growth.rho - 1.0) * fpc + 1.0) * fg_sq + fpc * growth.sigma_sq;
        assert!(
            exhaustive <= bound,
            "exhaustive {exhaustive} exceeds bound {bound} (rho {}, sigma^2 {})",
            growth.rho,
            growth.sigma_sq
        );
        // the Monte-Carlo path agrees
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rep = minibatch_bound_check(&p, 1, &w, 50_000, &mut rng, growth).unwrap();
        assert!(rep.holds);
        assert!((rep.estimate - exhaustive).abs() <= 3.0 * rep.std_err);
    }

    #[test]
    fn minibatch_is_unbiased() {
        let p = QuadraticSum::new_1d(&[1.0, 2.0, 0.7, 1.3], &[0.3, -1.0, 2.0, 0.0]);
        let w = [1.1];
        let full = full_gradient(&p, &w).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let g = minibatch_gradient(&p, 2, &mut rng, &w).unwrap()[0];
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!(
            (mean - full).abs() <= 3.0 * se,
            "mean {mean} vs full {full} (se {se})"
        );
    }

    #[test]
    fn minibatch_is_unbiased_componentwise() {
        let rows = vec![
            SparseRow {
                indices: vec![0, 1],
                values: vec![1.0, -0.5],
            },
            SparseRow {
                indices: vec![1, 2],
                values: vec![2.0, 0.3],
            },
            SparseRow {
                indices: vec![0, 2],
                values: vec![-1.5, 0.8],
            },
            SparseRow {
                indices: vec![2],
                values: vec![1.1],
            },
        ];
        let p = LinearModelProblem::new(rows, vec![1.0, -1.0, 1.0, -1.0], Loss::Logistic, 0.05, 3);
        let w = vec![0.4, -0.2, 0.9];
        let full = full_gradient(&p, &w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000;
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..draws {
            let g = minibatch_gradient(&p, 2, &mut rng, &w).unwrap();
            for j in 0..3 {
                sum[j] += g[j];
                sum_sq[j] += g[j] * g[j];
            }
        }
        for j in 0..3 {
            let mean = sum[j] / draws as f64;
            let se = ((sum_sq[j] / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!(
                (mean - full[j]).abs() <= 3.0 * se,
                "coordinate {j}: mean {mean} vs full {} (se {se})",
                full[j]
            );
        }
    }

    #[test]
    fn solve_reference_single_quadratic() {
        let p = QuadraticSum::new_1d(&[2.0], &[3.0]);
        let w = solve_reference(&p, 1e-10).unwrap();
        assert_relative_eq!(w[0], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn solve_reference_pair() {
        let w = solve_reference(&pair(), 1e-12).unwrap();
        assert!(w[0].abs() < 1e-11);
    }

    #[test]
    fn solve_reference_logistic() {
        // 20 x 5 synthetic regularized logistic data
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<SparseRow> = (0..20)
            .map(|_| SparseRow {
                indices: (0..5).collect(),
                values: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let labels: Vec<f64> = (0..20)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let p = LinearModelProblem::new(rows, labels, Loss::Logistic, 0.1, 5);
        let w = solve_reference(&p, 1e-9).unwrap();
        assert!(norm(&full_gradient(&p, &w).unwrap()) <= 1e-9);
    }

    #[test]
    fn linear_model_smoothness_bounds() {
        let rows = vec![
            SparseRow {
                indices: vec![0],
                values: vec![2.0],
            },
            SparseRow {
                indices: vec![0, 1],
                values: vec![1.0, 0.0],
            },
        ];
        let sq =
            LinearModelProblem::new(rows.clone(), vec![1.0, -1.0], Loss::Squared, 0.01, 2);
        assert_relative_eq!(sq.component_smoothness(0), 4.01, max_relative = 1e-15);
        let lg = LinearModelProblem::new(rows, vec![1.0, -1.0], Loss::Logistic, 0.01, 2);
        assert_relative_eq!(lg.component_smoothness(0), 1.01, max_relative = 1e-15);
        assert_eq!(lg.strong_convexity(), 0.01);
    }

    #[test]
    fn component_min_squared_closed_form() {
        let rows = vec![SparseRow {
            indices: vec![0],
            values: vec![2.0],
        }];
        let p = LinearModelProblem::new(rows, vec![3.0], Loss::Squared, 0.5, 1);
        // lambda y^2 / (2 (||x||^2 + lambda)) = 0.5*9 / (2*4.5) = 0.5
        assert_relative_eq!(p.component_min(0).unwrap(), 0.5, max_relative = 1e-14);
        // cross-check by minimizing numerically over the 1-d parameter
        let mut best = f64::INFINITY;
        for k in -4000..4000 {
            let w = [k as f64 * 1e-3];
            best = best.min(p.component_value(0, &w));
        }
        assert!((best - 0.5).abs() < 1e-5);
    }

    #[test]
    fn component_min_logistic_bisection() {
        let rows = vec![SparseRow {
            indices: vec![0, 2],
            values: vec![1.0, -2.0],
        }];
        let p = LinearModelProblem::new(rows, vec![-1.0], Loss::Logistic, 0.2, 3);
        let m = p.component_min(0).unwrap();
        // grid cross-check along the span direction
        let mut best = f64::INFINITY;
        for k in -20000..20000 {
            let t = k as f64 * 1e-3;
            let w = [t, 0.0, -2.0 * t];
            best = best.min(p.component_value(0, &w));
        }
        assert!((m - best).abs() < 1e-6, "bisection {m} vs grid {best}");
        assert!(m >= 0.0);
    }

    #[test]
    fn optimized_full_gradient_matches_average() {
        let rows = vec![
            SparseRow {
                indices: vec![0, 3],
                values: vec![1.0, 2.0],
            },
            SparseRow {
                indices: vec![1],
                values: vec![-1.5],
            },
            SparseRow {
                indices: vec![2, 3],
                values: vec![0.3, 0.4],
            },
        ];
        let p = LinearModelProblem::new(rows, vec![1.0, -1.0, 1.0], Loss::Logistic, 0.05, 4);
        let w = vec![0.2, -0.4, 1.0, 0.7];
        let fast = full_gradient(&p, &w).unwrap();
        let mut slow = vec![0.0; 4];
        let mut buf = vec![0.0; 4];
        for i in 0..3 {
            p.component_gradient_into(i, &w, &mut buf);
            axpy(&mut slow, 1.0 / 3.0, &buf);
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert_relative_eq!(a, b, max_relative = 1e-13, epsilon = 1e-15);
        }
    }

    #[test]
    fn growth_constants_and_minibatch_bound() {
        let p = QuadraticSum::new_1d(&[1.0, 0.8, 1.4, 0.6], &[0.5, -0.2, 1.0, 0.1]);
        let w_star = p.reference().unwrap().w_star.clone();
        let points: Vec<Vec<f64>> = (-20..=20).map(|k| vec![w_star[0] + k as f64 * 0.25]).collect();
        let growth = estimate_growth_constants(&p, &w_star, &points).unwrap();
        assert!(growth.rho >= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in [1, 2, 4] {
            let rep = minibatch_bound_check(&p, b, &[1.3], 20_000, &mut rng, growth).unwrap();
            assert!(rep.holds, "batch {b}: {rep:?}");
        }
        // full batch: zero variance and exact equality with the full gradient
        let rep = minibatch_bound_check(&p, 4, &[1.3], 1_000, &mut rng, growth).unwrap();
        assert_eq!(rep.std_err, 0.0);
        assert!(rep.holds);
        assert!(rep.estimate <= rep.bound);
    }

    #[test]
    fn minibatch_noise_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..6).map(|_| rng.random_range(0.6..1.8)).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p = QuadraticSum::new_1d(&xs, &ys);
        for b in [1usize, 2, 3, 6] {
            let rep = minibatch_noise_check(&p, b, 20_000, &mut rng).unwrap();
            assert!(rep.holds, "batch {b}: {rep:?}");
            assert!(rep.estimate >= -1e-12);
        }
        // full batch: both sides vanish
        let rep = minibatch_noise_check(&p, 6, 1_000, &mut rng).unwrap();
        assert!(rep.estimate.abs() < 1e-12);
        assert_eq!(rep.bound, 0.0);
        assert!(rep.holds);
        // interpolation: sigma = 0 makes every batch gap zero
        let interp = QuadraticSum::new_1d(&[1.0, 2.0, 0.5], &[2.0, 4.0, 1.0]);
        let rep = minibatch_noise_check(&interp, 2, 1_000, &mut rng).unwrap();
        assert!(rep.estimate.abs() < 1e-20);
        assert!(rep.holds);
    }

    #[test]
    fn minibatch_check_requires_enough_draws() {
        let p = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let growth = GrowthConstants {
            rho: 2.0,
            sigma_sq: 1.0,
        };
        assert!(matches!(
            minibatch_bound_check(&p, 1, &[0.0], 999, &mut rng, growth),
            Err(ProblemError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn separable_quadratic_oracles() {
        let p = SeparableQuadratic::new(vec![0.5, 2.0], vec![1.0, -1.0]);
        assert_eq!(p.smoothness(), 2.0);
        assert_eq!(p.strong_convexity(), 0.5);
        assert_eq!(p.value(&[1.0, -1.0]), 0.0);
        let g = full_gradient(&p, &[2.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.5, 2.0]);
    }
}
