//! Armijo backtracking on sampled components, in the online (correlated)
//! and decorrelated-conservative variants, plus a closed-form mode for
//! one-dimensional quadratics.
//!
//! The accepted step always satisfies
//! `f_i(w - gamma g) <= f_i(w) - c gamma ||g||^2` and, for an `L_i`-smooth
//! component, lies in `[min(ceiling, shrink * 2(1-c)/L_i), ceiling]`. In
//! `ExactQuadratic` mode the step is `min(ceiling, 2(1-c)/L_i)` exactly,
//! which is the value the search converges to on one-dimensional quadratics.

use thiserror::Error;

use crate::problems::FiniteSumProblem;
use crate::util::norm_sq;

#[derive(Debug, Error)]
pub enum LineSearchError {
    #[error("backtracking exhausted after {probes} probes: last gamma {last_gamma:.6e}, condition residual {residual:.6e}")]
    Exhausted {
        last_gamma: f64,
        residual: f64,
        probes: u64,
    },
    #[error("exact-quadratic mode needs the component smoothness constant")]
    MissingSmoothness,
    #[error("line-search parameter out of domain: {0}")]
    ParameterDomain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Geometric backtracking from the ceiling.
    Backtrack,
    /// Closed form `min(ceiling, 2(1-c)/L_i)`; exact on 1-d quadratics.
    ExactQuadratic,
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant; the theory default is 1/2.
    pub c: f64,
    /// Initial guess and ceiling of the online variant.
    pub gamma_max: f64,
    /// Backtracking factor.
    pub shrink: f64,
    /// 64 halvings span ~19 orders of magnitude.
    pub max_backtracks: u32,
    pub mode: SearchMode,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            gamma_max: 1.0,
            shrink: 0.5,
            max_backtracks: 64,
            mode: SearchMode::Backtrack,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<(), LineSearchError> {
        if !(0.0 < self.c && self.c < 1.0) {
            return Err(LineSearchError::ParameterDomain(format!(
                "c must lie in (0,1), got {}",
                self.c
            )));
        }
        if self.gamma_max <= 0.0 {
            return Err(LineSearchError::ParameterDomain(format!(
                "gamma_max must be positive, got {}",
                self.gamma_max
            )));
        }
        if !(0.0 < self.shrink && self.shrink < 1.0) {
            return Err(LineSearchError::ParameterDomain(format!(
                "shrink must lie in (0,1), got {}",
                self.shrink
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchResult {
    pub gamma: f64,
    /// Function-value evaluations consumed by the search.
    pub probes: u64,
    pub satisfied: bool,
}

/// Largest step on the grid `{ceiling * shrink^j, j >= 0}` satisfying the
/// sufficient-decrease condition for one component, evaluated through the
/// supplied value oracle. `g` must be that component's gradient at `w`; a
/// zero gradient returns the ceiling without probing.
pub fn armijo_backtrack<F: Fn(&[f64]) -> f64>(
    component_value: F,
    w: &[f64],
    g: &[f64],
    smoothness: Option<f64>,
    ceiling: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchResult, LineSearchError> {
    cfg.validate()?;
    if ceiling <= 0.0 {
        return Err(LineSearchError::ParameterDomain(format!(
            "ceiling must be positive, got {ceiling}"
        )));
    }
    let g_sq = norm_sq(g);
    if g_sq == 0.0 {
        return Ok(LineSearchResult {
            gamma: ceiling,
            probes: 0,
            satisfied: true,
        });
    }
    match cfg.mode {
        SearchMode::ExactQuadratic => {
            let l = smoothness.ok_or(LineSearchError::MissingSmoothness)?;
            Ok(LineSearchResult {
                gamma: ceiling.min(2.0 * (1.0 - cfg.c) / l),
                probes: 0,
                satisfied: true,
            })
        }
        SearchMode::Backtrack => {
            let f_w = component_value(w);
            let mut probes = 1u64;
            let mut trial = vec![0.0; w.len()];
            let mut gamma = ceiling;
            let mut residual = f64::INFINITY;
            for _ in 0..=cfg.max_backtracks {
                for ((t, &wi), &gi) in trial.iter_mut().zip(w).zip(g) {
                    *t = wi - gamma * gi;
                }
                let f_trial = component_value(&trial);
                probes += 1;
                if f_trial <= f_w - cfg.c * gamma * g_sq {
                    return Ok(LineSearchResult {
                        gamma,
                        probes,
                        satisfied: true,
                    });
                }
                residual = f_trial - (f_w - cfg.c * gamma * g_sq);
                gamma *= cfg.shrink;
            }
            Err(LineSearchError::Exhausted {
                last_gamma: gamma / cfg.shrink,
                residual,
                probes,
            })
        }
    }
}

/// Online step-size: a fresh search on the component whose gradient drives
/// the upcoming update, restarted from `gamma_max` every iteration. Returns
/// the search result together with the component gradient it used (the
/// caller reuses it for the update).
pub fn online_sls_gamma<P: FiniteSumProblem + ?Sized>(
    p: &P,
    index: usize,
    w: &[f64],
    cfg: &LineSearchConfig,
) -> Result<(LineSearchResult, Vec<f64>), LineSearchError> {
    let mut g = vec![0.0; p.dim()];
    p.component_gradient_into(index, w, &mut g);
    let result = armijo_backtrack(
        |v| p.component_value(index, v),
        w,
        &g,
        Some(p.component_smoothness(index)),
        cfg.gamma_max,
        cfg,
    )?;
    Ok((result, g))
}

/// Conservative step-size: a search on a probe component decorrelated from
/// the upcoming update index, starting from the previous step (never
/// increasing). With `c = 1/2` on quadratics the result stays within
/// `[min(gamma_prev, 1/L), gamma_prev]`.
pub fn decorrelated_conservative_gamma<P: FiniteSumProblem + ?Sized>(
    p: &P,
    probe_index: usize,
    w: &[f64],
    gamma_prev: f64,
    cfg: &LineSearchConfig,
) -> Result<(LineSearchResult, Vec<f64>), LineSearchError> {
    let mut g = vec![0.0; p.dim()];
    p.component_gradient_into(probe_index, w, &mut g);
    let result = armijo_backtrack(
        |v| p.component_value(probe_index, v),
        w,
        &g,
        Some(p.component_smoothness(probe_index)),
        gamma_prev,
        cfg,
    )?;
    Ok((result, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticSum;
    use approx::assert_relative_eq;

    fn pair() -> QuadraticSum {
        QuadraticSum::new_1d(&[1.0, 2.0], &[1.0, -0.5])
    }

    fn exact_cfg() -> LineSearchConfig {
        LineSearchConfig {
            mode: SearchMode::ExactQuadratic,
            ..LineSearchConfig::default()
        }
    }

    #[test]
    fn zero_gradient_returns_ceiling() {
        let cfg = LineSearchConfig::default();
        let r = armijo_backtrack(|_| 0.0, &[1.0], &[0.0], None, 0.7, &cfg).unwrap();
        assert_eq!(r.gamma, 0.7);
        assert_eq!(r.probes, 0);
        assert!(r.satisfied);
    }

    #[test]
    fn exact_mode_on_steep_component() {
        // f2(w) = 0.5 (2w + 1/2)^2 has L = 4; with c = 1/2 the exact step is 1/4
        let p = pair();
        let w = [0.3];
        let (v, g) = crate::problems::component_value_grad(&p, 1, &w).unwrap();
        let _ = v;
        let r = armijo_backtrack(
            |v| p.component_value(1, v),
            &w,
            &g,
            Some(p.component_smoothness(1)),
            1.0,
            &exact_cfg(),
        )
        .unwrap();
        assert_relative_eq!(r.gamma, 0.25, max_relative = 1e-15);
        assert_eq!(r.probes, 0);
    }

    #[test]
    fn low_ceiling_accepted_at_ceiling() {
        // L_i = 1, c = 1/2: any ceiling below 2(1-c)/L = 1 satisfies the condition
        let p = QuadraticSum::new_1d(&[1.0], &[0.0]);
        let w = [2.0];
        let (_, g) = crate::problems::component_value_grad(&p, 0, &w).unwrap();
        for cfg in [LineSearchConfig::default(), exact_cfg()] {
            let r = armijo_backtrack(
                |v| p.component_value(0, v),
                &w,
                &g,
                Some(1.0),
                0.3,
                &cfg,
            )
            .unwrap();
            assert_relative_eq!(r.gamma, 0.3, max_relative = 1e-15);
        }
    }

    #[test]
    fn accepted_step_satisfies_condition_and_bracket() {
        let p = pair();
        let cfg = LineSearchConfig {
            gamma_max: 8.0,
            ..LineSearchConfig::default()
        };
        for i in 0..2 {
            for &w0 in &[-2.0, -0.3, 0.9, 4.0] {
                let w = [w0];
                let (f_w, g) = crate::problems::component_value_grad(&p, i, &w).unwrap();
                if g[0] == 0.0 {
                    continue;
                }
                let r = armijo_backtrack(
                    |v| p.component_value(i, v),
                    &w,
                    &g,
                    None,
                    cfg.gamma_max,
                    &cfg,
                )
                .unwrap();
                let g_sq = g[0] * g[0];
                let f_trial = p.component_value(i, &[w0 - r.gamma * g[0]]);
                assert!(f_trial <= f_w - cfg.c * r.gamma * g_sq + 1e-15);
                let li = p.component_smoothness(i);
                let lower = cfg.gamma_max.min(cfg.shrink * 2.0 * (1.0 - cfg.c) / li);
                assert!(r.gamma >= lower - 1e-15 && r.gamma <= cfg.gamma_max);
            }
        }
    }

    #[test]
    fn exhaustion_reports_residual() {
        // a constant oracle never satisfies sufficient decrease
        let cfg = LineSearchConfig {
            max_backtracks: 8,
            ..LineSearchConfig::default()
        };
        let err = armijo_backtrack(|_| 5.0, &[1.0], &[1.0], None, 1.0, &cfg).unwrap_err();
        match err {
            LineSearchError::Exhausted {
                last_gamma,
                residual,
                probes,
            } => {
                assert!(last_gamma > 0.0);
                assert!(residual > 0.0);
                assert_eq!(probes, 10); // f(w) plus max_backtracks + 1 trials
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn online_gamma_on_pair() {
        let p = pair();
        let cfg = exact_cfg();
        let (r, _) = online_sls_gamma(&p, 0, &[0.2], &cfg).unwrap();
        assert_relative_eq!(r.gamma, 1.0, max_relative = 1e-15); // 2(1-c)/L_1 = 1 = gamma_max
        let (r, _) = online_sls_gamma(&p, 1, &[0.2], &cfg).unwrap();
        assert_relative_eq!(r.gamma, 0.25, max_relative = 1e-15);
    }

    #[test]
    fn conservative_sequence_is_monotone() {
        let p = pair();
        let cfg = exact_cfg();
        // probe sequence 1, 2, 1, ... keeps 1 then clamps to 1/4 for good
        let mut gamma = cfg.gamma_max;
        let mut seq = Vec::new();
        for &j in &[0usize, 1, 0, 1, 0] {
            let (r, _) = decorrelated_conservative_gamma(&p, j, &[0.4], gamma, &cfg).unwrap();
            assert!(r.gamma <= gamma + 1e-15);
            gamma = r.gamma;
            seq.push(gamma);
        }
        assert_eq!(seq, vec![1.0, 0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn conservative_keeps_low_previous_step() {
        let p = pair();
        let cfg = exact_cfg();
        let (r, _) = decorrelated_conservative_gamma(&p, 1, &[0.4], 0.1, &cfg).unwrap();
        assert_eq!(r.gamma, 0.1);
    }

    #[test]
    fn step_gap_inequality_on_random_quadratics() {
        // gamma ||grad f_i(w)||^2 <= (1/c) (f_i(w) - f_i^*)
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.2..3.0);
            let y: f64 = rng.random_range(-2.0..2.0);
            let p = QuadraticSum::new_1d(&[x], &[y]);
            let w = [rng.random_range(-3.0..3.0)];
            let (f_w, g) = crate::problems::component_value_grad(&p, 0, &w).unwrap();
            if g[0] == 0.0 {
                continue;
            }
            let cfg = LineSearchConfig {
                gamma_max: rng.random_range(0.05..4.0),
                ..LineSearchConfig::default()
            };
            let (r, _) = online_sls_gamma(&p, 0, &w, &cfg).unwrap();
            let lhs = r.gamma * g[0] * g[0];
            let rhs = (f_w - 0.0) / cfg.c;
            assert!(lhs <= rhs + 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn exact_mode_requires_smoothness() {
        let cfg = exact_cfg();
        assert!(matches!(
            armijo_backtrack(|_| 0.0, &[1.0], &[1.0], None, 1.0, &cfg),
            Err(LineSearchError::MissingSmoothness)
        ));
    }

    #[test]
    fn config_validation() {
        let bad = LineSearchConfig {
            c: 1.0,
            ..LineSearchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LineSearchConfig {
            shrink: 0.0,
            ..LineSearchConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
