//! Small vector and summation helpers shared across modules.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

/// w += scale * g
pub(crate) fn axpy(w: &mut [f64], scale: f64, g: &[f64]) {
    debug_assert_eq!(w.len(), g.len());
    for (wi, gi) in w.iter_mut().zip(g) {
        *wi += scale * gi;
    }
}

/// Neumaier-compensated running sum; keeps long partial sums accurate to a
/// few ulps so property tests can use tight relative tolerances.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    correction: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.correction += (self.sum - t) + x;
        } else {
            self.correction += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_accumulation() {
        let mut c = CompensatedSum::default();
        let mut naive = 0.0f64;
        for _ in 0..10_000_000u64 {
            c.add(0.001);
            naive += 0.001;
        }
        let exact = 10_000.0;
        assert!((c.value() - exact).abs() <= (naive - exact).abs());
        assert!((c.value() - exact).abs() / exact < 1e-15);
    }

    #[test]
    fn axpy_and_dot() {
        let mut w = vec![1.0, 2.0];
        axpy(&mut w, -0.5, &[2.0, 4.0]);
        assert_eq!(w, vec![0.0, 0.0]);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
    }
}
