//! Logit-link regression on a cubic B-spline basis, fit by IRLS.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::regression::{logistic_regression, LogisticFit, LogisticOptions};
use crate::stats::{logistic, weighted_quantiles, Z95};

const DEGREE: usize = 3;

/// Clamped cubic B-spline basis on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    /// Augmented knot vector, boundary knots repeated `DEGREE + 1` times.
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// `breaks` are the distinct, increasing boundary and interior knots.
    pub fn new(breaks: &[f64]) -> Result<Self> {
        if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AuditError::Degenerate(
                "spline knots must be at least two strictly increasing values".into(),
            ));
        }
        let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
        let mut knots = vec![lo; DEGREE];
        knots.extend_from_slice(breaks);
        knots.extend(std::iter::repeat_n(hi, DEGREE));
        Ok(Self { knots })
    }

    pub fn len(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Basis values at `x`, clamped into the knot range.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let t = &self.knots;
        let (lo, hi) = self.range();
        let x = x.clamp(lo, hi);
        // knot span containing x; the right end belongs to the last span
        let last = t.len() - DEGREE - 2;
        let span = if x >= hi {
            last
        } else {
            (DEGREE..=last).rev().find(|&k| t[k] <= x).unwrap_or(DEGREE)
        };
        // de Boor's triangular scheme for the DEGREE+1 non-zero functions
        let mut n = vec![0.0; DEGREE + 1];
        n[0] = 1.0;
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        for j in 1..=DEGREE {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.len()];
        for (r, v) in n.into_iter().enumerate() {
            out[span - DEGREE + r] = v;
        }
        out
    }

    /// Second-difference penalty matrix on the coefficients.
    fn difference_penalty(&self, lambda: f64) -> DMatrix<f64> {
        let k = self.len();
        let mut d = DMatrix::zeros(k.saturating_sub(2), k);
        for i in 0..k.saturating_sub(2) {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        d.transpose() * d * lambda
    }
}

/// A fitted smooth `P(y = 1 | x)`.
#[derive(Debug, Clone)]
pub struct LogitSpline {
    pub basis: BSplineBasis,
    pub fit: LogisticFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineOptions {
    /// Number of knots, boundaries included, at weighted quantiles of x.
    pub knots: usize,
    /// Weight of the second-difference penalty.
    pub smoothing: f64,
}

impl Default for SplineOptions {
    fn default() -> Self {
        Self {
            knots: 6,
            smoothing: 1.0,
        }
    }
}

impl LogitSpline {
    /// Fit with observation weights `w`; zero-weight points are ignored.
    pub fn fit(x: &[f64], y: &[f64], w: &[f64], opts: &SplineOptions) -> Result<Self> {
        let probs: Vec<f64> = (0..opts.knots).map(|k| k as f64 / (opts.knots - 1) as f64).collect();
        let mut breaks = weighted_quantiles(x, w, &probs)?;
        breaks.dedup();
        let basis = BSplineBasis::new(&breaks)?;
        Self::fit_on(basis, x, y, w, opts, None)
    }

    /// Fit on a given basis, optionally warm-started.
    pub fn fit_on(
        basis: BSplineBasis,
        x: &[f64],
        y: &[f64],
        w: &[f64],
        opts: &SplineOptions,
        start: Option<&[f64]>,
    ) -> Result<Self> {
        let live: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
        let k = basis.len();
        let mut design = DMatrix::zeros(live.len(), k);
        for (r, &i) in live.iter().enumerate() {
            for (c, v) in basis.eval(x[i]).into_iter().enumerate() {
                design[(r, c)] = v;
            }
        }
        let ys: Vec<f64> = live.iter().map(|&i| y[i]).collect();
        let ws: Vec<f64> = live.iter().map(|&i| w[i]).collect();
        let options = LogisticOptions {
            penalty: Some(basis.difference_penalty(opts.smoothing)),
            detect_separation: false,
            start: start.map(<[f64]>::to_vec),
            // a relative gradient of 1e-8 is far below sampling noise
            tol: 1e-8,
            ..LogisticOptions::default()
        };
        let fit = logistic_regression(&design, &ys, Some(&ws), &options)?;
        Ok(Self { basis, fit })
    }

    pub fn predict(&self, x: f64) -> f64 {
        logistic(self.fit.linear_predictor(&self.basis.eval(x)))
    }

    /// Fitted rate with a pointwise 95% interval from the delta method on the
    /// logit scale.
    pub fn predict_with_ci(&self, x: f64) -> (f64, (f64, f64)) {
        let b = self.basis.eval(x);
        let eta = self.fit.linear_predictor(&b);
        let bv = nalgebra::DVector::from_vec(b);
        let var = (bv.transpose() * &self.fit.covariance * &bv)[(0, 0)].max(0.0);
        let se = var.sqrt();
        (logistic(eta), (logistic(eta - Z95 * se), logistic(eta + Z95 * se)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_a_partition_of_unity() {
        let b = BSplineBasis::new(&[0.0, 0.2, 0.5, 0.7, 1.0]).unwrap();
        assert_eq!(b.len(), 7);
        for k in 0..=50 {
            let v = b.eval(k as f64 / 50.0);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| *x >= -1e-15));
        }
        assert_eq!(b.eval(1.0)[6], 1.0);
        assert_eq!(b.eval(0.0)[0], 1.0);
    }

    #[test]
    fn flat_data_gives_a_flat_curve() {
        let x: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let y: Vec<f64> = (0..2000).map(|i| (i % 4 == 0) as u8 as f64).collect();
        let s = LogitSpline::fit(&x, &y, &vec![1.0; 2000], &SplineOptions::default()).unwrap();
        for k in 0..=10 {
            assert!((s.predict(k as f64 / 10.0) - 0.25).abs() < 0.03);
        }
    }
}
