//! Weighted summary statistics used throughout the audit.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// A weighted mean together with the weight mass behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMean {
    pub mean: f64,
    pub total_weight: f64,
    /// `(sum w)^2 / sum w^2`
    pub n_effective: f64,
}

/// `sum w_i x_i / sum w_i`, skipping zero weights.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<WeightedMean> {
    debug_assert_eq!(values.len(), weights.len());
    let (mut sw, mut sw2, mut swx) = (0.0, 0.0, 0.0);
    for (x, w) in values.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        sw += w;
        sw2 += w * w;
        swx += w * x;
    }
    if !(sw > 0.0) {
        return Err(AuditError::Degenerate("zero total weight".into()));
    }
    Ok(WeightedMean {
        mean: swx / sw,
        total_weight: sw,
        n_effective: sw * sw / sw2,
    })
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    let sw2: f64 = weights.iter().map(|w| w * w).sum();
    if sw2 > 0.0 {
        sw * sw / sw2
    } else {
        0.0
    }
}

/// Weighted population standard deviation.
pub fn weighted_std(values: &[f64], weights: &[f64]) -> Result<f64> {
    let m = weighted_mean(values, weights)?;
    let mut ss = 0.0;
    for (x, w) in values.iter().zip(weights) {
        if *w != 0.0 {
            ss += w * (x - m.mean).powi(2);
        }
    }
    Ok((ss / m.total_weight).max(0.0).sqrt())
}

/// Weighted Pearson correlation; `None` when either variable is constant.
pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| {
        let live = v.iter().zip(w).filter(|(_, wi)| **wi != 0.0).map(|(a, _)| *a);
        let (lo, hi) = live.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
        !(hi > lo)
    };
    if constant(x) || constant(y) {
        return None;
    }
    let mx = weighted_mean(x, w).ok()?.mean;
    let my = weighted_mean(y, w).ok()?.mean;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), wi) in x.iter().zip(y).zip(w) {
        let (da, db) = (a - mx, b - my);
        sxy += wi * da * db;
        sxx += wi * da * da;
        syy += wi * db * db;
    }
    let denom = (sxx * syy).sqrt();
    if denom > 0.0 && denom.is_finite() {
        Some((sxy / denom).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Weighted quantiles with type-7 interpolation on the weighted ECDF.
///
/// Sorted values sit at plotting positions `(S_k - w_k) / (W - w_n)`, where
/// `S_k` is the cumulative weight; with equal weights this is exactly the
/// `(k-1)/(n-1)` rule of type 7.
pub fn weighted_quantiles(values: &[f64], weights: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| (*v, *w))
        .collect();
    if pairs.is_empty() {
        return Err(AuditError::Degenerate("quantiles of an empty weighted sample".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    if n == 1 {
        return Ok(vec![pairs[0].0; probs.len()]);
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let denom = total - pairs[n - 1].1;
    let mut positions = Vec::with_capacity(n);
    let mut cum = 0.0;
    for (_, w) in &pairs {
        positions.push(if denom > 0.0 { cum / denom } else { 0.0 });
        cum += w;
    }
    Ok(probs
        .iter()
        .map(|&p| {
            let p = p.clamp(0.0, 1.0);
            let k = positions.partition_point(|&u| u <= p);
            if k == 0 {
                return pairs[0].0;
            }
            if k >= n {
                return pairs[n - 1].0;
            }
            let (u0, u1) = (positions[k - 1], positions[k]);
            let (x0, x1) = (pairs[k - 1].0, pairs[k].0);
            if u1 > u0 {
                x0 + (x1 - x0) * (p - u0) / (u1 - u0)
            } else {
                x1
            }
        })
        .collect())
}

/// Linear-interpolated percentile of an already sorted sample (type 7).
pub fn sorted_percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Wilson score interval for a proportion on `n` (possibly effective) trials.
pub fn wilson_interval(p: f64, n: f64, z: f64) -> (f64, f64) {
    if !(n > 0.0) {
        return (0.0, 1.0);
    }
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).max(0.0).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean(&[4.0, 8.0], &[1.0, 1.0]).unwrap().mean, 6.0);
        assert_eq!(weighted_mean(&[4.0, 8.0], &[1.0, 0.0]).unwrap().mean, 4.0);
        assert_eq!(weighted_mean(&[4.0, 8.0], &[0.25, 0.75]).unwrap().mean, 7.0);
        let m = weighted_mean(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.n_effective, 3.0, epsilon = 1e-12);
        assert!(weighted_mean(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn equal_weight_quantiles_match_type7() {
        let v = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let w = [2.0; 6];
        for p in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
            let q = weighted_quantiles(&v, &w, &[p]).unwrap()[0];
            assert_abs_diff_eq!(q, sorted_percentile(&s, p), epsilon = 1e-12);
        }
    }

    #[test]
    fn pearson_degenerate_is_none() {
        assert!(weighted_pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0], &[1.0; 3]).is_none());
        let r = weighted_pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[1.0; 3]).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wilson_contains_point() {
        let (lo, hi) = wilson_interval(0.1, 400.0, Z95);
        assert!(lo < 0.1 && hi > 0.1);
        assert_abs_diff_eq!(lo, 0.0738, epsilon = 1e-3);
    }
}
