//! Target return versus default rate within weighted deciles of target return.

use serde::{Deserialize, Serialize};

use super::frame::LoanFrame;
use crate::error::{AuditError, Result};
use crate::stats::{effective_sample_size, weighted_pearson, weighted_quantiles, wilson_interval, Z95};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecilePoint {
    /// 1-based decile label.
    pub decile: usize,
    pub weight: f64,
    pub n_effective: f64,
    pub mean_target_return: f64,
    pub default_rate: f64,
    pub default_ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileCurve {
    pub group: String,
    pub points: Vec<DecilePoint>,
    /// Loan-level weighted Pearson correlation of target return and default;
    /// `None` when either is constant.
    pub correlation: Option<f64>,
}

/// Weighted decile curve for one group's weights. Loans without a target
/// return are ignored.
pub fn decile_curve(frame: &LoanFrame, weights: &[f64], group: &str) -> Result<DecileCurve> {
    let mut t = Vec::new();
    let mut d = Vec::new();
    let mut w = Vec::new();
    for i in 0..frame.len() {
        if let (Some(tr), true) = (frame.target_return[i], weights[i] > 0.0) {
            t.push(tr);
            d.push(frame.defaulted[i]);
            w.push(weights[i]);
        }
    }
    let n_eff = effective_sample_size(&w);
    if w.len() < 10 || n_eff < 10.0 {
        return Err(AuditError::Degenerate(format!(
            "group {group}: {n_eff:.1} effective observations with a target return; deciles need at least 10, use coarser bins"
        )));
    }
    let probs: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let cuts = weighted_quantiles(&t, &w, &probs)?;
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0); 10];
    for i in 0..t.len() {
        let k = cuts.partition_point(|c| *c < t[i]);
        let s = &mut sums[k];
        s.0 += w[i];
        s.1 += w[i] * w[i];
        s.2 += w[i] * t[i];
        s.3 += w[i] * d[i];
    }
    let points = sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0.0)
        .map(|(k, s)| {
            let rate = s.3 / s.0;
            let n = s.0 * s.0 / s.1;
            DecilePoint {
                decile: k + 1,
                weight: s.0,
                n_effective: n,
                mean_target_return: s.2 / s.0,
                default_rate: rate,
                default_ci95: wilson_interval(rate, n, Z95),
            }
        })
        .collect();
    Ok(DecileCurve {
        group: group.to_string(),
        points,
        correlation: weighted_pearson(&t, &d, &w),
    })
}
