//! Per-group calibration of risk scores and default rates along APR.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::spline::{LogitSpline, SplineOptions};
use super::RiskScores;
use crate::bootstrap::{bootstrap_many, BootstrapConfig};
use crate::data::{DemographicWeights, LoanRecord};
use crate::demography::{Axis, GroupScheme, WeightTable};
use crate::error::{AuditError, Result};
use crate::stats::{effective_sample_size, weighted_quantiles, wilson_interval, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub n_bins: usize,
    /// Effective observations required per bin.
    pub min_per_bin: f64,
    pub spline: SplineOptions,
    pub grid_points: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_bins: 10,
            min_per_bin: 20.0,
            spline: SplineOptions::default(),
            grid_points: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    /// 1-based.
    pub bin: usize,
    pub pred_mean: f64,
    pub obs_rate: f64,
    pub ci95: (f64, f64),
    pub weight: f64,
    pub n_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub rate: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub group: String,
    pub points: Vec<CalibrationBin>,
    pub smoothed: Vec<CurvePoint>,
}

/// Predictions, outcomes and weights of the loans with positive group weight.
struct GroupSample {
    pred: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn group_sample(
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    group: &str,
    value: impl Fn(&LoanRecord) -> Result<f64>,
) -> Result<GroupSample> {
    let g = axis.group_index(group)?;
    let table = WeightTable::build(loans.iter().map(|l| l.loan_id.as_str()), demographics, scheme, axis)?;
    let mut s = GroupSample {
        pred: Vec::new(),
        y: Vec::new(),
        w: Vec::new(),
    };
    for (i, l) in loans.iter().enumerate() {
        let w = table.weight(i, g);
        if w > 0.0 {
            s.pred.push(value(l)?);
            s.y.push(l.defaulted as u8 as f64);
            s.w.push(w);
        }
    }
    Ok(s)
}

fn require_effective(s: &GroupSample, group: &str, required: f64) -> Result<f64> {
    let n = effective_sample_size(&s.w);
    if n < required {
        return Err(AuditError::Degenerate(format!(
            "group {group} has {n:.1} effective observations; at least {required:.0} are required"
        )));
    }
    Ok(n)
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

fn weighted_rate(y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let rate = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    (rate, effective_sample_size(w))
}

/// Binned and smoothed calibration of `scores` against realized defaults
/// for one group. Bins hold equal weight; tied scores never straddle a bin
/// edge, so identical predictions collapse into a single bin.
#[allow(clippy::too_many_arguments)]
pub fn calibration_curve(
    scores: &RiskScores,
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    group: &str,
    opts: &CalibrationOptions,
) -> Result<CalibrationCurve> {
    let s = group_sample(loans, demographics, scheme, axis, group, |l| scores.get(&l.loan_id))?;
    require_effective(&s, group, opts.n_bins as f64 * opts.min_per_bin)?;
    let probs: Vec<f64> = (1..opts.n_bins).map(|k| k as f64 / opts.n_bins as f64).collect();
    let cuts = weighted_quantiles(&s.pred, &s.w, &probs)?;
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0); opts.n_bins];
    for i in 0..s.pred.len() {
        let k = cuts.partition_point(|c| *c < s.pred[i]);
        let b = &mut sums[k];
        b.0 += s.w[i];
        b.1 += s.w[i] * s.w[i];
        b.2 += s.w[i] * s.pred[i];
        b.3 += s.w[i] * s.y[i];
    }
    let points: Vec<CalibrationBin> = sums
        .iter()
        .filter(|b| b.0 > 0.0)
        .enumerate()
        .map(|(k, b)| {
            let n = b.0 * b.0 / b.1;
            let rate = b.3 / b.0;
            CalibrationBin {
                bin: k + 1,
                pred_mean: b.2 / b.0,
                obs_rate: rate,
                ci95: wilson_interval(rate, n, Z95),
                weight: b.0,
                n_effective: n,
            }
        })
        .collect();
    let (lo, hi) = s
        .pred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(*p), b.max(*p)));
    let smoothed = if hi > lo {
        let fit = LogitSpline::fit(&s.pred, &s.y, &s.w, &opts.spline)?;
        grid(lo, hi, opts.grid_points)
            .into_iter()
            .map(|x| {
                let (rate, ci95) = fit.predict_with_ci(x);
                CurvePoint { x, rate, ci95 }
            })
            .collect()
    } else {
        let (rate, n) = weighted_rate(&s.y, &s.w);
        vec![CurvePoint {
            x: lo,
            rate,
            ci95: wilson_interval(rate, n, Z95),
        }]
    };
    Ok(CalibrationCurve {
        group: group.to_string(),
        points,
        smoothed,
    })
}

/// Group-weighted mean of `observed default - predicted risk`; positive
/// when the scores underestimate the group's risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGap {
    pub group: String,
    pub gap: f64,
    pub standard_error: f64,
    pub n_effective: f64,
}

pub fn calibration_gap(
    scores: &RiskScores,
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    group: &str,
    opts: &CalibrationOptions,
) -> Result<CalibrationGap> {
    let s = group_sample(loans, demographics, scheme, axis, group, |l| scores.get(&l.loan_id))?;
    let n = require_effective(&s, group, opts.n_bins as f64 * opts.min_per_bin)?;
    let sw: f64 = s.w.iter().sum();
    let resid: Vec<f64> = s.y.iter().zip(&s.pred).map(|(y, p)| y - p).collect();
    let gap = resid.iter().zip(&s.w).map(|(r, w)| r * w).sum::<f64>() / sw;
    let var = resid
        .iter()
        .zip(&s.w)
        .map(|(r, w)| (w * (r - gap)).powi(2))
        .sum::<f64>()
        / (sw * sw);
    Ok(CalibrationGap {
        group: group.to_string(),
        gap,
        standard_error: var.sqrt(),
        n_effective: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AprCurveOptions {
    pub grid_points: usize,
    pub min_effective: f64,
    pub spline: SplineOptions,
    /// Resamples for the pointwise band; each refits the spline.
    pub bootstrap: BootstrapConfig,
}

impl Default for AprCurveOptions {
    fn default() -> Self {
        Self {
            grid_points: 25,
            min_effective: 200.0,
            spline: SplineOptions::default(),
            bootstrap: BootstrapConfig::new(200, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultAprCurve {
    pub group: String,
    pub points: Vec<CurvePoint>,
}

/// Smoothed default rate as a function of APR for one group, on a grid over
/// the group's weighted 2.5-97.5 percentile APR range, with a percentile
/// bootstrap band over loans.
pub fn default_by_apr_curve(
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    group: &str,
    opts: &AprCurveOptions,
) -> Result<DefaultAprCurve> {
    let s = group_sample(loans, demographics, scheme, axis, group, |l| Ok(l.apr))?;
    require_effective(&s, group, opts.min_effective)?;
    let r = weighted_quantiles(&s.pred, &s.w, &[0.025, 0.975])?;
    let (lo, hi) = (r[0], r[1]);
    if !(hi > lo) {
        return Err(AuditError::Degenerate(format!(
            "group {group}: APR range is degenerate (all near {lo})"
        )));
    }
    let fit = LogitSpline::fit(&s.pred, &s.y, &s.w, &opts.spline)?;
    let xs = grid(lo, hi, opts.grid_points);
    let start = fit.fit.coefficients.clone();
    let bands = bootstrap_many(s.pred.len(), xs.len(), &opts.bootstrap, |counts| {
        let w: Vec<f64> = s.w.iter().zip(counts).map(|(w, c)| w * *c as f64).collect();
        match LogitSpline::fit_on(fit.basis.clone(), &s.pred, &s.y, &w, &opts.spline, Some(&start)) {
            Ok(f) => xs.iter().map(|x| Some(f.predict(*x))).collect(),
            Err(_) => vec![None; xs.len()],
        }
    })?;
    let points = xs
        .iter()
        .zip(bands)
        .map(|(x, band)| {
            let band = band?;
            Ok(CurvePoint {
                x: *x,
                rate: fit.predict(*x),
                ci95: band.ci95,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DefaultAprCurve {
        group: group.to_string(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CashflowVector, Gender, Race, YearMonth};
    use crate::demography::ProbabilityWeighted;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn market(n: usize, p: impl Fn(usize) -> f64) -> (Vec<LoanRecord>, BTreeMap<String, DemographicWeights>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut loans = Vec::new();
        let mut demos = BTreeMap::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let pi = p(i);
            let d = rng.random::<f64>() < pi;
            let id = format!("L{i}");
            loans.push(LoanRecord {
                loan_id: id.clone(),
                origination_date: YearMonth::new(2019, 1).unwrap(),
                term_months: 2,
                principal: 10.0,
                apr: 0.05 + 0.3 * (i as f64 / n as f64),
                cashflow: CashflowVector::new(vec![-10.0, 5.0, 5.5]).unwrap(),
                features: vec![],
                target_return: None,
                defaulted: d,
                default_month: d.then_some(1),
            });
            demos.insert(id, DemographicWeights::one_hot(Race::White, Gender::ALL[i % 2]));
            truth.push(pi);
        }
        (loans, demos, truth)
    }

    fn scores(loans: &[LoanRecord], p: &[f64]) -> RiskScores {
        RiskScores {
            scores: loans.iter().zip(p).map(|(l, p)| (l.loan_id.clone(), *p)).collect(),
            folds: BTreeMap::new(),
        }
    }

    #[test]
    fn bins_decompose_the_group_means() {
        let (loans, demos, truth) = market(5000, |i| 0.02 + 0.3 * ((i * 7919) % 5000) as f64 / 5000.0);
        let sc = scores(&loans, &truth);
        let c = calibration_curve(&sc, &loans, &demos, &ProbabilityWeighted, Axis::Race, "White", &CalibrationOptions::default())
            .unwrap();
        assert_eq!(c.points.len(), 10);
        let w: f64 = c.points.iter().map(|b| b.weight).sum();
        let pred: f64 = c.points.iter().map(|b| b.weight * b.pred_mean).sum::<f64>() / w;
        let obs: f64 = c.points.iter().map(|b| b.weight * b.obs_rate).sum::<f64>() / w;
        let oracle_pred = truth.iter().sum::<f64>() / truth.len() as f64;
        let oracle_obs = loans.iter().filter(|l| l.defaulted).count() as f64 / loans.len() as f64;
        assert!((pred - oracle_pred).abs() < 1e-9);
        assert!((obs - oracle_obs).abs() < 1e-9);
        assert!(c.points.windows(2).all(|p| p[1].pred_mean > p[0].pred_mean));
    }

    #[test]
    fn identical_predictions_make_one_bin() {
        let (loans, demos, _) = market(1000, |_| 0.1);
        let sc = scores(&loans, &vec![0.1; 1000]);
        let c = calibration_curve(&sc, &loans, &demos, &ProbabilityWeighted, Axis::Race, "White", &CalibrationOptions::default())
            .unwrap();
        assert_eq!(c.points.len(), 1);
        let oracle = loans.iter().filter(|l| l.defaulted).count() as f64 / 1000.0;
        assert!((c.points[0].obs_rate - oracle).abs() < 1e-12);
        assert_eq!(c.smoothed.len(), 1);
    }

    #[test]
    fn shifted_predictions_show_up_as_gap() {
        let (loans, demos, truth) = market(20_000, |i| 0.05 + 0.2 * ((i * 31) % 100) as f64 / 100.0);
        let opts = CalibrationOptions::default();
        for shift in [-0.05, 0.0, 0.05] {
            let p: Vec<f64> = truth.iter().map(|t| t + shift).collect();
            let g = calibration_gap(&scores(&loans, &p), &loans, &demos, &ProbabilityWeighted, Axis::Race, "White", &opts)
                .unwrap();
            assert!((g.gap + shift).abs() < 3.0 * g.standard_error, "{shift}: {g:?}");
        }
    }

    #[test]
    fn too_few_observations_is_an_error() {
        let (loans, demos, truth) = market(150, |_| 0.1);
        let r = calibration_curve(
            &scores(&loans, &truth),
            &loans,
            &demos,
            &ProbabilityWeighted,
            Axis::Race,
            "White",
            &CalibrationOptions::default(),
        );
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("White") && msg.contains("200"), "{msg}");
    }

    #[test]
    fn flat_apr_curve_when_defaults_ignore_apr() {
        let (loans, demos, _) = market(4000, |_| 0.15);
        let c = default_by_apr_curve(&loans, &demos, &ProbabilityWeighted, Axis::Race, "White", &AprCurveOptions::default())
            .unwrap();
        let rate = loans.iter().filter(|l| l.defaulted).count() as f64 / 4000.0;
        for p in &c.points {
            assert!(p.ci95.0 <= rate + 0.01 && rate - 0.01 <= p.ci95.1, "{p:?} vs {rate}");
        }
    }

    #[test]
    fn constant_apr_is_degenerate() {
        let (mut loans, demos, _) = market(400, |_| 0.15);
        loans.iter_mut().for_each(|l| l.apr = 0.1);
        let r = default_by_apr_curve(&loans, &demos, &ProbabilityWeighted, Axis::Race, "White", &AprCurveOptions::default());
        assert!(matches!(r, Err(AuditError::Degenerate(_))));
    }
}
