//! The group statistics. Each takes per-loan weights (group weight times
//! bootstrap multiplicity) and returns `None` when undefined on them.

use super::frame::LoanFrame;
use super::MetricKind;
use crate::stats::{weighted_mean, weighted_std};

pub trait GroupStatistic: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> MetricKind;

    /// Reason the statistic cannot run on this frame at all.
    fn unavailable(&self, _frame: &LoanFrame) -> Option<String> {
        None
    }

    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64>;
}

/// IRR of the weighted aggregate cashflow.
#[derive(Debug, Default)]
pub struct PortfolioIrr;

impl GroupStatistic for PortfolioIrr {
    fn kind(&self) -> MetricKind {
        MetricKind::PortfolioIrr
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        if !weights.iter().any(|w| *w > 0.0) {
            return None;
        }
        let agg = frame.aggregate(weights);
        frame.solver.solve(&agg).usable_rate()
    }
}

fn usable_irrs(frame: &LoanFrame, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    frame
        .irr
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w != 0.0)
        .filter_map(|(r, w)| r.usable_rate().map(|x| (x, *w)))
        .unzip()
}

/// Weighted mean of individual IRRs; total losses count as -100%.
#[derive(Debug, Default)]
pub struct MeanIndividualIrr;

impl GroupStatistic for MeanIndividualIrr {
    fn kind(&self) -> MetricKind {
        MetricKind::MeanIndividualIrr
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        let (x, w) = usable_irrs(frame, weights);
        weighted_mean(&x, &w).ok().map(|m| m.mean)
    }
}

/// Weighted population standard deviation of individual IRRs.
#[derive(Debug, Default)]
pub struct IrrVolatility;

impl GroupStatistic for IrrVolatility {
    fn kind(&self) -> MetricKind {
        MetricKind::IrrVolatility
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        let (x, w) = usable_irrs(frame, weights);
        weighted_std(&x, &w).ok()
    }
}

/// `sum w unpaid / sum w principal`
#[derive(Debug, Default)]
pub struct PrincipalLost;

impl GroupStatistic for PrincipalLost {
    fn kind(&self) -> MetricKind {
        MetricKind::PrincipalLost
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        let (mut lost, mut total) = (0.0, 0.0);
        for ((w, u), p) in weights.iter().zip(&frame.unpaid_principal).zip(&frame.principal) {
            lost += w * u;
            total += w * p;
        }
        (total > 0.0).then(|| lost / total)
    }
}

#[derive(Debug, Default)]
pub struct DefaultRate;

impl GroupStatistic for DefaultRate {
    fn kind(&self) -> MetricKind {
        MetricKind::DefaultRate
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        weighted_mean(&frame.defaulted, weights).ok().map(|m| m.mean)
    }
}

/// Weighted mean target return over loans that carry one.
#[derive(Debug, Default)]
pub struct TargetReturn;

impl GroupStatistic for TargetReturn {
    fn kind(&self) -> MetricKind {
        MetricKind::TargetReturn
    }
    fn unavailable(&self, frame: &LoanFrame) -> Option<String> {
        frame
            .target_return
            .iter()
            .all(Option::is_none)
            .then(|| "no target_return values; target-return metric skipped".to_string())
    }
    fn evaluate(&self, frame: &LoanFrame, weights: &[f64]) -> Option<f64> {
        let (x, w): (Vec<f64>, Vec<f64>) = frame
            .target_return
            .iter()
            .zip(weights)
            .filter_map(|(t, w)| t.map(|t| (t, *w)))
            .unzip();
        weighted_mean(&x, &w).ok().map(|m| m.mean)
    }
}
