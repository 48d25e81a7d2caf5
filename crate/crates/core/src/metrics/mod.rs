//! Group-level audit statistics with bootstrap confidence intervals.
//!
//! Every statistic implements [`GroupStatistic`] and is registered by name
//! in a [`MetricRegistry`]; a run enables metrics by name. Evaluation is
//! shared: per-loan group weights come from a [`WeightTable`], and each
//! bootstrap resample multiplies them by the loan's multiplicity.

mod deciles;
mod frame;
mod loss;
mod statistics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use deciles::{decile_curve, DecileCurve, DecilePoint};
pub use frame::LoanFrame;
pub use loss::{cumulative_loss_rate, geometric_default_pmf};
pub use statistics::{
    DefaultRate, GroupStatistic, IrrVolatility, MeanIndividualIrr, PortfolioIrr, PrincipalLost,
    TargetReturn,
};

use crate::bootstrap::{bootstrap_many, BootstrapConfig, Intervals};
use crate::data::{DemographicWeights, LoanRecord};
use crate::demography::{Axis, GroupScheme, WeightTable};
use crate::error::{AuditError, Result};
use crate::irr::IrrSolver;
use crate::stats::effective_sample_size;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    PortfolioIrr,
    MeanIndividualIrr,
    PrincipalLost,
    TargetReturn,
    DefaultRate,
    IrrVolatility,
    ApprovalDelta,
    AprDelta,
    CounterfactualIrr,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::PortfolioIrr => "portfolio_irr",
            MetricKind::MeanIndividualIrr => "mean_individual_irr",
            MetricKind::PrincipalLost => "principal_lost",
            MetricKind::TargetReturn => "target_return",
            MetricKind::DefaultRate => "default_rate",
            MetricKind::IrrVolatility => "irr_volatility",
            MetricKind::ApprovalDelta => "approval_delta",
            MetricKind::AprDelta => "apr_delta",
            MetricKind::CounterfactualIrr => "counterfactual_irr",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = AuditError;
    fn from_str(s: &str) -> Result<Self> {
        use MetricKind::*;
        [
            PortfolioIrr,
            MeanIndividualIrr,
            PrincipalLost,
            TargetReturn,
            DefaultRate,
            IrrVolatility,
            ApprovalDelta,
            AprDelta,
            CounterfactualIrr,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| AuditError::Config(format!("unknown metric `{s}`")))
    }
}

/// One group's estimate with its 68% and 95% bootstrap intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub metric: MetricKind,
    pub axis: Axis,
    pub group: String,
    pub point: f64,
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
    pub n_effective: f64,
}

impl GroupMetric {
    pub fn new(metric: MetricKind, axis: Axis, group: &str, point: f64, ci: Intervals, n_effective: f64) -> Self {
        Self {
            metric,
            axis,
            group: group.to_string(),
            point,
            ci68: ci.ci68,
            ci95: ci.ci95,
            n_effective,
        }
    }

    pub fn ci95_overlaps(&self, other: &GroupMetric) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }

    pub fn ci95_contains(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }
}

/// Rows for one metric and axis, plus any groups that had to be dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<GroupMetric>,
    pub warnings: Vec<String>,
}

impl MetricTable {
    pub fn group(&self, name: &str) -> Option<&GroupMetric> {
        self.rows.iter().find(|r| r.group == name)
    }

    pub fn extend(&mut self, other: MetricTable) {
        self.rows.extend(other.rows);
        self.warnings.extend(other.warnings);
    }
}

/// Name → statistic lookup.
#[derive(Debug, Clone)]
pub struct MetricRegistry {
    stats: BTreeMap<&'static str, Arc<dyn GroupStatistic>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::empty()
            .register(Arc::new(PortfolioIrr))
            .register(Arc::new(MeanIndividualIrr))
            .register(Arc::new(PrincipalLost))
            .register(Arc::new(TargetReturn))
            .register(Arc::new(DefaultRate))
            .register(Arc::new(IrrVolatility))
    }
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self { stats: BTreeMap::new() }
    }

    pub fn register(mut self, stat: Arc<dyn GroupStatistic>) -> Self {
        self.stats.insert(stat.kind().name(), stat);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn GroupStatistic>> {
        self.stats.get(name).cloned().ok_or_else(|| {
            AuditError::Config(format!(
                "unknown metric `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.stats.keys().copied().collect()
    }
}

/// Evaluate `stat` for every group on `axis`. Groups with no weight, or on
/// which the statistic is undefined, are omitted with a warning.
pub fn evaluate_by_group(
    stat: &dyn GroupStatistic,
    frame: &LoanFrame,
    table: &WeightTable,
    boot: &BootstrapConfig,
) -> Result<MetricTable> {
    let mut out = MetricTable::default();
    let kind = stat.kind();
    if let Some(reason) = stat.unavailable(frame) {
        out.warnings.push(format!("{kind}: {reason}"));
        return Ok(out);
    }
    let axis = table.axis;
    let columns: Vec<Vec<f64>> = (0..table.groups.len()).map(|g| table.column(g)).collect();
    let mut live = Vec::new();
    for (g, name) in table.groups.iter().enumerate() {
        let w = &columns[g];
        if !w.iter().any(|x| *x > 0.0) {
            out.warnings.push(format!("{kind}/{axis}/{name}: no loans with positive weight; omitted"));
            continue;
        }
        match stat.evaluate(frame, w) {
            Some(p) if p.is_finite() => live.push((g, p)),
            _ => out
                .warnings
                .push(format!("{kind}/{axis}/{name}: statistic undefined on the full sample; omitted")),
        }
    }
    let cis = bootstrap_many(frame.len(), live.len(), boot, |counts| {
        live.iter()
            .map(|(g, _)| {
                let w: Vec<f64> = columns[*g]
                    .iter()
                    .zip(counts)
                    .map(|(w, c)| w * *c as f64)
                    .collect();
                stat.evaluate(frame, &w)
            })
            .collect()
    })?;
    for ((g, point), ci) in live.into_iter().zip(cis) {
        let name = table.groups[g];
        match ci {
            Ok(ci) => out.rows.push(GroupMetric::new(
                kind,
                axis,
                name,
                point,
                ci,
                effective_sample_size(&columns[g]),
            )),
            Err(e) => out.warnings.push(format!("{kind}/{axis}/{name}: {e}; omitted")),
        }
    }
    if kind == MetricKind::MeanIndividualIrr || kind == MetricKind::IrrVolatility {
        let excluded = frame.no_sign_change_count();
        if excluded > 0 {
            out.warnings
                .push(format!("{kind}: {excluded} loan(s) without an IRR root excluded"));
        }
    }
    Ok(out)
}

/// Inputs shared by the per-metric entry points.
pub struct GroupInputs<'a> {
    pub loans: &'a [LoanRecord],
    pub demographics: &'a BTreeMap<String, DemographicWeights>,
    pub scheme: &'a dyn GroupScheme,
    pub axis: Axis,
    pub bootstrap: BootstrapConfig,
    pub solver: IrrSolver,
}

impl<'a> GroupInputs<'a> {
    pub fn new(
        loans: &'a [LoanRecord],
        demographics: &'a BTreeMap<String, DemographicWeights>,
        scheme: &'a dyn GroupScheme,
        axis: Axis,
        bootstrap: BootstrapConfig,
    ) -> Self {
        Self {
            loans,
            demographics,
            scheme,
            axis,
            bootstrap,
            solver: IrrSolver::default(),
        }
    }

    fn run(&self, stat: &dyn GroupStatistic) -> Result<MetricTable> {
        let frame = LoanFrame::build(self.loans, self.solver)?;
        let table = WeightTable::build(
            self.loans.iter().map(|l| l.loan_id.as_str()),
            self.demographics,
            self.scheme,
            self.axis,
        )?;
        evaluate_by_group(stat, &frame, &table, &self.bootstrap)
    }
}

pub fn portfolio_irr_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&PortfolioIrr)
}

pub fn mean_individual_irr_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&MeanIndividualIrr)
}

pub fn principal_lost_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&PrincipalLost)
}

pub fn target_return_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&TargetReturn)
}

pub fn default_rate_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&DefaultRate)
}

pub fn irr_volatility_by_group(inputs: &GroupInputs) -> Result<MetricTable> {
    inputs.run(&IrrVolatility)
}

/// Decile curve of target return against default rate for one group.
pub fn target_return_default_curve(inputs: &GroupInputs, group: &str) -> Result<DecileCurve> {
    let frame = LoanFrame::build(inputs.loans, inputs.solver)?;
    let table = WeightTable::build(
        inputs.loans.iter().map(|l| l.loan_id.as_str()),
        inputs.demographics,
        inputs.scheme,
        inputs.axis,
    )?;
    let g = inputs.axis.group_index(group)?;
    decile_curve(&frame, &table.column(g), table.groups[g])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amortization::{balance_after, payment};
    use crate::data::{CashflowVector, Gender, Race};
    use crate::demography::ProbabilityWeighted;

    fn loan(id: &str, amounts: Vec<f64>, defaulted: Option<u32>, target: Option<f64>) -> LoanRecord {
        LoanRecord {
            loan_id: id.into(),
            origination_date: "2019-01".parse().unwrap(),
            term_months: (amounts.len() as u32 - 1).max(1),
            principal: -amounts[0],
            apr: 0.12,
            cashflow: CashflowVector::new(amounts).unwrap(),
            features: vec![],
            target_return: target,
            defaulted: defaulted.is_some(),
            default_month: defaulted,
        }
    }

    fn demos(ids: &[(&str, Race, Gender)]) -> BTreeMap<String, DemographicWeights> {
        ids.iter()
            .map(|(id, r, g)| (id.to_string(), DemographicWeights::one_hot(*r, *g)))
            .collect()
    }

    fn boot() -> BootstrapConfig {
        BootstrapConfig::new(200, 3)
    }

    #[test]
    fn single_loan_reduces_to_irr() {
        let mut v = vec![0.0; 13];
        v[0] = -100.0;
        v[12] = 110.0;
        let loans = vec![loan("a", v, None, None)];
        let d = demos(&[("a", Race::Asian, Gender::Woman)]);
        let t = portfolio_irr_by_group(&GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Race, boot())).unwrap();
        assert_eq!(t.rows.len(), 1);
        let r = t.group("Asian").unwrap();
        assert!((r.point - 0.10).abs() < 1e-12);
        assert_eq!(t.warnings.len(), 4, "{:?}", t.warnings);
    }

    #[test]
    fn mean_irr_counts_total_losses() {
        let mut v = vec![0.0; 13];
        v[0] = -100.0;
        v[12] = 110.0;
        let loans = vec![loan("a", v, None, None), loan("b", vec![-100.0, 0.0, 0.0], Some(1), None)];
        let d = demos(&[("a", Race::White, Gender::Man), ("b", Race::White, Gender::Man)]);
        let t = mean_individual_irr_by_group(&GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Gender, boot())).unwrap();
        assert!((t.group("Man").unwrap().point + 0.45).abs() < 1e-12);
    }

    #[test]
    fn default_rate_and_volatility() {
        let a = vec![-100.0, 60.0, 60.0];
        let loans = vec![loan("a", a.clone(), None, Some(0.1)), loan("b", a.clone(), Some(2), Some(0.1))];
        let d = demos(&[("a", Race::White, Gender::Man), ("b", Race::White, Gender::Man)]);
        let inp = GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Race, boot());
        assert_eq!(default_rate_by_group(&inp).unwrap().group("White").unwrap().point, 0.5);
        assert_eq!(irr_volatility_by_group(&inp).unwrap().group("White").unwrap().point, 0.0);
        assert_eq!(target_return_by_group(&inp).unwrap().group("White").unwrap().point, 0.1);
    }

    #[test]
    fn missing_target_return_skips_the_metric() {
        let loans = vec![loan("a", vec![-100.0, 110.0], None, None)];
        let d = demos(&[("a", Race::White, Gender::Man)]);
        let t = target_return_by_group(&GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Race, boot())).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn principal_lost_cases() {
        let full = loan("a", vec![-1000.0, 0.0, 0.0], Some(1), None);
        let d = demos(&[("a", Race::White, Gender::Man), ("b", Race::Black, Gender::Man), ("c", Race::Hispanic, Gender::Man)]);
        let pay = payment(1000.0, 0.12, 36);
        let mut repaid = vec![pay; 37];
        repaid[0] = -1000.0;
        let repaid = loan("b", repaid, None, None);
        let mut half = vec![0.0; 37];
        half[0] = -1000.0;
        for slot in half.iter_mut().take(19).skip(1) {
            *slot = pay;
        }
        let mut half = loan("c", half, Some(19), None);
        half.term_months = 36;
        let lost = |l: LoanRecord| {
            let loans = vec![l];
            let t = principal_lost_by_group(&GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Gender, boot())).unwrap();
            t.group("Man").unwrap().point
        };
        assert_eq!(lost(full), 1.0);
        assert_eq!(lost(repaid), 0.0);
        let oracle = balance_after(1000.0, 0.12, 36, 18) / 1000.0;
        assert!((lost(half) - oracle).abs() < 1e-10);
    }

    #[test]
    fn decile_curve_cases() {
        let mut loans = Vec::new();
        let mut ids = Vec::new();
        for i in 0..40 {
            let tr = 0.05 + 0.005 * i as f64;
            let d = if i >= 20 { Some(2) } else { None };
            loans.push(loan(&format!("l{i}"), vec![-100.0, 60.0, 60.0], d, Some(tr)));
            ids.push(format!("l{i}"));
        }
        let d: BTreeMap<String, DemographicWeights> = ids
            .iter()
            .map(|id| (id.clone(), DemographicWeights::one_hot(Race::White, Gender::Woman)))
            .collect();
        let inp = GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Race, boot());
        let c = target_return_default_curve(&inp, "White").unwrap();
        assert!(c.correlation.unwrap() > 0.0);
        assert_eq!(c.points.len(), 10);
        let total: f64 = c.points.iter().map(|p| p.weight).sum();
        let back: f64 = c.points.iter().map(|p| p.weight * p.mean_target_return).sum::<f64>() / total;
        let direct: f64 = loans.iter().map(|l| l.target_return.unwrap()).sum::<f64>() / 40.0;
        assert!((back - direct).abs() < 1e-9);

        for l in &mut loans {
            l.target_return = Some(0.1);
        }
        let inp = GroupInputs::new(&loans, &d, &ProbabilityWeighted, Axis::Race, boot());
        let c = target_return_default_curve(&inp, "White").unwrap();
        assert_eq!(c.points.len(), 1);
        assert!(c.correlation.is_none());
        assert!(target_return_default_curve(&inp, "Black").is_err());
    }
}
