//! Regression counterfactuals: how approvals, APRs and returns would move if
//! lending decisions used the demographically aware risk score.
//!
//! The approval and APR models are fit on blind scores and then evaluated
//! twice per applicant, once with the blind score and once with the aware
//! one. The no-shopping model is fit on funded loans that got the amount
//! they asked for and applied to every approved application.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_many, BootstrapConfig};
use crate::data::{ApplicationRecord, DemographicWeights, LoanRecord};
use crate::demography::{Axis, GroupScheme, WeightTable};
use crate::error::{AuditError, Result};
use crate::irr::IrrSolver;
use crate::metrics::{GroupMetric, MetricKind, MetricTable};
use crate::regression::{logistic_regression, ols, LogisticOptions};
use crate::risk::RiskScores;
use crate::stats::{effective_sample_size, logistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecId {
    Approval,
    Apr,
    NoShopIrr,
}

/// Coefficients by regressor name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub spec_id: SpecId,
    pub coefficients: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub n: usize,
    /// Least-squares fits only.
    pub r_squared: Option<f64>,
    pub residual_sd: Option<f64>,
}

impl RegressionFit {
    fn new(spec_id: SpecId, names: &[&str], coef: &[f64], se: &[f64], n: usize) -> Self {
        Self {
            spec_id,
            coefficients: names.iter().map(|k| k.to_string()).zip(coef.iter().copied()).collect(),
            standard_errors: names.iter().map(|k| k.to_string()).zip(se.iter().copied()).collect(),
            n,
            r_squared: None,
            residual_sd: None,
        }
    }

    /// Coefficient `name`, zero when the specification omits it.
    pub fn coef(&self, name: &str) -> f64 {
        self.coefficients.get(name).copied().unwrap_or(0.0)
    }

    pub fn se(&self, name: &str) -> f64 {
        self.standard_errors.get(name).copied().unwrap_or(f64::NAN)
    }

    fn expect(&self, spec: SpecId) -> Result<()> {
        if self.spec_id != spec {
            return Err(AuditError::Config(format!("expected a {spec:?} fit, got {:?}", self.spec_id)));
        }
        Ok(())
    }
}

/// Each applicant's first application: earliest date, ties broken by
/// application id; an undated application sorts after dated ones.
pub fn first_applications(applications: &[ApplicationRecord]) -> Vec<&ApplicationRecord> {
    let mut first: BTreeMap<&str, &ApplicationRecord> = BTreeMap::new();
    for a in applications {
        let key = |r: &ApplicationRecord| (r.application_date.is_none(), r.application_date, r.application_id.clone());
        first
            .entry(&a.applicant_id)
            .and_modify(|cur| {
                if key(a) < key(cur) {
                    *cur = a;
                }
            })
            .or_insert(a);
    }
    let mut out: Vec<_> = first.into_values().collect();
    out.sort_by(|a, b| a.application_id.cmp(&b.application_id));
    out
}

/// `Pr(approved) = logistic(intercept + blind_risk * R_B)` on first applications.
pub fn fit_approval_model(applications: &[ApplicationRecord], blind: &RiskScores) -> Result<RegressionFit> {
    let apps = first_applications(applications);
    let mut x = Vec::with_capacity(apps.len() * 2);
    let mut y = Vec::with_capacity(apps.len());
    for a in &apps {
        x.extend([1.0, blind.get(&a.application_id)?]);
        y.push(a.approved as u8 as f64);
    }
    let x = nalgebra::DMatrix::from_row_slice(apps.len(), 2, &x);
    let fit = logistic_regression(&x, &y, None, &LogisticOptions::default())?;
    Ok(RegressionFit::new(
        SpecId::Approval,
        &["intercept", "blind_risk"],
        &fit.coefficients,
        &fit.standard_errors,
        fit.n,
    ))
}

/// `log(APR) = intercept + blind_risk * R_B + fed_rate * F` on approved
/// first applications.
pub fn fit_apr_model(applications: &[ApplicationRecord], blind: &RiskScores) -> Result<RegressionFit> {
    let apps: Vec<_> = first_applications(applications).into_iter().filter(|a| a.approved).collect();
    let mut x = Vec::with_capacity(apps.len() * 3);
    let mut y = Vec::with_capacity(apps.len());
    for a in &apps {
        let apr = a.offered_apr.unwrap_or(f64::NAN);
        if !(apr > 0.0) {
            return Err(AuditError::Validation(format!(
                "application {}: APR must be positive to take its log, got {apr}",
                a.application_id
            )));
        }
        x.extend([1.0, blind.get(&a.application_id)?, a.fed_rate]);
        y.push(apr.ln());
    }
    let x = nalgebra::DMatrix::from_row_slice(apps.len(), 3, &x);
    let fit = ols(&x, &y)?;
    let mut out = RegressionFit::new(
        SpecId::Apr,
        &["intercept", "blind_risk", "fed_rate"],
        &fit.coefficients,
        &fit.standard_errors,
        fit.n,
    );
    out.r_squared = Some(fit.r_squared);
    out.residual_sd = Some(fit.sigma);
    Ok(out)
}

/// `IRR = aware_risk * R_A + loan_amount * amount + apr * APR`, optionally
/// with an intercept, on funded loans whose requested amount was granted in
/// full. Loans whose cashflow has no IRR are left out.
pub fn fit_noshop_irr_model(
    loans: &[LoanRecord],
    applications: &[ApplicationRecord],
    aware: &RiskScores,
    intercept: bool,
) -> Result<RegressionFit> {
    let requested: HashMap<&str, f64> = applications
        .iter()
        .map(|a| (a.application_id.as_str(), a.requested_amount))
        .collect();
    let solver = IrrSolver::default();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for l in loans {
        let Some(req) = requested.get(l.loan_id.as_str()) else {
            continue;
        };
        if (req - l.principal).abs() > 1e-9 * l.principal {
            continue;
        }
        let Some(irr) = solver.irr(&l.cashflow).usable_rate() else {
            continue;
        };
        let mut row = vec![aware.get(&l.loan_id)?, l.principal, l.apr];
        if intercept {
            row.push(1.0);
        }
        rows.push(row);
        y.push(irr);
    }
    if rows.is_empty() {
        return Err(AuditError::Degenerate(
            "no funded loan received exactly its requested amount".into(),
        ));
    }
    let fit = ols(&crate::regression::design(&rows), &y)?;
    let names: &[&str] = if intercept {
        &["aware_risk", "loan_amount", "apr", "intercept"]
    } else {
        &["aware_risk", "loan_amount", "apr"]
    };
    let mut out = RegressionFit::new(SpecId::NoShopIrr, names, &fit.coefficients, &fit.standard_errors, fit.n);
    out.r_squared = Some(fit.r_squared);
    out.residual_sd = Some(fit.sigma);
    Ok(out)
}

fn same_ids(blind: &RiskScores, aware: &RiskScores) -> Result<()> {
    if blind.scores.len() != aware.scores.len() || !blind.scores.keys().eq(aware.scores.keys()) {
        let missing = blind
            .scores
            .keys()
            .filter(|k| !aware.scores.contains_key(*k))
            .chain(aware.scores.keys().filter(|k| !blind.scores.contains_key(*k)))
            .next()
            .cloned()
            .unwrap_or_default();
        return Err(AuditError::record(missing, "blind and aware scores cover different ids"));
    }
    Ok(())
}

/// Per-id approval-probability change from swapping blind for aware scores.
pub fn approval_deltas(fit: &RegressionFit, blind: &RiskScores, aware: &RiskScores) -> Result<BTreeMap<String, f64>> {
    fit.expect(SpecId::Approval)?;
    same_ids(blind, aware)?;
    let (a, b) = (fit.coef("intercept"), fit.coef("blind_risk"));
    Ok(blind
        .scores
        .iter()
        .map(|(id, rb)| (id.clone(), logistic(a + b * aware.scores[id]) - logistic(a + b * rb)))
        .collect())
}

/// Per-id predicted-APR change; `applications` supply the federal rate.
pub fn apr_deltas(
    fit: &RegressionFit,
    blind: &RiskScores,
    aware: &RiskScores,
    applications: &[ApplicationRecord],
) -> Result<BTreeMap<String, f64>> {
    fit.expect(SpecId::Apr)?;
    same_ids(blind, aware)?;
    let fed: HashMap<&str, f64> = applications
        .iter()
        .map(|a| (a.application_id.as_str(), a.fed_rate))
        .collect();
    let (a, b, g) = (fit.coef("intercept"), fit.coef("blind_risk"), fit.coef("fed_rate"));
    blind
        .scores
        .iter()
        .map(|(id, rb)| {
            let f = *fed
                .get(id.as_str())
                .ok_or_else(|| AuditError::record(id, "no application carries this id"))?;
            let ra = aware.scores[id];
            Ok((id.clone(), (a + b * ra + g * f).exp() - (a + b * rb + g * f).exp()))
        })
        .collect()
}

/// Group-weighted means of per-id values with bootstrap intervals over ids.
pub fn group_means(
    kind: MetricKind,
    values: &BTreeMap<String, f64>,
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    boot: &BootstrapConfig,
) -> Result<MetricTable> {
    let table = WeightTable::build(values.keys().map(String::as_str), demographics, scheme, axis)?;
    let xs: Vec<f64> = values.values().copied().collect();
    let columns: Vec<Vec<f64>> = (0..table.groups.len()).map(|g| table.column(g)).collect();
    let mean = |w: &[f64], counts: Option<&[u32]>| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..xs.len() {
            let wi = w[i] * counts.map_or(1.0, |c| c[i] as f64);
            num += wi * xs[i];
            den += wi;
        }
        (den > 0.0).then(|| num / den)
    };
    let mut out = MetricTable::default();
    let mut live = Vec::new();
    for (g, name) in table.groups.iter().enumerate() {
        match mean(&columns[g], None) {
            Some(p) => live.push((g, p)),
            None => out.warnings.push(format!("{kind}/{axis}/{name}: no ids with positive weight; omitted")),
        }
    }
    if live.is_empty() {
        return Ok(out);
    }
    let cis = bootstrap_many(xs.len(), live.len(), boot, |counts| {
        live.iter().map(|(g, _)| mean(&columns[*g], Some(counts))).collect()
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
    Ok(out)
}

pub fn counterfactual_approval_delta(
    fit: &RegressionFit,
    blind: &RiskScores,
    aware: &RiskScores,
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    boot: &BootstrapConfig,
) -> Result<MetricTable> {
    let d = approval_deltas(fit, blind, aware)?;
    group_means(MetricKind::ApprovalDelta, &d, demographics, scheme, axis, boot)
}

#[allow(clippy::too_many_arguments)]
pub fn counterfactual_apr_delta(
    fit: &RegressionFit,
    blind: &RiskScores,
    aware: &RiskScores,
    applications: &[ApplicationRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    boot: &BootstrapConfig,
) -> Result<MetricTable> {
    let d = apr_deltas(fit, blind, aware, applications)?;
    group_means(MetricKind::AprDelta, &d, demographics, scheme, axis, boot)
}

/// Predicted IRR of each approved application had it been funded at the
/// requested amount and offered APR.
pub fn noshop_predictions<'a>(
    fit: &RegressionFit,
    applications: impl IntoIterator<Item = &'a ApplicationRecord>,
    aware: &RiskScores,
) -> Result<BTreeMap<String, f64>> {
    fit.expect(SpecId::NoShopIrr)?;
    let mut out = BTreeMap::new();
    for a in applications.into_iter().filter(|a| a.approved) {
        let apr = a
            .offered_apr
            .ok_or_else(|| AuditError::record(&a.application_id, "approved application without offered_apr"))?;
        let irr = fit.coef("aware_risk") * aware.get(&a.application_id)?
            + fit.coef("loan_amount") * a.requested_amount
            + fit.coef("apr") * apr
            + fit.coef("intercept");
        out.insert(a.application_id.clone(), irr);
    }
    Ok(out)
}

pub fn counterfactual_noshop_irr<'a>(
    fit: &RegressionFit,
    applications: impl IntoIterator<Item = &'a ApplicationRecord>,
    aware: &RiskScores,
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    boot: &BootstrapConfig,
) -> Result<MetricTable> {
    let p = noshop_predictions(fit, applications, aware)?;
    group_means(MetricKind::CounterfactualIrr, &p, demographics, scheme, axis, boot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Gender, Race};
    use crate::demography::ProbabilityWeighted;

    fn app(id: &str, applicant: &str, date: Option<&str>, approved: bool) -> ApplicationRecord {
        ApplicationRecord {
            application_id: id.into(),
            applicant_id: applicant.into(),
            application_date: date.map(|d| d.parse().unwrap()),
            features: vec![],
            requested_amount: 1000.0,
            approved,
            offered_apr: approved.then_some(0.1),
            funded: false,
            fed_rate: 0.02,
        }
    }

    fn scores(pairs: &[(&str, f64)]) -> RiskScores {
        RiskScores {
            scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            folds: BTreeMap::new(),
        }
    }

    #[test]
    fn first_application_rules() {
        let apps = vec![
            app("c", "p", Some("2020-03"), true),
            app("b", "p", Some("2020-01"), true),
            app("a", "p", Some("2020-01"), true),
            app("d", "q", None, true),
            app("e", "q", Some("2021-01"), true),
        ];
        let ids: Vec<_> = first_applications(&apps).iter().map(|a| a.application_id.as_str()).collect();
        assert_eq!(ids, ["a", "e"]);
    }

    #[test]
    fn deltas_vanish_for_equal_scores() {
        let fit = RegressionFit::new(SpecId::Approval, &["intercept", "blind_risk"], &[0.3, -4.0], &[0.1, 0.1], 10);
        let s = scores(&[("x", 0.1), ("y", 0.4)]);
        let d = approval_deltas(&fit, &s, &s.clone()).unwrap();
        assert!(d.values().all(|v| *v == 0.0));
        assert!(approval_deltas(&fit, &s, &scores(&[("x", 0.1)])).is_err());
    }

    #[test]
    fn group_means_weight_by_probability() {
        let mut values = BTreeMap::new();
        let mut demos = BTreeMap::new();
        for i in 0..100 {
            let (gender, v) = if i % 2 == 0 { (Gender::Man, 1.0) } else { (Gender::Woman, 3.0) };
            values.insert(format!("i{i}"), v);
            demos.insert(format!("i{i}"), DemographicWeights::one_hot(Race::White, gender));
        }
        let t = group_means(
            MetricKind::AprDelta,
            &values,
            &demos,
            &ProbabilityWeighted,
            Axis::Gender,
            &BootstrapConfig::new(100, 0),
        )
        .unwrap();
        assert_eq!(t.group("Man").unwrap().point, 1.0);
        assert_eq!(t.group("Woman").unwrap().point, 3.0);
    }

    #[test]
    fn wrong_fit_kind_is_rejected() {
        let fit = RegressionFit::new(SpecId::Apr, &["intercept"], &[0.0], &[0.0], 10);
        let s = scores(&[("x", 0.1)]);
        assert!(approval_deltas(&fit, &s, &s).is_err());
    }
}
