//! Domain types shared by every stage of the audit.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Months after the contractual term in which a default may still be recorded.
pub const DEFAULT_GRACE_MONTHS: u32 = 6;

/// Tolerance on probability-vector sums before an error is raised.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Tolerance on probability-vector sums for an already validated vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// A calendar month, `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(AuditError::Validation(format!("month {month} out of range 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    /// Months since 0000-01; differences of this index are month offsets.
    pub fn index(&self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_index(index: i64) -> Self {
        let year = index.div_euclid(12) as i32;
        let month = index.rem_euclid(12) as u32 + 1;
        Self { year, month }
    }

    pub fn plus_months(&self, months: i64) -> Self {
        Self::from_index(self.index() + months)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || AuditError::Validation(format!("invalid YYYY-MM date `{s}`"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        // Accept YYYY-MM-DD by ignoring the day.
        let m = m.split('-').next().ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u32 = m.parse().map_err(|_| bad())?;
        Self::new(year, month)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = AuditError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> String {
        ym.to_string()
    }
}

/// Monthly net cashflows of a loan (or a portfolio), indexed by month offset.
///
/// Entry 0 is the disbursement and is strictly negative; every later entry
/// is a net receipt of any sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CashflowVector(Vec<f64>);

impl CashflowVector {
    pub fn new(amounts: Vec<f64>) -> Result<Self> {
        if amounts.len() < 2 {
            return Err(AuditError::Validation(format!(
                "cashflow needs at least 2 entries, got {}",
                amounts.len()
            )));
        }
        if let Some(t) = amounts.iter().position(|a| !a.is_finite()) {
            return Err(AuditError::Validation(format!("non-finite cashflow amount at month {t}")));
        }
        if amounts[0] >= 0.0 {
            return Err(AuditError::Validation(format!(
                "month-0 disbursement must be negative, got {}",
                amounts[0]
            )));
        }
        Ok(Self(amounts))
    }

    pub fn amounts(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn disbursement(&self) -> f64 {
        -self.0[0]
    }

    pub fn receipts(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for CashflowVector {
    type Error = AuditError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CashflowVector> for Vec<f64> {
    fn from(c: CashflowVector) -> Vec<f64> {
        c.0
    }
}

/// A funded loan with its realized repayment history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRecord {
    pub loan_id: String,
    pub origination_date: YearMonth,
    pub term_months: u32,
    pub principal: f64,
    pub apr: f64,
    pub cashflow: CashflowVector,
    pub features: Vec<f64>,
    pub target_return: Option<f64>,
    pub defaulted: bool,
    pub default_month: Option<u32>,
}

impl LoanRecord {
    /// Check the per-record invariants. `grace` bounds how far past the
    /// term a default may be recorded.
    pub fn validate(&self, grace: u32) -> Result<()> {
        let fail = |reason: String| Err(AuditError::record(&self.loan_id, reason));
        if self.term_months == 0 {
            return fail("term_months must be positive".into());
        }
        if !(self.principal.is_finite() && self.principal > 0.0) {
            return fail(format!("principal must be positive, got {}", self.principal));
        }
        if !(self.apr > 0.0 && self.apr < 1.0) {
            return fail(format!("apr must lie in (0, 1), got {}", self.apr));
        }
        let disbursed = self.cashflow.disbursement();
        if (disbursed - self.principal).abs() > 1e-6 * self.principal {
            return fail(format!(
                "principal {} does not match month-0 disbursement {}",
                self.principal, disbursed
            ));
        }
        match (self.defaulted, self.default_month) {
            (true, None) => return fail("defaulted loan without default_month".into()),
            (false, Some(_)) => return fail("default_month present on a non-defaulted loan".into()),
            (true, Some(m)) if m < 1 || m > self.term_months + grace => {
                return fail(format!(
                    "default_month {m} outside 1..={}",
                    self.term_months + grace
                ))
            }
            _ => {}
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return fail("non-finite feature value".into());
        }
        if let Some(r) = self.target_return {
            if !r.is_finite() {
                return fail("non-finite target_return".into());
            }
        }
        Ok(())
    }

    /// Calendar month of cashflow entry `t`.
    pub fn calendar_month(&self, t: usize) -> YearMonth {
        self.origination_date.plus_months(t as i64)
    }
}

/// A loan application, approved or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationRecord {
    pub application_id: String,
    /// Applicant identity, used to find each applicant's first application.
    /// Defaults to the application id when the file carries no such column.
    pub applicant_id: String,
    pub application_date: Option<YearMonth>,
    pub features: Vec<f64>,
    pub requested_amount: f64,
    pub approved: bool,
    pub offered_apr: Option<f64>,
    pub funded: bool,
    pub fed_rate: f64,
}

impl ApplicationRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(AuditError::record(&self.application_id, reason));
        if self.funded && !self.approved {
            return fail("funded application was not approved".into());
        }
        match (self.approved, self.offered_apr) {
            (true, None) => return fail("approved application without offered_apr".into()),
            (false, Some(_)) => return fail("offered_apr present on a denied application".into()),
            (true, Some(a)) if !(a > 0.0 && a < 1.0) => {
                return fail(format!("offered_apr must lie in (0, 1), got {a}"))
            }
            _ => {}
        }
        if !(self.requested_amount.is_finite() && self.requested_amount > 0.0) {
            return fail(format!("requested_amount must be positive, got {}", self.requested_amount));
        }
        if !self.fed_rate.is_finite() {
            return fail("non-finite fed_rate".into());
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return fail("non-finite feature value".into());
        }
        Ok(())
    }
}

/// Race categories in their fixed order. The order also breaks argmax ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Hispanic,
    Asian,
    Other,
}

impl Race {
    pub const ALL: [Race; 5] = [Race::White, Race::Black, Race::Hispanic, Race::Asian, Race::Other];

    pub fn name(&self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Hispanic => "Hispanic",
            Race::Asian => "Asian",
            Race::Other => "Other",
        }
    }
}

/// Gender categories in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Woman,
    Man,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Woman, Gender::Man];

    pub fn name(&self) -> &'static str {
        match self {
            Gender::Woman => "Woman",
            Gender::Man => "Man",
        }
    }
}

/// Per-person proxy probabilities over race and gender categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemographicWeights {
    pub race: [f64; 5],
    pub gender: [f64; 2],
}

impl DemographicWeights {
    /// Validate both vectors, renormalizing sums within [`RENORMALIZE_TOLERANCE`] of one.
    /// Returns the weights and whether any renormalization happened.
    pub fn new_normalized(race: [f64; 5], gender: [f64; 2]) -> Result<(Self, bool)> {
        let (race, r) = normalize(race)?;
        let (gender, g) = normalize(gender)?;
        Ok((Self { race, gender }, r || g))
    }

    pub fn one_hot(race: Race, gender: Gender) -> Self {
        let mut r = [0.0; 5];
        r[race as usize] = 1.0;
        let mut g = [0.0; 2];
        g[gender as usize] = 1.0;
        Self { race: r, gender: g }
    }

    /// All seven probabilities, race first.
    pub fn as_features(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        out[..5].copy_from_slice(&self.race);
        out[5..].copy_from_slice(&self.gender);
        out
    }

    pub fn is_valid(&self) -> bool {
        let ok = |v: &[f64]| {
            v.iter().all(|p| p.is_finite() && *p >= 0.0)
                && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE
        };
        ok(&self.race) && ok(&self.gender)
    }
}

fn normalize<const N: usize>(mut v: [f64; N]) -> Result<([f64; N], bool)> {
    if v.iter().any(|p| !p.is_finite()) {
        return Err(AuditError::Validation("non-finite probability".into()));
    }
    if let Some(p) = v.iter().find(|p| **p < 0.0) {
        return Err(AuditError::Validation(format!("negative probability {p}")));
    }
    let sum: f64 = v.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > RENORMALIZE_TOLERANCE {
        return Err(AuditError::Validation(format!(
            "probabilities sum to {sum}, deviation {dev:e} exceeds {RENORMALIZE_TOLERANCE:e}"
        )));
    }
    if dev > 0.0 {
        v.iter_mut().for_each(|p| *p /= sum);
        return Ok((v, true));
    }
    Ok((v, false))
}

/// Loans, applications and demographics for one audit run. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub loans: Vec<LoanRecord>,
    pub applications: Vec<ApplicationRecord>,
    pub demographics: BTreeMap<String, DemographicWeights>,
}

impl Dataset {
    /// Assemble and check cross-record invariants: unique ids, consistent
    /// feature width, and demographics for every referenced id.
    pub fn new(
        loans: Vec<LoanRecord>,
        applications: Vec<ApplicationRecord>,
        demographics: BTreeMap<String, DemographicWeights>,
    ) -> Result<Self> {
        let ds = Self {
            loans,
            applications,
            demographics,
        };
        ds.validate(DEFAULT_GRACE_MONTHS)?;
        Ok(ds)
    }

    pub fn validate(&self, grace: u32) -> Result<()> {
        let mut seen = HashSet::new();
        for loan in &self.loans {
            loan.validate(grace)?;
            if !seen.insert(loan.loan_id.as_str()) {
                return Err(AuditError::record(&loan.loan_id, "duplicate loan id"));
            }
        }
        let mut seen = HashSet::new();
        for app in &self.applications {
            app.validate()?;
            if !seen.insert(app.application_id.as_str()) {
                return Err(AuditError::record(&app.application_id, "duplicate application id"));
            }
        }
        check_feature_width(self.loans.iter().map(|l| (l.loan_id.as_str(), l.features.len())))?;
        check_feature_width(
            self.applications
                .iter()
                .map(|a| (a.application_id.as_str(), a.features.len())),
        )?;
        let missing: Vec<&str> = self
            .loans
            .iter()
            .map(|l| l.loan_id.as_str())
            .chain(self.applications.iter().map(|a| a.application_id.as_str()))
            .filter(|id| !self.demographics.contains_key(*id))
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).copied().collect();
            return Err(AuditError::Validation(format!(
                "{} id(s) without demographics: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            )));
        }
        for (id, d) in &self.demographics {
            if !d.is_valid() {
                return Err(AuditError::record(id, "demographic probabilities off the simplex"));
            }
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        self.loans
            .first()
            .map(|l| l.features.len())
            .or_else(|| self.applications.first().map(|a| a.features.len()))
            .unwrap_or(0)
    }

    pub fn demographics_of(&self, id: &str) -> Result<&DemographicWeights> {
        self.demographics
            .get(id)
            .ok_or_else(|| AuditError::record(id, "no demographics for id"))
    }
}

fn check_feature_width<'a>(mut widths: impl Iterator<Item = (&'a str, usize)>) -> Result<()> {
    if let Some((_, w0)) = widths.next() {
        for (id, w) in widths {
            if w != w0 {
                return Err(AuditError::record(
                    id,
                    format!("feature vector length {w} differs from dataset width {w0}"),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_month_arithmetic() {
        let ym: YearMonth = "2019-11".parse().unwrap();
        assert_eq!(ym.plus_months(3).to_string(), "2020-02");
        assert_eq!(ym.plus_months(-11).to_string(), "2018-12");
        assert!("2019-13".parse::<YearMonth>().is_err());
        assert!("2019".parse::<YearMonth>().is_err());
    }

    #[test]
    fn cashflow_invariants() {
        assert!(CashflowVector::new(vec![-1.0]).is_err());
        assert!(CashflowVector::new(vec![1.0, 2.0]).is_err());
        assert!(CashflowVector::new(vec![-1.0, f64::NAN]).is_err());
        let c = CashflowVector::new(vec![-100.0, 50.0, -3.0]).unwrap();
        assert_eq!(c.disbursement(), 100.0);
    }

    #[test]
    fn demographic_normalization_policy() {
        let (d, renorm) =
            DemographicWeights::new_normalized([0.7, 0.1, 0.1, 0.05, 0.05], [0.6, 0.4]).unwrap();
        assert!(!renorm);
        assert_eq!(d.race, [0.7, 0.1, 0.1, 0.05, 0.05]);

        let (d, renorm) =
            DemographicWeights::new_normalized([0.7 + 1e-7, 0.1, 0.1, 0.05, 0.05], [0.6, 0.4]).unwrap();
        assert!(renorm);
        assert!((d.race.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        assert!(DemographicWeights::new_normalized([0.5, 0.1, 0.1, 0.05, 0.05], [0.6, 0.4]).is_err());
        assert!(DemographicWeights::new_normalized([1.1, -0.1, 0.0, 0.0, 0.0], [0.6, 0.4]).is_err());
    }

    #[test]
    fn loan_default_month_window() {
        let mut loan = LoanRecord {
            loan_id: "L".into(),
            origination_date: "2019-01".parse().unwrap(),
            term_months: 36,
            principal: 1000.0,
            apr: 0.1,
            cashflow: CashflowVector::new(vec![-1000.0, 10.0]).unwrap(),
            features: vec![],
            target_return: None,
            defaulted: true,
            default_month: Some(42),
        };
        assert!(loan.validate(DEFAULT_GRACE_MONTHS).is_ok());
        loan.default_month = Some(43);
        assert!(loan.validate(DEFAULT_GRACE_MONTHS).is_err());
        loan.default_month = None;
        assert!(loan.validate(DEFAULT_GRACE_MONTHS).is_err());
    }
}
