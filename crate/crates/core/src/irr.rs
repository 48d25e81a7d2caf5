//! Net present value and annualized internal rate of return over monthly
//! cashflow vectors.
//!
//! The solver brackets the root nearest a zero monthly rate on a fixed grid,
//! then runs Newton steps safeguarded by that bracket, finishing with plain
//! bisection if Newton stalls. Loan cashflows (one outflow followed by
//! receipts) have a single root, so the bracket only matters for pooled
//! vectors with later outflows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CashflowVector, LoanRecord, YearMonth};
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrrStatus {
    Converged,
    /// No receipt after disbursement: a total loss, reported as -100%.
    ImmediateDefault,
    /// NPV never changes sign on the search range.
    NoSignChange,
}

/// How a monthly rate becomes an annual one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annualization {
    /// `(1 + m)^12 - 1`
    #[default]
    Geometric,
    /// `12 m`
    Linear,
}

impl Annualization {
    pub fn annualize(&self, monthly: f64) -> f64 {
        match self {
            Annualization::Geometric => (1.0 + monthly).powi(12) - 1.0,
            Annualization::Linear => 12.0 * monthly,
        }
    }

    pub fn monthly(&self, annual: f64) -> f64 {
        match self {
            Annualization::Geometric => (1.0 + annual).powf(1.0 / 12.0) - 1.0,
            Annualization::Linear => annual / 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrrResult {
    pub annualized_rate: f64,
    pub monthly_rate: f64,
    pub status: IrrStatus,
    pub iterations: u32,
}

impl IrrResult {
    pub fn is_converged(&self) -> bool {
        self.status == IrrStatus::Converged
    }

    /// The rate used in group statistics: converged rates and total losses.
    pub fn usable_rate(&self) -> Option<f64> {
        match self.status {
            IrrStatus::NoSignChange => None,
            _ => Some(self.annualized_rate),
        }
    }

    fn immediate_default() -> Self {
        Self {
            annualized_rate: -1.0,
            monthly_rate: -1.0,
            status: IrrStatus::ImmediateDefault,
            iterations: 0,
        }
    }

    fn no_sign_change(iterations: u32) -> Self {
        Self {
            annualized_rate: f64::NAN,
            monthly_rate: f64::NAN,
            status: IrrStatus::NoSignChange,
            iterations,
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrrSolver {
    /// Residual tolerance on NPV, relative to the disbursement.
    pub abs_tol: f64,
    pub max_newton: u32,
    pub max_bisection: u32,
    /// Largest monthly rate searched.
    pub rate_ceiling: f64,
    pub annualization: Annualization,
}

impl Default for IrrSolver {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_newton: 100,
            max_bisection: 200,
            rate_ceiling: 10.0,
            annualization: Annualization::Geometric,
        }
    }
}

/// Net present value at a monthly rate: `sum_t amounts[t] / (1 + m)^t`.
pub fn npv(cashflow: &CashflowVector, monthly_rate: f64) -> Result<f64> {
    npv_amounts(cashflow.amounts(), monthly_rate)
}

pub fn npv_amounts(amounts: &[f64], monthly_rate: f64) -> Result<f64> {
    if !(monthly_rate > -1.0) {
        return Err(AuditError::Domain(format!(
            "monthly rate must exceed -1, got {monthly_rate}"
        )));
    }
    Ok(npv_unchecked(amounts, monthly_rate))
}

fn npv_unchecked(amounts: &[f64], m: f64) -> f64 {
    let v = 1.0 / (1.0 + m);
    amounts.iter().rev().fold(0.0, |acc, a| acc * v + a)
}

/// NPV and its derivative in `m`.
fn npv_and_slope(amounts: &[f64], m: f64) -> (f64, f64) {
    let v = 1.0 / (1.0 + m);
    let mut f = 0.0;
    let mut df = 0.0;
    let mut vt = 1.0;
    for (t, a) in amounts.iter().enumerate() {
        f += a * vt;
        df -= t as f64 * a * vt * v;
        vt *= v;
    }
    (f, df)
}

/// Sign-equivalent NPV that stays finite as `m -> -1`: `NPV(m) (1+m)^T`.
fn scaled_npv(amounts: &[f64], m: f64) -> f64 {
    if m >= 0.0 {
        return npv_unchecked(amounts, m);
    }
    let g = 1.0 + m;
    amounts.iter().fold(0.0, |acc, a| acc * g + a)
}

/// Search grid for bracketing, ordered by distance from zero on each side.
fn bracket_grid(ceiling: f64) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut m = 0.0005;
    while m < ceiling {
        pos.push(m);
        m *= 1.25;
    }
    pos.push(ceiling);
    let mut neg = Vec::new();
    let mut x: f64 = 0.0005;
    // -(1 - e^{-x}) reaches -1 + 1e-6 at x ~ 13.8
    while x < 13.8 {
        neg.push(-(1.0 - (-x).exp()));
        x *= 1.25;
    }
    (pos, neg)
}

impl IrrSolver {
    pub fn irr(&self, cashflow: &CashflowVector) -> IrrResult {
        self.solve(cashflow.amounts())
    }

    /// Solve any finite monthly series; leading zero months are ignored.
    pub fn solve(&self, amounts: &[f64]) -> IrrResult {
        let start = match amounts.iter().position(|a| *a != 0.0) {
            Some(s) => s,
            None => return IrrResult::no_sign_change(0),
        };
        let raw = &amounts[start..];
        if raw.len() < 2 {
            return if raw[0] < 0.0 {
                IrrResult::immediate_default()
            } else {
                IrrResult::no_sign_change(0)
            };
        }
        if raw[0] < 0.0 && raw[1..].iter().all(|a| *a == 0.0) {
            return IrrResult::immediate_default();
        }
        let scale = raw[0].abs();
        let b: Vec<f64> = raw.iter().map(|a| a / scale).collect();
        match self.bracket(&b) {
            Bracket::Exact(m) => self.finish(m, 0),
            Bracket::Interval(lo, hi) => self.refine(&b, lo, hi),
            Bracket::None(evals) => IrrResult::no_sign_change(evals),
        }
    }

    fn finish(&self, m: f64, iterations: u32) -> IrrResult {
        IrrResult {
            annualized_rate: self.annualization.annualize(m),
            monthly_rate: m,
            status: IrrStatus::Converged,
            iterations,
        }
    }

    fn bracket(&self, b: &[f64]) -> Bracket {
        let f0 = scaled_npv(b, 0.0);
        if f0 == 0.0 {
            return Bracket::Exact(0.0);
        }
        let (pos, neg) = bracket_grid(self.rate_ceiling);
        let mut evals = 1;
        let (mut prev_p, mut fp_prev) = (0.0, f0);
        let (mut prev_n, mut fn_prev) = (0.0, f0);
        let (mut ip, mut ineg) = (0, 0);
        // Walk outward on both sides, always advancing the side nearer zero.
        while ip < pos.len() || ineg < neg.len() {
            let take_pos = ineg >= neg.len() || (ip < pos.len() && pos[ip] <= -neg[ineg]);
            if take_pos {
                let m = pos[ip];
                let f = scaled_npv(b, m);
                evals += 1;
                if f == 0.0 {
                    return Bracket::Exact(m);
                }
                if f.signum() != fp_prev.signum() {
                    return Bracket::Interval(prev_p, m);
                }
                prev_p = m;
                fp_prev = f;
                ip += 1;
            } else {
                let m = neg[ineg];
                let f = scaled_npv(b, m);
                evals += 1;
                if f == 0.0 {
                    return Bracket::Exact(m);
                }
                if f.signum() != fn_prev.signum() {
                    return Bracket::Interval(m, prev_n);
                }
                prev_n = m;
                fn_prev = f;
                ineg += 1;
            }
        }
        Bracket::None(evals)
    }

    /// Newton safeguarded by `[lo, hi]`, then bisection.
    fn refine(&self, b: &[f64], mut lo: f64, mut hi: f64) -> IrrResult {
        let f_lo_sign = scaled_npv(b, lo).signum();
        let guess = initial_guess(b);
        let mut m = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
        let mut iterations = 0;
        let mut last_step = f64::INFINITY;
        for _ in 0..self.max_newton {
            iterations += 1;
            let (f, df) = npv_and_slope(b, m);
            if !f.is_finite() || !df.is_finite() {
                break;
            }
            if f == 0.0 {
                return self.finish(m, iterations);
            }
            if f.signum() == f_lo_sign {
                lo = m;
            } else {
                hi = m;
            }
            if f.abs() <= self.abs_tol && last_step.abs() <= 4.0 * f64::EPSILON * (1.0 + m.abs()) {
                return self.finish(m, iterations);
            }
            let mut next = if df != 0.0 { m - f / df } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            last_step = next - m;
            m = next;
            if hi - lo <= f64::EPSILON * (1.0 + m.abs()) {
                return self.finish(m, iterations);
            }
        }
        for _ in 0..self.max_bisection {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f = scaled_npv(b, mid);
            if f == 0.0 {
                return self.finish(mid, iterations);
            }
            if f.signum() == f_lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.finish(0.5 * (lo + hi), iterations)
    }
}

enum Bracket {
    Exact(f64),
    Interval(f64, f64),
    None(u32),
}

/// Simple-yield starting point: total receipts over the outflow, spread over
/// the receipts' mean timing.
fn initial_guess(b: &[f64]) -> f64 {
    let receipts: f64 = b[1..].iter().sum();
    let timing: f64 = b.iter().enumerate().skip(1).map(|(t, a)| t as f64 * a).sum();
    if receipts <= 0.0 || timing <= 0.0 {
        return 0.0;
    }
    let duration = timing / receipts;
    (receipts / b[0].abs()).powf(1.0 / duration) - 1.0
}

/// IRR with default solver settings.
pub fn irr(cashflow: &CashflowVector) -> IrrResult {
    IrrSolver::default().irr(cashflow)
}

/// A pooled cashflow aligned on the calendar, starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCashflow {
    pub start: YearMonth,
    pub cashflow: CashflowVector,
}

/// Sum `w_i * cashflow_i` month by month on the calendar axis.
///
/// Loans with zero weight are skipped; the result starts at the earliest
/// origination among positively weighted loans.
pub fn aggregate_cashflows<'a>(
    loans: impl IntoIterator<Item = (&'a LoanRecord, f64)>,
) -> Result<AggregateCashflow> {
    let mut by_month: BTreeMap<i64, f64> = BTreeMap::new();
    let mut any = false;
    for (loan, w) in loans {
        if !(w.is_finite() && w >= 0.0) {
            return Err(AuditError::Domain(format!(
                "loan {}: weight must be finite and non-negative, got {w}",
                loan.loan_id
            )));
        }
        if w == 0.0 {
            continue;
        }
        any = true;
        let base = loan.origination_date.index();
        for (t, a) in loan.cashflow.amounts().iter().enumerate() {
            *by_month.entry(base + t as i64).or_insert(0.0) += w * a;
        }
    }
    if !any {
        return Err(AuditError::Degenerate(
            "aggregate of an empty collection or all-zero weights".into(),
        ));
    }
    let first = *by_month.keys().next().expect("non-empty");
    let last = *by_month.keys().next_back().expect("non-empty");
    let mut amounts = vec![0.0; (last - first + 1) as usize];
    for (k, v) in by_month {
        amounts[(k - first) as usize] = v;
    }
    if amounts.len() < 2 {
        amounts.push(0.0);
    }
    Ok(AggregateCashflow {
        start: YearMonth::from_index(first),
        cashflow: CashflowVector::new(amounts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cf(v: Vec<f64>) -> CashflowVector {
        CashflowVector::new(v).unwrap()
    }

    fn single_repayment() -> CashflowVector {
        let mut v = vec![0.0; 13];
        v[0] = -100.0;
        v[12] = 110.0;
        cf(v)
    }

    fn annuity() -> CashflowVector {
        let mut v = vec![88.8488; 13];
        v[0] = -1000.0;
        cf(v)
    }

    #[test]
    fn npv_examples() {
        assert_abs_diff_eq!(npv(&cf(vec![-100.0, 110.0]), 0.10).unwrap(), 0.0, epsilon = 1e-12);
        let mut z = vec![0.0; 13];
        z[0] = -100.0;
        z[12] = 100.0;
        assert_eq!(npv(&cf(z), 0.0).unwrap(), 0.0);
        // annuity payment oracle P i / (1 - (1+i)^-n)
        let pay = 1000.0 * 0.01 / (1.0 - 1.01f64.powi(-12));
        assert_abs_diff_eq!(pay, 88.8488, epsilon = 1e-4);
        assert_abs_diff_eq!(npv(&annuity(), 0.01).unwrap(), 0.0, epsilon = 1e-3);
        assert!(npv(&annuity(), -1.0).is_err());
    }

    #[test]
    fn single_repayment_is_ten_percent() {
        let r = irr(&single_repayment());
        assert_eq!(r.status, IrrStatus::Converged);
        assert_abs_diff_eq!(r.annualized_rate, 0.10, epsilon = 1e-12);
    }

    #[test]
    fn annuity_matches_closed_form() {
        let r = irr(&annuity());
        assert_abs_diff_eq!(r.annualized_rate, 1.01f64.powi(12) - 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.annualized_rate, 0.126825, epsilon = 1e-6);
    }

    #[test]
    fn no_receipts_is_total_loss() {
        let r = irr(&cf(vec![-500.0, 0.0, 0.0, 0.0]));
        assert_eq!(r.status, IrrStatus::ImmediateDefault);
        assert_eq!(r.annualized_rate, -1.0);
    }

    #[test]
    fn negative_receipts_only_have_no_root() {
        let r = irr(&cf(vec![-500.0, -1.0, 0.0]));
        assert_eq!(r.status, IrrStatus::NoSignChange);
        assert!(r.usable_rate().is_none());
    }

    #[test]
    fn deep_loss_converges_near_minus_one() {
        let r = irr(&cf(vec![-1000.0, 1.0, 0.0, 0.0]));
        assert!(r.is_converged());
        assert_abs_diff_eq!(r.monthly_rate, -0.999, epsilon = 1e-9);
    }

    #[test]
    fn annualization_identity() {
        let r = irr(&annuity());
        assert_eq!(r.annualized_rate, (1.0 + r.monthly_rate).powi(12) - 1.0);
        let lin = IrrSolver {
            annualization: Annualization::Linear,
            ..IrrSolver::default()
        };
        let r = lin.irr(&annuity());
        assert_abs_diff_eq!(r.annualized_rate, 0.12, epsilon = 1e-6);
    }

    #[test]
    fn multiple_roots_prefer_the_one_nearest_zero() {
        // (1+m)^-2 form with roots at m = 0.1 and m = 1.0: -1 + 3.1 v - 2.2 v^2 ... scaled
        // NPV(m) = -1 + 3.1/(1+m) - 2.2/(1+m)^2 has roots v = 1/1.1 and v = 1/2.
        let c = cf(vec![-1.0, 3.1, -2.2]);
        let r = irr(&c);
        assert!(r.is_converged());
        assert_abs_diff_eq!(r.monthly_rate, 0.1, epsilon = 1e-10);
    }

    fn loan(id: &str, start: &str, amounts: Vec<f64>) -> LoanRecord {
        LoanRecord {
            loan_id: id.into(),
            origination_date: start.parse().unwrap(),
            term_months: amounts.len() as u32 - 1,
            principal: -amounts[0],
            apr: 0.1,
            cashflow: cf(amounts),
            features: vec![],
            target_return: None,
            defaulted: false,
            default_month: None,
        }
    }

    #[test]
    fn aggregation_linearity_and_alignment() {
        let a = loan("a", "2019-01", vec![-100.0, 60.0, 60.0]);
        let agg = aggregate_cashflows([(&a, 1.0), (&a, 1.0)]).unwrap();
        assert_eq!(agg.cashflow.amounts(), &[-200.0, 120.0, 120.0]);
        let agg = aggregate_cashflows([(&a, 0.25)]).unwrap();
        assert_eq!(agg.cashflow.amounts(), &[-25.0, 15.0, 15.0]);

        // hand-summed three-loan calendar case
        let b = loan("b", "2019-02", vec![-50.0, 30.0, 30.0]);
        let c = loan("c", "2019-04", vec![-10.0, 11.0]);
        let agg = aggregate_cashflows([(&a, 1.0), (&b, 2.0), (&c, 1.0)]).unwrap();
        assert_eq!(agg.start.to_string(), "2019-01");
        // Jan: -100; Feb: 60 - 100; Mar: 60 + 60; Apr: 60 - 10; May: 11
        assert_eq!(agg.cashflow.amounts(), &[-100.0, -40.0, 120.0, 50.0, 11.0]);

        assert!(aggregate_cashflows([(&a, 0.0)]).is_err());
        assert!(aggregate_cashflows(std::iter::empty()).is_err());
    }
}
