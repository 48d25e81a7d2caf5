//! Per-loan quantities precomputed once per audit.

use crate::amortization::unpaid_principal;
use crate::data::LoanRecord;
use crate::error::{AuditError, Result};
use crate::irr::{IrrResult, IrrSolver};

/// Column-oriented view of a loan collection with everything the group
/// statistics need: calendar-aligned cashflows, individual IRRs, default
/// flags, target returns and unpaid principal.
#[derive(Debug, Clone)]
pub struct LoanFrame {
    pub ids: Vec<String>,
    /// Calendar month index of offset 0 on the common axis.
    pub first_month: i64,
    pub horizon: usize,
    pub offsets: Vec<usize>,
    pub cashflows: Vec<Vec<f64>>,
    pub irr: Vec<IrrResult>,
    pub defaulted: Vec<f64>,
    pub target_return: Vec<Option<f64>>,
    pub principal: Vec<f64>,
    pub unpaid_principal: Vec<f64>,
    pub apr: Vec<f64>,
    pub solver: IrrSolver,
}

impl LoanFrame {
    pub fn build(loans: &[LoanRecord], solver: IrrSolver) -> Result<Self> {
        if loans.is_empty() {
            return Err(AuditError::Degenerate("no loans".into()));
        }
        let first_month = loans.iter().map(|l| l.origination_date.index()).min().unwrap_or(0);
        let mut offsets = Vec::with_capacity(loans.len());
        let mut horizon = 0;
        for l in loans {
            let off = (l.origination_date.index() - first_month) as usize;
            horizon = horizon.max(off + l.cashflow.len());
            offsets.push(off);
        }
        let mut unpaid = Vec::with_capacity(loans.len());
        for l in loans {
            let lost = if l.defaulted {
                if l.default_month.is_none() {
                    return Err(AuditError::record(&l.loan_id, "defaulted loan without default_month"));
                }
                unpaid_principal(l.principal, l.apr, l.cashflow.receipts())
            } else {
                0.0
            };
            unpaid.push(lost);
        }
        let irr = loans.iter().map(|l| solver.irr(&l.cashflow)).collect();
        Ok(Self {
            ids: loans.iter().map(|l| l.loan_id.clone()).collect(),
            first_month,
            horizon,
            offsets,
            cashflows: loans.iter().map(|l| l.cashflow.amounts().to_vec()).collect(),
            irr,
            defaulted: loans.iter().map(|l| l.defaulted as u8 as f64).collect(),
            target_return: loans.iter().map(|l| l.target_return).collect(),
            principal: loans.iter().map(|l| l.principal).collect(),
            unpaid_principal: unpaid,
            apr: loans.iter().map(|l| l.apr).collect(),
            solver,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `sum_i w_i cashflow_i` on the common calendar axis.
    pub fn aggregate(&self, weights: &[f64]) -> Vec<f64> {
        let mut agg = vec![0.0; self.horizon];
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let off = self.offsets[i];
            for (slot, a) in agg[off..].iter_mut().zip(&self.cashflows[i]) {
                *slot += w * a;
            }
        }
        agg
    }

    /// Loans whose IRR has no root; they drop out of IRR means.
    pub fn no_sign_change_count(&self) -> usize {
        self.irr.iter().filter(|r| r.usable_rate().is_none()).count()
    }
}
