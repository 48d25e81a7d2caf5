//! Level-payment amortization at a contract APR (monthly rate = APR / 12).

/// Monthly payment that retires `principal` over `term` months.
pub fn payment(principal: f64, apr: f64, term: u32) -> f64 {
    let i = apr / 12.0;
    if i == 0.0 {
        return principal / term as f64;
    }
    principal * i / (1.0 - (1.0 + i).powi(-(term as i32)))
}

/// Scheduled balance after `k` on-time payments.
pub fn balance_after(principal: f64, apr: f64, term: u32, k: u32) -> f64 {
    let k = k.min(term);
    let i = apr / 12.0;
    if i == 0.0 {
        return principal * (1.0 - k as f64 / term as f64);
    }
    let a = payment(principal, apr, term);
    let g = (1.0 + i).powi(k as i32);
    (principal * g - a * (g - 1.0) / i).max(0.0)
}

/// Scheduled balances `B_0 = principal, B_1, ..., B_term = 0`.
pub fn schedule_balances(principal: f64, apr: f64, term: u32) -> Vec<f64> {
    let i = apr / 12.0;
    let a = payment(principal, apr, term);
    let mut out = Vec::with_capacity(term as usize + 1);
    let mut b = principal;
    out.push(b);
    for _ in 0..term {
        b = (b * (1.0 + i) - a).max(0.0);
        out.push(b);
    }
    if let Some(last) = out.last_mut() {
        *last = 0.0;
    }
    out
}

/// Principal still owed after applying `receipts` (months 1, 2, ...) at the
/// contract rate. Each receipt first covers the month's interest; only the
/// remainder retires principal, and a shortfall is not capitalized.
pub fn unpaid_principal(principal: f64, apr: f64, receipts: &[f64]) -> f64 {
    let i = apr / 12.0;
    let mut balance = principal;
    for r in receipts {
        if balance <= 0.0 {
            break;
        }
        let interest = balance * i;
        let toward_principal = (r - interest).max(0.0);
        balance = (balance - toward_principal).max(0.0);
    }
    balance
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_retires_principal() {
        let b = schedule_balances(1000.0, 0.12, 12);
        assert_eq!(b.len(), 13);
        assert_eq!(b[12], 0.0);
        assert_abs_diff_eq!(payment(1000.0, 0.12, 12), 88.84878867834166, epsilon = 1e-9);
        for k in 0..=12 {
            assert_abs_diff_eq!(b[k as usize], balance_after(1000.0, 0.12, 12, k), epsilon = 1e-8);
        }
    }

    #[test]
    fn receipts_on_schedule_track_balances() {
        let a = payment(5000.0, 0.2, 36);
        let receipts = vec![a; 18];
        assert_abs_diff_eq!(
            unpaid_principal(5000.0, 0.2, &receipts),
            balance_after(5000.0, 0.2, 36, 18),
            epsilon = 1e-8
        );
        assert!(unpaid_principal(5000.0, 0.2, &vec![a; 36]) < 1e-8);
        assert_eq!(unpaid_principal(5000.0, 0.2, &[]), 5000.0);
    }

    #[test]
    fn zero_rate() {
        assert_eq!(payment(1200.0, 0.0, 12), 100.0);
        assert_eq!(balance_after(1200.0, 0.0, 12, 3), 900.0);
    }
}
