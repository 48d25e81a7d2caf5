use lendaudit::irr::{Annualization, IrrSolver, IrrStatus};
use proptest::prelude::*;

fn npv(c: &[f64], m: f64) -> f64 {
    c.iter().enumerate().map(|(t, a)| a / (1.0 + m).powi(t as i32)).sum()
}

/// An outflow followed by non-negative receipts, at least one positive.
fn cashflow() -> impl Strategy<Value = Vec<f64>> {
    (100.0..50_000.0f64, prop::collection::vec(prop_oneof![1 => Just(0.0), 5 => 0.0..3.0f64], 1..60)).prop_map(|(p, r)| {
        let n = r.len() as f64;
        let mut c = vec![-p];
        c.extend(r.iter().map(|x| x * p / n));
        if c[1..].iter().all(|a| *a == 0.0) {
            *c.last_mut().unwrap() = p;
        }
        c
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scale_does_not_move_the_root(c in cashflow(), e in -3.0..3.0f64) {
        let k = 10f64.powf(e);
        let s = IrrSolver::default();
        let (x, y) = (s.solve(&c), s.solve(&c.iter().map(|a| a * k).collect::<Vec<_>>()));
        prop_assert_eq!(x.status, y.status);
        prop_assert!((x.monthly_rate - y.monthly_rate).abs() <= 1e-12);
    }

    #[test]
    fn raising_a_receipt_raises_the_rate(c in cashflow(), pick in any::<prop::sample::Index>(), bump in 0.01..0.5f64) {
        let s = IrrSolver::default();
        let positive: Vec<usize> = (1..c.len()).filter(|&t| c[t] > 0.0).collect();
        let t = positive[pick.index(positive.len())];
        let mut d = c.clone();
        d[t] *= 1.0 + bump;
        let (x, y) = (s.solve(&c), s.solve(&d));
        prop_assert_eq!(x.status, IrrStatus::Converged);
        prop_assert!(y.monthly_rate > x.monthly_rate, "{} !> {}", y.monthly_rate, x.monthly_rate);
    }

    #[test]
    fn npv_vanishes_at_the_root(c in cashflow()) {
        let s = IrrSolver::default();
        let r = s.solve(&c);
        prop_assert_eq!(r.status, IrrStatus::Converged);
        prop_assert!(npv(&c, r.monthly_rate).abs() <= s.abs_tol * c[0].abs() * 10.0);
    }

    #[test]
    fn annualization_identity(c in cashflow()) {
        let r = IrrSolver::default().solve(&c);
        prop_assert_eq!(r.annualized_rate, (1.0 + r.monthly_rate).powi(12) - 1.0);
        let lin = IrrSolver { annualization: Annualization::Linear, ..IrrSolver::default() }.solve(&c);
        prop_assert_eq!(lin.annualized_rate, 12.0 * lin.monthly_rate);
    }
}

#[test]
fn all_zero_receipts_are_an_immediate_default() {
    let r = IrrSolver::default().solve(&[-250.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(r.status, IrrStatus::ImmediateDefault);
    assert_eq!(r.annualized_rate, -1.0);
    assert_eq!(r.usable_rate(), Some(-1.0));
}

#[test]
fn same_signed_flows_have_no_rate() {
    let r = IrrSolver::default().solve(&[100.0, 10.0, 10.0]);
    assert_eq!(r.status, IrrStatus::NoSignChange);
    assert_eq!(r.usable_rate(), None);
}
