use crate::error::{AuditError, Result};

/// Expected uncollected share of principal:
/// `(1 / P0) * sum_t f(t) (P_t - R_t)`.
///
/// `default_pmf[t]`, `remaining_principal[t]` and `recovery[t]` are indexed by
/// the same month; a shorter `recovery` is padded with zeros.
pub fn cumulative_loss_rate(
    principal: f64,
    default_pmf: &[f64],
    remaining_principal: &[f64],
    recovery: &[f64],
) -> Result<f64> {
    if !(principal > 0.0) {
        return Err(AuditError::Domain(format!("principal must be positive, got {principal}")));
    }
    if default_pmf.len() > remaining_principal.len() {
        return Err(AuditError::Domain(format!(
            "default pmf has {} months but remaining principal only {}",
            default_pmf.len(),
            remaining_principal.len()
        )));
    }
    if let Some(f) = default_pmf.iter().find(|f| !(**f >= 0.0)) {
        return Err(AuditError::Domain(format!("default probability {f} is negative")));
    }
    let mass: f64 = default_pmf.iter().sum();
    if mass > 1.0 + 1e-9 {
        return Err(AuditError::Domain(format!("default probabilities sum to {mass} > 1")));
    }
    let mut total = 0.0;
    for (t, f) in default_pmf.iter().enumerate() {
        let p = remaining_principal[t];
        let r = recovery.get(t).copied().unwrap_or(0.0);
        if p < 0.0 || r < 0.0 {
            return Err(AuditError::Domain(format!("negative principal or recovery at month {t}")));
        }
        total += f * (p - r);
    }
    Ok(total / principal)
}

/// Month-of-default distribution for a constant monthly hazard over `term` months.
/// Entry `t` (1-based, entry 0 is zero) is `(1-h)^(t-1) h`.
pub fn geometric_default_pmf(hazard: f64, term: u32) -> Vec<f64> {
    let mut f = vec![0.0; term as usize + 1];
    let mut survive = 1.0;
    for slot in f.iter_mut().skip(1) {
        *slot = survive * hazard;
        survive *= 1.0 - hazard;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass() {
        let mut f = vec![0.0; 13];
        f[7] = 1.0;
        let mut p = vec![100.0; 13];
        p[7] = 50.0;
        assert_eq!(cumulative_loss_rate(100.0, &f, &p, &[]).unwrap(), 0.5);
    }

    #[test]
    fn no_default() {
        assert_eq!(cumulative_loss_rate(100.0, &[0.0; 5], &[100.0; 5], &[]).unwrap(), 0.0);
    }

    #[test]
    fn excess_mass_is_a_domain_error() {
        assert!(cumulative_loss_rate(100.0, &[0.6, 0.6], &[100.0; 2], &[]).is_err());
        assert!(cumulative_loss_rate(100.0, &[-0.1, 0.6], &[100.0; 2], &[]).is_err());
    }

    #[test]
    fn geometric_pmf_sums_to_cumulative_risk() {
        let f = geometric_default_pmf(0.01, 36);
        let total: f64 = f.iter().sum();
        assert!((total - (1.0 - 0.99f64.powi(36))).abs() < 1e-12);
    }
}
