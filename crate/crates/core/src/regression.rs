//! Least squares and (penalized, weighted) logistic regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::stats::logistic;

/// Ordinary least squares result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n: usize,
    pub r_squared: f64,
    /// Residual standard error, `sqrt(RSS / (n - p))`.
    pub sigma: f64,
}

/// Build a dense design matrix from row slices.
pub fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// OLS via the SVD. Fails when the design is rank deficient.
///
/// `r_squared` is centred when the design has a constant column and
/// uncentred otherwise.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(AuditError::Domain(format!("{n} rows but {} responses", y.len())));
    }
    if n <= p {
        return Err(AuditError::RankDeficient(format!("{n} observations for {p} coefficients")));
    }
    // scale columns so the rank test is unit-free
    let scale: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    if let Some(j) = scale.iter().position(|s| *s == 0.0) {
        return Err(AuditError::RankDeficient(format!("column {j} is identically zero")));
    }
    let xs = DMatrix::from_fn(n, p, |i, j| x[(i, j)] / scale[j]);
    let svd = xs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-10) {
        return Err(AuditError::RankDeficient(format!(
            "design matrix is rank deficient (condition number {:.3e})",
            smax / smin
        )));
    }
    let yv = DVector::from_column_slice(y);
    let bs = svd
        .solve(&yv, 0.0)
        .map_err(|e| AuditError::Numerical(format!("least squares solve failed: {e}")))?;
    let fitted = &xs * &bs;
    let rss: f64 = (&yv - &fitted).norm_squared();
    let sigma2 = rss / (n - p) as f64;
    // (X'X)^{-1} = V S^-2 V'
    let v_t = svd.v_t.as_ref().expect("V requested");
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let cov = v_t.transpose() * inv_s2 * v_t;
    let has_const = (0..p).any(|j| {
        let c = x.column(j);
        c.iter().all(|v| *v == c[0])
    });
    let tss = if has_const {
        let m = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    Ok(LinearFit {
        coefficients: (0..p).map(|j| bs[j] / scale[j]).collect(),
        standard_errors: (0..p).map(|j| (sigma2 * cov[(j, j)]).sqrt() / scale[j]).collect(),
        n,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        sigma: sigma2.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Stop once the gradient norm per unit of total weight is below this.
    pub tol: f64,
    /// Quadratic penalty `0.5 b' P b` on the coefficients.
    pub penalty: Option<DMatrix<f64>>,
    /// Check for (quasi-)separation after fitting.
    pub detect_separation: bool,
    /// Starting coefficients; zeros when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            penalty: None,
            detect_separation: true,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Inverse of the (penalized) observed information.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub n: usize,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        logistic(self.linear_predictor(row))
    }
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted log-likelihood `sum w (y eta - log(1 + e^eta))` minus the penalty.
fn objective(x: &DMatrix<f64>, y: &[f64], w: &[f64], b: &DVector<f64>, pen: Option<&DMatrix<f64>>) -> f64 {
    let eta = x * b;
    let mut ll = 0.0;
    for i in 0..y.len() {
        if w[i] != 0.0 {
            ll += w[i] * (y[i] * eta[i] - log1pexp(eta[i]));
        }
    }
    if let Some(p) = pen {
        ll -= 0.5 * b.dot(&(p * b));
    }
    ll
}

/// Maximum-likelihood logistic regression by damped Newton.
///
/// `y` holds outcomes in [0, 1]; `weights` defaults to ones.
pub fn logistic_regression(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    options: &LogisticOptions,
) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(AuditError::Domain(format!("{n} rows but {} responses", y.len())));
    }
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(AuditError::Degenerate("logistic regression with zero total weight".into()));
    }
    let pen = options.penalty.as_ref();
    let mut b = match &options.start {
        Some(s) if s.len() == p => DVector::from_column_slice(s),
        _ => DVector::zeros(p),
    };
    let mut ll = objective(x, y, w, &b, pen);
    let mut iterations = 0;
    let mut hessian = DMatrix::zeros(p, p);
    let mut converged = false;
    for it in 0..=options.max_iter {
        let eta = x * &b;
        let mut grad = DVector::zeros(p);
        hessian.fill(0.0);
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let mu = logistic(eta[i]);
            let r = w[i] * (y[i] - mu);
            let v = w[i] * mu * (1.0 - mu);
            let row = x.row(i);
            for a in 0..p {
                grad[a] += r * row[a];
                let va = v * row[a];
                for c in a..p {
                    hessian[(a, c)] += va * row[c];
                }
            }
        }
        for a in 0..p {
            for c in 0..a {
                hessian[(a, c)] = hessian[(c, a)];
            }
        }
        if let Some(pm) = pen {
            grad -= pm * &b;
            hessian += pm;
        }
        if grad.norm() / total <= options.tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == options.max_iter {
            iterations = it;
            break;
        }
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let svd = hessian.clone().svd(true, true);
                svd.solve(&grad, 1e-12 * svd.singular_values.max())
                    .map_err(|e| AuditError::Numerical(format!("singular information matrix: {e}")))?
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &b + &step * t;
            let cll = objective(x, y, w, &cand, pen);
            if cll >= ll - 1e-12 * ll.abs().max(1.0) {
                b = cand;
                ll = cll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent direction left at working precision
            converged = true;
            iterations = it;
            break;
        }
    }
    if options.detect_separation {
        check_separation(x, y, w, &b)?;
    }
    if !converged {
        return Err(AuditError::Numerical(format!(
            "logistic regression did not converge in {} iterations",
            options.max_iter
        )));
    }
    let covariance = match hessian.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            return Err(AuditError::Separation(
                "information matrix is singular at the optimum".into(),
            ))
        }
    };
    Ok(LogisticFit {
        coefficients: b.iter().copied().collect(),
        standard_errors: (0..p).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect(),
        covariance,
        log_likelihood: ll,
        iterations,
        n,
    })
}

/// Complete separation leaves every fitted probability at its label;
/// quasi-separation shows up as a coefficient implying an implausible
/// log-odds change across one standard deviation of its regressor.
fn check_separation(x: &DMatrix<f64>, y: &[f64], w: &[f64], b: &DVector<f64>) -> Result<()> {
    let eta = x * b;
    let live: Vec<usize> = (0..y.len()).filter(|i| w[*i] > 0.0).collect();
    let fitted_exactly = live.iter().all(|&i| (y[i] - logistic(eta[i])).abs() < 1e-6);
    if fitted_exactly {
        return Err(AuditError::Separation(
            "outcomes are perfectly separated by the regressors; the likelihood has no finite maximum".into(),
        ));
    }
    let total: f64 = live.iter().map(|&i| w[i]).sum();
    for j in 0..x.ncols() {
        let m = live.iter().map(|&i| w[i] * x[(i, j)]).sum::<f64>() / total;
        let var = live.iter().map(|&i| w[i] * (x[(i, j)] - m).powi(2)).sum::<f64>() / total;
        if var > 0.0 && (b[j] * var.sqrt()).abs() > 30.0 {
            return Err(AuditError::Separation(format!(
                "coefficient {j} is {:.3e}, a log-odds change above 30 per standard deviation; \
                 outcomes are (quasi-)separated",
                b[j]
            )));
        }
    }
    Ok(())
}
