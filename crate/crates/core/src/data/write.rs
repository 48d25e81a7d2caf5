//! Writers for the standard CSV layout, and a loader for the same layout.
//!
//! Numbers are written in Rust's shortest round-trip form, so writing and
//! re-reading a dataset reproduces every value bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ingest::{ingest_applications, ingest_demographics, ingest_loans, LoanSchema, DEMOGRAPHIC_COLUMNS};
use super::types::Dataset;
use crate::error::{AuditError, Result};

/// Paths of the four standard files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub loans: PathBuf,
    pub cashflows: Option<PathBuf>,
    pub demographics: PathBuf,
    pub applications: Option<PathBuf>,
}

impl DatasetPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            loans: d.join("loans.csv"),
            cashflows: Some(d.join("cashflows.csv")),
            demographics: d.join("demographics.csv"),
            applications: Some(d.join("applications.csv")),
        }
    }
}

/// Summary counters from [`load_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub loans: usize,
    pub applications: usize,
    pub shifted_month_zero: usize,
    pub renormalized_demographics: usize,
}

pub fn load_dataset(paths: &DatasetPaths, schema: Option<&LoanSchema>) -> Result<(Dataset, IngestSummary)> {
    let schema = match (schema, &paths.cashflows) {
        (Some(s), _) => s.clone(),
        (None, Some(cf)) => LoanSchema::long(cf),
        (None, None) => LoanSchema::default(),
    };
    let loans = ingest_loans(&paths.loans, &schema)?;
    let demos = ingest_demographics(&paths.demographics)?;
    let apps = match &paths.applications {
        Some(p) => ingest_applications(p)?,
        None => Vec::new(),
    };
    let summary = IngestSummary {
        loans: loans.loans.len(),
        applications: apps.len(),
        shifted_month_zero: loans.shifted,
        renormalized_demographics: demos.renormalized,
    };
    let mut ds = Dataset {
        loans: loans.loans,
        applications: apps,
        demographics: demos.weights,
    };
    ds.validate(schema.grace_months)?;
    ds.loans.shrink_to_fit();
    Ok((ds, summary))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| AuditError::csv(path, e))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Write the dataset as `loans.csv` + `cashflows.csv` (long format),
/// `demographics.csv` and `applications.csv`.
pub fn write_dataset(ds: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let k = ds.feature_width();
    let feature_cols: Vec<String> = (0..k).map(|i| format!("f_{i}")).collect();

    let p = &paths.loans;
    let mut w = writer(p)?;
    let mut head: Vec<String> = [
        "loan_id",
        "origination_date",
        "term_months",
        "principal",
        "apr",
        "defaulted",
        "default_month",
        "target_return",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    head.extend(feature_cols.iter().cloned());
    w.write_record(&head).map_err(|e| AuditError::csv(p, e))?;
    for l in &ds.loans {
        let mut row = vec![
            l.loan_id.clone(),
            l.origination_date.to_string(),
            l.term_months.to_string(),
            num(l.principal),
            num(l.apr),
            l.defaulted.to_string(),
            l.default_month.map(|m| m.to_string()).unwrap_or_default(),
            opt(l.target_return),
        ];
        row.extend(l.features.iter().map(|f| num(*f)));
        w.write_record(&row).map_err(|e| AuditError::csv(p, e))?;
    }
    w.flush().map_err(|e| AuditError::io(p, e))?;

    let p = paths
        .cashflows
        .as_ref()
        .ok_or_else(|| AuditError::Config("writing requires a cashflows path".into()))?;
    let mut w = writer(p)?;
    w.write_record(["loan_id", "month", "amount"]).map_err(|e| AuditError::csv(p, e))?;
    for l in &ds.loans {
        for (t, a) in l.cashflow.amounts().iter().enumerate() {
            // zeros are implicit, except the final month which fixes the length
            if *a != 0.0 || t + 1 == l.cashflow.len() {
                w.write_record([l.loan_id.as_str(), &t.to_string(), &num(*a)])
                    .map_err(|e| AuditError::csv(p, e))?;
            }
        }
    }
    w.flush().map_err(|e| AuditError::io(p, e))?;

    let p = &paths.demographics;
    let mut w = writer(p)?;
    w.write_record(DEMOGRAPHIC_COLUMNS).map_err(|e| AuditError::csv(p, e))?;
    for (id, d) in &ds.demographics {
        let mut row = vec![id.clone()];
        row.extend(d.as_features().iter().map(|x| num(*x)));
        w.write_record(&row).map_err(|e| AuditError::csv(p, e))?;
    }
    w.flush().map_err(|e| AuditError::io(p, e))?;

    if let Some(p) = &paths.applications {
        let mut w = writer(p)?;
        let mut head: Vec<String> = [
            "application_id",
            "applicant_id",
            "application_date",
            "requested_amount",
            "approved",
            "offered_apr",
            "funded",
            "fed_rate",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        head.extend(feature_cols.iter().cloned());
        w.write_record(&head).map_err(|e| AuditError::csv(p, e))?;
        for a in &ds.applications {
            let mut row = vec![
                a.application_id.clone(),
                a.applicant_id.clone(),
                a.application_date.map(|d| d.to_string()).unwrap_or_default(),
                num(a.requested_amount),
                a.approved.to_string(),
                opt(a.offered_apr),
                a.funded.to_string(),
                num(a.fed_rate),
            ];
            row.extend(a.features.iter().map(|f| num(*f)));
            w.write_record(&row).map_err(|e| AuditError::csv(p, e))?;
        }
        w.flush().map_err(|e| AuditError::io(p, e))?;
    }
    Ok(())
}
