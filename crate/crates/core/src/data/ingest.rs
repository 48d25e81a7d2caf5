//! CSV ingestion for loans, cashflows, applications and demographics.
//!
//! Loans come with their cashflows either in a companion long-format file
//! (`loan_id,month,amount`) or inline as wide columns `cf_0..cf_T`. Any
//! receipt recorded in month 0 is moved to month 1 so that the first
//! observed payment always follows disbursement.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{
    ApplicationRecord, CashflowVector, DemographicWeights, LoanRecord, YearMonth,
    DEFAULT_GRACE_MONTHS,
};
use crate::error::{AuditError, Result};

/// Where a loan's cashflows live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum CashflowLayout {
    /// Companion file with one row per (loan, month).
    Long {
        path: PathBuf,
        #[serde(default = "col_loan_id")]
        loan_id: String,
        #[serde(default = "col_month")]
        month: String,
        #[serde(default = "col_amount")]
        amount: String,
    },
    /// Columns `<prefix>0, <prefix>1, ...` on the loans file itself.
    Wide {
        #[serde(default = "col_cf_prefix")]
        prefix: String,
    },
}

fn col_loan_id() -> String {
    "loan_id".into()
}
fn col_month() -> String {
    "month".into()
}
fn col_amount() -> String {
    "amount".into()
}
fn col_cf_prefix() -> String {
    "cf_".into()
}

/// Logical column → file column mapping for the loans file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoanSchema {
    pub loan_id: String,
    pub origination_date: String,
    pub term_months: String,
    pub principal: String,
    pub apr: String,
    pub defaulted: String,
    pub default_month: String,
    pub target_return: String,
    pub feature_prefix: String,
    pub grace_months: u32,
    pub cashflows: CashflowLayout,
}

impl Default for LoanSchema {
    fn default() -> Self {
        Self {
            loan_id: "loan_id".into(),
            origination_date: "origination_date".into(),
            term_months: "term_months".into(),
            principal: "principal".into(),
            apr: "apr".into(),
            defaulted: "defaulted".into(),
            default_month: "default_month".into(),
            target_return: "target_return".into(),
            feature_prefix: "f_".into(),
            grace_months: DEFAULT_GRACE_MONTHS,
            cashflows: CashflowLayout::Wide {
                prefix: col_cf_prefix(),
            },
        }
    }
}

impl LoanSchema {
    /// Default column names with a long-format cashflow file.
    pub fn long(cashflow_path: impl Into<PathBuf>) -> Self {
        Self {
            cashflows: CashflowLayout::Long {
                path: cashflow_path.into(),
                loan_id: col_loan_id(),
                month: col_month(),
                amount: col_amount(),
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoanIngest {
    pub loans: Vec<LoanRecord>,
    /// Loans whose month-0 receipt was moved to month 1.
    pub shifted: usize,
}

#[derive(Debug, Clone)]
pub struct DemographicsIngest {
    pub weights: BTreeMap<String, DemographicWeights>,
    pub renormalized: usize,
}

/// Column names of the demographics file, in vector order.
pub const DEMOGRAPHIC_COLUMNS: [&str; 8] = [
    "id", "p_white", "p_black", "p_hispanic", "p_asian", "p_other", "p_woman", "p_man",
];

struct Header {
    file: String,
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Header {
    fn read(reader: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Self> {
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| AuditError::csv(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            file: path.display().to_string(),
            index,
            names,
        })
    }

    fn require(&self, column: &str) -> Result<usize> {
        self.index.get(column).copied().ok_or_else(|| AuditError::Schema {
            file: self.file.clone(),
            column: column.to_string(),
        })
    }

    fn optional(&self, column: &str) -> Option<usize> {
        self.index.get(column).copied()
    }

    /// Columns `<prefix>0..<prefix>k-1`, contiguous from zero.
    fn indexed(&self, prefix: &str) -> Vec<usize> {
        (0..)
            .map(|k| self.index.get(&format!("{prefix}{k}")).copied())
            .take_while(Option::is_some)
            .flatten()
            .collect()
    }

    fn unexpected_indexed(&self, prefix: &str, found: usize) -> Option<&str> {
        self.names.iter().map(String::as_str).find(|n| {
            n.strip_prefix(prefix)
                .and_then(|k| k.parse::<usize>().ok())
                .is_some_and(|k| k >= found)
        })
    }
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AuditError::csv(path, e))
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize) -> &'r str {
    rec.get(idx).unwrap_or("")
}

fn parse_f64(id: &str, column: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| AuditError::record(id, format!("column `{column}`: `{s}` is not a number")))
}

fn parse_finite(id: &str, column: &str, s: &str) -> Result<f64> {
    let v = parse_f64(id, column, s)?;
    if !v.is_finite() {
        return Err(AuditError::record(id, format!("column `{column}`: non-finite amount `{s}`")));
    }
    Ok(v)
}

fn parse_bool(id: &str, column: &str, s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Ok(true),
        "0" | "false" | "f" | "no" | "n" => Ok(false),
        _ => Err(AuditError::record(id, format!("column `{column}`: `{s}` is not a boolean"))),
    }
}

fn parse_opt_f64(id: &str, column: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        Ok(None)
    } else {
        parse_finite(id, column, s).map(Some)
    }
}

/// Round a possibly fractional month offset to the nearest whole month.
fn parse_month(id: &str, column: &str, s: &str) -> Result<i64> {
    let v = parse_finite(id, column, s)?;
    Ok(v.round() as i64)
}

fn parse_features(id: &str, rec: &csv::StringRecord, cols: &[usize], prefix: &str) -> Result<Vec<f64>> {
    cols.iter()
        .enumerate()
        .map(|(k, &c)| parse_finite(id, &format!("{prefix}{k}"), field(rec, c)))
        .collect()
}

/// Apply the month-0 rule: the net month-0 amount must be the negative
/// principal, possibly netted with a receipt; any such receipt moves to
/// month 1. Returns whether a shift happened.
fn settle_month_zero(id: &str, principal: f64, amounts: &mut Vec<f64>) -> Result<bool> {
    let tol = 1e-6 * principal;
    let net0 = amounts[0];
    let excess = net0 + principal;
    if excess.abs() <= tol {
        return Ok(false);
    }
    if excess < 0.0 {
        return Err(AuditError::record(
            id,
            format!("principal {principal} does not match month-0 amount {net0}"),
        ));
    }
    amounts[0] = -principal;
    if amounts.len() < 2 {
        amounts.push(0.0);
    }
    amounts[1] += excess;
    Ok(true)
}

/// Load loans per `schema`, validating every record.
pub fn ingest_loans(path: impl AsRef<Path>, schema: &LoanSchema) -> Result<LoanIngest> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header = Header::read(&mut reader, path)?;
    let c_id = header.require(&schema.loan_id)?;
    let c_date = header.require(&schema.origination_date)?;
    let c_term = header.require(&schema.term_months)?;
    let c_principal = header.require(&schema.principal)?;
    let c_apr = header.require(&schema.apr)?;
    let c_def = header.require(&schema.defaulted)?;
    let c_def_month = header.require(&schema.default_month)?;
    let c_target = header.optional(&schema.target_return);
    let c_features = header.indexed(&schema.feature_prefix);

    let wide_cols = match &schema.cashflows {
        CashflowLayout::Wide { prefix } => {
            let cols = header.indexed(prefix);
            if cols.is_empty() {
                return Err(AuditError::Schema {
                    file: header.file.clone(),
                    column: format!("{prefix}0"),
                });
            }
            if let Some(stray) = header.unexpected_indexed(prefix, cols.len()) {
                return Err(AuditError::Validation(format!(
                    "{}: cashflow column `{stray}` is not contiguous with {prefix}0..",
                    header.file
                )));
            }
            Some((prefix.clone(), cols))
        }
        CashflowLayout::Long { .. } => None,
    };

    struct Partial {
        loan: LoanRecord,
        amounts: Vec<f64>,
    }
    let mut partials = Vec::new();
    let mut position = HashMap::new();
    for row in reader.records() {
        let rec = row.map_err(|e| AuditError::csv(path, e))?;
        let id = field(&rec, c_id).to_string();
        if id.is_empty() {
            return Err(AuditError::Validation(format!("{}: empty loan id", header.file)));
        }
        let origination_date: YearMonth = field(&rec, c_date)
            .parse()
            .map_err(|e: AuditError| AuditError::record(&id, e.to_string()))?;
        let term = parse_f64(&id, &schema.term_months, field(&rec, c_term))?;
        if !(term >= 1.0 && term.fract() == 0.0) {
            return Err(AuditError::record(&id, format!("term_months must be a positive integer, got {term}")));
        }
        let principal = parse_finite(&id, &schema.principal, field(&rec, c_principal))?;
        let apr = parse_finite(&id, &schema.apr, field(&rec, c_apr))?;
        let defaulted = parse_bool(&id, &schema.defaulted, field(&rec, c_def))?;
        let default_month = match field(&rec, c_def_month) {
            "" => None,
            s => {
                let m = parse_month(&id, &schema.default_month, s)?;
                Some(u32::try_from(m).map_err(|_| AuditError::record(&id, "negative default_month"))?)
            }
        };
        let target_return = match c_target {
            Some(c) => parse_opt_f64(&id, &schema.target_return, field(&rec, c))?,
            None => None,
        };
        let features = parse_features(&id, &rec, &c_features, &schema.feature_prefix)?;
        let amounts = match &wide_cols {
            Some((prefix, cols)) => {
                let mut v = cols
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let s = field(&rec, c);
                        if s.is_empty() {
                            Ok(0.0)
                        } else {
                            parse_finite(&id, &format!("{prefix}{k}"), s)
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                // Trailing blank months are just absent.
                while v.len() > 2 && v.last() == Some(&0.0) && field(&rec, cols[v.len() - 1]).is_empty() {
                    v.pop();
                }
                v
            }
            None => Vec::new(),
        };
        if position.insert(id.clone(), partials.len()).is_some() {
            return Err(AuditError::record(&id, "duplicate loan id"));
        }
        partials.push(Partial {
            loan: LoanRecord {
                loan_id: id,
                origination_date,
                term_months: term as u32,
                principal,
                apr,
                // placeholder until cashflows are attached
                cashflow: CashflowVector::new(vec![-1.0, 0.0])?,
                features,
                target_return,
                defaulted,
                default_month,
            },
            amounts,
        });
    }

    if let CashflowLayout::Long {
        path: cf_path,
        loan_id,
        month,
        amount,
    } = &schema.cashflows
    {
        let mut reader = open(cf_path)?;
        let h = Header::read(&mut reader, cf_path)?;
        let c_id = h.require(loan_id)?;
        let c_month = h.require(month)?;
        let c_amount = h.require(amount)?;
        for row in reader.records() {
            let rec = row.map_err(|e| AuditError::csv(cf_path, e))?;
            let id = field(&rec, c_id);
            let &pos = position.get(id).ok_or_else(|| {
                AuditError::record(id, format!("cashflow row for unknown loan in {}", h.file))
            })?;
            let m = parse_month(id, month, field(&rec, c_month))?;
            if m < 0 {
                return Err(AuditError::record(id, format!("negative month offset {m}")));
            }
            let a = parse_finite(id, amount, field(&rec, c_amount))?;
            let amounts = &mut partials[pos].amounts;
            let m = m as usize;
            if amounts.len() <= m {
                amounts.resize(m + 1, 0.0);
            }
            amounts[m] += a;
        }
    }

    let mut shifted = 0;
    let mut loans = Vec::with_capacity(partials.len());
    for Partial { mut loan, mut amounts } in partials {
        if amounts.is_empty() {
            return Err(AuditError::record(&loan.loan_id, "no cashflow entries"));
        }
        if amounts.len() < 2 {
            amounts.push(0.0);
        }
        if settle_month_zero(&loan.loan_id, loan.principal, &mut amounts)? {
            shifted += 1;
        }
        loan.cashflow = CashflowVector::new(amounts).map_err(|e| AuditError::record(&loan.loan_id, e.to_string()))?;
        loan.validate(schema.grace_months)?;
        loans.push(loan);
    }
    if let Some(first) = loans.first() {
        let k = first.features.len();
        if let Some(bad) = loans.iter().find(|l| l.features.len() != k) {
            return Err(AuditError::record(&bad.loan_id, "feature vector length differs across records"));
        }
    }
    Ok(LoanIngest { loans, shifted })
}

/// Load demographic proxy probabilities keyed by id.
pub fn ingest_demographics(path: impl AsRef<Path>) -> Result<DemographicsIngest> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header = Header::read(&mut reader, path)?;
    let cols: Vec<usize> = DEMOGRAPHIC_COLUMNS
        .iter()
        .map(|c| header.require(c))
        .collect::<Result<_>>()?;
    let mut weights = BTreeMap::new();
    let mut renormalized = 0;
    for row in reader.records() {
        let rec = row.map_err(|e| AuditError::csv(path, e))?;
        let id = field(&rec, cols[0]).to_string();
        let mut p = [0.0; 7];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = parse_finite(&id, DEMOGRAPHIC_COLUMNS[k + 1], field(&rec, cols[k + 1]))?;
        }
        let race = [p[0], p[1], p[2], p[3], p[4]];
        let gender = [p[5], p[6]];
        let (w, renorm) = DemographicWeights::new_normalized(race, gender)
            .map_err(|e| AuditError::record(&id, e.to_string()))?;
        renormalized += renorm as usize;
        if weights.insert(id.clone(), w).is_some() {
            return Err(AuditError::record(&id, "duplicate demographics id"));
        }
    }
    Ok(DemographicsIngest { weights, renormalized })
}

/// Load applications: `application_id,requested_amount,approved,offered_apr,funded,fed_rate`
/// plus optional `applicant_id`, `application_date` and features `f_0..f_{k-1}`.
pub fn ingest_applications(path: impl AsRef<Path>) -> Result<Vec<ApplicationRecord>> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header = Header::read(&mut reader, path)?;
    let c_id = header.require("application_id")?;
    let c_req = header.require("requested_amount")?;
    let c_app = header.require("approved")?;
    let c_apr = header.require("offered_apr")?;
    let c_fund = header.require("funded")?;
    let c_fed = header.require("fed_rate")?;
    let c_applicant = header.optional("applicant_id");
    let c_date = header.optional("application_date");
    let c_features = header.indexed("f_");
    let mut out = Vec::new();
    for row in reader.records() {
        let rec = row.map_err(|e| AuditError::csv(path, e))?;
        let id = field(&rec, c_id).to_string();
        let applicant_id = c_applicant
            .map(|c| field(&rec, c).to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| id.clone());
        let application_date = match c_date.map(|c| field(&rec, c)) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|e: AuditError| AuditError::record(&id, e.to_string()))?),
        };
        let app = ApplicationRecord {
            requested_amount: parse_finite(&id, "requested_amount", field(&rec, c_req))?,
            approved: parse_bool(&id, "approved", field(&rec, c_app))?,
            offered_apr: parse_opt_f64(&id, "offered_apr", field(&rec, c_apr))?,
            funded: parse_bool(&id, "funded", field(&rec, c_fund))?,
            fed_rate: parse_finite(&id, "fed_rate", field(&rec, c_fed))?,
            features: parse_features(&id, &rec, &c_features, "f_")?,
            applicant_id,
            application_date,
            application_id: id,
        };
        app.validate()?;
        out.push(app);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    const LOANS: &str = "loan_id,origination_date,term_months,principal,apr,defaulted,default_month,target_return\n\
                         L1,2019-01,36,1000,0.1,false,,0.08\n";

    #[test]
    fn long_format_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(dir.path(), "loans.csv", LOANS);
        let cfs = write(dir.path(), "cf.csv", "loan_id,month,amount\nL1,0,-1000\nL1,1,500\nL1,2,550\n");
        let out = ingest_loans(&loans, &LoanSchema::long(cfs)).unwrap();
        assert_eq!(out.loans.len(), 1);
        assert_eq!(out.loans[0].principal, 1000.0);
        assert_eq!(out.loans[0].cashflow.amounts(), &[-1000.0, 500.0, 550.0]);
        assert_eq!(out.shifted, 0);
    }

    #[test]
    fn month_zero_receipt_is_shifted() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(dir.path(), "loans.csv", LOANS);
        let cfs = write(
            dir.path(),
            "cf.csv",
            "loan_id,month,amount\nL1,0,-1000\nL1,0,100\nL1,1,500\nL1,2,450\n",
        );
        let out = ingest_loans(&loans, &LoanSchema::long(cfs)).unwrap();
        assert_eq!(out.loans[0].cashflow.amounts(), &[-1000.0, 600.0, 450.0]);
        assert_eq!(out.shifted, 1);

        // receipt at month 0 with nothing else recorded
        let cfs = write(dir.path(), "cf2.csv", "loan_id,month,amount\nL1,0,-1000\nL1,0,100\n");
        let out = ingest_loans(&loans, &LoanSchema::long(cfs)).unwrap();
        assert_eq!(out.loans[0].cashflow.amounts(), &[-1000.0, 100.0]);
        assert!(out.loans[0].cashflow.amounts()[0] <= 0.0);
    }

    #[test]
    fn nan_amount_names_the_loan() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(dir.path(), "loans.csv", LOANS);
        let cfs = write(dir.path(), "cf.csv", "loan_id,month,amount\nL1,0,-1000\nL1,1,NaN\n");
        let err = ingest_loans(&loans, &LoanSchema::long(cfs)).unwrap_err();
        assert!(matches!(&err, AuditError::Record { id, .. } if id == "L1"), "{err}");
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(
            dir.path(),
            "loans.csv",
            "loan_id,origination_date,term_months,principal,defaulted,default_month\nL1,2019-01,36,1000,false,\n",
        );
        let cfs = write(dir.path(), "cf.csv", "loan_id,month,amount\nL1,0,-1000\n");
        match ingest_loans(&loans, &LoanSchema::long(cfs)).unwrap_err() {
            AuditError::Schema { column, .. } => assert_eq!(column, "apr"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn principal_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(dir.path(), "loans.csv", LOANS);
        let cfs = write(dir.path(), "cf.csv", "loan_id,month,amount\nL1,0,-1200\nL1,1,1300\n");
        assert!(ingest_loans(&loans, &LoanSchema::long(cfs)).is_err());
    }

    #[test]
    fn wide_format_and_partial_months() {
        let dir = tempfile::tempdir().unwrap();
        let loans = write(
            dir.path(),
            "loans.csv",
            "loan_id,origination_date,term_months,principal,apr,defaulted,default_month,f_0,f_1,cf_0,cf_1,cf_2\n\
             A,2019-03,2,100,0.12,true,2.4,0.5,-1,-100,51,\n",
        );
        let out = ingest_loans(&loans, &LoanSchema::default()).unwrap();
        let l = &out.loans[0];
        assert_eq!(l.cashflow.amounts(), &[-100.0, 51.0]);
        assert_eq!(l.default_month, Some(2));
        assert_eq!(l.features, vec![0.5, -1.0]);
        assert_eq!(l.target_return, None);
    }

    #[test]
    fn demographics_policy() {
        let dir = tempfile::tempdir().unwrap();
        let good = write(
            dir.path(),
            "d.csv",
            "id,p_white,p_black,p_hispanic,p_asian,p_other,p_woman,p_man\n\
             a,0.7,0.1,0.1,0.05,0.05,0.6,0.4\n\
             b,0.7000001,0.1,0.1,0.05,0.05,0.6,0.4\n",
        );
        let out = ingest_demographics(&good).unwrap();
        assert_eq!(out.weights["a"].race, [0.7, 0.1, 0.1, 0.05, 0.05]);
        assert_eq!(out.renormalized, 1);
        assert!((out.weights["b"].race.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let bad = write(
            dir.path(),
            "bad.csv",
            "id,p_white,p_black,p_hispanic,p_asian,p_other,p_woman,p_man\nz,0.5,0.1,0.1,0.05,0.05,0.6,0.4\n",
        );
        match ingest_demographics(&bad).unwrap_err() {
            AuditError::Record { id, .. } => assert_eq!(id, "z"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn applications_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "apps.csv",
            "application_id,requested_amount,approved,offered_apr,funded,fed_rate,f_0\n\
             A1,5000,true,0.15,true,0.024,1.5\n\
             A2,7000,false,,false,0.024,-0.5\n",
        );
        let apps = ingest_applications(&p).unwrap();
        assert_eq!(apps.len(), 2);
        assert_eq!(apps[0].applicant_id, "A1");
        assert_eq!(apps[1].offered_apr, None);

        let p = write(
            dir.path(),
            "bad.csv",
            "application_id,requested_amount,approved,offered_apr,funded,fed_rate\nA3,5000,false,,true,0.02\n",
        );
        assert!(ingest_applications(&p).is_err());
    }
}
