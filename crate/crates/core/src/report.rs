//! The audit report: named tables of plot-ready rows, regression fits,
//! run metadata and warnings. Written as one JSON document, one CSV per
//! table and a small manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::counterfactual::RegressionFit;
use crate::demography::Axis;
use crate::error::{AuditError, Result};
use crate::metrics::{DecileCurve, GroupMetric};
use crate::risk::{CalibrationCurve, CalibrationGap, DefaultAprCurve};
use crate::stats::Z95;
use crate::synth::TargetReturnCurve;

pub const F1_GROUP_IRR: &str = "f1_group_irr";
pub const F2_TARGET_RETURN_CURVE: &str = "f2_target_return_curve";
pub const F3_TARGET_RETURN_PRINCIPAL_LOST: &str = "f3_target_return_principal_lost";
pub const F4_F6_CALIBRATION: &str = "f4_f6_calibration";
pub const F5_DEFAULT_BY_APR: &str = "f5_default_by_apr";
pub const F7_COUNTERFACTUAL_DELTAS: &str = "f7_counterfactual_deltas";
pub const F8_NOSHOP_COMPARISON: &str = "f8_noshop_comparison";
pub const A5_DEFAULT_RATE: &str = "a5_default_rate";
pub const A6_TARGET_RETURN_DECILES: &str = "a6_target_return_deciles";
pub const A7_IRR_VOLATILITY: &str = "a7_irr_volatility";

/// Every table key with a one-line description, in report order.
pub const TABLES: [(&str, &str); 10] = [
    (F1_GROUP_IRR, "portfolio and mean individual IRR by group"),
    (F2_TARGET_RETURN_CURVE, "target return as a function of cumulative loss rate"),
    (F3_TARGET_RETURN_PRINCIPAL_LOST, "mean target return and share of principal lost by group"),
    (F4_F6_CALIBRATION, "binned and smoothed calibration of blind and aware risk scores, with gaps"),
    (F5_DEFAULT_BY_APR, "smoothed default rate along APR by group"),
    (F7_COUNTERFACTUAL_DELTAS, "approval and APR changes under the aware score"),
    (F8_NOSHOP_COMPARISON, "realized versus no-shopping counterfactual IRR by group"),
    (A5_DEFAULT_RATE, "default rate by group"),
    (A6_TARGET_RETURN_DECILES, "default rate by target-return decile"),
    (A7_IRR_VOLATILITY, "standard deviation of individual IRRs by group"),
];

/// One table cell. Non-finite numbers serialize as null.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::Num(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            _ => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Num(x) if x.is_finite() => s.serialize_f64(*x),
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Text(t) => s.serialize_str(t),
            _ => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Null => Ok(Cell::Empty),
            serde_json::Value::String(s) => Ok(Cell::Text(s)),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) if !n.is_f64() => Ok(Cell::Int(i)),
                _ => n.as_f64().map(Cell::Num).ok_or_else(|| de::Error::custom("bad number")),
            },
            other => Err(de::Error::custom(format!("unexpected cell {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose text columns equal the given values.
    pub fn select<'a>(&'a self, filters: &'a [(&'a str, &'a str)]) -> impl Iterator<Item = &'a Vec<Cell>> + 'a {
        let idx: Vec<(usize, &str)> = filters
            .iter()
            .map(|(c, v)| (self.column(c).unwrap_or(usize::MAX), *v))
            .collect();
        self.rows
            .iter()
            .filter(move |r| idx.iter().all(|(i, v)| r.get(*i).and_then(Cell::as_str) == Some(*v)))
    }

    /// Numeric value in `column` of the single row matching `filters`.
    pub fn value(&self, filters: &[(&str, &str)], column: &str) -> Option<f64> {
        let c = self.column(column)?;
        let mut rows = self.select(filters);
        let row = rows.next()?;
        if rows.next().is_some() {
            return None;
        }
        row[c].as_f64()
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| AuditError::Numerical(format!("CSV encoding failed: {e}"));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).map_err(io)?;
        }
        w.into_inner().map_err(|e| AuditError::Numerical(format!("CSV encoding failed: {e}")))
    }
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "metric",
    "axis",
    "group",
    "point",
    "ci68_lo",
    "ci68_hi",
    "ci95_lo",
    "ci95_hi",
    "n_effective",
];

pub fn metric_table<'a>(rows: impl IntoIterator<Item = &'a GroupMetric>) -> Table {
    let mut t = Table::new(&METRIC_COLUMNS);
    for m in rows {
        t.push(vec![
            m.metric.name().into(),
            m.axis.name().into(),
            m.group.as_str().into(),
            m.point.into(),
            m.ci68.0.into(),
            m.ci68.1.into(),
            m.ci95.0.into(),
            m.ci95.1.into(),
            m.n_effective.into(),
        ]);
    }
    t
}

pub const CALIBRATION_COLUMNS: [&str; 11] = [
    "model",
    "axis",
    "group",
    "series",
    "index",
    "x",
    "rate",
    "ci95_lo",
    "ci95_hi",
    "weight",
    "n_effective",
];

/// Append one group's binned and smoothed calibration curve.
pub fn push_calibration(t: &mut Table, model: &str, axis: Axis, c: &CalibrationCurve) {
    for b in &c.points {
        t.push(vec![
            model.into(),
            axis.name().into(),
            c.group.as_str().into(),
            "bin".into(),
            b.bin.into(),
            b.pred_mean.into(),
            b.obs_rate.into(),
            b.ci95.0.into(),
            b.ci95.1.into(),
            b.weight.into(),
            b.n_effective.into(),
        ]);
    }
    for (k, p) in c.smoothed.iter().enumerate() {
        t.push(vec![
            model.into(),
            axis.name().into(),
            c.group.as_str().into(),
            "smoothed".into(),
            k.into(),
            p.x.into(),
            p.rate.into(),
            p.ci95.0.into(),
            p.ci95.1.into(),
            Cell::Empty,
            Cell::Empty,
        ]);
    }
}

/// Append a calibration gap with its normal-theory 95% interval.
pub fn push_gap(t: &mut Table, model: &str, axis: Axis, g: &CalibrationGap) {
    t.push(vec![
        model.into(),
        axis.name().into(),
        g.group.as_str().into(),
        "gap".into(),
        Cell::Empty,
        Cell::Empty,
        g.gap.into(),
        (g.gap - Z95 * g.standard_error).into(),
        (g.gap + Z95 * g.standard_error).into(),
        Cell::Empty,
        g.n_effective.into(),
    ]);
}

pub const APR_CURVE_COLUMNS: [&str; 6] = ["axis", "group", "apr", "default_rate", "ci95_lo", "ci95_hi"];

pub fn push_apr_curve(t: &mut Table, axis: Axis, c: &DefaultAprCurve) {
    for p in &c.points {
        t.push(vec![
            axis.name().into(),
            c.group.as_str().into(),
            p.x.into(),
            p.rate.into(),
            p.ci95.0.into(),
            p.ci95.1.into(),
        ]);
    }
}

pub const DECILE_COLUMNS: [&str; 10] = [
    "axis",
    "group",
    "decile",
    "weight",
    "n_effective",
    "mean_target_return",
    "default_rate",
    "ci95_lo",
    "ci95_hi",
    "correlation",
];

pub fn push_deciles(t: &mut Table, axis: Axis, c: &DecileCurve) {
    for p in &c.points {
        t.push(vec![
            axis.name().into(),
            c.group.as_str().into(),
            p.decile.into(),
            p.weight.into(),
            p.n_effective.into(),
            p.mean_target_return.into(),
            p.default_rate.into(),
            p.default_ci95.0.into(),
            p.default_ci95.1.into(),
            c.correlation.into(),
        ]);
    }
}

/// The target-return curve on an even grid over its knot range.
pub fn target_return_curve_table(curve: &TargetReturnCurve, points: usize) -> Table {
    let mut t = Table::new(&["loss_rate", "target_return"]);
    let lo = curve.knots.first().map_or(0.0, |k| k.0);
    let hi = curve.knots.last().map_or(0.0, |k| k.0);
    for k in 0..points {
        let x = lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64;
        t.push(vec![x.into(), curve.eval(x).into()]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub group_scheme: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: Metadata,
    pub tables: BTreeMap<String, Table>,
    pub fits: BTreeMap<String, RegressionFit>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

impl AuditReport {
    pub fn table(&self, key: &str) -> Result<&Table> {
        self.tables
            .get(key)
            .ok_or_else(|| AuditError::Validation(format!("report has no table `{key}`")))
    }

    /// The JSON document. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AuditError::Numerical(format!("report encoding failed: {e}")))
    }

    /// JSON with the timestamps blanked, for byte comparisons across runs.
    pub fn to_json_without_timestamps(&self) -> Result<String> {
        let mut r = self.clone();
        r.metadata.started_at.clear();
        r.metadata.finished_at.clear();
        r.to_json()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| AuditError::io(&file, e))?;
        serde_json::from_str(&text).map_err(|e| AuditError::Validation(format!("{}: not a report: {e}", file.display())))
    }

    /// Write `report.json`, one CSV per table and `manifest.json` into `dir`.
    /// Every file is staged under a temporary name and renamed into place
    /// only after all of them were written.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
        let mut files: Vec<(String, Vec<u8>)> = vec![("report.json".into(), self.to_json()?.into_bytes())];
        let mut manifest = Vec::new();
        for (key, table) in &self.tables {
            let file = format!("{key}.csv");
            files.push((file.clone(), table.to_csv()?));
            let description = TABLES.iter().find(|(k, _)| k == key).map_or("", |(_, d)| *d);
            manifest.push(serde_json::json!({
                "key": key,
                "file": file,
                "description": description,
                "columns": table.columns,
                "rows": table.rows.len(),
            }));
        }
        let manifest = serde_json::json!({
            "report": "report.json",
            "tool_version": self.metadata.tool_version,
            "tables": manifest,
        });
        files.push((
            "manifest.json".into(),
            serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON").into_bytes(),
        ));
        write_atomically(dir, &files)
    }
}

pub(crate) fn write_atomically(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        let result = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        });
        staged.push((tmp.clone(), dir.join(name)));
        if let Err(e) = result {
            cleanup(&staged);
            return Err(AuditError::io(&tmp, e));
        }
    }
    for (tmp, dst) in &staged {
        fs::rename(tmp, dst).map_err(|e| AuditError::io(dst, e))?;
    }
    Ok(())
}

/// A numeric cell that differs by more than the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub table: String,
    pub row: usize,
    pub column: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportDiff {
    pub cells: Vec<CellDiff>,
    /// Differences in shape or text: column names, row counts, labels.
    pub structural: Vec<String>,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.structural.is_empty()
    }
}

/// Cell-by-cell comparison of two reports with the same table keys.
pub fn diff_reports(a: &AuditReport, b: &AuditReport, tolerance: f64) -> Result<ReportDiff> {
    let only_a: Vec<&str> = a.tables.keys().filter(|k| !b.tables.contains_key(*k)).map(String::as_str).collect();
    let only_b: Vec<&str> = b.tables.keys().filter(|k| !a.tables.contains_key(*k)).map(String::as_str).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(AuditError::Validation(format!(
            "reports have different tables: only in first [{}], only in second [{}]",
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    let mut out = ReportDiff::default();
    for (key, ta) in &a.tables {
        let tb = &b.tables[key];
        if ta.columns != tb.columns {
            out.structural.push(format!("{key}: columns differ"));
            continue;
        }
        if ta.rows.len() != tb.rows.len() {
            out.structural
                .push(format!("{key}: {} rows versus {}", ta.rows.len(), tb.rows.len()));
            continue;
        }
        for (r, (ra, rb)) in ta.rows.iter().zip(&tb.rows).enumerate() {
            for (c, (ca, cb)) in ra.iter().zip(rb).enumerate() {
                match (ca.as_f64(), cb.as_f64()) {
                    (None, None) => {
                        if ca != cb {
                            out.structural.push(format!("{key} row {r} column {}: {ca:?} versus {cb:?}", ta.columns[c]));
                        }
                    }
                    (x, y) => {
                        let d = match (x, y) {
                            (Some(x), Some(y)) if x == y || (x.is_nan() && y.is_nan()) => 0.0,
                            (Some(x), Some(y)) => (x - y).abs(),
                            _ => f64::INFINITY,
                        };
                        if d > tolerance || d.is_nan() {
                            out.cells.push(CellDiff {
                                table: key.clone(),
                                row: r,
                                column: ta.columns[c].clone(),
                                a: x,
                                b: y,
                                abs_diff: d,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(x: f64) -> AuditReport {
        let mut t = Table::new(&["group", "point"]);
        t.push(vec!["White".into(), x.into()]);
        t.push(vec!["Black".into(), Cell::Num(f64::NAN)]);
        AuditReport {
            metadata: Metadata {
                tool_version: "0".into(),
                config_hash: sha256_hex(b""),
                seed: 1,
                group_scheme: "weighted".into(),
                started_at: "t0".into(),
                finished_at: "t1".into(),
            },
            tables: [(F1_GROUP_IRR.to_string(), t)].into(),
            fits: BTreeMap::new(),
            warnings: vec![],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = report(0.1 + 0.2);
        let back: AuditReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.tables[F1_GROUP_IRR].rows[0][1], Cell::Num(0.1 + 0.2));
        assert_eq!(back.tables[F1_GROUP_IRR].rows[1][1], Cell::Empty);
    }

    #[test]
    fn csv_keeps_seventeen_digits() {
        let t = &report(1.0 / 3.0).tables[F1_GROUP_IRR];
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        let cell = text.lines().nth(1).unwrap().split(',').nth(1).unwrap();
        assert_eq!(cell.parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(text.lines().nth(2).unwrap(), "Black,");
    }

    #[test]
    fn diff_flags_cells_beyond_tolerance() {
        assert!(diff_reports(&report(0.1), &report(0.1), 0.0).unwrap().is_empty());
        let d = diff_reports(&report(0.1), &report(0.1 + 1e-6), 1e-9).unwrap();
        assert_eq!(d.cells.len(), 1);
        assert_eq!(d.cells[0].column, "point");
        assert!(diff_reports(&report(0.1), &report(0.1 + 1e-6), 1e-3).unwrap().is_empty());
        let mut other = report(0.1);
        other.tables.insert(A5_DEFAULT_RATE.into(), Table::default());
        assert!(diff_reports(&report(0.1), &other, 0.0).is_err());
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
