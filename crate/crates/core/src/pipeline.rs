//! Run configuration and the end-to-end stages behind each subcommand.
//!
//! A run is driven by one TOML file. Paths inside it are relative to the
//! file's directory. `seed` is mandatory and feeds every bootstrap; the risk
//! models keep their own fold seed under `[risk_model]`.
//!
//! ```toml
//! seed = 7
//! group_scheme = "weighted"        # or "argmax"
//! axes = ["race", "gender"]
//! output_dir = "out"
//!
//! [inputs]
//! loans = "loans.csv"
//! cashflows = "cashflows.csv"      # long layout; omit for wide loans.csv
//! demographics = "demographics.csv"
//! applications = "applications.csv"
//!
//! [metrics]                        # all default to true
//! group_irr = true
//! target_return = true
//! calibration = true
//! default_by_apr = true
//! counterfactuals = true
//! noshop = true
//! appendix = true
//!
//! [bootstrap]
//! n_boot = 1000
//!
//! [risk_model]
//! learner = "gbdt"
//! n_folds = 5
//! seed = 0
//! [risk_model.hyperparameters]
//! rounds = 200
//!
//! [counterfactual]
//! noshop_intercept = false
//!
//! [irr]
//! annualization = "geometric"      # or "linear"
//!
//! [market]                         # `simulate` only
//! n_applicants = 20000
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapConfig;
use crate::counterfactual::{
    counterfactual_approval_delta, counterfactual_apr_delta, counterfactual_noshop_irr, first_applications,
    fit_approval_model, fit_apr_model, fit_noshop_irr_model,
};
use crate::data::{load_dataset, write_dataset, Dataset, DatasetPaths, IngestSummary};
use crate::demography::{Axis, GroupScheme, SchemeRegistry};
use crate::error::{AuditError, Result, ResultExt};
use crate::irr::IrrSolver;
use crate::metrics::{evaluate_by_group, GroupMetric, LoanFrame, MetricKind, MetricRegistry, MetricTable};
use crate::report::{self, AuditReport, Metadata, Table};
use crate::risk::{
    calibration_curve, calibration_gap, default_by_apr_curve, fit_risk_model, AprCurveOptions, Awareness,
    CalibrationOptions, RiskModelSpec, RiskScores,
};
use crate::synth::{generate_market, Market, MarketConfig, TargetReturnCurve};

/// Input files; `cashflows` and `applications` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub loans: PathBuf,
    #[serde(default)]
    pub cashflows: Option<PathBuf>,
    pub demographics: PathBuf,
    #[serde(default)]
    pub applications: Option<PathBuf>,
}

/// Which report tables a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub group_irr: bool,
    pub target_return: bool,
    pub calibration: bool,
    pub default_by_apr: bool,
    pub counterfactuals: bool,
    pub noshop: bool,
    pub appendix: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            group_irr: true,
            target_return: true,
            calibration: true,
            default_by_apr: true,
            counterfactuals: true,
            noshop: true,
            appendix: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub max_failure_rate: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self {
            n_boot: b.n_boot,
            max_failure_rate: b.max_failure_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualSettings {
    /// Add an intercept to the no-shopping IRR regression.
    pub noshop_intercept: bool,
}

fn default_scheme() -> String {
    "weighted".into()
}

fn default_axes() -> Vec<Axis> {
    Axis::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub group_scheme: String,
    #[serde(default = "default_axes")]
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub inputs: Option<Inputs>,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub risk_model: RiskModelSpec,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    #[serde(default)]
    pub default_by_apr: AprCurveOptions,
    #[serde(default)]
    pub counterfactual: CounterfactualSettings,
    #[serde(default)]
    pub irr: IrrSolver,
    /// Echoed into the target-return curve table.
    #[serde(default)]
    pub target_return_curve: TargetReturnCurve,
    /// Synthetic market for `simulate`; its seed is replaced by `seed`.
    #[serde(default)]
    pub market: Option<MarketConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the configuration bytes.
    #[serde(skip)]
    pub config_hash: String,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub group_scheme: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| AuditError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&bytes, base).map_err(|e| match e {
            AuditError::Config(m) => AuditError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parse TOML bytes; relative paths will resolve against `base_dir`.
    pub fn parse(bytes: &[u8], base_dir: impl Into<PathBuf>) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| AuditError::Config("configuration is not UTF-8".into()))?;
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            if msg.contains("missing field `seed`") {
                AuditError::Config("`seed` is mandatory; runs are never seeded from the clock".into())
            } else {
                AuditError::Config(format!("invalid configuration: {msg}"))
            }
        })?;
        cfg.base_dir = base_dir.into();
        cfg.config_hash = report::sha256_hex(bytes);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = &o.group_scheme {
            self.group_scheme = s.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = Some(d.clone());
        }
        self.validate()
    }

    fn validate(&self) -> Result<()> {
        SchemeRegistry::default().get(&self.group_scheme)?;
        if self.axes.is_empty() {
            return Err(AuditError::Config("`axes` must name at least one axis".into()));
        }
        if self.bootstrap.n_boot < 100 {
            return Err(AuditError::Config(format!(
                "bootstrap.n_boot must be at least 100, got {}",
                self.bootstrap.n_boot
            )));
        }
        self.target_return_curve.validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        self.output_dir
            .as_deref()
            .map(|d| self.resolve(d))
            .ok_or_else(|| AuditError::Config("no output directory: set `output_dir` or pass --out".into()))
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            n_boot: self.bootstrap.n_boot,
            seed: self.seed,
            max_failure_rate: self.bootstrap.max_failure_rate,
        }
    }

    pub fn scheme(&self) -> Result<std::sync::Arc<dyn GroupScheme>> {
        SchemeRegistry::default().get(&self.group_scheme)
    }

    /// Input paths, resolved and checked to exist.
    pub fn dataset_paths(&self) -> Result<DatasetPaths> {
        let inputs = self
            .inputs
            .as_ref()
            .ok_or_else(|| AuditError::Config("missing `[inputs]` table with loans and demographics paths".into()))?;
        let check = |field: &str, p: &Path| -> Result<PathBuf> {
            let r = self.resolve(p);
            if !r.is_file() {
                return Err(AuditError::Validation(format!(
                    "inputs.{field}: file {} does not exist",
                    r.display()
                )));
            }
            Ok(r)
        };
        Ok(DatasetPaths {
            loans: check("loans", &inputs.loans)?,
            cashflows: inputs.cashflows.as_deref().map(|p| check("cashflows", p)).transpose()?,
            demographics: check("demographics", &inputs.demographics)?,
            applications: inputs.applications.as_deref().map(|p| check("applications", p)).transpose()?,
        })
    }

    fn metadata(&self, started: &str) -> Metadata {
        Metadata {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            group_scheme: self.group_scheme.clone(),
            started_at: started.into(),
            finished_at: String::new(),
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn load_inputs(cfg: &RunConfig) -> Result<(Dataset, IngestSummary)> {
    let paths = cfg.dataset_paths()?;
    load_dataset(&paths, None).within("core-data", "load_dataset")
}

fn ingest_warnings(s: &IngestSummary) -> Vec<String> {
    let mut w = Vec::new();
    if s.shifted_month_zero > 0 {
        w.push(format!(
            "ingest: {} loan(s) had a month-0 receipt moved to month 1",
            s.shifted_month_zero
        ));
    }
    if s.renormalized_demographics > 0 {
        w.push(format!(
            "ingest: {} demographic vector(s) renormalized",
            s.renormalized_demographics
        ));
    }
    w
}

/// Accumulates tables and warnings in a fixed order.
struct Builder {
    tables: BTreeMap<String, Table>,
    fits: BTreeMap<String, crate::counterfactual::RegressionFit>,
    warnings: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Self {
            tables: BTreeMap::new(),
            fits: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn metrics(&mut self, key: &str, tables: Vec<MetricTable>) {
        let mut rows: Vec<GroupMetric> = Vec::new();
        for t in tables {
            rows.extend(t.rows);
            self.warnings.extend(t.warnings);
        }
        self.tables.insert(key.into(), report::metric_table(&rows));
    }

    fn finish(self, cfg: &RunConfig, started: &str) -> AuditReport {
        let mut metadata = cfg.metadata(started);
        metadata.finished_at = now();
        AuditReport {
            metadata,
            tables: self.tables,
            fits: self.fits,
            warnings: self.warnings,
        }
    }
}

/// Errors that only mean a group is too thin for a diagnostic.
fn is_thin(e: &AuditError) -> bool {
    matches!(e.root(), AuditError::Degenerate(_))
}

/// Group statistics computed straight from loans.
struct LoanStage<'a> {
    cfg: &'a RunConfig,
    ds: &'a Dataset,
    scheme: &'a dyn GroupScheme,
    frame: LoanFrame,
    registry: MetricRegistry,
}

impl<'a> LoanStage<'a> {
    fn new(cfg: &'a RunConfig, ds: &'a Dataset, scheme: &'a dyn GroupScheme) -> Result<Self> {
        let frame = LoanFrame::build(&ds.loans, cfg.irr).within("irr-engine", "irr")?;
        Ok(Self {
            cfg,
            ds,
            scheme,
            frame,
            registry: MetricRegistry::default(),
        })
    }

    fn by_group(&self, kind: MetricKind) -> Result<Vec<MetricTable>> {
        let stat = self.registry.get(kind.name())?;
        let boot = self.cfg.bootstrap_config();
        self.cfg
            .axes
            .iter()
            .map(|&axis| {
                let table = crate::demography::WeightTable::build(
                    self.ds.loans.iter().map(|l| l.loan_id.as_str()),
                    &self.ds.demographics,
                    self.scheme,
                    axis,
                )
                .within("demography", "group_weights")?;
                evaluate_by_group(stat.as_ref(), &self.frame, &table, &boot).within("audit-metrics", kind.name())
            })
            .collect()
    }

    fn deciles(&self, out: &mut Builder) -> Result<()> {
        let mut t = Table::new(&report::DECILE_COLUMNS);
        for &axis in &self.cfg.axes {
            let table = crate::demography::WeightTable::build(
                self.ds.loans.iter().map(|l| l.loan_id.as_str()),
                &self.ds.demographics,
                self.scheme,
                axis,
            )?;
            for (g, name) in table.groups.iter().enumerate() {
                let w = table.column(g);
                match crate::metrics::decile_curve(&self.frame, &w, name) {
                    Ok(c) => report::push_deciles(&mut t, axis, &c),
                    Err(e) if matches!(e, AuditError::Degenerate(_) | AuditError::Domain(_)) => {
                        out.warnings.push(format!("target_return_deciles/{axis}/{name}: {e}; omitted"))
                    }
                    Err(e) => return Err(e.within("audit-metrics", "target_return_default_curve")),
                }
            }
        }
        out.tables.insert(report::A6_TARGET_RETURN_DECILES.into(), t);
        Ok(())
    }
}

/// Cross-fitted blind and aware scores for the loans and, when present,
/// each applicant's first application. This is the `calibrate` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskArtifact {
    pub config_hash: String,
    pub risk_model: RiskModelSpec,
    pub blind_loans: RiskScores,
    pub aware_loans: RiskScores,
    pub blind_applications: Option<RiskScores>,
    pub aware_applications: Option<RiskScores>,
}

pub const RISK_ARTIFACT: &str = "risk_scores.json";

impl RiskArtifact {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(RISK_ARTIFACT) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                AuditError::Config(format!(
                    "{} not found; run `calibrate` first",
                    file.display()
                ))
            } else {
                AuditError::io(&file, e)
            }
        })?;
        serde_json::from_str(&text)
            .map_err(|e| AuditError::Validation(format!("{}: not a risk-score artifact: {e}", file.display())))
    }

    fn bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec_pretty(self)
            .map_err(|e| AuditError::Numerical(format!("artifact encoding failed: {e}")))
    }
}

pub fn fit_risk_artifact(cfg: &RunConfig, ds: &Dataset) -> Result<RiskArtifact> {
    let mut fits = Vec::new();
    let mut apps = Vec::new();
    let firsts = first_applications(&ds.applications);
    for awareness in [Awareness::Blind, Awareness::Aware] {
        let spec = cfg.risk_model.with_awareness(awareness);
        let fit = fit_risk_model(&ds.loans, &ds.demographics, &spec).within("risk-models", "fit_risk_model")?;
        apps.push(if ds.applications.is_empty() {
            None
        } else {
            Some(
                fit.score_applications(firsts.iter().copied(), &ds.demographics)
                    .within("risk-models", "score_applications")?,
            )
        });
        fits.push(fit.loan_scores);
    }
    let aware_apps = apps.pop().flatten();
    let blind_apps = apps.pop().flatten();
    let aware = fits.pop().expect("two fits");
    let blind = fits.pop().expect("two fits");
    Ok(RiskArtifact {
        config_hash: cfg.config_hash.clone(),
        risk_model: cfg.risk_model.clone(),
        blind_loans: blind,
        aware_loans: aware,
        blind_applications: blind_apps,
        aware_applications: aware_apps,
    })
}

fn calibration_table(cfg: &RunConfig, ds: &Dataset, scheme: &dyn GroupScheme, art: &RiskArtifact, out: &mut Builder) -> Result<()> {
    let mut t = Table::new(&report::CALIBRATION_COLUMNS);
    for (model, scores) in [("blind", &art.blind_loans), ("aware", &art.aware_loans)] {
        for &axis in &cfg.axes {
            for group in axis.groups() {
                let curve = calibration_curve(scores, &ds.loans, &ds.demographics, scheme, axis, group, &cfg.calibration);
                let gap = calibration_gap(scores, &ds.loans, &ds.demographics, scheme, axis, group, &cfg.calibration);
                match (curve, gap) {
                    (Ok(c), Ok(g)) => {
                        report::push_calibration(&mut t, model, axis, &c);
                        report::push_gap(&mut t, model, axis, &g);
                    }
                    (Err(e), _) | (_, Err(e)) if is_thin(&e) => {
                        out.warnings.push(format!("calibration/{model}/{axis}/{group}: {e}; omitted"))
                    }
                    (Err(e), _) | (_, Err(e)) => return Err(e.within("risk-models", "calibration_curve")),
                }
            }
        }
    }
    out.tables.insert(report::F4_F6_CALIBRATION.into(), t);
    Ok(())
}

fn apr_curve_table(cfg: &RunConfig, ds: &Dataset, scheme: &dyn GroupScheme, out: &mut Builder) -> Result<()> {
    let mut t = Table::new(&report::APR_CURVE_COLUMNS);
    let mut opts = cfg.default_by_apr;
    opts.bootstrap.seed = cfg.seed;
    for &axis in &cfg.axes {
        for group in axis.groups() {
            match default_by_apr_curve(&ds.loans, &ds.demographics, scheme, axis, group, &opts) {
                Ok(c) => report::push_apr_curve(&mut t, axis, &c),
                Err(e) if is_thin(&e) => out.warnings.push(format!("default_by_apr/{axis}/{group}: {e}; omitted")),
                Err(e) => return Err(e.within("risk-models", "default_by_apr_curve")),
            }
        }
    }
    out.tables.insert(report::F5_DEFAULT_BY_APR.into(), t);
    Ok(())
}

fn need_applications<'a>(art: &'a RiskArtifact, what: &str) -> Result<(&'a RiskScores, &'a RiskScores)> {
    match (&art.blind_applications, &art.aware_applications) {
        (Some(b), Some(a)) => Ok((b, a)),
        _ => Err(AuditError::Validation(format!(
            "{what} needs an applications file: set inputs.applications or disable metrics.{what}"
        ))),
    }
}

fn counterfactual_tables(
    cfg: &RunConfig,
    ds: &Dataset,
    scheme: &dyn GroupScheme,
    art: &RiskArtifact,
    loans: Option<&LoanStage>,
    out: &mut Builder,
) -> Result<()> {
    let boot = cfg.bootstrap_config();
    if cfg.metrics.counterfactuals {
        let (blind, aware) = need_applications(art, "counterfactuals")?;
        let approval = fit_approval_model(&ds.applications, blind).within("counterfactuals", "fit_approval_model")?;
        let apr = fit_apr_model(&ds.applications, blind).within("counterfactuals", "fit_apr_model")?;
        let approved: Vec<&str> = first_applications(&ds.applications)
            .into_iter()
            .filter(|a| a.approved)
            .map(|a| a.application_id.as_str())
            .collect();
        let restrict = |s: &RiskScores| RiskScores {
            scores: approved.iter().map(|id| (id.to_string(), s.scores[*id])).collect(),
            folds: BTreeMap::new(),
        };
        let (blind_ok, aware_ok) = (restrict(blind), restrict(aware));
        let mut tables = Vec::new();
        for &axis in &cfg.axes {
            tables.push(
                counterfactual_approval_delta(&approval, blind, aware, &ds.demographics, scheme, axis, &boot)
                    .within("counterfactuals", "counterfactual_approval_delta")?,
            );
            tables.push(
                counterfactual_apr_delta(&apr, &blind_ok, &aware_ok, &ds.applications, &ds.demographics, scheme, axis, &boot)
                    .within("counterfactuals", "counterfactual_apr_delta")?,
            );
        }
        out.metrics(report::F7_COUNTERFACTUAL_DELTAS, tables);
        out.fits.insert("approval".into(), approval);
        out.fits.insert("apr".into(), apr);
    }
    if cfg.metrics.noshop {
        let (_, aware) = need_applications(art, "noshop")?;
        let fit = fit_noshop_irr_model(&ds.loans, &ds.applications, &art.aware_loans, cfg.counterfactual.noshop_intercept)
            .within("counterfactuals", "fit_noshop_irr_model")?;
        let owned;
        let stage = match loans {
            Some(s) => s,
            None => {
                owned = LoanStage::new(cfg, ds, scheme)?;
                &owned
            }
        };
        let mut tables = stage.by_group(MetricKind::MeanIndividualIrr)?;
        let firsts = first_applications(&ds.applications);
        for &axis in &cfg.axes {
            tables.push(
                counterfactual_noshop_irr(&fit, firsts.iter().copied(), aware, &ds.demographics, scheme, axis, &boot)
                    .within("counterfactuals", "counterfactual_noshop_irr")?,
            );
        }
        out.metrics(report::F8_NOSHOP_COMPARISON, tables);
        out.fits.insert("noshop_irr".into(), fit);
    }
    Ok(())
}

/// Every enabled stage on one dataset.
pub fn run_audit_on(cfg: &RunConfig, ds: &Dataset, summary: &IngestSummary) -> Result<AuditReport> {
    let started = now();
    let scheme = cfg.scheme()?;
    let scheme = scheme.as_ref();
    let mut out = Builder::new();
    out.warnings.extend(ingest_warnings(summary));
    let m = cfg.metrics;
    let stage = LoanStage::new(cfg, ds, scheme)?;
    if m.group_irr {
        let mut t = stage.by_group(MetricKind::PortfolioIrr)?;
        t.extend(stage.by_group(MetricKind::MeanIndividualIrr)?);
        out.metrics(report::F1_GROUP_IRR, t);
    }
    if m.target_return {
        out.tables.insert(
            report::F2_TARGET_RETURN_CURVE.into(),
            report::target_return_curve_table(&cfg.target_return_curve, 51),
        );
        let mut t = stage.by_group(MetricKind::TargetReturn)?;
        t.extend(stage.by_group(MetricKind::PrincipalLost)?);
        out.metrics(report::F3_TARGET_RETURN_PRINCIPAL_LOST, t);
    }
    if m.calibration || m.counterfactuals || m.noshop {
        let art = fit_risk_artifact(cfg, ds)?;
        if m.calibration {
            calibration_table(cfg, ds, scheme, &art, &mut out)?;
        }
        counterfactual_tables(cfg, ds, scheme, &art, Some(&stage), &mut out)?;
    }
    if m.default_by_apr {
        apr_curve_table(cfg, ds, scheme, &mut out)?;
    }
    if m.appendix {
        let t = stage.by_group(MetricKind::DefaultRate)?;
        out.metrics(report::A5_DEFAULT_RATE, t);
        stage.deciles(&mut out)?;
        let t = stage.by_group(MetricKind::IrrVolatility)?;
        out.metrics(report::A7_IRR_VOLATILITY, t);
    }
    out.warnings.dedup();
    Ok(out.finish(cfg, &started))
}

/// Load the configured inputs and run every enabled stage.
pub fn run_audit(cfg: &RunConfig) -> Result<AuditReport> {
    let (ds, summary) = load_inputs(cfg)?;
    run_audit_on(cfg, &ds, &summary)
}

/// `audit`: run, then write the report. Nothing is written on failure.
pub fn audit(cfg: &RunConfig) -> Result<AuditReport> {
    let dir = cfg.output_dir()?;
    let r = run_audit(cfg)?;
    r.write(&dir)?;
    Ok(r)
}

/// `calibrate`: risk models only. Writes the calibration table and the
/// score artifact that `counterfactual` consumes.
pub fn calibrate(cfg: &RunConfig) -> Result<AuditReport> {
    let dir = cfg.output_dir()?;
    let started = now();
    let (ds, summary) = load_inputs(cfg)?;
    let scheme = cfg.scheme()?;
    let art = fit_risk_artifact(cfg, &ds)?;
    let mut out = Builder::new();
    out.warnings.extend(ingest_warnings(&summary));
    calibration_table(cfg, &ds, scheme.as_ref(), &art, &mut out)?;
    let r = out.finish(cfg, &started);
    std::fs::create_dir_all(&dir).map_err(|e| AuditError::io(&dir, e))?;
    report::write_atomically(&dir, &[(RISK_ARTIFACT.into(), art.bytes()?)])?;
    r.write(&dir)?;
    Ok(r)
}

/// `counterfactual`: the counterfactual tables from a prior `calibrate`
/// artifact.
pub fn counterfactual(cfg: &RunConfig, artifact: &Path) -> Result<AuditReport> {
    let dir = cfg.output_dir()?;
    let started = now();
    let art = RiskArtifact::read(artifact)?;
    let (ds, summary) = load_inputs(cfg)?;
    let scheme = cfg.scheme()?;
    let mut out = Builder::new();
    out.warnings.extend(ingest_warnings(&summary));
    if art.config_hash != cfg.config_hash {
        out.warnings
            .push("counterfactual: risk scores were produced under a different configuration".into());
    }
    let mut c = cfg.clone();
    c.metrics.counterfactuals = true;
    c.metrics.noshop = true;
    counterfactual_tables(&c, &ds, scheme.as_ref(), &art, None, &mut out)?;
    let r = out.finish(cfg, &started);
    r.write(&dir)?;
    Ok(r)
}

/// `simulate`: generate a market from `[market]`, write it in the standard
/// layout together with the ground truth and a ready-to-run `audit.toml`.
pub fn simulate(cfg: &RunConfig) -> Result<Market> {
    let dir = cfg.output_dir()?;
    let mut mc = cfg
        .market
        .clone()
        .ok_or_else(|| AuditError::Config("simulate needs a `[market]` table".into()))?;
    mc.seed = cfg.seed;
    let market = generate_market(&mc).within("synthgen", "generate_market")?;
    std::fs::create_dir_all(&dir).map_err(|e| AuditError::io(&dir, e))?;
    write_dataset(&market.dataset, &DatasetPaths::in_dir(&dir))?;
    write_truth(&market, &dir.join("truth.csv"))?;
    let audit_toml = format!(
        "seed = {}\ngroup_scheme = \"{}\"\noutput_dir = \"report\"\n\n[inputs]\nloans = \"loans.csv\"\ncashflows = \"cashflows.csv\"\ndemographics = \"demographics.csv\"\napplications = \"applications.csv\"\n",
        cfg.seed, cfg.group_scheme
    );
    std::fs::write(dir.join("audit.toml"), audit_toml).map_err(|e| AuditError::io(dir.join("audit.toml"), e))?;
    Ok(market)
}

fn write_truth(m: &Market, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AuditError::csv(path, e))?;
    w.write_record([
        "id",
        "race",
        "gender",
        "perceived_risk",
        "true_risk",
        "target_return",
        "apr",
        "approved",
        "funded",
    ])
    .map_err(|e| AuditError::csv(path, e))?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for t in &m.truth {
        w.write_record([
            t.id.clone(),
            t.race.name().to_string(),
            t.gender.name().to_string(),
            format!("{:?}", t.perceived_risk),
            format!("{:?}", t.true_risk),
            opt(t.target_return),
            opt(t.apr),
            t.approved.to_string(),
            t.funded.to_string(),
        ])
        .map_err(|e| AuditError::csv(path, e))?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::parse(b"group_scheme = \"weighted\"\n", ".").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn missing_demographics_names_the_field() {
        let e = RunConfig::parse(b"seed = 1\n[inputs]\nloans = \"l.csv\"\n", ".").unwrap_err();
        assert!(e.to_string().contains("demographics"), "{e}");
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::parse(b"seed = 1\ngroup_scheme = \"weighted\"\n", "/tmp").unwrap();
        c.apply(&Overrides {
            group_scheme: Some("argmax".into()),
            seed: Some(9),
            output_dir: Some("o".into()),
        })
        .unwrap();
        assert_eq!((c.seed, c.group_scheme.as_str()), (9, "argmax"));
        assert_eq!(c.output_dir().unwrap(), PathBuf::from("/tmp/o"));
        assert!(c.apply(&Overrides { group_scheme: Some("nope".into()), ..Overrides::default() }).is_err());
    }

    #[test]
    fn config_hash_follows_the_bytes() {
        let a = RunConfig::parse(b"seed = 1\n", ".").unwrap();
        let b = RunConfig::parse(b"seed = 1\n", ".").unwrap();
        let c = RunConfig::parse(b"seed = 1 \n", ".").unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
    }
}
