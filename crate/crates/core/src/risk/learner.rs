//! Learners that turn a feature matrix and 0/1 labels into a probability model.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::gbdt::GradientBoostedTrees;
use crate::error::{AuditError, Result};
use crate::regression::{logistic_regression, LogisticFit, LogisticOptions};

pub type Hyperparameters = BTreeMap<String, f64>;

/// A fitted model. Prediction is pure.
pub trait FittedModel: Send + Sync + fmt::Debug {
    fn predict(&self, row: &[f64]) -> f64;
}

pub trait RiskLearner: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Keys accepted in the hyperparameter map.
    fn hyperparameter_names(&self) -> &'static [&'static str];

    /// `rows` are row-major feature vectors of equal length.
    fn fit(&self, rows: &[&[f64]], labels: &[f64], params: &Hyperparameters) -> Result<Box<dyn FittedModel>>;
}

pub(crate) fn param(params: &Hyperparameters, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

pub(crate) fn check_params(learner: &dyn RiskLearner, params: &Hyperparameters) -> Result<()> {
    let known = learner.hyperparameter_names();
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(AuditError::Config(format!(
            "learner `{}` has no hyperparameter `{k}` (known: {})",
            learner.name(),
            known.join(", ")
        )));
    }
    Ok(())
}

/// Name → learner lookup.
#[derive(Debug, Clone)]
pub struct LearnerRegistry {
    learners: BTreeMap<&'static str, Arc<dyn RiskLearner>>,
}

impl Default for LearnerRegistry {
    fn default() -> Self {
        Self::empty()
            .register(Arc::new(GradientBoostedTrees))
            .register(Arc::new(LogisticLearner))
    }
}

impl LearnerRegistry {
    pub fn empty() -> Self {
        Self {
            learners: BTreeMap::new(),
        }
    }

    pub fn register(mut self, learner: Arc<dyn RiskLearner>) -> Self {
        self.learners.insert(learner.name(), learner);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn RiskLearner>> {
        self.learners.get(name).cloned().ok_or_else(|| {
            AuditError::Config(format!(
                "unknown learner `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.learners.keys().copied().collect()
    }
}

/// Ridge-penalized logistic regression on standardized features.
#[derive(Debug, Default)]
pub struct LogisticLearner;

#[derive(Debug)]
struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    fit: LogisticFit,
}

impl LogisticModel {
    fn design_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(row.len() + 1);
        out.push(1.0);
        out.extend(row.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s));
        out
    }
}

impl FittedModel for LogisticModel {
    fn predict(&self, row: &[f64]) -> f64 {
        self.fit.predict(&self.design_row(row))
    }
}

impl RiskLearner for LogisticLearner {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn hyperparameter_names(&self) -> &'static [&'static str] {
        &["ridge", "max_iter"]
    }

    fn fit(&self, rows: &[&[f64]], labels: &[f64], params: &Hyperparameters) -> Result<Box<dyn FittedModel>> {
        check_params(self, params)?;
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for r in rows {
            for j in 0..p {
                mean[j] += r[j] / n as f64;
            }
        }
        for r in rows {
            for j in 0..p {
                scale[j] += (r[j] - mean[j]).powi(2) / n as f64;
            }
        }
        // constant columns stay at zero after centring
        scale.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
        let shell = LogisticModel {
            mean,
            scale,
            fit: LogisticFit {
                coefficients: vec![],
                standard_errors: vec![],
                covariance: DMatrix::zeros(0, 0),
                log_likelihood: 0.0,
                iterations: 0,
                n,
            },
        };
        let x = DMatrix::from_fn(n, p + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                (rows[i][j - 1] - shell.mean[j - 1]) / shell.scale[j - 1]
            }
        });
        let ridge = param(params, "ridge", 1.0);
        let mut pen = DMatrix::from_diagonal_element(p + 1, p + 1, ridge);
        pen[(0, 0)] = 0.0;
        let opts = LogisticOptions {
            max_iter: param(params, "max_iter", 100.0) as usize,
            penalty: Some(pen),
            detect_separation: false,
            ..LogisticOptions::default()
        };
        let fit = logistic_regression(&x, labels, None, &opts)?;
        Ok(Box::new(LogisticModel { fit, ..shell }))
    }
}
