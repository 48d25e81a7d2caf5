//! Cross-fitted default-risk models, blind or aware of demographics, and
//! the calibration diagnostics built on their scores.

mod calibration;
mod gbdt;
mod learner;
mod spline;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use calibration::{
    calibration_curve, calibration_gap, default_by_apr_curve, AprCurveOptions, CalibrationBin,
    CalibrationCurve, CalibrationGap, CalibrationOptions, CurvePoint, DefaultAprCurve,
};
pub use gbdt::GradientBoostedTrees;
pub use learner::{FittedModel, Hyperparameters, LearnerRegistry, LogisticLearner, RiskLearner};
pub use spline::{BSplineBasis, LogitSpline, SplineOptions};

use crate::data::{ApplicationRecord, DemographicWeights, LoanRecord};
use crate::error::{AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Awareness {
    /// Lender features only.
    Blind,
    /// Lender features plus the seven demographic probabilities.
    Aware,
}

impl Awareness {
    pub fn name(&self) -> &'static str {
        match self {
            Awareness::Blind => "blind",
            Awareness::Aware => "aware",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskModelSpec {
    pub awareness: Awareness,
    pub learner: String,
    pub n_folds: usize,
    pub hyperparameters: Hyperparameters,
    /// Fold-assignment seed. Kept apart from the bootstrap seed so that
    /// point estimates do not move when only the bootstrap seed changes.
    pub seed: u64,
}

impl Default for RiskModelSpec {
    fn default() -> Self {
        Self {
            awareness: Awareness::Blind,
            learner: "gbdt".into(),
            n_folds: 5,
            hyperparameters: Hyperparameters::new(),
            seed: 0,
        }
    }
}

impl RiskModelSpec {
    pub fn with_awareness(&self, awareness: Awareness) -> Self {
        Self {
            awareness,
            ..self.clone()
        }
    }
}

/// Model input for one person. Blind rows are the features verbatim, so
/// demographics cannot reach a blind model.
pub fn design_row(features: &[f64], demo: Option<&DemographicWeights>, awareness: Awareness) -> Result<Vec<f64>> {
    let mut row = features.to_vec();
    if awareness == Awareness::Aware {
        let d = demo.ok_or_else(|| AuditError::Validation("aware model needs demographics".into()))?;
        row.extend_from_slice(&d.as_features());
    }
    Ok(row)
}

/// Predicted default probabilities keyed by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskScores {
    pub scores: BTreeMap<String, f64>,
    /// Cross-fitting fold of each training id; ids scored by the fold
    /// average (never trained on) have no entry.
    pub folds: BTreeMap<String, usize>,
}

impl RiskScores {
    pub fn get(&self, id: &str) -> Result<f64> {
        self.scores
            .get(id)
            .copied()
            .ok_or_else(|| AuditError::record(id, "no risk score for id"))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// K fold models plus the out-of-fold scores of their training loans.
#[derive(Debug, Clone)]
pub struct CrossFitted {
    pub spec: RiskModelSpec,
    models: Vec<Arc<dyn FittedModel>>,
    pub loan_scores: RiskScores,
}

/// Fold of each of `n` rows: a seeded permutation dealt round-robin.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, i) in order.into_iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Cross-fitted default probabilities for `loans` with the default registry.
pub fn fit_risk_model(
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    spec: &RiskModelSpec,
) -> Result<CrossFitted> {
    fit_risk_model_with(&LearnerRegistry::default(), loans, demographics, spec)
}

pub fn fit_risk_model_with(
    registry: &LearnerRegistry,
    loans: &[LoanRecord],
    demographics: &BTreeMap<String, DemographicWeights>,
    spec: &RiskModelSpec,
) -> Result<CrossFitted> {
    let learner = registry.get(&spec.learner)?;
    let k = spec.n_folds;
    if k < 2 {
        return Err(AuditError::Config(format!("n_folds must be at least 2, got {k}")));
    }
    if loans.len() < k {
        return Err(AuditError::FoldDegenerate(format!("{} loans for {k} folds", loans.len())));
    }
    let rows: Vec<Vec<f64>> = loans
        .iter()
        .map(|l| design_row(&l.features, demographics.get(&l.loan_id), spec.awareness))
        .collect::<Result<_>>()?;
    if rows[0].is_empty() {
        return Err(AuditError::Validation("loans carry no feature columns".into()));
    }
    let labels: Vec<f64> = loans.iter().map(|l| l.defaulted as u8 as f64).collect();
    let fold = assign_folds(loans.len(), k, spec.seed);
    for f in 0..k {
        for (part, inside) in [("held-out fold", true), ("training set", false)] {
            let mut seen = [false; 2];
            for i in (0..loans.len()).filter(|&i| (fold[i] == f) == inside) {
                seen[labels[i] as usize] = true;
            }
            if !(seen[0] && seen[1]) {
                return Err(AuditError::FoldDegenerate(format!(
                    "the {part} of fold {f} has a constant default label; use fewer folds"
                )));
            }
        }
    }
    let models: Vec<Arc<dyn FittedModel>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let idx: Vec<usize> = (0..loans.len()).filter(|&i| fold[i] != f).collect();
            let x: Vec<&[f64]> = idx.iter().map(|&i| rows[i].as_slice()).collect();
            let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            learner.fit(&x, &y, &spec.hyperparameters).map(Arc::from)
        })
        .collect::<Result<_>>()?;
    let mut scores = RiskScores::default();
    for (i, l) in loans.iter().enumerate() {
        scores.scores.insert(l.loan_id.clone(), models[fold[i]].predict(&rows[i]));
        scores.folds.insert(l.loan_id.clone(), fold[i]);
    }
    Ok(CrossFitted {
        spec: spec.clone(),
        models,
        loan_scores: scores,
    })
}

impl CrossFitted {
    /// Average of the fold models' predictions, for rows no fold trained on.
    pub fn predict_new(&self, row: &[f64]) -> f64 {
        self.models.iter().map(|m| m.predict(row)).sum::<f64>() / self.models.len() as f64
    }

    /// Scores for applications. An application whose id is a training loan
    /// takes that loan's out-of-fold score; the rest get the fold average.
    pub fn score_applications<'a>(
        &self,
        applications: impl IntoIterator<Item = &'a ApplicationRecord>,
        demographics: &BTreeMap<String, DemographicWeights>,
    ) -> Result<RiskScores> {
        let mut out = RiskScores::default();
        for a in applications {
            let id = &a.application_id;
            if let Some(s) = self.loan_scores.scores.get(id) {
                out.scores.insert(id.clone(), *s);
                out.folds.insert(id.clone(), self.loan_scores.folds[id]);
            } else {
                let row = design_row(&a.features, demographics.get(id), self.spec.awareness)?;
                out.scores.insert(id.clone(), self.predict_new(&row));
            }
        }
        Ok(out)
    }
}
