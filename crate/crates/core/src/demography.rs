//! Group weighting schemes over demographic proxy probabilities.
//!
//! A scheme turns each person's probability vectors into per-group weights.
//! Schemes are trait objects registered by name so a run can pick one from
//! configuration (`weighted` or `argmax`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DemographicWeights, Gender, Race};
use crate::error::{AuditError, Result};
use crate::stats::{weighted_mean, WeightedMean};

/// Race and gender are separate axes; no intersectional cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Race,
    Gender,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Race, Axis::Gender];

    pub fn groups(&self) -> Vec<&'static str> {
        match self {
            Axis::Race => Race::ALL.iter().map(Race::name).collect(),
            Axis::Gender => Gender::ALL.iter().map(Gender::name).collect(),
        }
    }

    pub fn group_index(&self, name: &str) -> Result<usize> {
        self.groups()
            .iter()
            .position(|g| g.eq_ignore_ascii_case(name))
            .ok_or_else(|| AuditError::Config(format!("unknown {self} group `{name}`")))
    }

    pub fn probabilities<'a>(&self, demo: &'a DemographicWeights) -> &'a [f64] {
        match self {
            Axis::Race => &demo.race,
            Axis::Gender => &demo.gender,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Race => "race",
            Axis::Gender => "gender",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = AuditError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "race" => Ok(Axis::Race),
            "gender" => Ok(Axis::Gender),
            _ => Err(AuditError::Config(format!("unknown axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeMode {
    ProbabilityWeighted,
    ArgmaxLabeled,
}

/// Per-group weights for one person on one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub weights: Vec<f64>,
    /// The maximal probability was shared by more than one category.
    pub tie: bool,
}

pub trait GroupScheme: Send + Sync + fmt::Debug {
    /// Registry key.
    fn name(&self) -> &'static str;
    fn mode(&self) -> SchemeMode;
    fn assign(&self, demo: &DemographicWeights, axis: Axis) -> Assignment;
}

/// The proxy probabilities are the weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProbabilityWeighted;

impl GroupScheme for ProbabilityWeighted {
    fn name(&self) -> &'static str {
        "weighted"
    }
    fn mode(&self) -> SchemeMode {
        SchemeMode::ProbabilityWeighted
    }
    fn assign(&self, demo: &DemographicWeights, axis: Axis) -> Assignment {
        Assignment {
            weights: axis.probabilities(demo).to_vec(),
            tie: false,
        }
    }
}

/// Weight 1 on the most probable category, first in fixed order on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArgmaxLabeled;

impl GroupScheme for ArgmaxLabeled {
    fn name(&self) -> &'static str {
        "argmax"
    }
    fn mode(&self) -> SchemeMode {
        SchemeMode::ArgmaxLabeled
    }
    fn assign(&self, demo: &DemographicWeights, axis: Axis) -> Assignment {
        let p = axis.probabilities(demo);
        let mut best = 0;
        for (k, v) in p.iter().enumerate().skip(1) {
            if *v > p[best] {
                best = k;
            }
        }
        let tie = p.iter().enumerate().any(|(k, v)| k != best && *v == p[best]);
        let mut weights = vec![0.0; p.len()];
        weights[best] = 1.0;
        Assignment { weights, tie }
    }
}

/// Name → scheme lookup.
#[derive(Debug, Clone)]
pub struct SchemeRegistry {
    schemes: BTreeMap<&'static str, Arc<dyn GroupScheme>>,
}

impl Default for SchemeRegistry {
    fn default() -> Self {
        Self::empty()
            .register(Arc::new(ProbabilityWeighted))
            .register(Arc::new(ArgmaxLabeled))
    }
}

impl SchemeRegistry {
    pub fn empty() -> Self {
        Self {
            schemes: BTreeMap::new(),
        }
    }

    pub fn register(mut self, scheme: Arc<dyn GroupScheme>) -> Self {
        self.schemes.insert(scheme.name(), scheme);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn GroupScheme>> {
        self.schemes.get(name).cloned().ok_or_else(|| {
            AuditError::Config(format!(
                "unknown group scheme `{name}` (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.schemes.keys().copied().collect()
    }
}

/// Per-group weights for one person.
pub fn group_weights(demo: &DemographicWeights, scheme: &dyn GroupScheme, axis: Axis) -> BTreeMap<&'static str, f64> {
    let a = scheme.assign(demo, axis);
    axis.groups().into_iter().zip(a.weights).collect()
}

/// Group weights for a list of ids, stored row-major (id × group).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub axis: Axis,
    pub groups: Vec<&'static str>,
    weights: Vec<f64>,
    pub ties: usize,
}

impl WeightTable {
    pub fn build<'a>(
        ids: impl IntoIterator<Item = &'a str>,
        demographics: &BTreeMap<String, DemographicWeights>,
        scheme: &dyn GroupScheme,
        axis: Axis,
    ) -> Result<Self> {
        let groups = axis.groups();
        let mut weights = Vec::new();
        let mut ties = 0;
        for id in ids {
            let demo = demographics
                .get(id)
                .ok_or_else(|| AuditError::record(id, "no demographics for id"))?;
            let a = scheme.assign(demo, axis);
            ties += a.tie as usize;
            weights.extend(a.weights);
        }
        Ok(Self {
            axis,
            groups,
            weights,
            ties,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len() / self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.groups.len();
        &self.weights[i * g..(i + 1) * g]
    }

    pub fn weight(&self, i: usize, group: usize) -> f64 {
        self.weights[i * self.groups.len() + group]
    }

    /// All persons' weights for one group.
    pub fn column(&self, group: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i, group)).collect()
    }
}

/// `sum w_i x_i / sum w_i` for one group, with its effective sample size.
pub fn weighted_group_mean(
    values: &BTreeMap<String, f64>,
    demographics: &BTreeMap<String, DemographicWeights>,
    scheme: &dyn GroupScheme,
    axis: Axis,
    group: &str,
) -> Result<WeightedMean> {
    let g = axis.group_index(group)?;
    let table = WeightTable::build(values.keys().map(String::as_str), demographics, scheme, axis)?;
    let xs: Vec<f64> = values.values().copied().collect();
    weighted_mean(&xs, &table.column(g))
        .map_err(|_| AuditError::Degenerate(format!("{axis} group {group} has zero total weight")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(race: [f64; 5]) -> DemographicWeights {
        DemographicWeights {
            race,
            gender: [0.6, 0.4],
        }
    }

    #[test]
    fn weighted_is_identity() {
        let d = demo([0.7, 0.1, 0.1, 0.05, 0.05]);
        let w = group_weights(&d, &ProbabilityWeighted, Axis::Race);
        assert_eq!(w["White"], 0.7);
        assert_eq!(w["Black"], 0.1);
        assert_eq!(w["Other"], 0.05);
    }

    #[test]
    fn argmax_picks_the_mode() {
        let d = demo([0.7, 0.1, 0.1, 0.05, 0.05]);
        let a = ArgmaxLabeled.assign(&d, Axis::Race);
        assert_eq!(a.weights, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!a.tie);
        let g = ArgmaxLabeled.assign(&d, Axis::Gender);
        assert_eq!(g.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn argmax_ties_go_to_the_first_category() {
        let d = demo([0.5, 0.5, 0.0, 0.0, 0.0]);
        let a = ArgmaxLabeled.assign(&d, Axis::Race);
        assert_eq!(a.weights, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(a.tie);

        let mut demos = BTreeMap::new();
        demos.insert("x".to_string(), d);
        demos.insert("y".to_string(), demo([0.1, 0.6, 0.1, 0.1, 0.1]));
        let t = WeightTable::build(["x", "y"], &demos, &ArgmaxLabeled, Axis::Race).unwrap();
        assert_eq!(t.ties, 1);
        assert_eq!(t.row(1), &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn group_mean_examples() {
        let mut demos = BTreeMap::new();
        demos.insert("a".to_string(), DemographicWeights::one_hot(Race::Black, Gender::Woman));
        demos.insert("b".to_string(), DemographicWeights::one_hot(Race::Black, Gender::Man));
        let values: BTreeMap<String, f64> = [("a".to_string(), 4.0), ("b".to_string(), 8.0)].into();
        let m = weighted_group_mean(&values, &demos, &ProbabilityWeighted, Axis::Race, "Black").unwrap();
        assert_eq!(m.mean, 6.0);
        let m = weighted_group_mean(&values, &demos, &ProbabilityWeighted, Axis::Gender, "Woman").unwrap();
        assert_eq!(m.mean, 4.0);
        assert!(weighted_group_mean(&values, &demos, &ProbabilityWeighted, Axis::Race, "Asian").is_err());
    }

    #[test]
    fn registry_lookup() {
        let r = SchemeRegistry::default();
        assert_eq!(r.get("argmax").unwrap().mode(), SchemeMode::ArgmaxLabeled);
        assert_eq!(r.get("weighted").unwrap().mode(), SchemeMode::ProbabilityWeighted);
        assert!(r.get("bogus").is_err());
    }
}
