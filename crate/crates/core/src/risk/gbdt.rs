//! Histogram gradient-boosted trees for binary log-loss.
//!
//! Features are bucketed once into at most `max_bins` quantile bins. Trees
//! grow depth-first to `max_depth` with second-order (Newton) leaf values and
//! an L2 penalty `lambda`; a split requires `min_child_weight` hessian mass on
//! each side. No row or column subsampling, so fits are deterministic.
//!
//! Defaults: 200 rounds, depth 4, learning rate 0.1, `lambda` 20 and
//! `min_child_weight` 40. With default rates of a few percent each row
//! carries hessian ~0.05, so a child needs roughly 800 rows.

use super::learner::{check_params, param, FittedModel, Hyperparameters, RiskLearner};
use crate::error::{AuditError, Result};
use crate::stats::{logistic, logit};

#[derive(Debug, Default)]
pub struct GradientBoostedTrees;

#[derive(Debug, Clone, Copy)]
struct Settings {
    rounds: usize,
    max_depth: usize,
    learning_rate: f64,
    lambda: f64,
    min_child_weight: f64,
    max_bins: usize,
}

impl Settings {
    fn from(params: &Hyperparameters) -> Result<Self> {
        let s = Self {
            rounds: param(params, "rounds", 200.0) as usize,
            max_depth: param(params, "max_depth", 4.0) as usize,
            learning_rate: param(params, "learning_rate", 0.1),
            lambda: param(params, "lambda", 20.0),
            min_child_weight: param(params, "min_child_weight", 40.0),
            max_bins: param(params, "max_bins", 64.0) as usize,
        };
        if !(s.learning_rate > 0.0) || s.lambda < 0.0 || !(2..=256).contains(&s.max_bins) {
            return Err(AuditError::Config(
                "gbdt needs learning_rate > 0, lambda >= 0 and 2 <= max_bins <= 256".into(),
            ));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug)]
struct Booster {
    base: f64,
    trees: Vec<Tree>,
}

impl FittedModel for Booster {
    fn predict(&self, row: &[f64]) -> f64 {
        logistic(self.base + self.trees.iter().map(|t| t.predict(row)).sum::<f64>())
    }
}

/// Quantile cut points; bin `b` holds values in `(cuts[b-1], cuts[b]]`.
fn cut_points(values: &mut [f64], max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.dedup();
    if distinct.len() <= max_bins {
        distinct.pop();
        return distinct;
    }
    let n = values.len();
    let mut cuts: Vec<f64> = (1..max_bins).map(|k| values[k * n / max_bins]).collect();
    cuts.dedup();
    if cuts.last() == values.last() {
        cuts.pop();
    }
    cuts
}

struct Binned {
    n: usize,
    cuts: Vec<Vec<f64>>,
    /// Column-major bin indices.
    bins: Vec<u8>,
}

impl Binned {
    fn new(rows: &[&[f64]], max_bins: usize) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut cuts = Vec::with_capacity(p);
        let mut bins = vec![0u8; n * p];
        for j in 0..p {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let c = cut_points(&mut col, max_bins);
            for (i, r) in rows.iter().enumerate() {
                bins[j * n + i] = c.partition_point(|x| *x < r[j]) as u8;
            }
            cuts.push(c);
        }
        Self { n, cuts, bins }
    }

    fn bin(&self, j: usize, i: u32) -> usize {
        self.bins[j * self.n + i as usize] as usize
    }
}

/// Per-feature (gradient, hessian) sums by bin.
type Histogram = Vec<Vec<(f64, f64)>>;

struct Grower<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    s: Settings,
}

impl Grower<'_> {
    fn histogram(&self, rows: &[u32]) -> Histogram {
        let mut h: Histogram = self.data.cuts.iter().map(|c| vec![(0.0, 0.0); c.len() + 1]).collect();
        for (j, hj) in h.iter_mut().enumerate() {
            for &i in rows {
                let slot = &mut hj[self.data.bin(j, i)];
                slot.0 += self.grad[i as usize];
                slot.1 += self.hess[i as usize];
            }
        }
        h
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.s.lambda)
    }

    /// Best (gain, feature, bin) split of a node with histogram `hist`.
    fn best_split(&self, hist: &Histogram) -> Option<(f64, usize, usize)> {
        let (g, h) = hist[0].iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let parent = self.score(g, h);
        let mut best: Option<(f64, usize, usize)> = None;
        for (j, hj) in hist.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..hj.len().saturating_sub(1) {
                gl += hj[b].0;
                hl += hj[b].1;
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.s.min_child_weight || hr < self.s.min_child_weight {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j, b));
                }
            }
        }
        best
    }

    fn grow(&self, nodes: &mut Vec<Node>, rows: Vec<u32>, hist: Histogram, depth: usize, leaf_of: &mut [f64]) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(0.0));
        let split = if depth < self.s.max_depth { self.best_split(&hist) } else { None };
        let Some((_, j, b)) = split else {
            let (g, h) = hist[0].iter().fold((0.0, 0.0), |a, x| (a.0 + x.0, a.1 + x.1));
            let v = -g / (h + self.s.lambda) * self.s.learning_rate;
            for &i in &rows {
                leaf_of[i as usize] = v;
            }
            nodes[id] = Node::Leaf(v);
            return id;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| self.data.bin(j, i) <= b);
        drop(rows);
        // histogram the smaller child, subtract for the larger
        let (small, small_is_left) = if left.len() <= right.len() { (&left, true) } else { (&right, false) };
        let hs = self.histogram(small);
        let mut hl = hist;
        for (pj, sj) in hl.iter_mut().zip(&hs) {
            for (p, s) in pj.iter_mut().zip(sj) {
                p.0 -= s.0;
                p.1 -= s.1;
            }
        }
        let (hist_left, hist_right) = if small_is_left { (hs, hl) } else { (hl, hs) };
        let l = self.grow(nodes, left, hist_left, depth + 1, leaf_of);
        let r = self.grow(nodes, right, hist_right, depth + 1, leaf_of);
        nodes[id] = Node::Split {
            feature: j,
            threshold: self.data.cuts[j][b],
            left: l,
            right: r,
        };
        id
    }
}

impl RiskLearner for GradientBoostedTrees {
    fn name(&self) -> &'static str {
        "gbdt"
    }

    fn hyperparameter_names(&self) -> &'static [&'static str] {
        &["rounds", "max_depth", "learning_rate", "lambda", "min_child_weight", "max_bins"]
    }

    fn fit(&self, rows: &[&[f64]], labels: &[f64], params: &Hyperparameters) -> Result<Box<dyn FittedModel>> {
        check_params(self, params)?;
        let s = Settings::from(params)?;
        let n = rows.len();
        if n == 0 {
            return Err(AuditError::Degenerate("gbdt fit on zero rows".into()));
        }
        if rows[0].is_empty() {
            return Err(AuditError::Degenerate("gbdt fit without features".into()));
        }
        let data = Binned::new(rows, s.max_bins);
        let mean = labels.iter().sum::<f64>() / n as f64;
        let base = logit(mean.clamp(1e-6, 1.0 - 1e-6));
        let mut raw = vec![base; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut leaf_of = vec![0.0; n];
        let all: Vec<u32> = (0..n as u32).collect();
        let mut trees = Vec::with_capacity(s.rounds);
        for _ in 0..s.rounds {
            for i in 0..n {
                let p = logistic(raw[i]);
                grad[i] = p - labels[i];
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let grower = Grower {
                data: &data,
                grad: &grad,
                hess: &hess,
                s,
            };
            let mut nodes = Vec::new();
            let root = grower.histogram(&all);
            grower.grow(&mut nodes, all.clone(), root, 0, &mut leaf_of);
            for i in 0..n {
                raw[i] += leaf_of[i];
            }
            trees.push(Tree { nodes });
        }
        Ok(Box::new(Booster { base, trees }))
    }
}
