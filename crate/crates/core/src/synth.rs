//! Synthetic lending market with known risk, pricing and selection.
//!
//! Each applicant has eight standard-normal features. A sparse linear index
//! of those features gives the risk the lender can see, `p_vis(x)`; the
//! lender's perceived cumulative default probability is exactly `p_vis(x)`.
//! A per-group miscalibration shift `delta_g` is defined as perceived minus
//! true risk, so the true cumulative probability is `p_vis(x) - delta_g`.
//! Because the features carry no trace of the shift, a model trained on
//! realized defaults without demographics cannot recover it.
//!
//! Loans are priced so that the IRR of the expected cashflow under the
//! perceived hazard hits the target return for the perceived cumulative loss
//! rate, plus the federal rate. Defaults are drawn from the true hazard.
//!
//! Every applicant draws from its own ChaCha stream, so output does not
//! depend on thread count and [`true_risk`] can rebuild one applicant alone.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amortization::{payment, schedule_balances};
use crate::data::{
    ApplicationRecord, CashflowVector, Dataset, DemographicWeights, Gender, LoanRecord, Race, YearMonth,
};
use crate::demography::{Axis, GroupScheme};
use crate::error::{AuditError, Result};
use crate::irr::IrrSolver;
use crate::metrics::{cumulative_loss_rate, geometric_default_pmf};
use crate::stats::logistic;

pub const N_FEATURES: usize = 8;

/// Piecewise-linear map from cumulative loss rate to target annual return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReturnCurve {
    /// `(loss_rate, target_return)` knots, increasing in loss rate.
    pub knots: Vec<(f64, f64)>,
}

impl Default for TargetReturnCurve {
    fn default() -> Self {
        // convex: the premium per unit of expected loss grows with risk
        Self {
            knots: vec![(0.0, 0.02), (0.05, 0.045), (0.10, 0.08), (0.20, 0.17), (0.40, 0.40)],
        }
    }
}

impl TargetReturnCurve {
    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(AuditError::Config("target return curve needs at least two knots".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(AuditError::Config("target return knots must increase in loss rate".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(AuditError::Config("target return curve must be non-decreasing".into()));
            }
        }
        Ok(())
    }

    /// Linear interpolation, extrapolated flat below the first knot and
    /// along the last segment above the last.
    pub fn eval(&self, loss: f64) -> f64 {
        let k = &self.knots;
        if loss <= k[0].0 {
            return k[0].1;
        }
        let j = k.partition_point(|(x, _)| *x < loss).clamp(1, k.len() - 1);
        let ((x0, y0), (x1, y1)) = (k[j - 1], k[j]);
        y0 + (y1 - y0) * (loss - x0) / (x1 - x0)
    }
}

/// Linear risk index over the features plus per-group feature shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskIndex {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Added to the mean of feature 0 for each race, in [`Race::ALL`] order.
    /// Visible to the lender; it moves whole risk distributions.
    pub race_feature_shift: [f64; 5],
    pub gender_feature_shift: [f64; 2],
}

impl Default for RiskIndex {
    fn default() -> Self {
        Self {
            intercept: -2.6,
            coefficients: vec![0.6, -0.4, 0.3, 0.0, 0.2, 0.0, 0.0, 0.0],
            race_feature_shift: [0.0; 5],
            gender_feature_shift: [0.0; 2],
        }
    }
}

/// Perceived minus true cumulative default probability, per group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Miscalibration {
    pub race: [f64; 5],
    pub gender: [f64; 2],
}

impl Miscalibration {
    pub fn shift(&self, race: Race, gender: Gender) -> f64 {
        self.race[race as usize] + self.gender[gender as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Approval {
    /// Perceived-risk cutoff.
    pub threshold: f64,
    /// Approval probability is `logistic((threshold - perceived) / softness)`;
    /// zero gives a hard cutoff.
    pub softness: f64,
}

impl Default for Approval {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            softness: 0.04,
        }
    }
}

impl Approval {
    pub fn probability(&self, perceived: f64) -> f64 {
        if self.softness > 0.0 {
            logistic((self.threshold - perceived) / self.softness)
        } else if perceived <= self.threshold {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Shopping {
    #[default]
    Off,
    /// Approved applicants walk away with probability
    /// `strength * max(0, 1 - true_risk / approval_threshold)`.
    FavorableSelection { strength: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoanAmount {
    pub median: f64,
    /// Log-scale standard deviation.
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    /// Amounts are rounded to a multiple of this.
    pub step: f64,
}

impl Default for LoanAmount {
    fn default() -> Self {
        Self {
            median: 10_000.0,
            sigma: 0.5,
            min: 1_000.0,
            max: 40_000.0,
            step: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub n_applicants: usize,
    pub seed: u64,
    pub race_mix: [f64; 5],
    pub gender_mix: [f64; 2],
    pub risk: RiskIndex,
    pub miscalibration: Miscalibration,
    pub target_return_curve: TargetReturnCurve,
    pub approval: Approval,
    pub shopping: Shopping,
    pub term_months: u32,
    /// Monthly early-payoff hazard; zero disables prepayment.
    pub prepayment_hazard: f64,
    pub amount: LoanAmount,
    /// Applications are spread uniformly over twelve months from here.
    pub start: YearMonth,
    /// Federal rate in the first and last origination month; linear between.
    pub fed_rate: (f64, f64),
    /// Zero gives one-hot demographics. Otherwise each probability vector is
    /// `(1 - noise) * one_hot + noise * u` with `u` uniform on the simplex;
    /// below 0.5 the true group stays the argmax.
    pub demographic_noise: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_applicants: 10_000,
            seed: 0,
            race_mix: [0.6, 0.13, 0.17, 0.06, 0.04],
            gender_mix: [0.5, 0.5],
            risk: RiskIndex::default(),
            miscalibration: Miscalibration::default(),
            target_return_curve: TargetReturnCurve::default(),
            approval: Approval::default(),
            shopping: Shopping::Off,
            term_months: 36,
            prepayment_hazard: 0.0,
            amount: LoanAmount::default(),
            start: YearMonth::new(2019, 1).expect("valid month"),
            fed_rate: (0.024, 0.0155),
            demographic_noise: 0.0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(AuditError::Config(m));
        if self.n_applicants == 0 {
            return cfg("n_applicants must be positive".into());
        }
        for (name, mix) in [("race_mix", &self.race_mix[..]), ("gender_mix", &self.gender_mix[..])] {
            if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return cfg(format!("{name} must be a probability vector"));
            }
        }
        if self.risk.coefficients.len() != N_FEATURES {
            return cfg(format!("risk.coefficients needs {N_FEATURES} entries"));
        }
        self.target_return_curve.validate()?;
        if self.term_months == 0 {
            return cfg("term_months must be positive".into());
        }
        if !(0.0..1.0).contains(&self.prepayment_hazard) {
            return cfg("prepayment_hazard must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.demographic_noise) {
            return cfg("demographic_noise must lie in [0, 1)".into());
        }
        if let Shopping::FavorableSelection { strength } = self.shopping {
            if !(0.0..=1.0).contains(&strength) {
                return cfg("shopping strength must lie in [0, 1]".into());
            }
        }
        if !(self.approval.threshold > 0.0) || self.approval.softness < 0.0 {
            return cfg("approval threshold must be positive and softness non-negative".into());
        }
        let a = &self.amount;
        if !(a.min > 0.0 && a.max >= a.min && a.step > 0.0 && a.median > 0.0 && a.sigma >= 0.0) {
            return cfg("invalid loan amount distribution".into());
        }
        if !(self.fed_rate.0.is_finite() && self.fed_rate.1.is_finite()) {
            return cfg("fed_rate must be finite".into());
        }
        Ok(())
    }

    fn fed_rate_at(&self, month: u32) -> f64 {
        let (a, b) = self.fed_rate;
        a + (b - a) * month as f64 / 11.0
    }
}

/// Ground truth for one applicant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicantTruth {
    pub id: String,
    pub race: Race,
    pub gender: Gender,
    pub features: Vec<f64>,
    pub perceived_risk: f64,
    /// Cumulative default probability over the term.
    pub true_risk: f64,
    /// Target annual return including the federal rate, and the APR that
    /// earns it. `None` only for denied applicants the pricing rule cannot serve.
    pub target_return: Option<f64>,
    pub apr: Option<f64>,
    pub amount: f64,
    pub origination: YearMonth,
    pub fed_rate: f64,
    pub approved: bool,
    pub funded: bool,
}

/// A generated dataset with the ground truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub config: MarketConfig,
    pub dataset: Dataset,
    pub truth: Vec<ApplicantTruth>,
}

pub fn applicant_id(i: usize) -> String {
    format!("A{i:07}")
}

fn parse_id(id: &str) -> Option<usize> {
    id.strip_prefix('A').filter(|d| d.len() >= 7).and_then(|d| d.parse().ok())
}

/// Monthly hazard with cumulative probability `p` over `term` months.
pub fn monthly_hazard(p: f64, term: u32) -> f64 {
    1.0 - (1.0 - p).powf(1.0 / term as f64)
}

/// Expected monthly cashflow of a level-payment loan under a constant
/// default hazard and prepayment hazard, with no recovery.
pub fn expected_cashflow(principal: f64, apr: f64, term: u32, hazard: f64, prepay: f64) -> Vec<f64> {
    let a = payment(principal, apr, term);
    let balances = schedule_balances(principal, apr, term);
    let mut out = Vec::with_capacity(term as usize + 1);
    out.push(-principal);
    let mut alive = 1.0;
    for t in 1..=term as usize {
        let paying = alive * (1.0 - hazard);
        let q = if t < term as usize { prepay } else { 0.0 };
        out.push(paying * (a + q * balances[t]));
        alive = paying * (1.0 - q);
    }
    out
}

/// Cumulative loss rate of a loan under a constant hazard; a default in
/// month `t` leaves the balance after `t - 1` payments unpaid.
pub fn expected_loss_rate(apr: f64, term: u32, hazard: f64) -> f64 {
    let balances = schedule_balances(1.0, apr, term);
    let pmf = geometric_default_pmf(hazard, term);
    let mut remaining = vec![0.0; pmf.len()];
    for t in 1..pmf.len() {
        remaining[t] = balances[t - 1];
    }
    cumulative_loss_rate(1.0, &pmf, &remaining, &[]).expect("valid pmf")
}

/// APR at which the expected cashflow under the perceived hazard earns the
/// target return for its own loss rate plus `fed_rate`. Returns the APR and
/// the target.
pub fn price_loan(config: &MarketConfig, perceived: f64, fed_rate: f64) -> Result<(f64, f64)> {
    let term = config.term_months;
    let h = monthly_hazard(perceived, term);
    let solver = IrrSolver::default();
    let target_at = |apr: f64| config.target_return_curve.eval(expected_loss_rate(apr, term, h)) + fed_rate;
    let gap = |apr: f64| {
        let cf = expected_cashflow(1.0, apr, term, h, config.prepayment_hazard);
        let r = solver.solve(&cf);
        r.is_converged().then(|| r.annualized_rate - target_at(apr))
    };
    let (mut lo, mut hi) = (1e-6, 0.999);
    let g_hi = gap(hi).unwrap_or(f64::NEG_INFINITY);
    if g_hi < 0.0 {
        return Err(AuditError::Config(format!(
            "target return {:.4} unreachable below 100% APR at perceived risk {perceived:.4}",
            target_at(hi)
        )));
    }
    if gap(lo).is_some_and(|g| g >= 0.0) {
        return Ok((lo, target_at(lo)));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        match gap(mid) {
            Some(g) if g >= 0.0 => hi = mid,
            _ => lo = mid,
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((hi, target_at(hi)))
}

struct Draws {
    race: Race,
    gender: Gender,
    features: Vec<f64>,
    demographics: DemographicWeights,
    amount: f64,
    month: u32,
    u_approve: f64,
    u_shop: f64,
    u_default: f64,
    u_prepay: f64,
}

fn pick(u: f64, mix: &[f64]) -> usize {
    let mut acc = 0.0;
    for (k, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    mix.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn mixed<const N: usize>(truth: usize, noise: f64, rng: &mut ChaCha8Rng) -> [f64; N] {
    let mut e = [0.0; N];
    for x in e.iter_mut() {
        *x = -(1.0 - rng.random::<f64>()).ln();
    }
    let s: f64 = e.iter().sum();
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = noise * e[k] / s + if k == truth { 1.0 - noise } else { 0.0 };
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

fn draw(config: &MarketConfig, i: usize) -> Draws {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(i as u64);
    let race = Race::ALL[pick(rng.random(), &config.race_mix)];
    let gender = Gender::ALL[pick(rng.random(), &config.gender_mix)];
    let mut features: Vec<f64> = (0..N_FEATURES).map(|_| StandardNormal.sample(&mut rng)).collect();
    features[0] += config.risk.race_feature_shift[race as usize] + config.risk.gender_feature_shift[gender as usize];
    // the noise vectors are always drawn so the stream layout is fixed
    let race_p = mixed::<5>(race as usize, config.demographic_noise, &mut rng);
    let gender_p = mixed::<2>(gender as usize, config.demographic_noise, &mut rng);
    let demographics = if config.demographic_noise == 0.0 {
        DemographicWeights::one_hot(race, gender)
    } else {
        DemographicWeights {
            race: race_p,
            gender: gender_p,
        }
    };
    let z: f64 = StandardNormal.sample(&mut rng);
    let a = &config.amount;
    let raw = (a.median * (a.sigma * z).exp()).clamp(a.min, a.max);
    let amount = ((raw / a.step).round() * a.step).clamp(a.min, a.max);
    Draws {
        race,
        gender,
        features,
        demographics,
        amount,
        month: rng.random_range(0..12),
        u_approve: rng.random(),
        u_shop: rng.random(),
        u_default: rng.random(),
        u_prepay: rng.random(),
    }
}

/// Risk the lender sees from the features.
pub fn perceived_risk(config: &MarketConfig, features: &[f64]) -> f64 {
    let idx = config.risk.intercept
        + config
            .risk
            .coefficients
            .iter()
            .zip(features)
            .map(|(b, x)| b * x)
            .sum::<f64>();
    logistic(idx)
}

fn true_from_perceived(config: &MarketConfig, perceived: f64, race: Race, gender: Gender) -> f64 {
    (perceived - config.miscalibration.shift(race, gender)).clamp(0.0, 0.999)
}

/// The exact cumulative default probability used to generate applicant `id`.
pub fn true_risk(config: &MarketConfig, id: &str) -> Result<f64> {
    let i = parse_id(id)
        .filter(|i| *i < config.n_applicants)
        .ok_or_else(|| AuditError::record(id, "not an applicant id of this market"))?;
    let d = draw(config, i);
    Ok(true_from_perceived(config, perceived_risk(config, &d.features), d.race, d.gender))
}

/// Month of first occurrence of a geometric event with hazard `h`, or `None`
/// if it does not happen within `term` months.
fn event_month(u: f64, h: f64, term: u32) -> Option<u32> {
    if h <= 0.0 {
        return None;
    }
    if h >= 1.0 {
        return Some(1);
    }
    let t = ((1.0 - u).ln() / (1.0 - h).ln()).floor() as u64 + 1;
    (t <= term as u64).then_some(t as u32)
}

struct Generated {
    truth: ApplicantTruth,
    demographics: DemographicWeights,
    loan: Option<LoanRecord>,
}

fn generate_one(config: &MarketConfig, i: usize) -> Result<Generated> {
    let d = draw(config, i);
    let id = applicant_id(i);
    let term = config.term_months;
    let perceived = perceived_risk(config, &d.features);
    let truth_p = true_from_perceived(config, perceived, d.race, d.gender);
    let fed = config.fed_rate_at(d.month);
    let approved = d.u_approve < config.approval.probability(perceived);
    let priced = match price_loan(config, perceived, fed) {
        Ok(p) => Some(p),
        Err(e) if approved => return Err(e),
        Err(_) => None,
    };
    let walk = match config.shopping {
        Shopping::Off => 0.0,
        Shopping::FavorableSelection { strength } => {
            strength * (1.0 - truth_p / config.approval.threshold).max(0.0)
        }
    };
    let funded = approved && d.u_shop >= walk;
    let origination = config.start.plus_months(d.month as i64);
    let loan = if let (true, Some((apr, target))) = (funded, priced) {
        let h = monthly_hazard(truth_p, term);
        let default = event_month(d.u_default, h, term);
        let prepay = event_month(d.u_prepay, config.prepayment_hazard, term - 1);
        let a = payment(d.amount, apr, term);
        let balances = schedule_balances(d.amount, apr, term);
        let mut cf = vec![0.0; term as usize + 1];
        cf[0] = -d.amount;
        let mut default_month = None;
        for t in 1..=term {
            if default == Some(t) {
                default_month = Some(t);
                break;
            }
            cf[t as usize] = a;
            if prepay == Some(t) {
                cf[t as usize] += balances[t as usize];
                break;
            }
        }
        Some(LoanRecord {
            loan_id: id.clone(),
            origination_date: origination,
            term_months: term,
            principal: d.amount,
            apr,
            cashflow: CashflowVector::new(cf)?,
            features: d.features.clone(),
            target_return: Some(target),
            defaulted: default_month.is_some(),
            default_month,
        })
    } else {
        None
    };
    Ok(Generated {
        truth: ApplicantTruth {
            id,
            race: d.race,
            gender: d.gender,
            features: d.features,
            perceived_risk: perceived,
            true_risk: truth_p,
            target_return: priced.map(|p| p.1),
            apr: priced.map(|p| p.0),
            amount: d.amount,
            origination,
            fed_rate: fed,
            approved,
            funded,
        },
        demographics: d.demographics,
        loan,
    })
}

/// Generate a market. Deterministic in the config.
pub fn generate_market(config: &MarketConfig) -> Result<Market> {
    config.validate()?;
    let rows: Vec<Generated> = (0..config.n_applicants)
        .into_par_iter()
        .map(|i| generate_one(config, i))
        .collect::<Result<_>>()?;
    let mut loans = Vec::new();
    let mut applications = Vec::with_capacity(rows.len());
    let mut demographics = BTreeMap::new();
    let mut truth = Vec::with_capacity(rows.len());
    for g in rows {
        let t = &g.truth;
        applications.push(ApplicationRecord {
            application_id: t.id.clone(),
            applicant_id: t.id.clone(),
            application_date: Some(t.origination),
            features: t.features.clone(),
            requested_amount: t.amount,
            approved: t.approved,
            offered_apr: if t.approved { t.apr } else { None },
            funded: t.funded,
            fed_rate: t.fed_rate,
        });
        demographics.insert(t.id.clone(), g.demographics);
        loans.extend(g.loan);
        truth.push(g.truth);
    }
    Ok(Market {
        config: config.clone(),
        dataset: Dataset::new(loans, applications, demographics)?,
        truth,
    })
}

impl Market {
    pub fn truth_of(&self, id: &str) -> Option<&ApplicantTruth> {
        parse_id(id).and_then(|i| self.truth.get(i)).filter(|t| t.id == id)
    }

    /// Expected cashflow of a funded loan under its true hazard. Applicants
    /// without an APR get an all-zero receipt stream.
    pub fn expected_cashflow_of(&self, t: &ApplicantTruth) -> Vec<f64> {
        let term = self.config.term_months;
        expected_cashflow(
            t.amount,
            t.apr.unwrap_or(0.0),
            term,
            monthly_hazard(t.true_risk, term),
            self.config.prepayment_hazard,
        )
    }

    /// Annualized IRR of the group-weighted, calendar-aligned expected
    /// cashflow of the funded loans: the return the generator implies for
    /// each group's portfolio.
    pub fn expected_group_irr(&self, scheme: &dyn GroupScheme, axis: Axis) -> Result<BTreeMap<&'static str, f64>> {
        let groups = axis.groups();
        let funded: Vec<&ApplicantTruth> = self.truth.iter().filter(|t| t.funded).collect();
        if funded.is_empty() {
            return Err(AuditError::Degenerate("no funded loans".into()));
        }
        let first = funded.iter().map(|t| t.origination.index()).min().unwrap_or(0);
        let horizon = funded
            .iter()
            .map(|t| (t.origination.index() - first) as usize)
            .max()
            .unwrap_or(0)
            + self.config.term_months as usize
            + 1;
        let mut agg = vec![vec![0.0; horizon]; groups.len()];
        for t in funded {
            let demo = self.dataset.demographics_of(&t.id)?;
            let w = scheme.assign(demo, axis).weights;
            let off = (t.origination.index() - first) as usize;
            let cf = self.expected_cashflow_of(t);
            for (g, wg) in w.iter().enumerate() {
                if *wg == 0.0 {
                    continue;
                }
                for (k, a) in cf.iter().enumerate() {
                    agg[g][off + k] += wg * a;
                }
            }
        }
        let solver = IrrSolver::default();
        let mut out = BTreeMap::new();
        for (g, name) in groups.into_iter().enumerate() {
            if agg[g].iter().any(|a| *a != 0.0) {
                if let Some(r) = solver.solve(&agg[g]).usable_rate() {
                    out.insert(name, r);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::ProbabilityWeighted;

    fn small() -> MarketConfig {
        MarketConfig {
            n_applicants: 2_000,
            seed: 11,
            ..MarketConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_market(&small()).unwrap();
        let b = generate_market(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn true_risk_is_pure_and_matches_generation() {
        let cfg = small();
        let m = generate_market(&cfg).unwrap();
        for t in m.truth.iter().take(50) {
            assert_eq!(true_risk(&cfg, &t.id).unwrap(), t.true_risk);
            assert_eq!(true_risk(&cfg, &t.id).unwrap(), true_risk(&cfg, &t.id).unwrap());
        }
        assert!(true_risk(&cfg, "A9999999").is_err());
        assert!(true_risk(&cfg, "nope").is_err());
    }

    #[test]
    fn zero_hazard_never_defaults() {
        assert_eq!(monthly_hazard(0.0, 36), 0.0);
        assert_eq!(event_month(0.999, 0.0, 36), None);
    }

    #[test]
    fn constant_hazard_matches_monte_carlo() {
        let (h, term) = (0.01, 36u32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| event_month(rng.random(), h, term).is_some())
            .count();
        let oracle = 1.0 - (1.0 - h).powi(term as i32);
        let se = (oracle * (1.0 - oracle) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - oracle).abs() < 4.0 * se);
    }

    #[test]
    fn priced_loans_hit_their_target_in_expectation() {
        let cfg = MarketConfig::default();
        for p in [0.01, 0.08, 0.2] {
            let (apr, target) = price_loan(&cfg, p, 0.02).unwrap();
            let cf = expected_cashflow(1.0, apr, 36, monthly_hazard(p, 36), 0.0);
            let irr = IrrSolver::default().solve(&cf).annualized_rate;
            assert!((irr - target).abs() < 1e-9, "{p}: {irr} vs {target}");
        }
    }

    #[test]
    fn aprs_are_monotone_in_perceived_risk() {
        let cfg = MarketConfig::default();
        let mut last = 0.0;
        for k in 0..40 {
            let (apr, _) = price_loan(&cfg, 0.005 * k as f64 + 0.001, 0.02).unwrap();
            assert!(apr >= last);
            last = apr;
        }
    }

    #[test]
    fn unreachable_target_is_a_config_error() {
        let mut cfg = MarketConfig::default();
        cfg.target_return_curve.knots = vec![(0.0, 3.0), (1.0, 4.0)];
        assert!(matches!(price_loan(&cfg, 0.1, 0.0), Err(AuditError::Config(_))));
    }

    #[test]
    fn expected_group_irr_is_close_to_targets_without_miscalibration() {
        let m = generate_market(&small()).unwrap();
        let irr = m.expected_group_irr(&ProbabilityWeighted, Axis::Gender).unwrap();
        let mean_target: f64 = {
            let f: Vec<_> = m.truth.iter().filter(|t| t.funded).collect();
            f.iter().filter_map(|t| t.target_return).sum::<f64>() / f.len() as f64
        };
        for v in irr.values() {
            assert!((v - mean_target).abs() < 0.03, "{v} vs {mean_target}");
        }
    }

    #[test]
    fn shopping_drops_safe_borrowers() {
        let mut cfg = small();
        cfg.shopping = Shopping::FavorableSelection { strength: 0.8 };
        let m = generate_market(&cfg).unwrap();
        let walked: Vec<_> = m.truth.iter().filter(|t| t.approved && !t.funded).collect();
        let kept: Vec<_> = m.truth.iter().filter(|t| t.funded).collect();
        let mean = |v: &[&ApplicantTruth]| v.iter().map(|t| t.true_risk).sum::<f64>() / v.len() as f64;
        assert!(!walked.is_empty());
        assert!(mean(&walked) < mean(&kept));
    }
}
