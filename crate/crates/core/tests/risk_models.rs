use std::collections::BTreeMap;

use lendaudit::data::{DemographicWeights, LoanRecord};
use lendaudit::risk::{assign_folds, fit_risk_model, Awareness, LearnerRegistry, RiskModelSpec};
use lendaudit::synth::{generate_market, Market, MarketConfig};

fn market() -> Market {
    let mut c = MarketConfig {
        n_applicants: 3000,
        seed: 21,
        ..MarketConfig::default()
    };
    c.risk.intercept = -2.5;
    generate_market(&c).unwrap()
}

fn spec(learner: &str, awareness: Awareness) -> RiskModelSpec {
    let mut s = RiskModelSpec {
        learner: learner.into(),
        awareness,
        seed: 5,
        ..RiskModelSpec::default()
    };
    if learner == "gbdt" {
        s.hyperparameters.insert("rounds".into(), 40.0);
    }
    s
}

/// Demographics rotated one id along, so every id gets someone else's.
fn scrambled(d: &BTreeMap<String, DemographicWeights>) -> BTreeMap<String, DemographicWeights> {
    let ids: Vec<&String> = d.keys().collect();
    let vals: Vec<DemographicWeights> = d.values().copied().collect();
    ids.iter()
        .enumerate()
        .map(|(i, id)| ((*id).clone(), vals[(i + 1) % vals.len()]))
        .collect()
}

#[test]
fn blind_scores_never_see_demographics() {
    let m = market();
    let ds = &m.dataset;
    let other = scrambled(&ds.demographics);
    for learner in ["gbdt", "logistic"] {
        let a = fit_risk_model(&ds.loans, &ds.demographics, &spec(learner, Awareness::Blind)).unwrap();
        let b = fit_risk_model(&ds.loans, &other, &spec(learner, Awareness::Blind)).unwrap();
        for (id, s) in &a.loan_scores.scores {
            assert_eq!(s.to_bits(), b.loan_scores.scores[id].to_bits(), "{learner} {id}");
        }
        // the aware model does react
        let c = fit_risk_model(&ds.loans, &ds.demographics, &spec(learner, Awareness::Aware)).unwrap();
        let d = fit_risk_model(&ds.loans, &other, &spec(learner, Awareness::Aware)).unwrap();
        assert_ne!(c.loan_scores.scores, d.loan_scores.scores, "{learner}");
    }
}

#[test]
fn own_fold_labels_do_not_reach_a_score() {
    let m = market();
    let ds = &m.dataset;
    for learner in ["gbdt", "logistic"] {
        let s = spec(learner, Awareness::Blind);
        let base = fit_risk_model(&ds.loans, &ds.demographics, &s).unwrap();
        let fold = assign_folds(ds.loans.len(), s.n_folds, s.seed);
        // flip a few labels inside fold 0 only
        let mut flipped: Vec<LoanRecord> = ds.loans.clone();
        let mut n = 0;
        for (i, l) in flipped.iter_mut().enumerate() {
            if fold[i] == 0 && n < 25 {
                l.defaulted = !l.defaulted;
                l.default_month = l.defaulted.then_some(1);
                n += 1;
            }
        }
        let other = fit_risk_model(&flipped, &ds.demographics, &s).unwrap();
        let mut moved = 0;
        for (i, l) in ds.loans.iter().enumerate() {
            let (x, y) = (base.loan_scores.scores[&l.loan_id], other.loan_scores.scores[&l.loan_id]);
            if fold[i] == 0 {
                assert_eq!(x.to_bits(), y.to_bits(), "{learner} {}", l.loan_id);
            } else if x != y {
                moved += 1;
            }
        }
        assert!(moved > 0, "{learner}: flipped labels changed no other fold");
        assert_eq!(base.loan_scores.folds[&ds.loans[0].loan_id], fold[0]);
    }
}

#[test]
fn folds_are_balanced_and_seeded() {
    let f = assign_folds(1003, 5, 9);
    let mut counts = [0; 5];
    f.iter().for_each(|k| counts[*k] += 1);
    assert!(counts.iter().all(|c| *c == 200 || *c == 201), "{counts:?}");
    assert_eq!(f, assign_folds(1003, 5, 9));
    assert_ne!(f, assign_folds(1003, 5, 10));
}

#[test]
fn learner_registry_lists_both_learners() {
    let reg = LearnerRegistry::default();
    assert!(reg.get("gbdt").is_ok());
    assert!(reg.get("logistic").is_ok());
    let err = reg.get("forest").unwrap_err().to_string();
    assert!(err.contains("forest"), "{err}");
}

#[test]
fn thin_folds_are_refused() {
    let m = market();
    let loans: Vec<LoanRecord> = m.dataset.loans.iter().filter(|l| !l.defaulted).take(50).cloned().collect();
    assert!(fit_risk_model(&loans, &m.dataset.demographics, &spec("logistic", Awareness::Blind)).is_err());
}
