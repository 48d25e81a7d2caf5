use lendaudit::bootstrap::BootstrapConfig;
use lendaudit::data::{load_dataset, write_dataset, DatasetPaths, DemographicWeights};
use lendaudit::demography::{group_weights, ArgmaxLabeled, Axis, GroupScheme, ProbabilityWeighted, SchemeRegistry};
use lendaudit::metrics::{default_rate_by_group, portfolio_irr_by_group, principal_lost_by_group, GroupInputs};
use lendaudit::synth::{generate_market, MarketConfig};
use proptest::prelude::*;

fn small_market(seed: u64) -> lendaudit::synth::Market {
    generate_market(&MarketConfig {
        n_applicants: 1500,
        seed,
        ..MarketConfig::default()
    })
    .unwrap()
}

#[test]
fn written_dataset_reads_back_bit_for_bit() {
    let m = small_market(3);
    let dir = tempfile::tempdir().unwrap();
    let paths = DatasetPaths::in_dir(dir.path());
    write_dataset(&m.dataset, &paths).unwrap();
    let (back, summary) = load_dataset(&paths, None).unwrap();
    assert_eq!(summary.loans, m.dataset.loans.len());
    assert_eq!(summary.applications, m.dataset.applications.len());
    assert_eq!(back, m.dataset);
}

#[test]
fn missing_demographics_are_reported_by_id() {
    let mut m = small_market(4);
    let id = m.dataset.loans[0].loan_id.clone();
    m.dataset.demographics.remove(&id);
    let dir = tempfile::tempdir().unwrap();
    let paths = DatasetPaths::in_dir(dir.path());
    write_dataset(&m.dataset, &paths).unwrap();
    let err = load_dataset(&paths, None).unwrap_err().to_string();
    assert!(err.contains(&id), "{err}");
}

#[test]
fn registry_resolves_both_schemes() {
    let reg = SchemeRegistry::default();
    assert_eq!(reg.get("weighted").unwrap().name(), "weighted");
    assert_eq!(reg.get("argmax").unwrap().name(), "argmax");
    assert!(reg.get("nearest").is_err());
}

fn simplex<const N: usize>() -> impl Strategy<Value = [f64; N]> {
    prop::array::uniform::<_, N>(0.0..1.0f64).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>().max(1e-9);
        v.map(|x| x / s)
    })
}

proptest! {
    #[test]
    fn weights_sum_to_one_on_each_axis(r in simplex::<5>(), g in simplex::<2>()) {
        let Ok((d, _)) = DemographicWeights::new_normalized(r, g) else { return Ok(()) };
        for axis in Axis::ALL {
            let w = group_weights(&d, &ProbabilityWeighted, axis);
            prop_assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
            let a = ArgmaxLabeled.assign(&d, axis);
            prop_assert_eq!(a.weights.iter().filter(|x| **x == 1.0).count(), 1);
            prop_assert_eq!(a.weights.iter().sum::<f64>(), 1.0);
            // argmax lands on a most probable category
            let p = axis.probabilities(&d);
            let k = a.weights.iter().position(|x| *x == 1.0).unwrap();
            prop_assert!(p.iter().all(|q| *q <= p[k]));
        }
    }
}

#[test]
fn group_estimates_ignore_record_order() {
    let m = small_market(5);
    let ds = &m.dataset;
    let mut rev = ds.loans.clone();
    rev.reverse();
    let boot = BootstrapConfig::new(200, 1);
    for scheme in [&ProbabilityWeighted as &dyn GroupScheme, &ArgmaxLabeled] {
        for f in [portfolio_irr_by_group, principal_lost_by_group, default_rate_by_group] {
            let a = f(&GroupInputs::new(&ds.loans, &ds.demographics, scheme, Axis::Race, boot)).unwrap();
            let b = f(&GroupInputs::new(&rev, &ds.demographics, scheme, Axis::Race, boot)).unwrap();
            for (x, y) in a.rows.iter().zip(&b.rows) {
                assert_eq!(x.group, y.group);
                assert!((x.point - y.point).abs() <= 1e-12, "{}: {} vs {}", x.group, x.point, y.point);
            }
        }
    }
}

#[test]
fn one_hot_demographics_make_the_schemes_agree() {
    let m = small_market(6);
    let ds = &m.dataset;
    let hard: std::collections::BTreeMap<_, _> = ds
        .demographics
        .iter()
        .map(|(id, d)| {
            let race = ArgmaxLabeled.assign(d, Axis::Race).weights;
            let gender = ArgmaxLabeled.assign(d, Axis::Gender).weights;
            let d = DemographicWeights::new_normalized(race.try_into().unwrap(), gender.try_into().unwrap()).unwrap().0;
            (id.clone(), d)
        })
        .collect();
    let boot = BootstrapConfig::new(200, 2);
    for axis in Axis::ALL {
        let w = portfolio_irr_by_group(&GroupInputs::new(&ds.loans, &hard, &ProbabilityWeighted, axis, boot)).unwrap();
        let a = portfolio_irr_by_group(&GroupInputs::new(&ds.loans, &hard, &ArgmaxLabeled, axis, boot)).unwrap();
        assert_eq!(w.rows, a.rows);
    }
}
