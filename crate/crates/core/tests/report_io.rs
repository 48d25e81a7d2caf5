use lendaudit::data::IngestSummary;
use lendaudit::pipeline::{run_audit_on, RunConfig};
use lendaudit::report::{diff_reports, AuditReport, TABLES};
use lendaudit::synth::{generate_market, MarketConfig};

fn report() -> AuditReport {
    let m = generate_market(&MarketConfig {
        n_applicants: 1500,
        seed: 12,
        ..MarketConfig::default()
    })
    .unwrap();
    let cfg = RunConfig::parse(
        b"seed = 3\n[bootstrap]\nn_boot = 100\n[risk_model.hyperparameters]\nrounds = 20\n[calibration]\nn_bins = 5\nmin_per_bin = 10\n[default_by_apr]\nmin_effective = 50\n",
        ".",
    )
    .unwrap();
    run_audit_on(&cfg, &m.dataset, &IngestSummary::default()).unwrap()
}

#[test]
fn written_reports_read_back_exactly() {
    let r = report();
    assert_eq!(r.tables.len(), TABLES.len());
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let back = AuditReport::read(dir.path()).unwrap();
    assert!(diff_reports(&r, &back, 0.0).unwrap().is_empty());
    assert_eq!(r.to_json().unwrap(), back.to_json().unwrap());
    for (key, _) in TABLES {
        let csv = std::fs::read_to_string(dir.path().join(format!("{key}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), r.tables[key].rows.len() + 1, "{key}");
    }
}

#[test]
fn reruns_differ_only_in_timestamps() {
    let (a, b) = (report(), report());
    assert_eq!(a.to_json_without_timestamps().unwrap(), b.to_json_without_timestamps().unwrap());
}

#[test]
fn bootstrap_seed_moves_intervals_not_points() {
    let m = generate_market(&MarketConfig {
        n_applicants: 1500,
        seed: 12,
        ..MarketConfig::default()
    })
    .unwrap();
    let run = |seed: u64| {
        let body = format!("seed = {seed}\n[metrics]\ncalibration = false\ndefault_by_apr = false\ncounterfactuals = false\nnoshop = false\n[bootstrap]\nn_boot = 100\n");
        run_audit_on(&RunConfig::parse(body.as_bytes(), ".").unwrap(), &m.dataset, &IngestSummary::default()).unwrap()
    };
    let (a, b) = (run(1), run(2));
    let values = |r: &AuditReport, col: &str| {
        let t = r.table("f1_group_irr").unwrap();
        let c = t.column(col).unwrap();
        t.rows.iter().map(|row| row[c].as_f64()).collect::<Vec<_>>()
    };
    assert_eq!(values(&a, "point"), values(&b, "point"));
    assert_ne!(values(&a, "ci95_lo"), values(&b, "ci95_lo"));
}
