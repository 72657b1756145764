use std::path::Path;
use tract_noise::fusion::MappingMode;
use tract_noise::pipeline::{self, RunConfig, Session};
use tract_noise::synth::{self, ScenarioConfig, REFERENCE_POPULATION_FILE};

fn scenario(dir: &Path, days: u32) {
    let s = synth::generate(&ScenarioConfig {
        days,
        ..Default::default()
    })
    .unwrap();
    synth::write_scenario(dir, &s).unwrap();
}

fn config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        input: data.to_path_buf(),
        output: out.to_path_buf(),
        seed: 7,
        ..RunConfig::default()
    }
}

#[test]
fn explicit_window_restricts_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    scenario(&data, 3);
    let mut cfg = config(&data, &tmp.path().join("out"));
    cfg.set_window(Some("2024-01-02T00:00:00"), Some("2024-01-03T00:00:00"))
        .unwrap();
    let mut s = Session::open(cfg).unwrap();
    // Data outside the window is reported but is not an error.
    let findings = s.validate().unwrap().findings.len();
    assert!(findings > 0);
    assert!(s
        .hourly_laeq()
        .unwrap()
        .iter()
        .all(|h| h.hour_start.format("%d").to_string() == "02"));
    let ex = pipeline::run_exposure(&mut s).unwrap();
    assert_eq!(ex.defacto[0].n_hours(), 24);
    assert_eq!(ex.gini[0].entries.len(), 24);
}

#[test]
fn nearest_mapping_covers_unmonitored_tracts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    scenario(&data, 1);
    let mut containing = Session::open(config(&data, &tmp.path().join("a"))).unwrap();
    let mut cfg = config(&data, &tmp.path().join("b"));
    cfg.mapping = MappingMode::NearestCentroid;
    let mut nearest = Session::open(cfg).unwrap();
    let a = pipeline::run_exposure(&mut containing).unwrap();
    let b = pipeline::run_exposure(&mut nearest).unwrap();
    assert_eq!(a.defacto[0].n_tracts(), 5);
    assert_eq!(b.defacto[0].n_tracts(), 7);
    for t in &a.defacto[0].tract_ids {
        assert!(b.defacto[0].tract_ids.contains(t));
    }
}

#[test]
fn report_without_second_provider() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    scenario(&data, 2);
    std::fs::remove_file(data.join(REFERENCE_POPULATION_FILE)).unwrap();
    let mut s = Session::open(config(&data, &tmp.path().join("out"))).unwrap();
    s.validate().unwrap();
    let bytes = pipeline::run_report(&mut s).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    assert!(report["validation"]["provider_agreement"].is_null());
    assert_eq!(report["validation"]["diurnal"].as_array().unwrap().len(), 7);
    assert_eq!(report["meta"]["window"]["start"], "2024-01-01T00:00:00");
    assert_eq!(report["meta"]["thresholds"], serde_json::json!([65.0, 70.0]));
    assert!(report["meta"]["inputs_sha256"]
        .get(REFERENCE_POPULATION_FILE)
        .is_none());
}
