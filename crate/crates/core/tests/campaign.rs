use std::process::Command;

use twintune::campaign::{run_campaign, validate_params, write_campaign, CampaignConfig};
use twintune::path::bundled_paths;

/// Few short iterations; enough to exercise every job kind.
fn small_config(workers: usize) -> CampaignConfig {
    let mut cfg = CampaignConfig::default();
    cfg.iterations = 2;
    cfg.rollout.window = 6.0;
    cfg.workers = Some(workers);
    cfg
}

#[test]
fn small_campaign_is_deterministic_across_workers() {
    let a = run_campaign(&small_config(1)).unwrap();
    let b = run_campaign(&small_config(3)).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary.iterations.len(), 3);
    assert_eq!(a.summary.spread.len(), 2);

    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_campaign(da.path(), &a.summary, &a.traces).unwrap();
    write_campaign(db.path(), &b.summary, &b.traces).unwrap();
    for f in ["iterations.csv", "spread.csv", "validation.csv", "summary.json"] {
        let x = std::fs::read(da.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(db.path().join(f)).unwrap(), "{f}");
        assert!(!x.is_empty());
    }
}

#[test]
fn validation_is_repeatable_and_tracks_a_straight_line() {
    let cfg = CampaignConfig::default();
    let straight: Vec<_> = bundled_paths().into_iter().filter(|p| p.name == "straight").collect();
    let theta = vec![1.0; 9];
    let first = validate_params(&theta, &cfg, &straight, 1).unwrap();
    assert_eq!(first, validate_params(&theta, &cfg, &straight, 2).unwrap());
    let (_, h, done) = &first[0];
    assert!(*done);
    assert!(h.path < 0.05, "straight-line H_path {}", h.path);
}

#[test]
fn validate_rejects_wrong_length_theta() {
    let cfg = CampaignConfig::default();
    assert!(validate_params(&[1.0; 4], &cfg, &bundled_paths()[..1], 1).is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twintune"))
}

#[test]
fn cli_prints_a_loadable_default_config() {
    let out = cli().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(CampaignConfig::from_json(&text).unwrap(), CampaignConfig::default());
}

#[test]
fn cli_reports_bad_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(&file, r#"{"iterations": 0}"#).unwrap();
    let out = cli().args(["tune", "--config"]).arg(&file).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("iterations"), "{err}");
}

#[test]
fn cli_rejects_unknown_modes() {
    let out = cli().args(["tune", "--mode", "newton"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("newton"));
}
