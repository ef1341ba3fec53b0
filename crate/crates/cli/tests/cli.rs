use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn maqt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maqt")).args(args).current_dir(dir).output().expect("spawn maqt")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const SMALL_SIM: &str = r#"{
  "users": 6,
  "holding_time": 400.0,
  "initial_active": 3,
  "horizon": 3000,
  "depth": 3,
  "protocol": {"kind": "maqt"},
  "event_seed": 5,
  "agent_seed": 9
}"#;

#[test]
fn simulate_default_scenario_writes_500_batches_and_replays_identically() {
    let tmp = TempDir::new().unwrap();
    let o = maqt(&["simulate", "--out", "a", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let batches = read(tmp.path().join("a/batches.csv"));
    assert_eq!(batches.lines().count(), 501);
    assert!(batches.starts_with("t_start,"));

    let o = maqt(&["simulate", "--config", "a/manifest.json", "--out", "b", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["batches.csv", "events.csv", "manifest.json"] {
        assert_eq!(read(tmp.path().join("a").join(f)), read(tmp.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn manifest_records_hash_and_seeds() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_SIM).unwrap();
    let o = maqt(&["simulate", "--config", "c.json", "--out", "o", "--agent-seed", "11", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&read(tmp.path().join("o/manifest.json"))).unwrap();
    assert_eq!(m["manifest_version"], 1);
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["event_seed"], 5);
    assert_eq!(m["agent_seed"], 11);
    assert_eq!(m["config"]["agent_seed"], 11);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"], serde_json::json!(["batches.csv", "events.csv"]));
}

#[test]
fn agent_seed_leaves_event_log_unchanged() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_SIM).unwrap();
    for (seed, out) in [("1", "x"), ("2", "y")] {
        let o = maqt(&["simulate", "--config", "c.json", "--out", out, "--agent-seed", seed, "-q"], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let events = read(tmp.path().join("x/events.csv"));
    assert!(events.lines().count() > 1);
    assert_eq!(events, read(tmp.path().join("y/events.csv")));
}

#[test]
fn zero_horizon_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_SIM.replace("3000", "0")).unwrap();
    let o = maqt(&["simulate", "--config", "c.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_key_is_reported_with_its_position() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_SIM.replace("\"depth\": 3,", "\"depth\": 3,\n  \"dept\": 3,")).unwrap();
    let o = maqt(&["simulate", "--config", "c.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("c.json:7:"), "{err}");
    assert!(err.contains("dept"), "{err}");
}

#[test]
fn missing_adra_entry_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = SMALL_SIM.replace(
        r#"{"kind": "maqt"}"#,
        r#"{"kind": "adra", "table": [{"n": 1, "access_prob": 1.0, "aoi_threshold": 1.0}]}"#,
    );
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = maqt(&["simulate", "--config", "c.json", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn misapplied_flags_and_foreign_manifests_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = maqt(&["bounds", "--protocol", "maqt"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = maqt(&["simulate", "--runs", "3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = maqt(&["simulate", "--protocol", "csma"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    assert!(maqt(&["bounds", "--out", "b", "--n-max", "3", "--j-max", "2", "-q"], tmp.path()).status.success());
    let o = maqt(&["simulate", "--config", "b/manifest.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("written by `bounds`"), "{}", stderr(&o));
}

#[test]
fn bounds_rows_match_enumeration() {
    let tmp = TempDir::new().unwrap();
    let o = maqt(&["bounds", "--out", "o", "--n-min", "2", "--n-max", "9", "--j-min", "3", "--j-max", "5"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path().join("o/bounds.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,depth,best,worst,skew");
    for expected in
        ["2,3,1.5,1.5,1.5", "5,4,3.3,5.1,5.1", "8,5,4.5,10.875,", "9,4,5.388888888888889,7.722222222222222,"]
    {
        assert!(lines.contains(&expected), "missing {expected}");
    }
    // (9, 3) cannot hold nine leaves.
    assert!(!lines.iter().any(|l| l.starts_with("9,3,")));
}

const SMALL_COMPARE: &str = r#"{
  "base": {
    "users": 8, "holding_time": 500.0, "initial_active": 4, "horizon": 2000, "depth": 3,
    "protocol": {"kind": "round-robin"}, "event_seed": 3, "agent_seed": 4
  },
  "protocols": [{"kind": "round-robin"}, {"kind": "slotted-aloha"}, {"kind": "maqt"}],
  "runs": 4
}"#;

#[test]
fn compare_is_reproducible_and_writes_bands() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_COMPARE).unwrap();
    for out in ["a", "b"] {
        let o = maqt(&["compare", "--config", "c.json", "--out", out, "-q"], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let table = read(tmp.path().join("a/comparison.csv"));
    assert_eq!(table, read(tmp.path().join("b/comparison.csv")));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "protocol,mean_aoi,utilization,low_utilization_fraction,runs");
    assert_eq!(lines.len(), 4);
    let bands = read(tmp.path().join("a/aoi_bands_slotted-aloha.csv"));
    assert!(bands.starts_with("batch_start,n,mean,p10,p90,min,max"));
    assert_eq!(bands.lines().count(), 21);
    assert!(tmp.path().join("a/utilization_bands_maqt.csv").exists());
}

#[test]
fn compare_with_one_protocol() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("c.json"), SMALL_COMPARE).unwrap();
    let o =
        maqt(&["compare", "--config", "c.json", "--protocol", "round-robin", "--runs", "2", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(tmp.path().join("o/comparison.csv"));
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().starts_with("round-robin,"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("round-robin"));
}

#[test]
fn resettle_flags_timeouts() {
    let tmp = TempDir::new().unwrap();
    // No trial can see 8 consecutive successes within a 7-slot cap.
    let cfg = r#"{
  "base": {"users": 9, "initial_active": 1, "horizon": 1, "depth": 3, "protocol": {"kind": "maqt"}},
  "users": [3, 8],
  "events": ["arrive", "depart"],
  "runs": 3,
  "cap": 7
}"#;
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = maqt(&["resettle", "--config", "c.json", "--out", "o", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path().join("o/resettle.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,event,runs,timeouts,min,q1,median,mean,q3,max");
    assert_eq!(lines[1..], ["3,arrive,3,3,,,,,,", "3,depart,3,3,,,,,,", "8,arrive,3,3,,,,,,", "8,depart,3,3,,,,,,"]);
    let trials = read(tmp.path().join("o/resettle_trials.csv"));
    assert_eq!(trials.lines().count(), 13);
    assert!(trials.lines().skip(1).all(|l| l.ends_with(",,,1")));
}

#[test]
fn resettle_measures_small_network() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"{
  "base": {"users": 5, "initial_active": 1, "horizon": 1, "depth": 3, "protocol": {"kind": "maqt"}},
  "users": [4],
  "events": ["depart"],
  "runs": 4
}"#;
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = maqt(&["resettle", "--config", "c.json", "--out", "o", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path().join("o/resettle.csv"));
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..3], ["4", "depart", "4"]);
    let min: f64 = row[4].parse().unwrap();
    assert!(min >= 8.0, "a full window of successes takes at least 8 slots");
}

#[test]
fn sweep_reports_every_grid_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"{
  "experiment": {
    "base": {"users": 4, "initial_active": 4, "horizon": 1500, "depth": 3, "protocol": {"kind": "maqt"}},
    "protocols": [{"kind": "maqt"}],
    "runs": 2,
    "grid": [{"name": "alpha_plus", "values": [0.1, 0.2]}, {"name": "gamma0", "values": [0.1, 0.3]}]
  },
  "objective": "utilization"
}"#;
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = maqt(&["sweep", "--config", "c.json", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path().join("o/grid.csv"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("alpha_plus,gamma0,"));
}

#[test]
fn adra_oracle_small_range() {
    let tmp = TempDir::new().unwrap();
    let cfg = r#"{"users_min": 1, "users_max": 3, "access_probs": [0.25, 0.5, 1.0],
  "threshold_factors": [0.0, 1.0, 2.0], "slots": 2000, "seed": 1}"#;
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = maqt(&["adra-oracle", "--config", "c.json", "--out", "o", "-q"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(tmp.path().join("o/adra_table.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "n,access_prob,aoi_threshold");
    assert_eq!(lines[1], "1,1.0,1.0");
    assert_eq!(lines.len(), 4);
}
