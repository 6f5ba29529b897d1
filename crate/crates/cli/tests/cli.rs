use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tempfair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempfair"))
        .args(args)
        .env_remove("TEMPFAIR_SEED")
        .env_remove("TEMPFAIR_CONFIG")
        .env_remove("TEMPFAIR_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &TempDir, text: &str) -> String {
    let path = dir.path().join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_body(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn learn_writes_trajectory_and_final_state() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = tempfair(&["learn", "--horizon", "5000", "--out", p(&out)]);
    ok(&o);
    let rows = csv_body(&out.join("trajectory.csv"));
    let header: Vec<&str> = rows[0].split(',').collect();
    // t, 4 thresholds, 4 shares, average utility
    assert_eq!(header.len(), 1 + 4 + 4 + 1);
    assert_eq!(header[0], "t");
    assert_eq!(*header.last().unwrap(), "avg_utility");
    assert!(rows.last().unwrap().starts_with("5000,"));

    let state: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["horizon"], 5000);
    assert!(state["version"].as_str().unwrap().starts_with("tempfair "));
    assert_eq!(state["config"]["setting"], "oma");
    let shares: f64 = state["shares"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((shares - 1.0).abs() < 1e-12, "one user per slot");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&tempfair(&["learn", "--seed", "7", "--horizon", "3000", "--trace", "--out", p(out)]));
    }
    for name in ["trajectory.csv", "final_state.json", "slots.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    ok(&tempfair(&["learn", "--seed", "8", "--horizon", "3000", "--out", p(&c)]));
    assert_ne!(fs::read(a.join("final_state.json")).unwrap(), fs::read(c.join("final_state.json")).unwrap());
}

#[test]
fn trace_rows_cover_every_slot() {
    let dir = TempDir::new().unwrap();
    ok(&tempfair(&["learn", "--horizon", "200", "--trace", "--out", p(dir.path())]));
    let rows = csv_body(&dir.path().join("slots.csv"));
    assert_eq!(rows[0], "t,selected_j,utility,share_1,share_2,share_3,share_4");
    assert_eq!(rows.len(), 201);
}

#[test]
fn infeasible_demands_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "[demands]\nw = [0.4, 0.4, 0.3, 0.2]\n");
    let o = tempfair(&["learn", "--config", &cfg, "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("infeasible"), "{err}");
    assert!(err.contains("1.3"), "report names the demand sum: {err}");
}

#[test]
fn unknown_keys_and_bad_values_exit_2() {
    let dir = TempDir::new().unwrap();
    for text in ["horizn = 10\n", "[cell]\nedge_snr = 3.0\n", "[schedule]\nkappa = 1.5\n", "[epoch]\nalpha_star = 0.0\n"] {
        let cfg = write_config(&dir, text);
        let sub = if text.contains("epoch") { "epoch" } else { "learn" };
        let o = tempfair(&[sub, "--config", &cfg, "--out", p(dir.path())]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn oracle_quantile_matches_analytic_gap_and_caches() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let args = ["oracle", "--setting", "synthetic", "--method", "quantile", "--out", p(&out)];
    let first = tempfair(&args);
    ok(&first);
    let bytes = fs::read(out.join("reference.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let gap = doc["reference"]["lambda_differences"][0].as_f64().unwrap();
    assert!((gap - (1.0 - 0.5f64.sqrt())).abs() < 0.005, "{gap}");
    assert_eq!(doc["reference"]["method"], "quantile_fixed_point");

    let second = tempfair(&args);
    ok(&second);
    assert!(String::from_utf8_lossy(&second.stdout).contains("[cached]"));
    assert_eq!(fs::read(out.join("reference.json")).unwrap(), bytes);
}

#[test]
fn oracle_methods_agree_on_analytic_setting() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "setting = \"synthetic\"\n[oracle]\nt_ref = 1000000\n");
    let o = tempfair(&["oracle", "--agreement", "--config", &cfg, "--out", p(dir.path())]);
    ok(&o);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("agreement.json")).unwrap()).unwrap();
    assert_eq!(doc["pass"], true);
    assert!(doc["max_abs_difference"].as_f64().unwrap() <= 0.01);
}

#[test]
fn quantile_non_convergence_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "setting = \"synthetic\"\n[oracle]\nbatch = 10000\nmax_iters = 1\ntol = 1e-12\n");
    let o = tempfair(&["oracle", "--method", "quantile", "--config", &cfg, "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn quantile_rejects_lower_bound_demands() {
    let dir = TempDir::new().unwrap();
    let o = tempfair(&["oracle", "--setting", "noma", "--method", "quantile", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn roc_refuses_foreign_reference() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "setting = \"synthetic\"\n[oracle]\nmethod = \"quantile\"\nbatch = 100000\n");
    let syn = dir.path().join("syn");
    ok(&tempfair(&["oracle", "--config", &cfg, "--out", p(&syn)]));
    let o = tempfair(&[
        "roc",
        "--setting",
        "oma",
        "--reps",
        "2",
        "--horizon",
        "1000",
        "--reference",
        p(&syn.join("reference.json")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reference mismatch"));
}

#[test]
fn roc_is_thread_count_independent() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "setting = \"synthetic\"\nreps = 6\n[roc]\nhorizon = 5000\n[oracle]\nmethod = \"quantile\"\nbatch = 100000\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&tempfair(&["roc", "--config", &cfg, "--threads", "1", "--out", p(&a)]));
    ok(&tempfair(&["roc", "--config", &cfg, "--threads", "3", "--out", p(&b)]));
    for name in ["roc.csv", "roc_summary.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rows = csv_body(&a.join("roc.csv"));
    assert_eq!(rows[0], "t,x_t,y_t,stderr_x,stderr_y");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("roc_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["reps"], 6);
    assert!(summary["reference_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn embedded_config_replays_bitwise() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    ok(&tempfair(&["learn", "--setting", "noma", "--seed", "3", "--horizon", "2000", "--out", p(&first)]));
    for source in ["final_state.json", "trajectory.csv"] {
        let replay = dir.path().join(format!("replay-{source}"));
        ok(&tempfair(&["learn", "--config", p(&first.join(source)), "--out", p(&replay)]));
        for name in ["trajectory.csv", "final_state.json"] {
            assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(replay.join(name)).unwrap(), "{source} -> {name}");
        }
    }
}

#[test]
fn env_overrides_flags_defaults() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&tempfair(&["learn", "--seed", "11", "--horizon", "1000", "--out", p(&a)]));
    let o = Command::new(env!("CARGO_BIN_EXE_tempfair"))
        .args(["learn", "--horizon", "1000"])
        .env("TEMPFAIR_SEED", "11")
        .env("TEMPFAIR_OUT", p(&b))
        .output()
        .unwrap();
    ok(&o);
    assert_eq!(fs::read(a.join("final_state.json")).unwrap(), fs::read(b.join("final_state.json")).unwrap());
}

#[test]
fn epoch_writes_trace_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "setting = \"synthetic\"\n[oracle]\nmethod = \"quantile\"\nbatch = 100000\n");
    let o = tempfair(&["epoch", "--config", &cfg, "--base", "3", "--alpha-star", "0.5", "--epochs", "5", "--out", p(dir.path())]);
    ok(&o);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("epoch_summary.json")).unwrap()).unwrap();
    let epochs = summary["plan"]["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 5);
    assert_eq!(epochs[2]["greedy_len"], 27);
    assert_eq!(epochs[2]["tbs_len"], 41);
    assert_eq!(summary["estimate_differences"].as_array().unwrap().len(), 5);
    let rows = csv_body(&dir.path().join("epoch_trace.csv"));
    assert_eq!(rows[0], "t,phase,epoch,running_avg_utility,share_1,share_2");
    // first recorded point is the end of epoch 1's greedy phase (t = 3) or an earlier grid point
    assert!(rows.iter().any(|r| r.starts_with("3,greedy,1,")));
}

#[test]
fn epoch_plan_overflow_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = tempfair(&["epoch", "--setting", "synthetic", "--base", "10", "--epochs", "40", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs fit"));
}
