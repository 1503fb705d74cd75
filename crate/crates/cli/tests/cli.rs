use std::fs;
use std::process::{Command, Output};

fn ase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ase"))
        .args(args)
        .env_remove("ASE_CONFIG")
        .env_remove("ASE_SEED")
        .env_remove("ASE_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"env": "grid_world", "agent": {"kind": "safe_rmax"}, "horizon": 300, "trials": 2}"#).unwrap();
    let out = dir.path().join("out");
    let res = ase(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("mean unsafe 0"), "{stdout}");
    for f in ["summary.csv", "curve.csv", "trajectories.csv", "layout.json", "config.json", "trial_0/steps.csv", "trial_1/steps.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let written: serde_like::Config = serde_like::parse(&fs::read_to_string(out.join("config.json")).unwrap());
    assert_eq!(written.seed, 4);
}

#[test]
fn horizon_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"env": "platformer", "agent": {"kind": "eps_greedy"}, "trials": 1}"#).unwrap();
    let out = dir.path().join("out");
    let res = ase(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--horizon", "25"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 26);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"env": "grid_world", "agent": {"kind": "ase"}, "horizn": 10}"#).unwrap();
    let res = ase(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("horizn"));
}

#[test]
fn missing_config_is_an_error() {
    let res = ase(&["run", "--config", "/nonexistent/cfg.json"]);
    assert!(!res.status.success());
}

#[test]
fn oracle_lists_every_pair() {
    let res = ase(&["oracle", "--env", "grid_world"]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("state,action,in_z_safe,q"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 529 * 8);
    let safe = rows.iter().filter(|r| r.split(',').nth(2) == Some("1")).count();
    assert_eq!(safe, 492);
    assert!(rows.iter().any(|r| r.ends_with(",bottom")));
}

#[test]
fn oracle_rejects_unknown_env() {
    let res = ase(&["oracle", "--env", "moon"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("moon"));
}

#[test]
fn quick_verify_passes() {
    let res = ase(&["verify", "--quick", "--seed", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}

/// Just enough JSON reading to check one field without a serde dependency.
mod serde_like {
    pub struct Config {
        pub seed: u64,
    }

    pub fn parse(text: &str) -> Config {
        let at = text.find("\"seed\"").expect("seed field");
        let rest = &text[at + 6..];
        let digits: String = rest.chars().skip_while(|c| !c.is_ascii_digit()).take_while(char::is_ascii_digit).collect();
        Config { seed: digits.parse().expect("numeric seed") }
    }
}
