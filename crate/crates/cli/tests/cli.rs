use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn pcnsim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcnsim"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("pcnsim runs")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run(name: &str, extra: &[&str]) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(name);
    let mut args = vec!["--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    (pcnsim(&args, dir.path()), dir)
}

#[test]
fn happy_path_passes_and_matches_formula() {
    let (out, dir) = run("happy-path-sync3.json", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let verdicts = json(dir.path().join("verdicts.json"));
    let v = verdicts.as_array().unwrap();
    assert_eq!(v.len(), 4);
    assert!(v.iter().all(|x| x["pass"] == true && x["applicable"] == true));
    let m = json(dir.path().join("metrics.json"));
    let (n, k) = (4, 3);
    assert_eq!(m["complexity"]["measured_messages"], 8 * n * k + 3 * k + 2);
    assert_eq!(m["complexity"]["measured_latency"], (8 * k + 2) as f64);
    assert_eq!(m["payment_latency"][0], 8 * k + 2);
    let trace = std::fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn happy_path_matches_golden_files() {
    let (_, dir) = run("happy-path-sync3.json", &[]);
    for f in ["verdicts", "metrics"] {
        let got = std::fs::read_to_string(dir.path().join(format!("{f}.json"))).unwrap();
        let want = std::fs::read_to_string(scenario(&format!("golden/happy-path-sync3.{f}.json"))).unwrap();
        assert_eq!(got.trim_end(), want.trim_end(), "{f}");
    }
}

#[test]
fn wormhole_attack_is_thwarted() {
    let (out, dir) = run("wormhole-attack.json", &["--check", "def4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(dir.path().join("verdicts.json"));
    assert_eq!(v[3]["property"], "def4");
    assert_eq!(v[3]["pass"], true);
    let w = &json(dir.path().join("metrics.json"))["wormhole"];
    assert_eq!(w["attackers"], serde_json::json!([1, 3]));
    assert_eq!(w["excess"], 0);
    assert_eq!(w["pass"], true);
}

#[test]
fn every_bundled_scenario_passes() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let name = path.file_name().unwrap().to_str().unwrap().to_owned();
            let (out, dir) = run(&name, &[]);
            assert_eq!(out.status.code(), Some(0), "{name}");
            assert_eq!(
                json(dir.path().join("verdicts.json")).as_array().unwrap().len(),
                4,
                "{name}"
            );
        }
    }
}

#[test]
fn seed_override_is_deterministic() {
    let (_, a) = run("sync-faulty-payee.json", &["--seed", "7"]);
    let (_, b) = run("sync-faulty-payee.json", &["--seed", "7"]);
    for f in ["trace.ndjson", "metrics.json", "verdicts.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("bad.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"channels":[{"a":0,"b":1,"deposit_a":"ten","deposit_b":5,"fee":1,"timelock":6,"committee_size":4}]}"#,
            "channels[0].deposit_a",
        ),
        (r#"{"channels":[],"delta":1,"colour":3}"#, "colour"),
        (
            r#"{"channels":[{"a":0,"b":1,"deposit_a":5,"deposit_b":5,"fee":1,"timelock":2,"committee_size":4}]}"#,
            "channels[0].timelock",
        ),
    ];
    for (body, field) in cases {
        let cfg = write_config(dir.path(), body);
        let out = pcnsim(&["--config", cfg.to_str().unwrap()], dir.path());
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{err}");
        assert!(err.contains(field), "{field} missing from {err}");
    }
    assert!(!dir.path().join("verdicts.json").exists());
}

#[test]
fn exhausted_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(scenario("happy-path-sync3.json"));
    cfg["event_budget"] = 50.into();
    let p = write_config(dir.path(), &cfg.to_string());
    let out = pcnsim(&["--config", p.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(dir.path().join("verdicts.json")).as_array().unwrap().len(), 4);
}

#[test]
fn sweeps_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"{"complexity":{"protocols":["syncpcn"],"n":[4,7],"k":[1,2,3]}}"#,
    )
    .unwrap();
    let out = pcnsim(&["--sweep", grid.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",true")));

    std::fs::write(&grid, r#"{"sampling":{"faulty":[300],"sizes":[300]}}"#).unwrap();
    pcnsim(&["--sweep", grid.to_str().unwrap()], dir.path());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let p: f64 = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.998..=1.0).contains(&p));

    std::fs::write(&grid, r#"{"sampling":{"faulty":[]}}"#).unwrap();
    let out = pcnsim(&["--sweep", grid.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty grid"));
}
