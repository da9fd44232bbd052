use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn oqw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqw")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let good = fixture("four_level.json");
    assert_eq!(oqw(&["validate", "--model", s(&good)]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let lossy = dir.path().join("lossy.json");
    std::fs::write(&lossy, r#"{"lattice_dim":1,"shifts":[[1]],"kraus":[[[[0.5,0]]]]}"#).unwrap();
    assert_eq!(oqw(&["validate", "--model", s(&lossy)]).status.code(), Some(2));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(oqw(&["validate", "--model", s(&garbage)]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(oqw(&["validate", "--model", s(&missing)]).status.code(), Some(1));
}

#[test]
fn analyze_reports_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = oqw(&["analyze", "--model", s(&fixture("four_level.json")), "--out", s(dir.path())]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("decomposition.json")).unwrap()).unwrap();
    assert_eq!(doc["recurrent"]["dim"], 3);
    assert_eq!(doc["transient"]["dim"], 1);
    let mut dims: Vec<(u64, u64)> = doc["blocks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| (b["dim"].as_u64().unwrap(), b["multiplicity"].as_u64().unwrap()))
        .collect();
    dims.sort();
    assert_eq!(dims, vec![(1, 1), (2, 2)]);
}

#[test]
fn clt_mixture_for_example2() {
    let dir = tempfile::tempdir().unwrap();
    let out = oqw(&[
        "clt",
        "--model",
        s(&fixture("example2.json")),
        "--state",
        s(&fixture("state_balanced_h4.json")),
        "--out",
        s(dir.path()),
        "--steps",
        "100,400",
    ]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("mixture.json")).unwrap()).unwrap();
    let models = doc.as_array().unwrap();
    assert_eq!(models.len(), 2);
    for m in models {
        let mut comps: Vec<(f64, f64, f64)> = m["components"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| {
                (
                    c["weight"].as_f64().unwrap(),
                    c["mean_rate"][0].as_f64().unwrap(),
                    c["covariance"][0][0].as_f64().unwrap(),
                )
            })
            .collect();
        comps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expect = [(2.0 / 3.0, 0.0, 1.0), (1.0 / 3.0, -1.0 / 3.0, 8.0 / 9.0)];
        for (got, want) in comps.iter().zip(expect) {
            assert!((got.0 - want.0).abs() < 1e-9);
            assert!((got.1 - want.1).abs() < 1e-9);
            assert!((got.2 - want.2).abs() < 1e-9);
        }
    }
    assert!(dir.path().join("cdf_n100.csv").exists());
    assert!(dir.path().join("cdf_n400.csv").exists());
}

fn simulate(dir: &Path, seed: &str) {
    let out = oqw(&[
        "simulate",
        "--model",
        s(&fixture("example1.json")),
        "--state",
        s(&fixture("state_e1_h2.json")),
        "--out",
        s(dir),
        "--steps",
        "5,20",
        "--traj",
        "300",
        "--seed",
        seed,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), "42");
    simulate(b.path(), "42");
    for name in ["ensemble_n5.csv", "ensemble_n20.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y);
    }
    let text = std::fs::read_to_string(a.path().join("ensemble_n20.csv")).unwrap();
    assert!(text.starts_with("traj,n,x0_1,dx_1"));
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn compare_rejects_mismatched_horizons() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "7");
    let out = oqw(&[
        "clt",
        "--model",
        s(&fixture("example1.json")),
        "--state",
        s(&fixture("state_e1_h2.json")),
        "--out",
        s(dir.path()),
        "--steps",
        "20",
    ]);
    assert!(out.status.success());
    let prediction = dir.path().join("mixture.json");
    let ok = oqw(&[
        "compare",
        "--ensemble",
        s(&dir.path().join("ensemble_n20.csv")),
        "--prediction",
        s(&prediction),
        "--out",
        s(dir.path()),
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("distances.csv").exists());
    let bad = oqw(&[
        "compare",
        "--ensemble",
        s(&dir.path().join("ensemble_n5.csv")),
        "--prediction",
        s(&prediction),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn ldp_labels() {
    let dir = tempfile::tempdir().unwrap();
    let label = |model: &str, state: &str| {
        let out = oqw(&[
            "ldp",
            "--model",
            s(&fixture(model)),
            "--state",
            s(&fixture(state)),
            "--out",
            s(dir.path()),
            "--grid=-1:1:0.25",
        ]);
        assert!(out.status.success());
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ldp.json")).unwrap()).unwrap();
        doc["label"].as_str().unwrap().to_string()
    };
    assert_eq!(label("example1.json", "state_e1_h2.json"), "bounds-only");
    assert_eq!(label("commuting_distinct.json", "state_mixed_h3.json"), "exact-LDP");
    let rates = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert!(rates.starts_with("x_1,Lambda,u*_1,block_id"));
    assert_eq!(rates.lines().count(), 10);
}
