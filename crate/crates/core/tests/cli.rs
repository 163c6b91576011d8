use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use symforge::cli::{
    format_real, parse_real, read_losses, run_discover, CHECKPOINT_FILE, EXIT_ERROR, EXIT_PASS, LOSSES_FILE,
    REPORT_FILE, TRANSFORM_FILE,
};
use symforge::config::parse_config_str;
use symforge::network::read_checkpoint;

const SMALL_B: &str = r#"{
  "system": "B",
  "stages": [
    {"tags": ["ham"], "epochs": 4, "lr": 1e-3, "batch": 64},
    {"tags": ["ham", "eqv:so2"], "epochs": 3, "lr": [1e-3, 5e-4], "batch": 64}
  ],
  "widths": [8, 8],
  "seed": 2,
  "checkpoint_every": 2,
  "flush_every": 1,
  "threads": 1
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_symforge"))
}

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn discover_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(SMALL_B).unwrap();
    let out = dir.path().join("run");
    let o = run_discover(&cfg, &out).unwrap();
    assert!(o.result.failure.is_none());

    let text = fs::read_to_string(out.join(LOSSES_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,stage,ham,eqv:so2,total,min_abs_detW");
    // Σ epochs + one initial evaluation per stage
    assert_eq!(lines.count(), 4 + 3 + 2);
    let table = read_losses(text.as_bytes()).unwrap();
    assert_eq!(table.rows[0].epoch, 0);
    assert_eq!(table.rows[0].losses[1], None);
    assert_eq!(table.rows[5].epoch, 4);
    assert_eq!(table.rows[5].stage, 1);
    assert_eq!(table.rows.last().unwrap().epoch, 7);
    assert!(table.rows[0].losses[0].unwrap() > 0.0);

    let tr = fs::read_to_string(out.join(TRANSFORM_FILE)).unwrap();
    assert_eq!(tr.lines().next().unwrap(), "z1,z2,zp1,zp2");
    assert_eq!(tr.lines().count(), 1001);

    let net = read_checkpoint(&mut fs::File::open(out.join(CHECKPOINT_FILE)).unwrap()).unwrap();
    assert_eq!(net.params(), o.result.net.params());

    let report = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report.contains("seed: 2"));
    assert!(report.contains("ham: "));
    assert!(report.contains("eqv:so2: "));
    assert!(report.contains("\"system\": \"B\""));
    assert!(report.contains("runtime: "));
}

#[test]
fn losses_csv_matches_records_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(SMALL_B).unwrap();
    let o = run_discover(&cfg, dir.path()).unwrap();
    let table = read_losses(fs::File::open(dir.path().join(LOSSES_FILE)).unwrap()).unwrap();
    let recs: Vec<_> = o.result.records().collect();
    assert_eq!(recs.len(), table.rows.len());
    for (r, row) in recs.iter().zip(&table.rows) {
        assert_eq!(r.total.to_bits(), row.total.to_bits());
        assert_eq!(r.min_abs_det.to_bits(), row.min_abs_det.to_bits());
        let got: Vec<f64> = row.losses.iter().flatten().copied().collect();
        assert_eq!(got.len(), r.losses.len());
        for (a, b) in got.iter().zip(&r.losses) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn binary_discover_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), SMALL_B);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let st = bin()
            .args(["discover", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        // a few epochs cannot reach ε; anything but an error is fine here
        assert!(st.code() == Some(0) || st.code() == Some(1), "{st:?}");
        fs::read(out.join(LOSSES_FILE)).unwrap()
    };
    let a = run("a", "5");
    let b = run("b", "5");
    assert_eq!(a, b);
    assert_ne!(a, run("c", "6"));
    let report = fs::read_to_string(dir.path().join("a").join(REPORT_FILE)).unwrap();
    assert!(report.contains("seed: 5"));
    assert!(report.contains("\"seed\": 5"));
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), r#"{"system": "Q", "stages": []}"#);
    let out = bin().args(["discover", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system"));
    let missing = bin().args(["discover", "--config", "/nonexistent/cfg.json"]).status().unwrap();
    assert_eq!(missing.code(), Some(EXIT_ERROR));
}

#[test]
fn verify_and_check_grads_exit_zero() {
    for sys in ["A", "b", "F"] {
        let out = bin().args(["verify", "--system", sys]).output().unwrap();
        assert_eq!(out.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let out = bin()
        .args(["check-grads", "--seed", "3"])
        .env("SYMFORGE_THREADS", "1")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(EXIT_PASS), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("net ")).count(), 20);
    assert!(bin().args(["verify", "--system", "Z"]).status().unwrap().code() != Some(0));
}

#[test]
fn aborted_run_keeps_partial_artifacts() {
    // no point can satisfy the hidden-radius cut, so sampling fails
    let text = r#"{
      "system": "C",
      "params": {"min_radius": 1000.0},
      "stages": [{"tags": ["ham"], "epochs": 5, "lr": 1e-3, "batch": 64}],
      "widths": [8],
      "threads": 1
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), text);
    let out = dir.path().join("run");
    let res = bin().args(["discover", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&res.stderr).contains("partial"));
    let report = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    assert!(report.contains("ERROR (artifacts are partial)"), "{report}");
    let table = read_losses(fs::File::open(out.join(LOSSES_FILE)).unwrap()).unwrap();
    assert_eq!(table.tags, vec!["ham"]);
    assert!(table.rows.is_empty());
}

proptest! {
    #[test]
    fn reals_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        let y = parse_real(&format_real(x)).unwrap();
        if x.is_nan() {
            prop_assert!(y.is_nan());
        } else {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            symforge::config::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}
