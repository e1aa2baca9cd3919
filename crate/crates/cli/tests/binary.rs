use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qfes(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfes"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("qfes runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn ghz_counts_only_hold_extremal_bitstrings() {
    let dir = tempfile::tempdir().unwrap();
    let out = qfes(&["ghz", "--set", "shots=5000", "--seed", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("counts.csv"));
    assert_eq!(rows[0], ["bitstring", "count"]);
    let labels: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["000", "111"]);
    let total: u64 = rows[1..].iter().map(|r| r[1].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 5000);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "ghz");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"][0]["file"], "counts.csv");
    // Defaults are echoed on stderr, checksums on stdout.
    assert!(String::from_utf8_lossy(&out.stderr).contains("default: n = 3"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("counts.csv"));
}

#[test]
fn echo_run_writes_series_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = qfes(&["sawtooth-echo", "--set", "n=6", "--set", "steps=20", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("echo.csv"));
    assert_eq!(rows[0], ["t", "fidelity"]);
    assert_eq!(rows.len(), 22);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["fit"]["regime"].is_string());
}

#[test]
fn config_file_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "kind = \"qpe\"\nseed = 2\n[params]\nm = 4\nphase = 0.25\n").unwrap();
    let ok = qfes(&["qpe", "--config", cfg.to_str().unwrap()], &dir.path().join("a"));
    assert_eq!(ok.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("a/qpe.csv"));
    assert_eq!(rows.len(), 17);

    let cases: [&[&str]; 5] = [
        &["ghz", "--set", "shots=-1"],
        &["ghz", "--set", "colour=red"],
        &["ghz", "--set", "n=2.5"],
        &["warp-drive"],
        &["qpe", "--config", "/nonexistent/qfes.toml"],
    ];
    for args in cases {
        let out = qfes(args, &dir.path().join("bad"));
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    // Explicit Euler above the CFL limit fails inside the module.
    let out = qfes(&["embed-kvn", "--set", "theta_scheme=explicit-euler", "--set", "dt=0.05"], &dir.path().join("c"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_runs_have_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["qae", "--set", "N=32", "--set", "marked=5", "--seed", "11"];
    let a = qfes(&args, &dir.path().join("a"));
    let b = qfes(&args, &dir.path().join("b"));
    assert_eq!(a.status.code(), Some(0));
    let strip = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    for name in ["qae.csv", "summary.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(name)).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap());
    }
    let c = qfes(&["qae", "--set", "N=32", "--set", "marked=5", "--seed", "12"], &dir.path().join("c"));
    assert_ne!(strip(&a), strip(&c));
}
