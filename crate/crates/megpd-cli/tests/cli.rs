//! End-to-end tests of the command-line surface: files, exit codes, and
//! reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn megpd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_megpd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let res = megpd(&[
        "simulate",
        "--params",
        "3,1,0.05,10,20,0.25",
        "--n",
        "2000",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let body = std::fs::read_to_string(&out).unwrap();
    assert_eq!(body.lines().count(), 2001); // header + rows
    assert!(body.starts_with("y1,y2\n"));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sim.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let res = megpd(&[
            "simulate",
            "--params",
            "3,1,0.2,4,0.5,0.25",
            "--n",
            "500",
            "--seed",
            "42",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    // Weight parameter outside its open interval.
    let res = megpd(&[
        "simulate",
        "--params",
        "3,1,0.05,10,20,0.6",
        "--n",
        "10",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("(0, 0.5)"), "{}", stderr(&res));

    // Seed is mandatory.
    let res = megpd(&[
        "simulate",
        "--params",
        "3,1,0.05,10,20,0.25",
        "--n",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);

    // Wrong number of parameter values.
    let res = megpd(&[
        "simulate",
        "--params",
        "3,1,0.05",
        "--n",
        "10",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
}

fn simulate_fixture(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("data_{seed}.csv"));
    let res = megpd(&[
        "simulate",
        "--params",
        "3,1,0.05,10,20,0.25",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out
}

#[test]
fn fit_hybrid_produces_in_range_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 2000, 11);
    let out = dir.path().join("fit.json");
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "hybrid",
        "--m",
        "20000",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let est = &json["estimates"];
    // The staged estimator is not squashed onto the prior; check positivity,
    // the angular cap, and the open weight interval instead.
    let ranges = [
        ("kappa", 0.0, 50.0),
        ("sigma", 0.0, 50.0),
        ("xi", 0.0, 2.0),
        ("theta_lower", 0.0, 200.0),
        ("theta_upper", 0.0, 200.0),
        ("theta_omega", 0.0, 0.5),
    ];
    for (name, lo, hi) in ranges {
        let v = est[name].as_f64().unwrap();
        assert!(
            v.is_finite() && v > lo && v <= hi,
            "{name} = {v} outside ({lo},{hi}]"
        );
    }
    assert!(json["hybrid"]["reports"]["radial"]["converged"].as_bool().unwrap());
}

#[test]
fn fit_bootstrap_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 1000, 12);
    let out = dir.path().join("fit.json");
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--m",
        "20000",
        "--bootstrap",
        "8",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let bs = &json["bootstrap"];
    assert_eq!(bs["replicates"], 8);
    for name in ["kappa", "sigma", "xi", "theta_lower", "theta_upper", "theta_omega"] {
        let lo = bs["lower"][name].as_f64().unwrap();
        let hi = bs["upper"][name].as_f64().unwrap();
        assert!(lo <= hi, "{name}: {lo} > {hi}");
    }
}

#[test]
fn fit_nbe_requires_a_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 300, 13);
    let out = dir.path().join("fit.json");
    // No --model at all: configuration error.
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "nbe",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
    // Nonexistent model path: data error.
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "nbe",
        "--model",
        dir.path().join("missing.nbe").to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 3);
}

#[test]
fn train_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model_dir = dir.path().join("models");
    let res = megpd(&[
        "train",
        "--out-dir",
        model_dir.to_str().unwrap(),
        "--k",
        "120",
        "--members",
        "2",
        "--width",
        "8",
        "--summary-dim",
        "8",
        "--batch-size",
        "16",
        "--max-epochs",
        "2",
        "--seed",
        "9",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(model_dir.join("member_00.nbe").exists());
    assert!(model_dir.join("member_01.nbe").exists());
    let log = std::fs::read_to_string(model_dir.join("training_log.csv")).unwrap();
    assert!(log.starts_with("member,epoch,train_risk,val_risk\n"));
    assert_eq!(log.lines().count(), 1 + 2 * 2); // header + 2 members x 2 epochs

    let data = simulate_fixture(dir.path(), 1200, 17);
    let out = dir.path().join("fit.json");
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "nbe",
        "--model",
        model_dir.join("member_00.nbe").to_str().unwrap(),
        "--model",
        model_dir.join("member_01.nbe").to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["method"], "nbe");
    // Squashed outputs always land inside the prior ranges.
    let ranges = [
        ("kappa", 0.1, 10.0),
        ("sigma", 0.1, 3.0),
        ("xi", 0.0, 0.5),
        ("theta_lower", 0.1, 20.0),
        ("theta_upper", 0.1, 20.0),
        ("theta_omega", 0.0, 0.5),
    ];
    for (name, lo, hi) in ranges {
        let v = json["estimates"][name].as_f64().unwrap();
        assert!(v >= lo && v <= hi, "{name} = {v} outside prior [{lo},{hi}]");
    }
}

#[test]
fn train_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for name in ["m1", "m2"] {
        let model_dir = dir.path().join(name);
        let res = megpd(&[
            "train",
            "--out-dir",
            model_dir.to_str().unwrap(),
            "--k",
            "100",
            "--members",
            "1",
            "--width",
            "8",
            "--summary-dim",
            "8",
            "--batch-size",
            "16",
            "--max-epochs",
            "2",
            "--threads",
            "1",
            "--seed",
            "21",
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        logs.push(std::fs::read(model_dir.join("training_log.csv")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn diagnose_self_fit_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 1000, 23);
    let out_dir = dir.path().join("diag");
    let res = megpd(&[
        "diagnose",
        "--data",
        data.to_str().unwrap(),
        "--params",
        "3,1,0.05,10,20,0.25",
        "--bootstrap",
        "200",
        "--sim-factor",
        "20",
        "--seed",
        "29",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in [
        "chi_upper.csv",
        "chi_lower.csv",
        "qq_margin1.csv",
        "qq_margin2.csv",
        "qq_sum.csv",
        "manifest.json",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }

    // Self-simulated data: chi curves inside their own overall bands at
    // >= 90% of grid points.
    for f in ["chi_upper.csv", "chi_lower.csv"] {
        let body = std::fs::read_to_string(out_dir.join(f)).unwrap();
        let mut inside = 0usize;
        let mut total = 0usize;
        for line in body.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            let (chi, ov_lo, ov_hi) = (cols[1], cols[5], cols[6]);
            total += 1;
            if chi >= ov_lo && chi <= ov_hi {
                inside += 1;
            }
        }
        assert!(
            inside as f64 >= 0.9 * total as f64,
            "{f}: only {inside}/{total} grid points inside the overall band"
        );
    }

    // Sum-target QQ columns are monotone.
    let body = std::fs::read_to_string(out_dir.join("qq_sum.csv")).unwrap();
    let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for line in body.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(cols[1] >= prev.0 && cols[2] >= prev.1, "non-monotone QQ");
        prev = (cols[1], cols[2]);
    }
}

#[test]
fn diagnose_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 400, 41);
    let mut outputs = Vec::new();
    for name in ["d1", "d2"] {
        let out_dir = dir.path().join(name);
        let res = megpd(&[
            "diagnose",
            "--data",
            data.to_str().unwrap(),
            "--params",
            "3,1,0.05,10,20,0.25",
            "--bootstrap",
            "200",
            "--sim-factor",
            "5",
            "--threads",
            "1",
            "--seed",
            "43",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        outputs.push(std::fs::read(out_dir.join("chi_upper.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn diagnose_requires_a_parameter_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 300, 31);
    let res = megpd(&[
        "diagnose",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "1",
        "--out-dir",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn diagnose_accepts_fit_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_fixture(dir.path(), 1000, 37);
    let fit_path = dir.path().join("fit.json");
    let res = megpd(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--m",
        "20000",
        "--seed",
        "3",
        "--out",
        fit_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let out_dir = dir.path().join("diag");
    let res = megpd(&[
        "diagnose",
        "--data",
        data.to_str().unwrap(),
        "--fit",
        fit_path.to_str().unwrap(),
        "--bootstrap",
        "200",
        "--sim-factor",
        "10",
        "--seed",
        "39",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(out_dir.join("manifest.json").exists());
}

fn write_plain_station(path: &Path, id_seed: u64, n_days: usize) {
    use std::fmt::Write as _;
    let mut body = String::from("date,value_mm\n");
    let mut state = id_seed;
    let mut date = chrono::NaiveDate::from_ymd_opt(1999, 10, 1).unwrap();
    for _ in 0..n_days {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        let v = if u < 0.4 { 0.0 } else { (u - 0.4) * 12.0 };
        writeln!(body, "{date},{v:.1}").unwrap();
        date = date.succ_opt().unwrap();
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn ingest_plain_stations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("sta_a.csv");
    let b = dir.path().join("sta_b.csv");
    write_plain_station(&a, 1, 900);
    write_plain_station(&b, 2, 900);
    let out = dir.path().join("pair.csv");
    let res = megpd(&[
        "ingest",
        "--station-a",
        a.to_str().unwrap(),
        "--station-b",
        b.to_str().unwrap(),
        "--format",
        "plain",
        "--season-years",
        "2000:2002",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pair.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["scaled"], true);
    assert!(manifest["scaling_factors"][0].as_f64().unwrap() > 0.0);

    // All retained values strictly positive.
    let body = std::fs::read_to_string(&out).unwrap();
    for line in body.lines().skip(1) {
        for v in line.split(',') {
            assert!(v.parse::<f64>().unwrap() > 0.0);
        }
    }
}
