use std::process::{Command, Output};

fn secular(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secular"))
        .args(args)
        .env_remove("SECULAR_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn fourth_moment_at_theta_one_counts_squares() {
    let o = secular(&["moments", "--theta", "1", "--n", "5", "--k", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "6");
    let o = secular(&["moments", "--beta", "2", "--n", "5", "--k", "3", "--exact-int"]);
    assert_eq!(stdout(&o).trim(), "231");
}

#[test]
fn exact_int_needs_theta_one() {
    let o = secular(&["moments", "--theta", "0.5", "--n", "5", "--k", "2", "--exact-int"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn joint_moment() {
    let o = secular(&["moments", "joint", "--theta", "1", "--mu", "2,1", "--nu", "1,2", "--exact-int"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "2");
    let o = secular(&["moments", "joint", "--theta", "1", "--mu", "2,1", "--nu", "1,1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ewens_pmf_on_three_points() {
    let o = secular(&["ewens", "--n", "3", "--theta", "1", "pmf"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    let probs: Vec<f64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let identity = rows.iter().find(|r| r.starts_with("1+1+1,")).unwrap();
    let p: f64 = identity.split(',').nth(1).unwrap().parse().unwrap();
    assert!((p - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn ewens_tables_are_wellformed() {
    for table in ["longest", "shortest", "t0n"] {
        let o = secular(&["ewens", "--n", "6", "--theta", "0.5", table]);
        assert!(o.status.success(), "{table}");
        assert!(stdout(&o).lines().count() > 6);
    }
    let o = secular(&["ewens", "--theta", "1", "cdelta", "--delta", "0.5"]);
    let out = stdout(&o);
    let c: f64 = out.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    // at θ = 1 and δ ≥ 1/2, C_δ = ln(1/δ)
    assert!((c - std::f64::consts::LN_2).abs() < 1e-6, "{c}");
    let o = secular(&["ewens", "--theta", "1", "pdensity", "--x-max", "1", "--dx", "0.5"]);
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = secular(&["ewens", "--theta", "1", "pmf"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theta_and_beta_are_exclusive() {
    let o = secular(&["ewens", "--n", "3", "--theta", "1", "--beta", "2", "pmf"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_flag_exit_two() {
    assert_eq!(secular(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(secular(&["self-check", "--bogus"]).status.code(), Some(2));
    assert_eq!(secular(&["experiment", "nope"]).status.code(), Some(2));
}

#[test]
fn self_check_passes() {
    let o = secular(&["self-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn sampling_is_byte_identical_and_thread_independent() {
    let args = ["sample-hmc", "--theta", "0.5", "--order", "6", "--replicates", "5", "--seed", "9"];
    let a = secular(&args);
    let b = secular(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let mut threaded = vec!["--threads", "1"];
    threaded.extend_from_slice(&args);
    assert_eq!(secular(&threaded).stdout, a.stdout);
    assert_eq!(stdout(&a).lines().count(), 1 + 5 * 7);

    let env = Command::new(env!("CARGO_BIN_EXE_secular"))
        .args(&args[..args.len() - 2])
        .env("SECULAR_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
}

#[test]
fn cbe_sample_has_unit_extreme_coefficients() {
    let o = secular(&["sample-cbe", "--beta", "2", "--size", "4", "--replicates", "3", "--seed", "1"]);
    assert!(o.status.success());
    for line in stdout(&o).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[1] == "0" || f[1] == "4" {
            let (re, im): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
            assert!((re.hypot(im) - 1.0).abs() < 1e-12, "{line}");
        }
    }
}

#[test]
fn experiment_reads_config_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ratio.json");
    std::fs::write(&config, r#"{"theta": 0.25, "n": [100, 200, 400], "threshold": 0.5}"#).unwrap();
    let out = dir.path().join("report");
    let o = secular(&[
        "experiment",
        "moment-ratio",
        "--config",
        config.to_str().unwrap(),
        "--theta",
        "0.2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["config"]["theta"], 0.2);
    assert_eq!(json["config"]["n"], serde_json::json!([100, 200, 400]));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"theta": 0.25, "colour": "blue"}"#).unwrap();
    let o = secular(&["experiment", "moment-ratio", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = secular(&["experiment", "sobolev", "--replicates", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_verdict_exits_one() {
    // a tolerance no finite-n ratio can meet
    let o = secular(&["experiment", "moment-ratio", "--n", "10,20", "--threshold", "1e-9"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn small_experiment_is_reproducible() {
    let args = [
        "experiment",
        "secular-gap",
        "--n",
        "2",
        "--size",
        "8,16",
        "--replicates",
        "200",
        "--seed",
        "3",
        "--threshold",
        "10",
    ];
    let strip = |o: Output| {
        stdout(&o)
            .lines()
            .filter(|l| !l.contains(" in "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(secular(&args)), strip(secular(&args)));
}

#[test]
fn help_documents_every_subcommand() {
    for sub in ["sample-hmc", "sample-cbe", "moments", "ewens", "experiment", "self-check"] {
        let o = secular(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(!stdout(&o).is_empty());
    }
}
