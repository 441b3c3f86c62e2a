use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use softdice::{dice_error, sdc, threshold, BinaryMask, DecisionThreshold, ProbVector};
use softdice_cli::format::g17;
use softdice_cli::io::{encode_binary, encode_text};

fn softdice(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softdice"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_text(dir: &Path, name: &str, values: &[f64]) {
    fs::write(dir.join(name), encode_text(values)).unwrap();
}

/// Two samples: a 3-pixel map with truth and a 1-pixel map with truth.
fn fixture(dir: &Path) {
    write_text(dir, "a.txt", &[0.2, 0.9, 0.7]);
    write_text(dir, "a_y.txt", &[0.0, 1.0, 0.0]);
    write_text(dir, "b.txt", &[0.5]);
    write_text(dir, "b_y.txt", &[1.0]);
    fs::write(
        dir.join("m.csv"),
        "sample_id,prob_path,truth_path\nzeta,a.txt,a_y.txt\nalpha,b.txt,b_y.txt\n",
    )
    .unwrap();
}

#[test]
fn score_matches_library_and_keeps_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = stdout(&softdice(
        dir.path(),
        &["score", "--manifest", "m.csv", "--estimator", "sdc"],
    ));
    let gamma = DecisionThreshold::default();
    let a = ProbVector::new(vec![0.2, 0.9, 0.7]).unwrap();
    let a_hat = threshold(&a, gamma);
    let a_err = dice_error(&BinaryMask::from_reals(&[0.0, 1.0, 0.0]).unwrap(), &a_hat).unwrap();
    let expected = format!(
        "sample_id,estimator,score,dice_error\nzeta,sdc,{},{}\nalpha,sdc,{},0\n",
        g17(sdc(&a, &a_hat).unwrap()),
        g17(a_err),
        g17(2.0 / 3.0)
    );
    assert_eq!(out, expected);
}

#[test]
fn score_without_truth_has_no_loss_column() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    fs::write(dir.path().join("n.csv"), "sample_id,prob_path\nx,a.txt\n").unwrap();
    let out = stdout(&softdice(
        dir.path(),
        &["score", "--manifest", "n.csv", "--estimator", "amsp"],
    ));
    assert_eq!(out.lines().next().unwrap(), "sample_id,estimator,score");
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn text_and_binary_inputs_give_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    // Values exactly representable in f32.
    let probs = [0.25, 0.75, 0.5, 0.125, 1.0];
    write_text(dir.path(), "p.txt", &probs);
    fs::write(dir.path().join("p.bin"), encode_binary(&probs)).unwrap();
    fs::write(dir.path().join("t.csv"), "sample_id,prob_path\ns,p.txt\n").unwrap();
    fs::write(dir.path().join("b.csv"), "sample_id,prob_path\ns,p.bin\n").unwrap();
    for cmd in [&["score", "--estimator", "mmmc"][..], &["bounds"][..]] {
        let run = |m: &str| {
            let mut args = cmd.to_vec();
            args.extend(["--manifest", m]);
            stdout(&softdice(dir.path(), &args))
        };
        assert_eq!(run("t.csv"), run("b.csv"));
    }
}

#[test]
fn tla_requires_a_threshold() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = softdice(
        dir.path(),
        &["score", "--manifest", "m.csv", "--estimator", "tla"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tau"));

    let ok = stdout(&softdice(
        dir.path(),
        &[
            "score",
            "--manifest",
            "m.csv",
            "--estimator",
            "tla",
            "--tau",
            "0.9",
        ],
    ));
    assert!(ok.contains("zeta,tla,"));
    let fitted = stdout(&softdice(
        dir.path(),
        &[
            "score",
            "--manifest",
            "m.csv",
            "--estimator",
            "tla",
            "--tau-manifest",
            "m.csv",
        ],
    ));
    assert_eq!(fitted.lines().count(), 3);
}

#[test]
fn unknown_estimator_and_bad_values_fail_with_context() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = softdice(
        dir.path(),
        &["score", "--manifest", "m.csv", "--estimator", "magic"],
    );
    assert!(!out.status.success());

    fs::write(dir.path().join("bad.txt"), "0.5\n1.5\n").unwrap();
    fs::write(
        dir.path().join("bad.csv"),
        "sample_id,prob_path\nbroken,bad.txt\n",
    )
    .unwrap();
    let out = softdice(
        dir.path(),
        &["score", "--manifest", "bad.csv", "--estimator", "sdc"],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken") && err.contains("line 2"), "{err}");

    write_text(dir.path(), "short_y.txt", &[1.0]);
    fs::write(
        dir.path().join("mismatch.csv"),
        "sample_id,prob_path,truth_path\nm,a.txt,short_y.txt\n",
    )
    .unwrap();
    let out = softdice(
        dir.path(),
        &["score", "--manifest", "mismatch.csv", "--estimator", "sdc"],
    );
    assert!(!out.status.success());
}

#[test]
fn rc_from_scores() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("one.csv"),
        "sample_id,estimator,score,dice_error\nx,sdc,0.4,0.7\n",
    )
    .unwrap();
    let out = stdout(&softdice(dir.path(), &["rc", "--scores", "one.csv"]));
    assert_eq!(
        out,
        "coverage,selective_risk\n1,0.69999999999999996\n# aurc=0.69999999999999996\n"
    );

    fs::write(
        dir.path().join("noloss.csv"),
        "sample_id,estimator,score\nx,sdc,0.4\n",
    )
    .unwrap();
    let out = softdice(dir.path(), &["rc", "--scores", "noloss.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dice_error"));
}

#[test]
fn score_then_rc_pipeline_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    stdout(&softdice(
        dir.path(),
        &[
            "score",
            "--manifest",
            "m.csv",
            "--estimator",
            "sdc",
            "--output",
            "s.csv",
        ],
    ));
    stdout(&softdice(
        dir.path(),
        &["rc", "--scores", "s.csv", "--references", "-o", "rc.csv"],
    ));
    let rc = fs::read_to_string(dir.path().join("rc.csv")).unwrap();
    assert!(rc.starts_with("coverage,selective_risk,oracle_risk,random_risk\n"));
    assert!(rc.contains("# aurc_oracle="));
}

#[test]
fn bounds_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_text(dir.path(), "half.txt", &[0.5]);
    write_text(dir.path(), "bg.txt", &[0.1, 0.2]);
    fs::write(
        dir.path().join("m.csv"),
        "sample_id,prob_path\nhalf,half.txt\nbg,bg.txt\n",
    )
    .unwrap();
    let out = stdout(&softdice(dir.path(), &["bounds", "--manifest", "m.csv"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "sample_id,k,mu,lambda,s,b_lower,b_upper,eps,flag");
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&f[..7], &["half", "1", "0.5", "0", "0.5", "0.75", "1"]);
    assert!((f[7].parse::<f64>().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(f[8], "");
    assert!(lines[2].starts_with("bg,0,") && lines[2].ends_with(",,,,zero_foreground"));
    assert!(lines[3].starts_with("# Max(ε)=0.33333333333333"));
    assert!(lines[3].contains(", Mean(ε)="));
}

#[test]
fn idc_methods_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_text(dir.path(), "p.txt", &[0.2, 0.9, 0.7, 0.55, 0.05]);
    let value = |method: &str| -> f64 {
        let out = stdout(&softdice(
            dir.path(),
            &["idc", "--probs", "p.txt", "--method", method],
        ));
        out.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((value("enum") - value("pb")).abs() < 1e-12);
    assert!(value("full") > value("pb"));

    write_text(dir.path(), "m.txt", &[1.0, 1.0, 0.0, 0.0, 0.0]);
    let out = stdout(&softdice(
        dir.path(),
        &[
            "idc", "--probs", "p.txt", "--mask", "m.txt", "--method", "enum",
        ],
    ));
    assert!(out.starts_with("method,idc\nenum,"));
}

#[test]
fn synth_flag_conflicts_and_existing_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = softdice(
        dir.path(),
        &["synth", "--out", "o", "--mu-z", "-3.7", "--alpha", "0.25"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());

    fs::create_dir(dir.path().join("taken")).unwrap();
    let out = softdice(
        dir.path(),
        &[
            "synth",
            "--out",
            "taken",
            "--mu-z",
            "-3.7",
            "--samples",
            "10",
            "--runs",
            "1",
        ],
    );
    assert!(!out.status.success());
}

#[test]
fn synth_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&softdice(
        dir.path(),
        &[
            "synth",
            "--out",
            "o",
            "--mu-z",
            "-3.698",
            "--samples",
            "200",
            "--runs",
            "2",
            "--estimators",
            "sdc_phat,idc_full,oracle",
        ],
    ));
    let o = dir.path().join("o");
    let mut names: Vec<String> = fs::read_dir(&o)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "aurc_bands.csv",
            "aurc_summary.csv",
            "metadata.json",
            "rc_run00.csv",
            "rc_run01.csv",
            "risk_summary.csv"
        ]
    );
    let summary = fs::read_to_string(o.join("aurc_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
    let rc = fs::read_to_string(o.join("rc_run00.csv")).unwrap();
    assert_eq!(
        rc.lines().next().unwrap(),
        "coverage,sdc_phat,idc_full,oracle"
    );
    assert_eq!(rc.lines().count(), 201);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["mu_z"], -3.698);
    assert_eq!(meta["mu_z_source"], "given");

    stdout(&softdice(
        dir.path(),
        &[
            "synth",
            "--out",
            "sw",
            "--mu-z",
            "-3.698",
            "--samples",
            "100",
            "--runs",
            "2",
            "--sweep",
            "rho-eta",
            "0:1:0.5",
        ],
    ));
    let sweep = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3 * 7);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sw/metadata.json")).unwrap())
            .unwrap();
    assert_eq!(meta["sweep"]["grid"], serde_json::json!([0.0, 0.5, 1.0]));
}
