use std::process::{Command, Output};

fn urnflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urnflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn exact_law_csv() {
    let o = urnflow(&["exact", "--law", "three_type", "--steps", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "B_1,B_2,B_3,prob\n3,0,2,0.5\n4,1,2,0.5\n");
}

#[test]
fn trajectory_csv() {
    let o = urnflow(&[
        "simulate",
        "--law",
        "three_type",
        "--steps",
        "3",
        "--checkpoints",
        "all",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,B_1,B_2,B_3,survived");
    assert_eq!(lines[1], "0,1,0,0,true");
    assert_eq!(lines[2], "1,2,0,1,true");
    assert_eq!(lines[4], "3,5,1,3,true");
}

#[test]
fn example_suite_passes() {
    let o = urnflow(&["example"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1/6"));
}

#[test]
fn exit_codes() {
    assert_eq!(
        urnflow(&["analyze", "--law", "no_such_law"]).status.code(),
        Some(1)
    );
    assert_eq!(
        urnflow(&["clt", "--law", "boundary", "--test", "chi"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(urnflow(&["--help"]).status.code(), Some(0));
    let reject = urnflow(&[
        "clt",
        "--law",
        "boundary",
        "--scale",
        "no-log",
        "--centering",
        "full",
        "--replicates",
        "300",
        "--n",
        "2000",
    ]);
    assert_eq!(reject.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&reject.stdout).unwrap();
    assert_eq!(report["verdict"], "fail");
    for key in [
        "config",
        "regime",
        "hypotheses",
        "survival_fraction",
        "samples_path",
        "statistic",
        "p_value",
        "verdict",
        "runtime_ms",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn reports_repeat_and_samples_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("s.csv");
    let args = |s: &str| {
        vec![
            "clt".to_string(),
            "--law".into(),
            "below".into(),
            "--replicates".into(),
            "200".into(),
            "--n".into(),
            "1000".into(),
            "--seed".into(),
            "9".into(),
            "--samples".into(),
            s.to_string(),
        ]
    };
    let run = |a: Vec<String>| {
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        urnflow(&refs)
    };
    let a = run(args(samples.to_str().unwrap()));
    let b = run(args(samples.to_str().unwrap()));
    assert_eq!(a.stdout, b.stdout);
    let csv = std::fs::read_to_string(&samples).unwrap();
    assert!(csv.starts_with("replicate,W_hat,tau_n,B_j,standardized\n"));
    assert_eq!(csv.lines().count(), 201);
}

#[test]
fn profile_reports_the_boundary_scale() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("plot.csv");
    let o = urnflow(&[
        "profile",
        "--law",
        "boundary",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ell_star"], 0);
    assert_eq!(v["x_grid"].as_array().unwrap().len(), 16);
    assert!(v["hypotheses"]["var_vlambda_L_positive"].as_bool().unwrap());
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 100);
}
