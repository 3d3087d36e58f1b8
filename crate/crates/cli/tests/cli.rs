use std::path::Path;
use std::process::{Command, Output};

fn mkq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("mkq runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file under `dir`, relative to it.
fn files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkq(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Usage: mkq"));
    for sub in ["solve", "map", "contour", "bench", "certify"] {
        let o = mkq(dir.path(), &[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
    }
}

#[test]
fn solve_writes_outputs_and_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkq(
        dir.path(),
        &["solve", "--preset", "beta1d", "--epsilon", "0.02", "--iters", "5000", "--seed", "3", "--out", "a"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with("solve: beta1d") && line.contains("avg_objective="), "{line}");
    assert_eq!(
        files(&dir.path().join("a")),
        ["config.json", "estimator.json", "quantile.csv", "run_record.csv", "sample.csv"]
    );

    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["epsilon"], 0.02);
    assert_eq!(cfg["gamma"], 0.02);
    assert_eq!(cfg["grid"], serde_json::json!([256]));
    assert_eq!(cfg["seed"], 3);

    let o = mkq(dir.path(), &["solve", "--config", "a/config.json", "--out", "b"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["estimator.json", "sample.csv", "quantile.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"preset": "linear_map_2", "sample_size": 40, "grid": [6, 6], "iters": 200, "epsilon": 0.5}"#,
    )
    .unwrap();
    let o = mkq(dir.path(), &["solve", "--config", "c.json", "--epsilon", "0.05", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["epsilon"], 0.05);
    assert_eq!(cfg["sample_size"], 40);
    assert_eq!(cfg["preset"], "linear_map_2");
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("typo.json"), r#"{"epsilom": 0.1}"#).unwrap();
    std::fs::write(dir.path().join("wrong.json"), r#"{"levels": [0.5]}"#).unwrap();
    let cases: &[(&[&str], &str)] = &[
        (&["solve", "--config", "typo.json"], "epsilom"),
        (&["solve", "--config", "wrong.json"], "levels"),
        (&["solve", "--c-exponent", "0.4"], "c_exponent"),
        (&["solve", "--epsilon=-1"], "epsilon"),
        (&["solve", "--preset", "nowhere"], "preset"),
        (&["solve", "--grid", "8,8"], "grid"),
        (&["solve", "--solver", "sinkhorn"], "solver"),
        (&["contour", "--levels", "0.5,1.5"], "levels"),
        (&["map", "--queries", "q.csv"], "estimator"),
        (&["bench", "--preset", "beta1d"], "preset"),
        (&["bench", "--threshold", "0"], "threshold"),
    ];
    for (args, field) in cases {
        let o = mkq(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{args:?}: {}", stderr(&o));
    }
    let o = mkq(dir.path(), &["solve", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    // nothing ran, so nothing was written
    assert_eq!(files(dir.path()), ["typo.json", "wrong.json"]);
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("est.json"), "not json").unwrap();
    std::fs::write(dir.path().join("q.csv"), "x\n0.5\n").unwrap();
    let o = mkq(dir.path(), &["map", "--estimator", "est.json", "--queries", "q.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("est.json"));
}

#[test]
fn map_and_certify_use_a_saved_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkq(
        dir.path(),
        &["solve", "--preset", "beta1d", "--epsilon", "0.05", "--iters", "3000", "--out", "s"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::write(dir.path().join("q.csv"), "x\n0.1\n0.5\n0.9\n").unwrap();

    let o = mkq(dir.path(), &["map", "--estimator", "s/estimator.json", "--queries", "q.csv", "--out", "m"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("m/map.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(text.lines().next(), Some("x0,q0"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0][1] < rows[1][1] && rows[1][1] < rows[2][1]);

    let o = mkq(dir.path(), &["certify", "--estimator", "s/estimator.json", "--out", "c"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("certify: certificate="));
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c/certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["n"], 100);
    assert_eq!(cert["certified"], cert["certificate"].as_f64().unwrap() > 0.0);
}

#[test]
fn contour_writes_one_csv_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkq(
        dir.path(),
        &[
            "contour", "--preset", "banana2d", "--levels", "0.3,0.6,1.0", "--angles", "16", "--sample-size", "200",
            "--iters", "2000", "--grid", "6,24", "--epsilon", "0.05", "--out", "c",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("c");
    for f in ["contour_r0.3.csv", "contour_r0.6.csv", "contour_r1.csv", "contours.csv", "estimator.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let all = std::fs::read_to_string(out.join("contours.csv")).unwrap();
    assert_eq!(all.lines().next(), Some("level,angle_index,x,y"));
    assert_eq!(all.lines().count(), 1 + 3 * 16);
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["cost"], "polar");

    // the saved estimator gives the same contour without solving again
    let o = mkq(
        dir.path(),
        &["contour", "--estimator", "c/estimator.json", "--levels", "0.6", "--angles", "16", "--out", "d"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let again = std::fs::read_to_string(dir.path().join("d/contour_r0.6.csv")).unwrap();
    assert_eq!(again, std::fs::read_to_string(out.join("contour_r0.6.csv")).unwrap());
}

#[test]
fn bench_race_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = mkq(
        dir.path(),
        &[
            "bench", "--race", "fft,semidiscrete,sinkhorn", "--dims", "2", "--threshold", "5e-2", "--grid", "8,8",
            "--sample-size", "200", "--probes", "100", "--replicates", "2", "--iters", "20000", "--epsilon", "0.01",
            "--out", "b",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("fft/linear_map_2") && line.contains("sinkhorn/linear_map_2"), "{line}");
    let csv = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("solver,problem,n,replicate,iter,seconds,mse"));
    for s in ["fft", "semidiscrete", "sinkhorn"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{s},linear_map_2,200,"))), "{s}");
    }
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/bench.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
    assert_eq!(reports[0]["summary"]["completed"], 2);
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mkq"))
        .current_dir(dir.path())
        .env("MKQ_THREADS", "zero")
        .args(["solve", "--iters", "10"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MKQ_THREADS"));
}
