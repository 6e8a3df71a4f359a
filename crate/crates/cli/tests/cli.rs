use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rlmux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlmux"))
        .args(args)
        .env_remove("RLMUX_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rlmux(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

const SMALL: [&str; 4] = ["--batch", "32", "--seeds", "0,1"];

#[test]
fn run_twice_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let mut args = vec!["run", "--out", path(dir)];
        args.extend(SMALL);
        ok(&args);
    }
    let (ca, cb) = (csv_files(&a), csv_files(&b));
    assert_eq!(ca.len(), 2 * 5);
    assert_eq!(ca, cb);

    let sw = |dir: &Path| {
        ok(&["sweep", "--batch", "32", "--seeds", "0..2", "--skews", "0.5,1", "--out", path(dir)]);
        csv_files(dir)
    };
    assert_eq!(sw(&tmp.path().join("s1")), sw(&tmp.path().join("s2")));
}

#[test]
fn default_flags_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--out", path(tmp.path())];
    args.extend(SMALL);
    ok(&args);
    let metrics = fs::read_to_string(tmp.path().join("s0.lookahead_W_3.metrics.csv")).unwrap();
    assert!(metrics.contains("meta,L_s,10\n"), "{metrics}");
    assert!(metrics.contains("meta,W,3\n"));
    assert!(metrics.contains("meta,table,default\n"));
    assert!(metrics.contains(&format!("meta,version,{}\n", rlmux::VERSION)));
}

#[test]
fn lookahead_beats_serial_in_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["run", "--seeds", "3", "--out", path(tmp.path())]);
    let table = fs::read_to_string(tmp.path().join("s3.comparison.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(table.as_bytes());
    let speedups: Vec<(String, f64)> = rows
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[3].parse().unwrap())
        })
        .collect();
    assert_eq!(speedups.len(), 2);
    assert_eq!(speedups[0], ("serial".to_string(), 1.0));
    assert_eq!(speedups[1].0, "lookahead(W=3)");
    assert!(speedups[1].1 > 1.0, "{speedups:?}");
}

#[test]
fn oracle_over_limit_fails_loudly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rlmux(&["run", "--policies", "oracle", "--batch", "32", "--out", path(tmp.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("above the oracle limit of 10"), "{err}");
}

#[test]
fn sweep_rows_and_empty_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sw");
    ok(&["sweep", "--batch", "32", "--seeds", "0..3", "--skews", "0.5,1.0,1.5", "--out", path(&dir)]);
    let rows = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count() - 1, 3 * 3);
    let means = fs::read_to_string(dir.join("sweep_means.csv")).unwrap();
    assert_eq!(means.lines().count() - 1, 3);

    let out = rlmux(&["sweep", "--seeds", "", "--out", path(&dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty seed list"));
}

#[test]
fn failed_points_are_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sw");
    // A negative sigma is rejected by the generator at that point only.
    ok(&["sweep", "--batch", "32", "--seeds", "0", "--skews", "0.5,-1", "--out", path(&dir)]);
    let rows = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(','));
    assert!(lines[2].contains("sigma"), "{}", lines[2]);
}

#[test]
fn out_dir_from_env() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("env");
    let out = Command::new(env!("CARGO_BIN_EXE_rlmux"))
        .args(["gen-trace", "--batch", "8"])
        .env("RLMUX_OUT", &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join("s0.p0.spec.json").exists());
}

#[test]
fn zero_sigma_single_turn_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.toml");
    fs::write(
        &cfg,
        "batch = 16\nworkers = 2\nturn_weights = [1.0]\n[decode]\nmedian = 200.0\nsigma = 0.0\n",
    )
    .unwrap();
    let stdout = ok(&["gen-trace", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.lines().all(|l| l.ends_with("max/median 1.000")), "{stdout}");
}

#[test]
fn trace_files_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-trace", "--batch", "16", "--seeds", "0..10", "--out", path(&a)]);
    ok(&["gen-trace", "--batch", "16", "--seeds", "4", "--out", path(&b)]);
    let bodies: std::collections::BTreeSet<Vec<u8>> = (0..10)
        .map(|s| fs::read(a.join(format!("s{s}.p0.w0.trace"))).unwrap())
        .collect();
    assert_eq!(bodies.len(), 10);
    for f in ["s4.p0.w0.trace", "s4.p1.w1.trace", "s4.p0.spec.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn file_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    ok(&["gen-trace", "--batch", "32", "--seeds", "2", "--out", path(d)]);
    for pl in 0..2 {
        ok(&[
            "build-graph",
            "--spec",
            &p(&format!("s2.p{pl}.spec.json")),
            "--trace",
            &p(&format!("s2.p{pl}.w0.trace")),
            "--trace",
            &p(&format!("s2.p{pl}.w1.trace")),
            "-o",
            &p(&format!("g{pl}.txt")),
        ]);
    }
    ok(&["default-table", "-o", &p("table.txt")]);
    for policy in ["serial", "lookahead"] {
        ok(&[
            "schedule",
            "--graphs",
            &p("g0.txt"),
            "--graphs",
            &p("g1.txt"),
            "--policy",
            policy,
            "--table",
            &p("table.txt"),
            "-o",
            &p(&format!("{policy}.sched")),
        ]);
        ok(&[
            "simulate",
            "--graphs",
            &p("g0.txt"),
            "--graphs",
            &p("g1.txt"),
            "--schedule",
            &p(&format!("{policy}.sched")),
            "--out",
            &p("sim"),
        ]);
    }
    let table = ok(&["report", &p("sim/serial.report.json"), &p("sim/lookahead.report.json")]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("serial,serial,"));
    assert!(rows[2].starts_with("lookahead,serial,"));

    let out = rlmux(&["simulate", "--graphs", &p("g0.txt"), "--schedule", &p("lookahead.sched"), "--out", &p("bad")]);
    assert!(!out.status.success());
}
