use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mountnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mountnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn generate_is_reproducible_from_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&mountnet(
            tmp.path(),
            &[
                "generate", "--hours", "0.1", "--drives", "3", "--seed", "5", "--out", out,
            ],
        ));
    }
    let names: Vec<_> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".truth.csv")).count(), 3);
    assert_eq!(
        names
            .iter()
            .filter(|n| n.ends_with(".csv") && !n.contains("truth"))
            .count(),
        3
    );
    for n in names.iter().filter(|n| n.as_str() != "config_echo.toml") {
        let a = fs::read(tmp.path().join("a").join(n)).unwrap();
        let b = fs::read(tmp.path().join("b").join(n)).unwrap();
        assert!(a == b, "{n} differs between runs");
    }
    ok(&mountnet(
        tmp.path(),
        &[
            "generate", "--hours", "0.1", "--drives", "3", "--seed", "6", "--out", "c",
        ],
    ));
    assert_ne!(
        fs::read(tmp.path().join("a/drive_000.csv")).unwrap(),
        fs::read(tmp.path().join("c/drive_000.csv")).unwrap()
    );
}

#[test]
fn mid_rotation_is_recorded_in_the_truth_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&mountnet(
        tmp.path(),
        &[
            "generate",
            "--hours",
            "0.05",
            "--drives",
            "1",
            "--mid-rotation",
            "60:90",
            "--out",
            "d",
        ],
    ));
    let truth = mountnet::io::read_truth(&tmp.path().join("d/drive_000.truth.csv")).unwrap();
    assert_eq!(truth.steps.len(), 2);
    assert_eq!(truth.steps[1].0, 60.0);
    let change = truth.steps[1].1 - truth.steps[0].1;
    assert!((change - 90.0).abs() < 1e-9, "{change}");
}

#[test]
fn train_eval_stream_plotdata_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&mountnet(
        dir,
        &["generate", "--hours", "0.1", "--drives", "3", "--out", "data"],
    ));
    ok(&mountnet(
        dir,
        &[
            "train",
            "--data",
            "data",
            "--epochs",
            "3",
            "--limit-windows",
            "128",
            "--out",
            "train",
        ],
    ));
    assert_eq!(csv_rows(&dir.join("train/train_log.csv")).len(), 3);
    let echo = fs::read_to_string(dir.join("train/config_echo.toml")).unwrap();
    let cfg = mountnet::cli::RunConfig::parse(&echo).unwrap();
    assert_eq!((cfg.epochs, cfg.limit_windows), (3, 128));

    ok(&mountnet(
        dir,
        &[
            "eval",
            "--checkpoint",
            "train/best.ckpt",
            "--eval-drives",
            "2",
            "--out",
            "eval",
        ],
    ));
    let curve = csv_rows(&dir.join("eval/convergence.csv"));
    assert_eq!(curve.len(), 721);
    assert!(
        curve[0].starts_with("0,") || curve[0].starts_with("0.0,"),
        "{}",
        curve[0]
    );
    assert!(curve[720].starts_with("360"), "{}", curve[720]);
    assert!(dir.join("eval/metrics.csv").exists() && dir.join("eval/midpoint.csv").exists());

    let stream = mountnet(
        dir,
        &[
            "stream",
            "--checkpoint",
            "train/best.ckpt",
            "--input",
            "data/drive_001.csv",
            "--speed",
            "max",
            "--out",
            "s",
        ],
    );
    ok(&stream);
    let printed = String::from_utf8(stream.stdout).unwrap();
    assert_eq!(printed, fs::read_to_string(dir.join("s/stream.csv")).unwrap());
    assert!(printed.lines().count() > 100);

    ok(&mountnet(
        dir,
        &["plotdata", "--kind", "smoothing", "s/stream.csv", "--out", "p"],
    ));
    let study = csv_rows(&dir.join("p/smoothing.csv"));
    let n_values: std::collections::BTreeSet<&str> = study.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(n_values.len(), 5);

    ok(&mountnet(
        dir,
        &[
            "plotdata",
            "--kind",
            "convergence",
            "eval/convergence.csv",
            "--out",
            "p",
        ],
    ));
    let band = fs::read_to_string(dir.join("p/convergence_band.csv")).unwrap();
    assert!(band.starts_with("t,mean,lo,hi\n"));

    let traces: Vec<String> = fs::read_dir(dir.join("eval/traces"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .filter(|p| p.contains("midpoint_"))
        .collect();
    let mut args = vec!["plotdata", "--kind", "midpoint", "--out", "p"];
    args.extend(traces.iter().map(String::as_str));
    ok(&mountnet(dir, &args));
    let rows = csv_rows(&dir.join("p/midpoint_traces.csv"));
    let drives: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(drives.len(), traces.len());

    let bad = mountnet(
        dir,
        &["plotdata", "--kind", "convergence", "s/stream.csv", "--out", "p"],
    );
    assert_eq!(bad.status.code(), Some(mountnet::error::EXIT_DATA));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("missing") && err.contains("mean_abs_err_deg"), "{err}");
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "epochs = 3\nno_such_key = 1\n").unwrap();
    let out = mountnet(dir, &["--config", "bad.toml", "train"]);
    assert_eq!(out.status.code(), Some(mountnet::error::EXIT_CONFIG));

    let out = mountnet(dir, &["generate", "--hours", "-1"]);
    assert_eq!(out.status.code(), Some(mountnet::error::EXIT_CONFIG));

    fs::write(dir.join("junk.csv"), "t,ax,ay,az,gx,gy,gz\nx,y\nq,r\n").unwrap();
    let out = mountnet(dir, &["stream", "--input", "junk.csv", "--checkpoint", "missing.ckpt"]);
    assert_eq!(out.status.code(), Some(mountnet::error::EXIT_IO));

    let out = mountnet(dir, &["plotdata", "--kind", "nope", "junk.csv"]);
    assert_eq!(out.status.code(), Some(mountnet::error::EXIT_CONFIG));
}
