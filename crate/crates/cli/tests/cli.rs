use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mvplda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvplda"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mvplda(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SYNTH: &[&str] = &[
    "synth",
    "--d",
    "20",
    "--nu",
    "2",
    "--nv",
    "2",
    "--speakers",
    "30",
    "--phrases",
    "8",
    "--per-cell",
    "5",
    "--seed",
    "7",
];

fn synth_into(dir: &Path) {
    let mut args = SYNTH.to_vec();
    args.extend([
        "--out",
        "train.fv",
        "--eval-out",
        "eval.fv",
        "--trials-out",
        "trials.txt",
        "--trials-per-type",
        "100",
    ]);
    ok(dir, &args);
}

#[test]
fn synth_is_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = SYNTH.to_vec();
    a.extend(["--out", "a.fv"]);
    let mut b = SYNTH.to_vec();
    b.extend(["--out", "b.fv"]);
    ok(dir.path(), &a);
    ok(dir.path(), &b);
    let (x, y) = (
        fs::read(dir.path().join("a.fv")).unwrap(),
        fs::read(dir.path().join("b.fv")).unwrap(),
    );
    assert_eq!(x, y);
    assert!(String::from_utf8(x).unwrap().starts_with("MVPLDA-FEATURES 1 20\n"));
}

#[test]
fn jplda_training_writes_a_non_decreasing_trace() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    let args = [
        "train",
        "--kind",
        "jplda",
        "--iters",
        "10",
        "--nu",
        "20",
        "--nv",
        "20",
        "--in",
        "train.fv",
        "--out",
        "model.mvp",
    ];
    ok(dir.path(), &args);
    let first = fs::read(dir.path().join("model.mvp")).unwrap();
    let trace: Vec<f64> = fs::read_to_string(dir.path().join("model.mvp.ll"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(trace.len(), 11);
    assert!(trace.windows(2).all(|w| w[1] - w[0] >= -1e-9), "{trace:?}");
    ok(dir.path(), &args);
    assert_eq!(first, fs::read(dir.path().join("model.mvp")).unwrap());
}

#[test]
fn fast_and_naive_score_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    ok(
        dir.path(),
        &[
            "train", "--kind", "plda", "--n", "10", "--in", "train.fv", "--out", "plda.mvp",
        ],
    );
    for mode in ["naive", "fast"] {
        let out = format!("{mode}.txt");
        ok(
            dir.path(),
            &[
                "score",
                "--model",
                "plda.mvp",
                "--features",
                "eval.fv",
                "--trials",
                "trials.txt",
                "--mode",
                mode,
                "--out",
                &out,
            ],
        );
    }
    let read = |name: &str| -> Vec<(f64, String)> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .map(|l| {
                let (s, k) = l.split_once(' ').unwrap();
                (s.parse().unwrap(), k.to_string())
            })
            .collect()
    };
    let (naive, fast) = (read("naive.txt"), read("fast.txt"));
    assert_eq!(naive.len(), 400);
    for (a, b) in naive.iter().zip(&fast) {
        assert!((a.0 - b.0).abs() <= 1e-8);
        assert_eq!(a.1, b.1);
    }
}

#[test]
fn eval_report_lists_each_trial_type_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    ok(
        dir.path(),
        &[
            "train", "--kind", "jplda", "--iters", "5", "--nu", "2", "--nv", "2", "--in", "train.fv", "--out", "m.mvp",
        ],
    );
    ok(
        dir.path(),
        &[
            "eval",
            "--model",
            "m.mvp",
            "--features",
            "eval.fv",
            "--trials",
            "trials.txt",
            "--priors",
            "0.333,0.333,0.334",
            "--report",
            "report.txt",
            "--scores",
            "scores.txt",
        ],
    );
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let labels: Vec<&str> = report.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["MVPLDA-REPORT", "TGT", "IW", "IC", "TW", "Total"]);
    ok(dir.path(), &["eval", "--check", "report.txt", "--scores", "scores.txt"]);

    // A tampered report no longer matches its scores.
    let tampered = report.replace("\nIC 100 ", "\nIC 99 ");
    fs::write(dir.path().join("bad.txt"), tampered).unwrap();
    assert_eq!(
        mvplda(dir.path(), &["eval", "--check", "bad.txt", "--scores", "scores.txt"])
            .status
            .code(),
        Some(2)
    );

    for hypothesis in ["view-a", "view-b"] {
        ok(
            dir.path(),
            &[
                "eval",
                "--model",
                "m.mvp",
                "--features",
                "eval.fv",
                "--trials",
                "trials.txt",
                "--hypothesis",
                hypothesis,
                "--priors",
                "0.5,0.5,0.5,0.5",
                "--report",
                "v.txt",
            ],
        );
    }
    ok(
        dir.path(),
        &[
            "eval",
            "--cosine",
            "--features",
            "eval.fv",
            "--trials",
            "trials.txt",
            "--report",
            "c.txt",
        ],
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mvplda(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(mvplda(d, &["train", "--kind", "plda"]).status.code(), Some(1));
    assert_eq!(mvplda(d, &["--help"]).status.code(), Some(0));
    assert_eq!(
        mvplda(d, &["train", "--kind", "plda", "--in", "missing.fv", "--out", "m"])
            .status
            .code(),
        Some(2)
    );

    fs::write(d.join("bad.fv"), "MVPLDA-FEATURES 1 2\n0 0 1.0\n").unwrap();
    let out = mvplda(d, &["train", "--kind", "plda", "--in", "bad.fv", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("line 2"));

    synth_into(d);
    ok(
        d,
        &[
            "train", "--kind", "jplda", "--iters", "1", "--nu", "1", "--nv", "1", "--in", "train.fv", "--out", "m.mvp",
        ],
    );
    let bad_priors = [
        "eval",
        "--model",
        "m.mvp",
        "--features",
        "eval.fv",
        "--trials",
        "trials.txt",
        "--priors",
        "0.5,0.6,0.1",
        "--report",
        "r",
    ];
    assert_eq!(mvplda(d, &bad_priors).status.code(), Some(1));

    // Negative variances in a model file are a data error.
    let model = fs::read_to_string(d.join("m.mvp")).unwrap();
    let (head, sigma) = model.split_once("SIGMA 20 1\n").unwrap();
    let negated: String = sigma
        .lines()
        .map(|l| {
            if l == "END" {
                "END\n".to_string()
            } else {
                "-1.0\n".to_string()
            }
        })
        .collect();
    fs::write(d.join("neg.mvp"), format!("{head}SIGMA 20 1\n{negated}")).unwrap();
    let scoring = [
        "score",
        "--model",
        "neg.mvp",
        "--features",
        "eval.fv",
        "--trials",
        "trials.txt",
        "--out",
        "s",
    ];
    assert_eq!(mvplda(d, &scoring).status.code(), Some(2));

    // Features too large to square overflow the variance estimate.
    fs::write(
        d.join("huge.fv"),
        "MVPLDA-FEATURES 1 1\n0 0 1e300\n0 1 -1e300\n1 0 1e300\n1 1 -1e300\n",
    )
    .unwrap();
    let out = mvplda(
        d,
        &[
            "train", "--kind", "plda", "--n", "1", "--in", "huge.fv", "--out", "h.mvp",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
