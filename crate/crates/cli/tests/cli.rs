use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use activemix::data::read_pnm;
use activemix::distill::pool_dataset;
use activemix::mixup::synthesize;
use activemix::RunDir;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_activemix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A teacher trained on the default blob task.
fn teacher(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("teacher.json");
    ok(&["train-teacher", "--epochs", "10", "--out", p(&path)]);
    path
}

fn distill(teacher: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "distill",
        "--local",
        p(teacher),
        "--out",
        p(out),
        "--n",
        "12",
        "--rounds",
        "2",
        "--k-per-round",
        "6",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let out = dir.path().join("run");
    let code = |args: &[&str]| run(args).status.code().unwrap();

    // Bad flag value or missing file: input error.
    assert_eq!(
        code(&[
            "distill",
            "--local",
            p(&t),
            "--out",
            p(&out),
            "--k-per-round",
            "0"
        ]),
        2
    );
    assert_eq!(
        code(&[
            "distill",
            "--local",
            "/nonexistent/model.json",
            "--out",
            p(&out)
        ]),
        2
    );

    // Unknown config field: input error.
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"distill": {"bogus": 1}}"#).unwrap();
    assert_eq!(
        code(&[
            "distill",
            "--local",
            p(&t),
            "--config",
            p(&cfg),
            "--out",
            p(&out)
        ]),
        2
    );

    // Corrupt model file: format error.
    let bad_model = dir.path().join("bad_model.json");
    fs::write(&bad_model, r#"{"format": "something-else"}"#).unwrap();
    assert_eq!(
        code(&["distill", "--local", p(&bad_model), "--out", p(&out)]),
        4
    );

    // Nobody listening: transport error.
    assert_eq!(
        code(&[
            "distill",
            "--remote",
            "http://127.0.0.1:9",
            "--timeout-secs",
            "1",
            "--out",
            p(&out)
        ]),
        3
    );

    // Resume without a checkpoint.
    assert_eq!(
        code(&["distill", "--local", p(&t), "--out", p(&out), "--resume"]),
        2
    );
}

#[test]
fn zero_rounds_writes_one_metrics_row() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let out = dir.path().join("run");
    ok(&[
        "distill",
        "--local",
        p(&t),
        "--out",
        p(&out),
        "--n",
        "9",
        "--rounds",
        "0",
    ]);
    let rows = RunDir::new(&out).read_metrics().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].round, rows[0].queries, rows[0].labeled), (0, 9, 9));
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"distill": {"n": 30, "rounds": 1, "k_per_round": 4, "seed": 5}}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&[
        "distill",
        "--local",
        p(&t),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--n",
        "8",
    ]);
    assert!(stdout.starts_with("config: "));
    let saved = RunDir::new(&out).read_config().unwrap();
    assert_eq!(
        (
            saved.distill.n,
            saved.distill.k_per_round,
            saved.distill.seed
        ),
        (8, 4, 5)
    );
    assert_eq!(
        RunDir::new(&out)
            .read_metrics()
            .unwrap()
            .last()
            .unwrap()
            .queries,
        12
    );
}

#[test]
fn dump_with_zero_count_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let run_dir = dir.path().join("run");
    distill(&t, &run_dir, &[]);
    let dump = dir.path().join("dump");
    ok(&[
        "dump-mixup",
        "--run",
        p(&run_dir),
        "--round",
        "1",
        "--count",
        "0",
        "--out",
        p(&dump),
    ]);
    assert!(!dump.exists());
}

#[test]
fn dumped_images_match_synthesis() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let run_dir = dir.path().join("run");
    distill(&t, &run_dir, &[]);
    let dump = dir.path().join("dump");
    ok(&[
        "dump-mixup",
        "--run",
        p(&run_dir),
        "--round",
        "2",
        "--count",
        "4",
        "--out",
        p(&dump),
    ]);

    let rd = RunDir::new(&run_dir);
    let cfg = rd.read_config().unwrap();
    let (x, _) = cfg.load_data().unwrap();
    let source = pool_dataset(&x, &cfg.distill).unwrap();
    let log = rd.read_selection(2).unwrap();
    let mut confidences = Vec::new();
    for rank in 0..4 {
        let img = dump.join(format!("round2_{rank:03}.pgm"));
        let note = fs::read_to_string(img.with_extension("txt")).unwrap();
        let field = |name: &str| {
            note.split_whitespace()
                .find_map(|f| f.strip_prefix(&format!("{name}=")))
                .unwrap()
                .to_string()
        };
        let pair = field("pair");
        let (i, j) = pair
            .trim_matches(|c| c == '(' || c == ')')
            .split_once(',')
            .unwrap();
        let (i, j): (usize, usize) = (i.parse().unwrap(), j.parse().unwrap());
        let entry = log
            .entries
            .iter()
            .find(|e| (e.pair.i(), e.pair.j()) == (i, j))
            .expect("dumped pair was selected");
        confidences.push(entry.confidence.unwrap());

        let expected = synthesize(source.image(i), source.image(j), entry.lambda).unwrap();
        let got = read_pnm(&img).unwrap();
        for (a, b) in got.pixels().iter().zip(expected.pixels()) {
            assert!((a - b).abs() <= 1.0 / 255.0, "pixel {a} vs {b}");
        }

        let top: Vec<(usize, f64)> = note
            .split_once("teacher_top3=")
            .unwrap()
            .1
            .split_whitespace()
            .map(|cp| {
                let (c, p) = cp.split_once(':').unwrap();
                (c.parse().unwrap(), p.parse().unwrap())
            })
            .collect();
        assert_eq!(top.len(), 3);
        assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(top.iter().map(|t| t.1).sum::<f64>() <= 1.0 + 1e-3);
        assert_eq!(top[0].0, entry.teacher_probs.argmax());
    }
    assert!(confidences.windows(2).all(|w| w[0] <= w[1]));
    assert!(dump.join("round2_grid.pgm").exists());
}

#[test]
fn teacher_training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&[
        "train-teacher",
        "--epochs",
        "3",
        "--seed",
        "4",
        "--out",
        p(&a),
    ]);
    ok(&[
        "train-teacher",
        "--epochs",
        "3",
        "--seed",
        "4",
        "--out",
        p(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn resume_from_saved_config() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let a = dir.path().join("a");
    distill(&t, &a, &["--selector", "vanilla_al"]);
    // The run is complete; resuming reads its config.json and changes nothing.
    let before = fs::read(RunDir::new(&a).metrics()).unwrap();
    ok(&["distill", "--local", p(&t), "--out", p(&a), "--resume"]);
    assert_eq!(fs::read(RunDir::new(&a).metrics()).unwrap(), before);
}

#[test]
fn evaluate_reports_accuracy() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let stdout = ok(&["evaluate", "--model", p(&t)]);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn dump_of_missing_round_is_input_error() {
    let dir = TempDir::new().unwrap();
    let t = teacher(&dir);
    let run_dir = dir.path().join("run");
    distill(&t, &run_dir, &[]);
    let out = run(&[
        "dump-mixup",
        "--run",
        p(&run_dir),
        "--round",
        "7",
        "--out",
        p(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_blob_teacher_is_accurate() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t.json");
    let stdout = ok(&["train-teacher", "--out", p(&path)]);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.99, "{acc}");
}
