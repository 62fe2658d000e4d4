use std::path::Path;
use std::process::{Command, Output};

use mbtrack::io::{load_sequence, read_json, SequenceMeta, TrackTable};
use mbtrack_cli::commands::SegmentReport;
use mbtrack_cli::report::EvalReport;
use tempfile::TempDir;

fn mbtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mbtrack(args);
    assert!(
        out.status.success(),
        "mbtrack {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn fails_with(args: &[&str], code: i32, kind: &str) {
    let out = mbtrack(args);
    assert_eq!(out.status.code(), Some(code), "mbtrack {}", args.join(" "));
    let err = String::from_utf8(out.stderr).expect("utf-8 output");
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with(&format!("mbtrack: error[{kind}]: ")),
        "{err}"
    );
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn synth(dir: &Path, preset: &str, seed: &str) {
    ok(&["synth", "--preset", preset, "--seed", seed, "--out", s(dir)]);
}

/// Writes `features.csv` with `per_body` tracks from each body of the sequence in `dir`.
fn small_features(dir: &Path, per_body: [usize; 2]) -> std::path::PathBuf {
    let seq = load_sequence(dir).unwrap();
    let truth = seq.truth.unwrap();
    let labels = seq.labels.unwrap();
    let mut keep = Vec::new();
    for (body, &count) in per_body.iter().enumerate() {
        keep.extend(
            (0..truth.n_tracks())
                .filter(|&k| labels[&truth.ids[k]] == body)
                .take(count),
        );
    }
    let table = TrackTable {
        ids: keep.iter().map(|&k| truth.ids[k]).collect(),
        positions: vec![keep.iter().map(|&k| truth.positions[0][k]).collect()],
        labels: None,
        status: None,
    };
    let path = dir.join("small.csv");
    table.write(&path).unwrap();
    path
}

#[test]
fn synth_twice_gives_identical_directories() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("a2"));
    synth(&a, "two-body", "1");
    synth(&b, "two-body", "1");
    let names = |d: &Path| {
        let mut v: Vec<_> = walkdir::WalkDir::new(d)
            .into_iter()
            .map(|e| e.unwrap())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.path().strip_prefix(d).unwrap().to_path_buf())
            .collect();
        v.sort();
        v
    };
    assert_eq!(names(&a), names(&b));
    for rel in names(&a) {
        if rel.ends_with("run.cfg") {
            continue;
        }
        assert_eq!(
            std::fs::read(a.join(&rel)).unwrap(),
            std::fs::read(b.join(&rel)).unwrap(),
            "{rel:?}"
        );
    }
}

#[test]
fn noise_has_the_requested_variance() {
    let tmp = TempDir::new().unwrap();
    let (clean, noisy) = (tmp.path().join("clean"), tmp.path().join("noisy"));
    synth(&clean, "static", "2");
    ok(&[
        "noise",
        s(&clean),
        "--sigma2",
        "0.04",
        "--seed",
        "5",
        "--out",
        s(&noisy),
    ]);
    let a = load_sequence(&clean).unwrap().frames;
    let b = load_sequence(&noisy).unwrap().frames;
    // clamping to [0, 1] only touches |noise| > 0.3 here, beyond the median of |noise|,
    // so the median absolute difference still gives the pre-clamp spread
    let mut abs: Vec<f64> = Vec::new();
    for (fa, fb) in a.iter().zip(&b) {
        for (x, y) in fa.data().iter().zip(fb.data()) {
            if (0.3..=0.7).contains(x) {
                abs.push((y - x).abs());
            }
        }
    }
    assert!(abs.len() > 10_000);
    abs.sort_by(f64::total_cmp);
    let sigma = abs[abs.len() / 2] / 0.674_489_750_196_081_7;
    assert!(
        (sigma * sigma - 0.04).abs() < 0.002,
        "variance {}",
        sigma * sigma
    );
    let meta: SequenceMeta = read_json(noisy.join("meta.json")).unwrap();
    assert_eq!(meta.sigma2, 0.04);
    assert_eq!(meta.noise_seed, Some(5));
}

#[test]
fn checkerboard_metadata_marks_repetitive_texture() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "checkerboard", "1");
    let meta: SequenceMeta = read_json(tmp.path().join("meta.json")).unwrap();
    assert!(meta.repetitive);
    synth(&tmp.path().join("b"), "two-body", "1");
    let meta: SequenceMeta = read_json(tmp.path().join("b/meta.json")).unwrap();
    assert!(!meta.repetitive);
}

#[test]
fn track_writes_one_row_per_feature_and_frame() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "two-body", "3");
    let features = small_features(&seq, [6, 6]);
    let mut tables = Vec::new();
    for method in ["multibody", "klt"] {
        let out = tmp.path().join(method);
        ok(&[
            "track",
            s(&seq),
            "--features",
            s(&features),
            "--method",
            method,
            "--out",
            s(&out),
        ]);
        let text = std::fs::read_to_string(out.join("tracks.csv")).unwrap();
        assert!(text.starts_with("frame,track_id,x,y,status\n"), "{text}");
        let frames = load_sequence(&seq).unwrap().frames.len();
        assert_eq!(text.lines().count(), 1 + 12 * frames);
        assert!(out.join("diagnostics.csv").is_file());
        tables.push(TrackTable::read(out.join("tracks.csv")).unwrap());
    }
    assert_ne!(tables[0].positions, tables[1].positions);
    assert_eq!(tables[0].positions[0], tables[1].positions[0]);
}

fn write_truth(dir: &Path) -> (std::path::PathBuf, TrackTable) {
    let truth = TrackTable::new(vec![
        vec![[10.0, 10.0], [20.0, 20.0], [30.0, 30.0]],
        vec![[11.0, 10.0], [21.0, 20.0], [31.0, 30.0]],
        vec![[12.0, 10.0], [22.0, 20.0], [32.0, 30.0]],
    ]);
    let path = dir.join("truth.csv");
    truth.write(&path).unwrap();
    (path, truth)
}

fn eval_with(dir: &Path, name: &str, tracks: &TrackTable, truth: &Path) -> EvalReport {
    let run = dir.join(name);
    std::fs::create_dir_all(&run).unwrap();
    let path = run.join("tracks.csv");
    tracks.write(&path).unwrap();
    let out = dir.join(format!("{name}-report"));
    ok(&[
        "eval",
        s(&path),
        "--truth",
        s(truth),
        "--eps",
        "5",
        "--out",
        s(&out),
    ]);
    read_json(out.join("report.json")).unwrap()
}

#[test]
fn eval_counts_follow_the_threshold() {
    let tmp = TempDir::new().unwrap();
    let (truth_path, truth) = write_truth(tmp.path());

    let report = eval_with(tmp.path(), "same", &truth, &truth_path);
    assert!(report.runs[0].per_frame.iter().all(|c| c.errors == 0));

    let mut off = truth.clone();
    for row in &mut off.positions {
        row[1][0] += 6.0;
    }
    let report = eval_with(tmp.path(), "six", &off, &truth_path);
    assert!(report.runs[0].per_frame.iter().all(|c| c.errors == 1));
    assert_eq!(report.runs[0].average, 1.0);

    let mut edge = truth.clone();
    for row in &mut edge.positions {
        row[2][1] -= 5.0;
    }
    let report = eval_with(tmp.path(), "edge", &edge, &truth_path);
    assert!(report.runs[0].per_frame.iter().all(|c| c.errors == 0));
}

#[test]
fn eval_average_matches_per_frame_csv() {
    let tmp = TempDir::new().unwrap();
    let (truth_path, truth) = write_truth(tmp.path());
    let mut t = truth.clone();
    t.positions[2][0][1] += 7.0;
    let report = eval_with(tmp.path(), "run", &t, &truth_path);
    let csv = std::fs::read_to_string(tmp.path().join("run-report/per_frame.csv")).unwrap();
    let counts: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(
        counts.iter().sum::<f64>() / counts.len() as f64,
        report.runs[0].average
    );
}

#[test]
fn segment_with_one_cluster_reports_minority_fraction() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "two-body", "2");
    let features = small_features(&seq, [8, 4]);
    let out = tmp.path().join("seg");
    let cfg = tmp.path().join("seg.cfg");
    std::fs::write(&cfg, format!("features = {}\nk = 1\n", s(&features))).unwrap();
    ok(&["segment", s(&seq), "--config", s(&cfg), "--out", s(&out)]);
    let report: SegmentReport = read_json(out.join("segment.json")).unwrap();
    assert_eq!(report.k, 1);
    for p in &report.pairs {
        assert!((p.error.unwrap() - 4.0 / 12.0).abs() < 1e-12);
    }
    let csv = std::fs::read_to_string(out.join("segmentation.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn segment_rejects_more_clusters_than_features() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "two-body", "2");
    let features = small_features(&seq, [5, 5]);
    let cfg = tmp.path().join("seg.cfg");
    std::fs::write(&cfg, format!("features = {}\n", s(&features))).unwrap();
    let out = tmp.path().join("seg");
    fails_with(
        &[
            "segment",
            s(&seq),
            "--config",
            s(&cfg),
            "--k",
            "11",
            "--out",
            s(&out),
        ],
        5,
        "input",
    );
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "two-body", "3");
    let features = small_features(&seq, [3, 3]);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# klt with three levels\nmethod = klt\nlevels = 3\npatch = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "track",
        s(&seq),
        "--features",
        s(&features),
        "--config",
        s(&cfg),
        "--levels",
        "2",
        "--out",
        s(&out),
    ]);
    let used = std::fs::read_to_string(out.join("run.cfg")).unwrap();
    assert!(used.contains("method = klt\n"));
    assert!(used.contains("levels = 2\n"));
    assert!(used.contains("patch = 9\n"));
}

#[test]
fn errors_are_one_line_with_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    fails_with(&["track", "--no-such-flag"], 2, "usage");
    fails_with(
        &[
            "synth",
            "--preset",
            "two-body",
            "--levels",
            "many",
            "--out",
            s(&out),
        ],
        2,
        "usage",
    );
    fails_with(&["synth", "--preset", "two-body"], 2, "usage");

    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "speed = 3\n").unwrap();
    fails_with(
        &["synth", "--config", s(&bad), "--out", s(&out)],
        3,
        "config",
    );
    std::fs::write(&bad, "patch = 8\n").unwrap();
    fails_with(
        &["synth", "--config", s(&bad), "--out", s(&out)],
        3,
        "config",
    );

    let missing = tmp.path().join("missing");
    fails_with(
        &["synth", "--config", s(&missing), "--out", s(&out)],
        4,
        "io",
    );
    fails_with(&["track", s(&missing), "--out", s(&out)], 4, "io");

    fails_with(
        &["synth", "--preset", "spiral", "--out", s(&out)],
        2,
        "usage",
    );
    std::fs::write(&bad, "preset = spiral\n").unwrap();
    fails_with(
        &["synth", "--config", s(&bad), "--out", s(&out)],
        3,
        "config",
    );
    let (truth_path, truth) = write_truth(tmp.path());
    let mut other = truth.clone();
    other.ids = vec![0, 1, 7];
    let path = tmp.path().join("other.csv");
    other.write(&path).unwrap();
    fails_with(&["eval", s(&path), "--truth", s(&truth_path)], 5, "input");
    let mut short = truth;
    short.positions.pop();
    short.write(&path).unwrap();
    fails_with(&["eval", s(&path), "--truth", s(&truth_path)], 5, "input");
}

#[test]
fn help_exits_cleanly() {
    let out = mbtrack(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("segment"));
}
