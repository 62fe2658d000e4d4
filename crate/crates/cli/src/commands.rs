//! The five subcommands, as library functions over an effective [`RunConfig`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use mbtrack::imaging::{add_gaussian_noise, frame_seed, GrayImage, ImagingError};
use mbtrack::io::{
    atomic_write, load_sequence, read_labels, write_frames, write_json, write_sequence, IoError,
    PointStatus, SequenceMeta, TrackTable, FEATURES_FILE, FUNDAMENTALS_FILE, LABELS_FILE,
    META_FILE, TRUTH_FILE,
};
use mbtrack::segmentation::{segment, segmentation_error, two_step_segment, SegmentationError};
use mbtrack::synthlab::{generate, SynthError};
use mbtrack::tracker::{track_sequence_with, Method, SequenceTracks, TrackError, TrackerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, RUN_CONFIG_FILE};
use crate::overlay::write_overlays;
use crate::report::{evaluate, EvalError, EvalReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        CliError::Io(IoError::Imaging(e))
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Input(_) | CliError::Eval(_) | CliError::Segmentation(_) => "input",
            CliError::Synth(SynthError::UnknownPreset(_)) => "input",
            CliError::Track(_) | CliError::Synth(_) => "compute",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "input" => 5,
            _ => 6,
        }
    }

    /// `mbtrack: error[kind]: message` on one line.
    pub fn line(&self) -> String {
        let mut msg = self.to_string();
        let mut source = std::error::Error::source(self);
        while let Some(s) = source {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(": ");
                msg.push_str(&text);
            }
            source = s.source();
        }
        let msg: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("mbtrack: error[{}]: {msg}", self.kind())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn write_run_config(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    atomic_write(out.join(RUN_CONFIG_FILE), cfg.dump().as_bytes())?;
    Ok(())
}

fn noisy(frames: &[GrayImage], sigma2: f64, seed: u64) -> Result<Vec<GrayImage>, CliError> {
    if sigma2 == 0.0 {
        return Ok(frames.to_vec());
    }
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| Ok(add_gaussian_noise(f, sigma2, frame_seed(seed, k))?))
        .collect()
}

/// Renders a preset into a sequence directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    let out = required(&cfg.out, "output directory (--out)")?;
    let seq = generate(cfg.preset, cfg.seed)?;
    let frames = noisy(&seq.frames, cfg.sigma2, cfg.seed)?;
    let mut meta = SequenceMeta::from_sequence(&seq);
    if cfg.sigma2 > 0.0 {
        meta.sigma2 = cfg.sigma2;
        meta.noise_seed = Some(cfg.seed);
    }
    write_sequence(out, &seq, &frames, &meta)?;
    write_run_config(out, cfg)?;
    Ok(format!(
        "wrote {} frames, {} features on {} bodies to {}\n",
        seq.n_frames(),
        seq.n_features(),
        seq.n_bodies(),
        out.display()
    ))
}

/// Copies a sequence directory with Gaussian noise added to every frame.
pub fn cmd_noise(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    let input = required(&cfg.input, "input sequence directory")?;
    let out = required(&cfg.out, "output directory (--out)")?;
    if input == out {
        return Err(CliError::Usage(
            "output directory must differ from the input".into(),
        ));
    }
    let seq = load_sequence(input)?;
    write_frames(out, &noisy(&seq.frames, cfg.sigma2, cfg.seed)?)?;
    for name in [TRUTH_FILE, FEATURES_FILE, LABELS_FILE, FUNDAMENTALS_FILE] {
        let src = input.join(name);
        if src.is_file() {
            let bytes = std::fs::read(&src).map_err(|source| IoError::Io {
                path: src.display().to_string(),
                source,
            })?;
            atomic_write(out.join(name), &bytes)?;
        }
    }
    if let Some(mut meta) = seq.meta {
        meta.sigma2 += cfg.sigma2;
        meta.noise_seed = Some(cfg.seed);
        write_json(out.join(META_FILE), &meta)?;
    }
    write_run_config(out, cfg)?;
    Ok(format!(
        "wrote {} frames with noise variance {} to {}\n",
        seq.frames.len(),
        cfg.sigma2,
        out.display()
    ))
}

struct Tracked {
    initial: TrackTable,
    tracks: SequenceTracks,
    frames: Vec<GrayImage>,
}

fn run_tracker(cfg: &RunConfig, tcfg: &TrackerConfig) -> Result<Tracked, CliError> {
    let input = required(&cfg.input, "input sequence directory")?;
    let features_path = cfg
        .features
        .clone()
        .unwrap_or_else(|| input.join(FEATURES_FILE));
    if !features_path.is_file() {
        return Err(CliError::Io(IoError::Io {
            path: features_path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "initial features not found"),
        }));
    }
    let initial = TrackTable::read(&features_path)?;
    if initial.n_tracks() == 0 {
        return Err(CliError::Input("no initial features".into()));
    }
    let seq = load_sequence(input)?;
    let frames = noisy(&seq.frames, cfg.sigma2, cfg.seed)?;
    let tracks = track_sequence_with(&frames, &initial.positions[0], tcfg, |pair, res| {
        let lost = res.status.iter().filter(|s| s.is_lost()).count();
        info!("pair {pair}: {} features, {lost} lost", res.u.len());
    })?;
    Ok(Tracked {
        initial,
        tracks,
        frames,
    })
}

fn track_table(t: &Tracked) -> TrackTable {
    TrackTable {
        ids: t.initial.ids.clone(),
        positions: t.tracks.positions.clone(),
        labels: None,
        status: Some(
            t.tracks
                .status
                .iter()
                .map(|row| row.iter().map(|&s| PointStatus::from(s)).collect())
                .collect(),
        ),
    }
}

fn diagnostics_csv(tracks: &SequenceTracks) -> String {
    let mut out = String::from("pair,iteration,lifting,self_expression,data,objective,rho\n");
    for (pair, r) in tracks.results.iter().enumerate() {
        for h in &r.admm_history {
            writeln!(
                out,
                "{pair},{},{},{},{},{},{}",
                h.iteration,
                h.residuals.lifting,
                h.residuals.self_expression,
                h.residuals.data,
                h.objective,
                h.rho
            )
            .expect("String write");
        }
    }
    out
}

fn levels_csv(tracks: &SequenceTracks) -> String {
    let mut out = String::from(
        "pair,level,taylor_iterations,converged,admm_solves,admm_iterations,admm_converged\n",
    );
    for (pair, r) in tracks.results.iter().enumerate() {
        for l in &r.levels {
            writeln!(
                out,
                "{pair},{},{},{},{},{},{}",
                l.level,
                l.taylor_iterations,
                l.converged,
                l.admm_iterations.len(),
                l.admm_iterations.iter().sum::<usize>(),
                l.admm_converged.iter().all(|&c| c)
            )
            .expect("String write");
        }
    }
    out
}

/// Tracks the initial features through a sequence directory.
pub fn cmd_track(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    let tcfg = cfg.tracker()?;
    let out = required(&cfg.out, "output directory (--out)")?.to_path_buf();
    let t = run_tracker(cfg, &tcfg)?;
    let table = track_table(&t);
    table.write(out.join("tracks.csv"))?;
    atomic_write(
        out.join("diagnostics.csv"),
        diagnostics_csv(&t.tracks).as_bytes(),
    )?;
    atomic_write(out.join("levels.csv"), levels_csv(&t.tracks).as_bytes())?;
    if cfg.overlays {
        write_overlays(&out.join("overlays"), &t.frames, &t.tracks.positions)?;
    }
    write_run_config(&out, cfg)?;
    let last = t.tracks.status.last().expect("at least two frames");
    let lost = last.iter().filter(|s| s.is_lost()).count();
    Ok(format!(
        "{}: tracked {} features over {} frames, {lost} lost\n",
        tcfg.method,
        table.n_tracks(),
        table.n_frames()
    ))
}

/// Evaluates one or more track files against ground truth.
pub fn cmd_eval(cfg: &RunConfig, tracks: &[PathBuf]) -> Result<(String, EvalReport), CliError> {
    cfg.validate()?;
    if tracks.is_empty() {
        return Err(CliError::Usage("no track files given".into()));
    }
    let truth_path = match &cfg.truth {
        Some(p) => p.clone(),
        None => cfg
            .input
            .as_ref()
            .map(|d| d.join(TRUTH_FILE))
            .ok_or_else(|| CliError::Usage("missing ground truth (--truth)".into()))?,
    };
    let truth = TrackTable::read(&truth_path)?;
    let mut runs = Vec::new();
    for path in tracks {
        let table = TrackTable::read(path)?;
        let side = path.parent().and_then(RunConfig::sidecar);
        let run = evaluate(
            &path.display().to_string(),
            &table,
            &truth,
            cfg.eps,
            side.as_ref().map(|c| c.method.name().to_string()),
            side.as_ref().map(|c| c.sigma2),
        )?;
        runs.push(run);
    }
    let report = EvalReport { eps: cfg.eps, runs };
    if let Some(out) = &cfg.out {
        write_json(out.join("report.json"), &report)?;
        atomic_write(out.join("per_frame.csv"), report.per_frame_csv().as_bytes())?;
        atomic_write(out.join("report.txt"), report.table().as_bytes())?;
    }
    Ok((report.table(), report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSegmentation {
    pub pair: usize,
    pub features: usize,
    pub error: Option<f64>,
    pub baseline_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub k: usize,
    pub pairs: Vec<PairSegmentation>,
    pub average_error: Option<f64>,
    pub baseline_average_error: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Multibody tracking with per-pair clustering of the coefficient matrix.
pub fn cmd_segment(cfg: &RunConfig) -> Result<(String, SegmentReport), CliError> {
    cfg.validate()?;
    let mut tcfg = cfg.tracker()?;
    tcfg.method = Method::Multibody;
    let out = required(&cfg.out, "output directory (--out)")?.to_path_buf();
    let input = required(&cfg.input, "input sequence directory")?;
    let t = run_tracker(cfg, &tcfg)?;
    let truth_labels =
        {
            let p = input.join(LABELS_FILE);
            if p.is_file() {
                let map = read_labels(&p)?;
                let labels: Option<Vec<usize>> = t
                    .initial
                    .ids
                    .iter()
                    .map(|id| map.get(id).copied())
                    .collect();
                Some(labels.ok_or_else(|| {
                    CliError::Input("labels.csv does not cover every track".into())
                })?)
            } else {
                None
            }
        };
    let baseline = if cfg.baseline {
        let mut kcfg = tcfg;
        kcfg.method = Method::Klt;
        Some(run_tracker(cfg, &kcfg)?)
    } else {
        None
    };
    let mut csv = String::from("frame,track_id,label\n");
    let mut pairs = Vec::new();
    for (pair, res) in t.tracks.results.iter().enumerate() {
        let c = res
            .c
            .as_ref()
            .ok_or_else(|| CliError::Input(format!("pair {pair}: no coefficients")))?;
        let idx = &res.c_index;
        if cfg.k > idx.len() {
            return Err(CliError::Segmentation(SegmentationError::BadClusterCount {
                k: cfg.k,
                n: idx.len(),
            }));
        }
        let truth: Option<Vec<usize>> = truth_labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        let seg = segment(c, cfg.k, cfg.seed, truth.as_deref())?;
        for (&i, l) in idx.iter().zip(&seg.labels) {
            writeln!(csv, "{pair},{},{l}", t.initial.ids[i]).expect("String write");
        }
        let baseline_error = match (&baseline, &truth) {
            (Some(b), Some(truth)) => {
                let pts: Vec<[f64; 2]> = idx.iter().map(|&i| b.tracks.positions[pair][i]).collect();
                let u: Vec<[f64; 2]> = idx.iter().map(|&i| b.tracks.results[pair].u[i]).collect();
                let labels = two_step_segment(&pts, &u, cfg.k, cfg.lambda, &cfg.admm(), cfg.seed)?;
                Some(segmentation_error(&labels, truth)?)
            }
            _ => None,
        };
        pairs.push(PairSegmentation {
            pair,
            features: idx.len(),
            error: seg.error_rate,
            baseline_error,
        });
    }
    let report = SegmentReport {
        k: cfg.k,
        average_error: mean(pairs.iter().map(|p| p.error)),
        baseline_average_error: mean(pairs.iter().map(|p| p.baseline_error)),
        pairs,
    };
    atomic_write(out.join("segmentation.csv"), csv.as_bytes())?;
    track_table(&t).write(out.join("tracks.csv"))?;
    write_json(out.join("segment.json"), &report)?;
    write_run_config(&out, cfg)?;
    let mut text = format!(
        "{:>5} {:>9} {:>10} {:>10}\n",
        "pair", "features", "error", "baseline"
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for p in &report.pairs {
        writeln!(
            text,
            "{:>5} {:>9} {:>10} {:>10}",
            p.pair,
            p.features,
            opt(p.error),
            opt(p.baseline_error)
        )
        .expect("String write");
    }
    writeln!(
        text,
        "{:>5} {:>9} {:>10} {:>10}",
        "mean",
        "",
        opt(report.average_error),
        opt(report.baseline_average_error)
    )
    .expect("String write");
    Ok((text, report))
}
