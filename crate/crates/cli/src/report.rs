//! Tracking-error counts against ground truth.

use std::fmt::Write as _;

use mbtrack::io::{PointStatus, TrackTable};
use mbtrack::segmentation::segmentation_error;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("track ids differ from ground truth ({missing} missing, {extra} unexpected)")]
    IdMismatch { missing: usize, extra: usize },
    #[error("tracks cover {tracks} frames but ground truth has {truth}")]
    FrameMismatch { tracks: usize, truth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCount {
    pub frame: usize,
    /// Points off by more than the tolerance, plus lost points.
    pub errors: usize,
    /// Points that were visible in the ground truth.
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub name: String,
    pub method: Option<String>,
    pub sigma2: Option<f64>,
    pub per_frame: Vec<FrameCount>,
    /// Mean of `per_frame[..].errors`.
    pub average: f64,
    pub segmentation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eps: f64,
    pub runs: Vec<EvalRun>,
}

/// Per-frame error counts for frames `1..`; frame 0 is the initialization.
///
/// A point is an error when its Euclidean drift exceeds `eps` (strictly), and in every
/// frame from the one where it was first reported lost. Points occluded in the ground
/// truth are skipped.
pub fn count_errors(
    tracks: &TrackTable,
    truth: &TrackTable,
    eps: f64,
) -> Result<Vec<FrameCount>, EvalError> {
    let order = align(tracks, truth)?;
    if tracks.n_frames() != truth.n_frames() {
        return Err(EvalError::FrameMismatch {
            tracks: tracks.n_frames(),
            truth: truth.n_frames(),
        });
    }
    let mut lost = vec![false; truth.n_tracks()];
    let mut out = Vec::new();
    for f in 0..truth.n_frames() {
        let (mut errors, mut evaluated) = (0, 0);
        for (k, &j) in order.iter().enumerate() {
            if tracks.status_at(f, j) == PointStatus::Lost {
                lost[k] = true;
            }
            if truth.status_at(f, k) == PointStatus::Occluded {
                continue;
            }
            evaluated += 1;
            let p = tracks.positions[f][j];
            let q = truth.positions[f][k];
            if lost[k] || (p[0] - q[0]).hypot(p[1] - q[1]) > eps {
                errors += 1;
            }
        }
        if f > 0 {
            out.push(FrameCount {
                frame: f,
                errors,
                evaluated,
            });
        }
    }
    Ok(out)
}

/// Index into `tracks` for each truth track.
fn align(tracks: &TrackTable, truth: &TrackTable) -> Result<Vec<usize>, EvalError> {
    let order: Vec<Option<usize>> = truth
        .ids
        .iter()
        .map(|id| tracks.ids.iter().position(|t| t == id))
        .collect();
    let missing = order.iter().filter(|o| o.is_none()).count();
    let extra = tracks
        .ids
        .iter()
        .filter(|id| !truth.ids.contains(id))
        .count();
    if missing > 0 || extra > 0 {
        return Err(EvalError::IdMismatch { missing, extra });
    }
    Ok(order
        .into_iter()
        .map(|o| o.expect("checked above"))
        .collect())
}

pub fn average(per_frame: &[FrameCount]) -> f64 {
    if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().map(|c| c.errors as f64).sum::<f64>() / per_frame.len() as f64
    }
}

pub fn evaluate(
    name: &str,
    tracks: &TrackTable,
    truth: &TrackTable,
    eps: f64,
    method: Option<String>,
    sigma2: Option<f64>,
) -> Result<EvalRun, EvalError> {
    let per_frame = count_errors(tracks, truth, eps)?;
    let segmentation_error = match (&tracks.labels, &truth.labels) {
        (Some(pred), Some(gt)) => {
            let order = align(tracks, truth)?;
            let pred: Vec<usize> = order.iter().map(|&j| pred[j]).collect();
            Some(segmentation_error(&pred, gt).expect("aligned label vectors"))
        }
        _ => None,
    };
    Ok(EvalRun {
        name: name.to_string(),
        method,
        sigma2,
        average: average(&per_frame),
        per_frame,
        segmentation_error,
    })
}

impl EvalReport {
    /// `run,frame,errors,evaluated` rows.
    pub fn per_frame_csv(&self) -> String {
        let mut out = String::from("run,frame,errors,evaluated\n");
        for (i, r) in self.runs.iter().enumerate() {
            for c in &r.per_frame {
                writeln!(out, "{i},{},{},{}", c.frame, c.errors, c.evaluated)
                    .expect("String write");
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "tracking errors (drift > {} px), averaged over frames",
            self.eps
        )
        .expect("String write");
        writeln!(
            out,
            "{:<28} {:<10} {:>8} {:>10} {:>10}",
            "run", "method", "sigma2", "avg", "seg err"
        )
        .expect("String write");
        for r in &self.runs {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v}"));
            writeln!(
                out,
                "{:<28} {:<10} {:>8} {:>10.3} {:>10}",
                r.name,
                r.method.as_deref().unwrap_or("-"),
                opt(r.sigma2),
                r.average,
                r.segmentation_error
                    .map_or("-".to_string(), |e| format!("{:.3}", e)),
            )
            .expect("String write");
        }
        for r in &self.runs {
            writeln!(out, "\n{}: errors per frame", r.name).expect("String write");
            let counts: Vec<String> = r.per_frame.iter().map(|c| c.errors.to_string()).collect();
            writeln!(out, "  {}", counts.join(" ")).expect("String write");
        }
        out
    }
}
