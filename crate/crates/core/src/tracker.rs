//! Pyramidal tracking with repeated re-linearization.
//!
//! Three solvers share the outer loop:
//! - `klt`: Gauss-Newton on the squared residual, one 2x2 system per feature;
//! - `l1klt`: the ADMM on the L1 data term alone, in pixel units;
//! - `multibody`: the full ADMM with the epipolar self-expressive regularizer, in
//!   Hartley-normalized units shared by all pyramid levels.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{
    run_admm, AdmmError, AdmmParams, BlockSolve, IterationRecord, Problem, Regularizer,
};
use crate::epipolar::{EpipolarEmbedding, EpipolarError, Normalization};
use crate::imaging::{gradient, GrayImage, ImagingError, Pyramid};
use crate::linearize::{linearize, FeatureSet, FramePair, LinearizeError, LinearizedModel};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("frames differ in size: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("initial displacement has length {got}, expected {expected}")]
    DisplacementLength { expected: usize, got: usize },
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Klt,
    L1Klt,
    Multibody,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Klt, Method::L1Klt, Method::Multibody];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Klt => "klt",
            Method::L1Klt => "l1klt",
            Method::Multibody => "multibody",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected klt, l1klt or multibody)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub method: Method,
    pub levels: usize,
    /// Re-linearizations per pyramid level.
    pub max_taylor: usize,
    /// Largest per-feature displacement change (level pixels) that counts as converged.
    pub eps_outer: f64,
    /// Patch half-size; the patch is `(2 half + 1)^2`.
    pub half: usize,
    pub admm: AdmmParams,
    /// Only read by the multibody method; `Disabled` gives the ablation without the prior.
    pub regularizer: Regularizer,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            method: Method::Multibody,
            levels: 4,
            max_taylor: 10,
            eps_outer: 0.01,
            half: 3,
            admm: AdmmParams::default(),
            regularizer: Regularizer::SelfExpressive,
        }
    }
}

impl TrackerConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// 13x13 patches.
    pub fn large_patch(method: Method) -> Self {
        Self {
            method,
            half: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        if self.levels == 0 {
            return Err(TrackError::InvalidConfig(
                "levels must be at least 1".into(),
            ));
        }
        if self.max_taylor == 0 {
            return Err(TrackError::InvalidConfig(
                "max_taylor must be at least 1".into(),
            ));
        }
        if self.eps_outer.is_nan() || self.eps_outer <= 0.0 {
            return Err(TrackError::InvalidConfig(
                "eps_outer must be positive".into(),
            ));
        }
        if self.half == 0 {
            return Err(TrackError::InvalidConfig(
                "patch half-size must be at least 1".into(),
            ));
        }
        self.admm.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureStatus {
    Tracked,
    Lost,
    /// Tracked, but the last local system was singular (aperture or textureless patch).
    Degenerate,
}

impl FeatureStatus {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureStatus::Tracked => "tracked",
            FeatureStatus::Lost => "lost",
            FeatureStatus::Degenerate => "degenerate",
        }
    }

    pub fn is_lost(&self) -> bool {
        *self == FeatureStatus::Lost
    }
}

impl FromStr for FeatureStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tracked" => Ok(FeatureStatus::Tracked),
            "lost" => Ok(FeatureStatus::Lost),
            "degenerate" => Ok(FeatureStatus::Degenerate),
            _ => Err(format!("unknown status '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub taylor_iterations: usize,
    pub converged: bool,
    /// ADMM sweeps per re-linearization (empty for klt).
    pub admm_iterations: Vec<usize>,
    pub admm_converged: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Displacement per feature in pixels.
    pub u: Vec<[f64; 2]>,
    pub status: Vec<FeatureStatus>,
    /// Coefficients of the last ADMM solve at the finest level (multibody only).
    pub c: Option<DMatrix<f64>>,
    /// Feature indices of the rows and columns of `c`.
    pub c_index: Vec<usize>,
    pub levels: Vec<LevelDiagnostics>,
    /// Per-iteration record of the last ADMM solve.
    pub admm_history: Vec<IterationRecord>,
}

impl TrackResult {
    pub fn displacement_vector(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.u.len(), self.u.iter().flat_map(|d| *d))
    }
}

/// Gauss-Newton step for the squared data term: `u_i = H_i^-1 sum_j tau_ij grad_ij`.
/// Features whose `H_i` is numerically singular keep their expansion point.
pub fn klt_baseline_solve(model: &LinearizedModel) -> (DVector<f64>, Vec<BlockSolve>) {
    let n = model.len();
    let blocks = model.normal_blocks();
    let mut u = model.u0().clone();
    let mut status = Vec::with_capacity(n);
    for (i, h) in blocks.iter().enumerate() {
        let mut rhs = Vector2::zeros();
        for j in 0..model.patch_len() {
            let g = model.grad(i, j);
            let t = model.tau(i, j);
            rhs[0] += t * g[0];
            rhs[1] += t * g[1];
        }
        let eig = h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 || lo <= 1e-9 * hi {
            status.push(BlockSolve::Degenerate);
            continue;
        }
        let sol = h.cholesky().expect("positive definite block").solve(&rhs);
        u[2 * i] = sol[0];
        u[2 * i + 1] = sol[1];
        status.push(BlockSolve::Regular);
    }
    (u, status)
}

struct Level {
    template: GrayImage,
    current: GrayImage,
}

fn build_levels(
    template: &GrayImage,
    current: &GrayImage,
    cfg: &TrackerConfig,
) -> Result<Vec<Level>, TrackError> {
    let min_side = 2 * (2 * cfg.half + 1);
    let pt = Pyramid::build(template, cfg.levels, min_side)?;
    let pc = Pyramid::build(current, cfg.levels, min_side)?;
    Ok(pt
        .levels()
        .iter()
        .zip(pc.levels())
        .map(|(t, c)| Level {
            template: t.clone(),
            current: c.clone(),
        })
        .collect())
}

/// Scale from level-`level` pixel displacements to the units the solver works in.
fn solver_scale(cfg: &TrackerConfig, norm: &Normalization, level: usize) -> f64 {
    match cfg.method {
        Method::Multibody => norm.scale * (1u64 << level) as f64,
        Method::Klt | Method::L1Klt => 1.0,
    }
}

struct Solve {
    u: DVector<f64>,
    degenerate: Vec<bool>,
    c: Option<DMatrix<f64>>,
    iterations: Option<usize>,
    converged: Option<bool>,
    history: Vec<IterationRecord>,
}

fn solve_linearized(
    model: &LinearizedModel,
    embedding: &EpipolarEmbedding,
    cfg: &TrackerConfig,
    scale: f64,
) -> Result<Solve, TrackError> {
    match cfg.method {
        Method::Klt => {
            let (u, status) = klt_baseline_solve(model);
            Ok(Solve {
                u,
                degenerate: status
                    .iter()
                    .map(|s| *s == BlockSolve::Degenerate)
                    .collect(),
                c: None,
                iterations: None,
                converged: None,
                history: Vec::new(),
            })
        }
        Method::L1Klt | Method::Multibody => {
            let regularizer = match cfg.method {
                Method::Multibody => cfg.regularizer,
                _ => Regularizer::Disabled,
            };
            let scaled = model.rescaled(scale);
            let problem = Problem::new(&scaled, embedding)?;
            let out = run_admm(&problem, &cfg.admm, scaled.u0(), regularizer)?;
            let c = (regularizer == Regularizer::SelfExpressive).then(|| out.state.c.clone());
            Ok(Solve {
                u: &out.state.u / scale,
                degenerate: out.degenerate,
                c,
                iterations: Some(out.iterations),
                converged: Some(out.converged),
                history: out.history,
            })
        }
    }
}

/// Tracks `features` (template positions) from `template` into `current`.
/// `u0` is the initial displacement in pixels; features flagged in `skip` are reported
/// lost without being processed.
pub fn track_frame(
    template: &GrayImage,
    current: &GrayImage,
    features: &FeatureSet,
    cfg: &TrackerConfig,
    u0: &DVector<f64>,
    skip: &[bool],
) -> Result<TrackResult, TrackError> {
    cfg.validate()?;
    if template.width() != current.width() || template.height() != current.height() {
        return Err(TrackError::SizeMismatch(
            template.width(),
            template.height(),
            current.width(),
            current.height(),
        ));
    }
    let n = features.len();
    if u0.len() != 2 * n {
        return Err(TrackError::DisplacementLength {
            expected: 2 * n,
            got: u0.len(),
        });
    }
    let mut status: Vec<FeatureStatus> = (0..n)
        .map(|i| {
            if skip.get(i).copied().unwrap_or(false) {
                FeatureStatus::Lost
            } else {
                FeatureStatus::Tracked
            }
        })
        .collect();
    let mut active: Vec<usize> = (0..n).filter(|&i| !status[i].is_lost()).collect();
    let mut u_px = u0.clone();
    let mut result = TrackResult {
        u: vec![[0.0; 2]; n],
        status: Vec::new(),
        c: None,
        c_index: Vec::new(),
        levels: Vec::new(),
        admm_history: Vec::new(),
    };
    if active.is_empty() {
        warn!("no active features to track");
        result.u = (0..n).map(|i| [u_px[2 * i], u_px[2 * i + 1]]).collect();
        result.status = status;
        return Ok(result);
    }

    let levels = build_levels(template, current, cfg)?;
    let pts: Vec<[f64; 2]> = active.iter().map(|&i| features.centers()[i]).collect();
    let (full_embedding, norm) = match cfg.method {
        Method::Multibody => {
            let norm = Normalization::fit(&pts)
                .or_else(|_| Ok::<_, TrackError>(Normalization::identity()))?;
            let npts: Vec<[f64; 2]> = pts.iter().map(|p| norm.apply(*p)).collect();
            (EpipolarEmbedding::new(npts), norm)
        }
        _ => (EpipolarEmbedding::new(pts), Normalization::identity()),
    };
    // embedding columns follow `active` as it was when the embedding was built
    let mut emb_index: Vec<usize> = active.clone();
    let mut embedding = full_embedding;
    let mut degenerate = vec![false; n];

    for level in (0..levels.len()).rev() {
        let factor = (1u64 << level) as f64;
        let lv = &levels[level];
        let grad = gradient(&lv.current)?;
        let pair = FramePair::new(&lv.template, &lv.current, &grad)?;
        let scale = solver_scale(cfg, &norm, level);
        let mut diag = LevelDiagnostics {
            level,
            taylor_iterations: 0,
            converged: false,
            admm_iterations: Vec::new(),
            admm_converged: Vec::new(),
        };
        for _ in 0..cfg.max_taylor {
            diag.taylor_iterations += 1;
            let fs = features.subset(&active).scaled(1.0 / factor);
            let u_level = DVector::from_iterator(
                2 * active.len(),
                active
                    .iter()
                    .flat_map(|&i| [u_px[2 * i] / factor, u_px[2 * i + 1] / factor]),
            );
            let mut model = linearize(&pair, &fs, &u_level)?;
            let lost = model.lost_features();
            if !lost.is_empty() {
                for &k in &lost {
                    debug!("feature {} left the frame at level {level}", active[k]);
                    status[active[k]] = FeatureStatus::Lost;
                }
                let keep: Vec<usize> = (0..active.len()).filter(|k| !lost.contains(k)).collect();
                model = model.subset(&keep);
                active = keep.iter().map(|&k| active[k]).collect();
                if active.is_empty() {
                    break;
                }
            }
            if emb_index != active {
                let cols: Vec<usize> = active
                    .iter()
                    .map(|i| {
                        emb_index
                            .iter()
                            .position(|j| j == i)
                            .expect("active is a subset")
                    })
                    .collect();
                embedding = embedding.subset(&cols);
                emb_index = active.clone();
            }
            let u_prev = model.u0().clone();
            let solve = solve_linearized(&model, &embedding, cfg, scale)?;
            if let Some(it) = solve.iterations {
                diag.admm_iterations.push(it);
            }
            if let Some(c) = solve.converged {
                diag.admm_converged.push(c);
            }
            let mut change: f64 = 0.0;
            for (k, &i) in active.iter().enumerate() {
                let d = [
                    solve.u[2 * k] - u_prev[2 * k],
                    solve.u[2 * k + 1] - u_prev[2 * k + 1],
                ];
                change = change.max(d[0].hypot(d[1]));
                u_px[2 * i] = solve.u[2 * k] * factor;
                u_px[2 * i + 1] = solve.u[2 * k + 1] * factor;
                degenerate[i] = solve.degenerate[k];
            }
            if level == 0 {
                result.c = solve.c;
                result.c_index = active.clone();
                result.admm_history = solve.history;
            }
            if !change.is_finite() {
                return Err(TrackError::Admm(AdmmError::NonFinite {
                    block: "u",
                    iteration: diag.taylor_iterations,
                    rho: f64::NAN,
                }));
            }
            if change < cfg.eps_outer {
                diag.converged = true;
                break;
            }
        }
        result.levels.push(diag);
        if active.is_empty() {
            warn!("all features lost");
            break;
        }
    }
    for i in 0..n {
        if status[i] == FeatureStatus::Tracked && degenerate[i] {
            status[i] = FeatureStatus::Degenerate;
        }
    }
    result.u = (0..n).map(|i| [u_px[2 * i], u_px[2 * i + 1]]).collect();
    result.status = status;
    Ok(result)
}

/// Positions and statuses for a whole sequence, plus the per-pair results.
#[derive(Debug, Clone)]
pub struct SequenceTracks {
    /// `positions[frame][feature]` in pixels; lost features keep their last position.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub status: Vec<Vec<FeatureStatus>>,
    pub results: Vec<TrackResult>,
}

/// Frame-to-frame tracking with the previous frame as template and `u0 = 0`.
pub fn track_sequence(
    frames: &[GrayImage],
    initial: &[[f64; 2]],
    cfg: &TrackerConfig,
) -> Result<SequenceTracks, TrackError> {
    track_sequence_with(frames, initial, cfg, |_, _| {})
}

/// Same as [`track_sequence`], calling `progress(pair, result)` after each frame pair.
pub fn track_sequence_with(
    frames: &[GrayImage],
    initial: &[[f64; 2]],
    cfg: &TrackerConfig,
    mut progress: impl FnMut(usize, &TrackResult),
) -> Result<SequenceTracks, TrackError> {
    if frames.len() < 2 {
        return Err(TrackError::TooFewFrames(frames.len()));
    }
    let n = initial.len();
    let mut positions = vec![initial.to_vec()];
    let mut status = vec![vec![FeatureStatus::Tracked; n]];
    let mut results = Vec::with_capacity(frames.len() - 1);
    for t in 0..frames.len() - 1 {
        let prev = positions[t].clone();
        let lost: Vec<bool> = status[t].iter().map(FeatureStatus::is_lost).collect();
        let fs = FeatureSet::new(prev.clone(), cfg.half);
        let res = track_frame(
            &frames[t],
            &frames[t + 1],
            &fs,
            cfg,
            &DVector::zeros(2 * n),
            &lost,
        )?;
        let next: Vec<[f64; 2]> = prev
            .iter()
            .zip(&res.u)
            .zip(&res.status)
            .map(|((p, d), s)| {
                if s.is_lost() {
                    *p
                } else {
                    [p[0] + d[0], p[1] + d[1]]
                }
            })
            .collect();
        progress(t, &res);
        positions.push(next);
        status.push(res.status.clone());
        results.push(res);
    }
    Ok(SequenceTracks {
        positions,
        status,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::{generate, Preset};

    fn textured(width: usize, height: usize, shift: [f64; 2]) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| {
            let (x, y) = (x as f64 - shift[0], y as f64 - shift[1]);
            0.5 + 0.2 * (0.15 * x + 0.05 * y).sin()
                + 0.15 * (0.06 * x - 0.17 * y + 1.0).sin()
                + 0.1 * (0.09 * x + 0.11 * y).cos() * (0.13 * y).sin()
        })
    }

    fn grid_features(half: usize) -> FeatureSet {
        let mut c = Vec::new();
        for y in (30..100).step_by(14) {
            for x in (30..100).step_by(14) {
                c.push([x as f64, y as f64]);
            }
        }
        FeatureSet::new(c, half)
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sift".parse::<Method>().is_err());
    }

    #[test]
    fn identical_frames_give_zero_motion() {
        let img = textured(128, 128, [0.0, 0.0]);
        let fs = grid_features(3);
        for m in Method::ALL {
            let cfg = TrackerConfig::with_method(m);
            let r = track_frame(&img, &img, &fs, &cfg, &DVector::zeros(2 * fs.len()), &[]).unwrap();
            for d in &r.u {
                // the ADMM stops at a 1e-6 constraint tolerance in normalized units
                assert!(d[0].abs() < 1e-4 && d[1].abs() < 1e-4, "{m}: {d:?}");
            }
        }
    }

    #[test]
    fn global_shift_is_recovered_by_all_methods() {
        let t = textured(128, 128, [0.0, 0.0]);
        let i = textured(128, 128, [3.0, 2.0]);
        let fs = grid_features(3);
        for m in Method::ALL {
            let cfg = TrackerConfig::with_method(m);
            let r = track_frame(&t, &i, &fs, &cfg, &DVector::zeros(2 * fs.len()), &[]).unwrap();
            for d in &r.u {
                assert!(
                    (d[0] - 3.0).abs() < 0.1 && (d[1] - 2.0).abs() < 0.1,
                    "{m}: {d:?}"
                );
            }
        }
    }

    #[test]
    fn single_level_matches_inner_loop() {
        let t = textured(96, 96, [0.0, 0.0]);
        let i = textured(96, 96, [0.6, -0.4]);
        let fs = grid_features(3).subset(&[0, 1, 2, 6, 7, 8]);
        let cfg = TrackerConfig {
            levels: 1,
            ..TrackerConfig::with_method(Method::Klt)
        };
        let r = track_frame(&t, &i, &fs, &cfg, &DVector::zeros(12), &[]).unwrap();
        // inner loop by hand
        let g = gradient(&i).unwrap();
        let pair = FramePair::new(&t, &i, &g).unwrap();
        let mut u = DVector::zeros(12);
        for _ in 0..cfg.max_taylor {
            let m = linearize(&pair, &fs, &u).unwrap();
            let (next, _) = klt_baseline_solve(&m);
            let change = (0..6)
                .map(|k| (next[2 * k] - u[2 * k]).hypot(next[2 * k + 1] - u[2 * k + 1]))
                .fold(0.0, f64::max);
            u = next;
            if change < cfg.eps_outer {
                break;
            }
        }
        assert_eq!(r.displacement_vector(), u);
    }

    #[test]
    fn level_count_does_not_change_small_shift_result() {
        let t = textured(128, 128, [0.0, 0.0]);
        let i = textured(128, 128, [1.0, 1.0]);
        let fs = grid_features(3);
        let one = track_frame(
            &t,
            &i,
            &fs,
            &TrackerConfig {
                levels: 1,
                ..TrackerConfig::with_method(Method::Klt)
            },
            &DVector::zeros(2 * fs.len()),
            &[],
        )
        .unwrap();
        let four = track_frame(
            &t,
            &i,
            &fs,
            &TrackerConfig::with_method(Method::Klt),
            &DVector::zeros(2 * fs.len()),
            &[],
        )
        .unwrap();
        for (a, b) in one.u.iter().zip(&four.u) {
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 0.05);
        }
    }

    #[test]
    fn klt_solve_recovers_exact_linear_shift() {
        let grads = vec![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];
        let shift = [0.7, -1.3];
        let tau = grads
            .iter()
            .map(|g| g[0] * shift[0] + g[1] * shift[1])
            .collect();
        let m = LinearizedModel::from_parts(4, grads, tau, vec![true; 4], DVector::zeros(2));
        let (u, s) = klt_baseline_solve(&m);
        assert!((u[0] - 0.7).abs() < 1e-12 && (u[1] + 1.3).abs() < 1e-12);
        assert_eq!(s, vec![BlockSolve::Regular]);
        let zero = LinearizedModel::from_parts(
            4,
            vec![[1.0, 2.0], [0.5, -1.0], [1.0, 0.0], [0.0, 1.0]],
            vec![0.0; 4],
            vec![true; 4],
            DVector::zeros(2),
        );
        assert_eq!(klt_baseline_solve(&zero).0, DVector::zeros(2));
    }

    #[test]
    fn klt_solve_matches_generic_least_squares() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let grads: Vec<[f64; 2]> = (0..25)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let tau: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = DMatrix::from_fn(25, 2, |r, c| grads[r][c]);
        let b = DVector::from_vec(tau.clone());
        let lsq = a.svd(true, true).solve(&b, 1e-14).unwrap();
        let m = LinearizedModel::from_parts(25, grads, tau, vec![true; 25], DVector::zeros(2));
        let (u, _) = klt_baseline_solve(&m);
        assert!((u - lsq).amax() < 1e-10);
    }

    #[test]
    fn edge_patch_is_degenerate_for_klt() {
        let m = LinearizedModel::from_parts(
            3,
            vec![[1.0, 0.0]; 3],
            vec![0.5; 3],
            vec![true; 3],
            DVector::from_vec(vec![0.2, 0.1]),
        );
        let (u, s) = klt_baseline_solve(&m);
        assert_eq!(s, vec![BlockSolve::Degenerate]);
        assert_eq!(u, DVector::from_vec(vec![0.2, 0.1]));
    }

    #[test]
    fn features_leaving_the_frame_are_lost() {
        let t = textured(64, 64, [0.0, 0.0]);
        let fs = FeatureSet::new(vec![[30.0, 30.0], [200.0, 30.0]], 3);
        let cfg = TrackerConfig {
            levels: 2,
            ..TrackerConfig::with_method(Method::Multibody)
        };
        let r = track_frame(&t, &t, &fs, &cfg, &DVector::zeros(4), &[]).unwrap();
        assert_eq!(r.status, vec![FeatureStatus::Tracked, FeatureStatus::Lost]);
        assert_eq!(r.c_index, vec![0]);
        let skipped = track_frame(&t, &t, &fs, &cfg, &DVector::zeros(4), &[true, true]).unwrap();
        assert!(skipped.status.iter().all(FeatureStatus::is_lost));
    }

    #[test]
    fn constant_sequence_stays_put() {
        let img = textured(128, 128, [0.0, 0.0]);
        let frames = vec![img.clone(), img.clone(), img];
        let fs = grid_features(3);
        let out = track_sequence(
            &frames,
            fs.centers(),
            &TrackerConfig::with_method(Method::L1Klt),
        )
        .unwrap();
        assert_eq!(out.positions.len(), 3);
        for (a, b) in out.positions[2].iter().zip(fs.centers()) {
            assert!((a[0] - b[0]).abs() < 1e-4 && (a[1] - b[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn shifting_sequence_has_small_drift() {
        let frames: Vec<GrayImage> = (0..10)
            .map(|k| textured(128, 128, [k as f64, 0.0]))
            .collect();
        let fs = grid_features(3);
        let out = track_sequence(
            &frames,
            fs.centers(),
            &TrackerConfig::with_method(Method::Multibody),
        )
        .unwrap();
        for (p, q) in out.positions[9].iter().zip(fs.centers()) {
            assert!(
                (p[0] - q[0] - 9.0).hypot(p[1] - q[1]) <= 0.5,
                "{p:?} from {q:?}"
            );
        }
    }

    #[test]
    fn tracking_is_deterministic() {
        let seq = generate(Preset::TwoBody, 3).unwrap();
        let fs = seq.features(0, 3);
        let cfg = TrackerConfig::default();
        let a = track_frame(
            &seq.frames[0],
            &seq.frames[1],
            &fs,
            &cfg,
            &DVector::zeros(2 * fs.len()),
            &[],
        )
        .unwrap();
        let b = track_frame(
            &seq.frames[0],
            &seq.frames[1],
            &fs,
            &cfg,
            &DVector::zeros(2 * fs.len()),
            &[],
        )
        .unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let img = textured(32, 32, [0.0, 0.0]);
        let fs = FeatureSet::new(vec![[16.0, 16.0]], 3);
        let cfg = TrackerConfig {
            levels: 0,
            ..TrackerConfig::default()
        };
        assert!(matches!(
            track_frame(&img, &img, &fs, &cfg, &DVector::zeros(2), &[]),
            Err(TrackError::InvalidConfig(_))
        ));
        let cfg = TrackerConfig {
            levels: 4,
            ..TrackerConfig::default()
        };
        assert!(matches!(
            track_frame(&img, &img, &fs, &cfg, &DVector::zeros(2), &[]),
            Err(TrackError::Imaging(_))
        ));
    }
}
