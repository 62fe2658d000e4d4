//! Synthetic rigid-body scenes with exact ground truth, and brute-force oracles for the
//! ADMM block updates.
//!
//! Bodies are unions of textured planar faces. Frames are ray cast per pixel against all
//! faces plus an optional static background plane; pixel `(x, y)` samples the ray through
//! image coordinate `(x, y)`, the same convention the tracker uses.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{AdmmParams, AdmmState, Problem};
use crate::epipolar::{embed_point, EpipolarEmbedding, FundamentalMatrix};
use crate::imaging::{add_gaussian_noise, frame_seed, gradient, GrayImage, ImagingError};
use crate::linearize::{FeatureSet, LinearizedModel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown scene preset '{0}'")]
    UnknownPreset(String),
    #[error("scene has no bodies")]
    NoBodies,
    #[error("scene needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("body {body} is behind the camera in frame {frame}")]
    BehindCamera { body: usize, frame: usize },
    #[error("placed {placed} of {wanted} features on body {body}")]
    Placement {
        body: usize,
        placed: usize,
        wanted: usize,
    },
    #[error("oracle hit a non-finite value in block {0:?}")]
    NonFinite(Block),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Pinhole camera with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 1e-9 {
            return None;
        }
        Some([
            self.focal * p.x / p.z + self.cx,
            self.focal * p.y / p.z + self.cy,
        ])
    }

    /// Ray direction through an image point, scaled to unit depth.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.focal, (y - self.cy) / self.focal, 1.0)
    }

    fn inside(&self, p: [f64; 2], margin: f64) -> bool {
        p[0] >= margin
            && p[1] >= margin
            && p[0] <= self.width as f64 - 1.0 - margin
            && p[1] <= self.height as f64 - 1.0 - margin
    }
}

/// Rectangle `origin + a axes[0] + b axes[1]`, `|a| <= half[0]`, `|b| <= half[1]`,
/// in body coordinates. Axes are orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub origin: Vector3<f64>,
    pub axes: [Vector3<f64>; 2],
    pub half: [f64; 2],
}

impl Face {
    pub fn normal(&self) -> Vector3<f64> {
        self.axes[0].cross(&self.axes[1])
    }

    fn area(&self) -> f64 {
        4.0 * self.half[0] * self.half[1]
    }

    /// Ray parameter and hit point of `origin + s dir`, if it lands inside the rectangle.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = n.dot(&(self.origin - origin)) / denom;
        if s <= 0.0 {
            return None;
        }
        let p = origin + dir * s;
        let d = p - self.origin;
        let a = self.axes[0].dot(&d);
        let b = self.axes[1].dot(&d);
        (a.abs() <= self.half[0] && b.abs() <= self.half[1]).then_some((s, p))
    }
}

/// One plane wave `amplitude sin(k . p + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub k: Vector3<f64>,
    pub phase: f64,
    pub amplitude: f64,
}

impl Wave {
    fn eval(&self, p: &Vector3<f64>) -> f64 {
        self.amplitude * (self.k.dot(p) + self.phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    /// Band-limited solid texture: `base + sum of waves`.
    Waves { base: f64, waves: Vec<Wave> },
    /// `base + contrast sin(2 pi x / period) sin(2 pi y / period)` on body x, y, plus
    /// faint detail waves.
    Grid {
        base: f64,
        contrast: f64,
        period: f64,
        detail: Vec<Wave>,
    },
}

impl Texture {
    /// `count` waves with random 3D directions, wavelengths in `wavelengths` (body units)
    /// and amplitudes summing to `total_amplitude`.
    pub fn random_waves(
        rng: &mut impl Rng,
        count: usize,
        wavelengths: (f64, f64),
        total_amplitude: f64,
    ) -> Vec<Wave> {
        let mut waves: Vec<Wave> = (0..count)
            .map(|_| {
                let dir = loop {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let n = v.norm();
                    if n > 0.2 && n <= 1.0 {
                        break v / n;
                    }
                };
                let wavelength = rng.random_range(wavelengths.0..wavelengths.1);
                Wave {
                    k: dir * (std::f64::consts::TAU / wavelength),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let sum: f64 = waves.iter().map(|w| w.amplitude).sum();
        for w in &mut waves {
            w.amplitude *= total_amplitude / sum;
        }
        waves
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        let v = match self {
            Texture::Waves { base, waves } => base + waves.iter().map(|w| w.eval(p)).sum::<f64>(),
            Texture::Grid {
                base,
                contrast,
                period,
                detail,
            } => {
                let f = std::f64::consts::TAU / period;
                base + contrast * (f * p.x).sin() * (f * p.y).sin()
                    + detail.iter().map(|w| w.eval(p)).sum::<f64>()
            }
        };
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Motion `X' = R X + t` taking camera-frame points of this pose to `next`.
    pub fn relative_to(&self, next: &Pose) -> (Matrix3<f64>, Vector3<f64>) {
        let r = next.rotation * self.rotation.inverse();
        let t = next.translation - r * self.translation;
        (r.into_inner(), t)
    }
}

/// Constant-velocity rigid motion in camera coordinates. Frame `k` has rotation
/// `exp(k spin) exp(orientation)` and translation `center + k velocity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub center: Vector3<f64>,
    pub orientation: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub spin: Vector3<f64>,
}

impl Motion {
    pub fn fixed(center: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            center,
            orientation,
            velocity: Vector3::zeros(),
            spin: Vector3::zeros(),
        }
    }

    pub fn pose(&self, frame: usize) -> Pose {
        let k = frame as f64;
        Pose {
            rotation: Rotation3::new(self.spin * k) * Rotation3::new(self.orientation),
            translation: self.center + self.velocity * k,
        }
    }

    pub fn is_static(&self) -> bool {
        self.velocity.norm() == 0.0 && self.spin.norm() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodySpec {
    pub faces: Vec<Face>,
    pub texture: Texture,
    pub motion: Motion,
}

impl RigidBodySpec {
    /// A flat rectangle in the body x-y plane, facing the camera at zero orientation.
    pub fn card(half_w: f64, half_h: f64, texture: Texture, motion: Motion) -> Self {
        Self {
            faces: vec![Face {
                origin: Vector3::zeros(),
                axes: [Vector3::x(), Vector3::y()],
                half: [half_w, half_h],
            }],
            texture,
            motion,
        }
    }

    /// Axis-aligned box centered on the body origin.
    pub fn cuboid(half: [f64; 3], texture: Texture, motion: Motion) -> Self {
        let e = [Vector3::x(), Vector3::y(), Vector3::z()];
        let mut faces = Vec::with_capacity(6);
        for axis in 0..3 {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [1.0, -1.0] {
                // outward normal sign * e[axis] = axes[0] x axes[1]
                let (u, v) = if sign > 0.0 {
                    (e[a], e[b])
                } else {
                    (e[b], e[a])
                };
                let (hu, hv) = if sign > 0.0 {
                    (half[a], half[b])
                } else {
                    (half[b], half[a])
                };
                faces.push(Face {
                    origin: e[axis] * (sign * half[axis]),
                    axes: [u, v],
                    half: [hu, hv],
                });
            }
        }
        Self {
            faces,
            texture,
            motion,
        }
    }
}

/// Static textured plane `Z = depth` in camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub depth: f64,
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub camera: Camera,
    pub bodies: Vec<RigidBodySpec>,
    pub background: Option<Background>,
    pub frames: usize,
    pub features_per_body: usize,
    /// Half-size of the largest patch that must stay on one face for every feature.
    pub patch_margin: usize,
    pub repetitive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hit {
    body: usize,
    face: usize,
}

impl SceneSpec {
    fn poses(&self, frame: usize) -> Vec<Pose> {
        self.bodies.iter().map(|b| b.motion.pose(frame)).collect()
    }

    /// Nearest surface along the camera ray through `(x, y)`: body hit or background.
    fn cast(&self, poses: &[Pose], x: f64, y: f64) -> (Option<(Hit, Vector3<f64>)>, f64) {
        let dir = self.camera.ray(x, y);
        let mut best: Option<(Hit, Vector3<f64>)> = None;
        let mut best_s = f64::INFINITY;
        for (bi, (body, pose)) in self.bodies.iter().zip(poses).enumerate() {
            let inv = pose.rotation.inverse();
            let o = inv * (-pose.translation);
            let d = inv * dir;
            for (fi, face) in body.faces.iter().enumerate() {
                if let Some((s, p)) = face.intersect(&o, &d) {
                    if s < best_s {
                        best_s = s;
                        best = Some((Hit { body: bi, face: fi }, p));
                    }
                }
            }
        }
        (best, best_s)
    }

    fn shade(&self, poses: &[Pose], x: f64, y: f64) -> f64 {
        match self.cast(poses, x, y) {
            (Some((hit, p)), _) => self.bodies[hit.body].texture.eval(&p),
            (None, _) => match &self.background {
                Some(bg) => bg.texture.eval(&(self.camera.ray(x, y) * bg.depth)),
                None => 0.5,
            },
        }
    }

    pub fn render_frame(&self, frame: usize) -> GrayImage {
        let poses = self.poses(frame);
        GrayImage::from_fn(self.camera.width, self.camera.height, |x, y| {
            self.shade(&poses, x as f64, y as f64)
        })
    }

    fn project_body_point(&self, body: usize, p: &Vector3<f64>, frame: usize) -> Option<[f64; 2]> {
        let pose = self.bodies[body].motion.pose(frame);
        self.camera.project(&pose.apply(p))
    }

    /// Whether the surface point is the first hit along its own camera ray.
    fn visible(&self, poses: &[Pose], hit: Hit, p: &Vector3<f64>) -> bool {
        let pc = poses[hit.body].apply(p);
        let Some(x) = self.camera.project(&pc) else {
            return false;
        };
        match self.cast(poses, x[0], x[1]) {
            (Some((h, _)), s) => h == hit && (s - pc.z).abs() <= 1e-9 * pc.z,
            _ => false,
        }
    }

    /// Feature acceptance: visible, inside the frame and with its whole patch (plus one
    /// pixel) on the same face, in every frame.
    fn accept(&self, hit: Hit, p: &Vector3<f64>, all_poses: &[Vec<Pose>]) -> bool {
        let r = self.patch_margin as f64 + 1.0;
        let margin = self.patch_margin as f64 + 4.0;
        all_poses.iter().enumerate().all(|(frame, poses)| {
            let Some(x) = self.project_body_point(hit.body, p, frame) else {
                return false;
            };
            if !self.camera.inside(x, margin) || !self.visible(poses, hit, p) {
                return false;
            }
            let probes = [
                [-r, -r],
                [0.0, -r],
                [r, -r],
                [-r, 0.0],
                [r, 0.0],
                [-r, r],
                [0.0, r],
                [r, r],
            ];
            probes.iter().all(|d| {
                matches!(self.cast(poses, x[0] + d[0], x[1] + d[1]), (Some((h, _)), _) if h == hit)
            })
        })
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.bodies.is_empty() {
            return Err(SynthError::NoBodies);
        }
        if self.frames < 2 {
            return Err(SynthError::TooFewFrames(self.frames));
        }
        for frame in 0..self.frames {
            for (bi, body) in self.bodies.iter().enumerate() {
                let pose = body.motion.pose(frame);
                for face in &body.faces {
                    for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                        let corner = face.origin
                            + face.axes[0] * (a * face.half[0])
                            + face.axes[1] * (b * face.half[1]);
                        if pose.apply(&corner).z <= 1e-6 {
                            return Err(SynthError::BehindCamera { body: bi, frame });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rendered frames plus exact ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub name: String,
    pub camera: Camera,
    pub frames: Vec<GrayImage>,
    /// `tracks[frame][feature]` in pixels.
    pub tracks: Vec<Vec<[f64; 2]>>,
    /// `visible[frame][feature]`; occluded features are excluded from evaluation.
    pub visible: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
    /// `fundamentals[pair][body]` for frames `pair -> pair + 1`; `None` without translation.
    pub fundamentals: Vec<Vec<Option<FundamentalMatrix>>>,
    pub repetitive: bool,
    pub seed: u64,
}

impl SyntheticSequence {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_features(&self) -> usize {
        self.labels.len()
    }

    pub fn n_bodies(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn features(&self, frame: usize, half: usize) -> FeatureSet {
        FeatureSet::new(self.tracks[frame].clone(), half)
    }

    /// Stacked true displacements from `frame` to `frame + 1`.
    pub fn displacement(&self, frame: usize) -> DVector<f64> {
        let a = &self.tracks[frame];
        let b = &self.tracks[frame + 1];
        DVector::from_iterator(
            2 * a.len(),
            a.iter()
                .zip(b)
                .flat_map(|(p, q)| [q[0] - p[0], q[1] - p[1]]),
        )
    }

    /// Indices of features belonging to `body`.
    pub fn body_members(&self, body: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == body)
            .collect()
    }

    /// Frames with independent Gaussian noise; frame `k` uses `frame_seed(seed, k)`.
    pub fn noisy_frames(&self, variance: f64, seed: u64) -> Result<Vec<GrayImage>, SynthError> {
        self.frames
            .iter()
            .enumerate()
            .map(|(k, f)| Ok(add_gaussian_noise(f, variance, frame_seed(seed, k))?))
            .collect()
    }
}

fn sample_face_point(rng: &mut impl Rng, body: &RigidBodySpec) -> (usize, Vector3<f64>) {
    let total: f64 = body.faces.iter().map(Face::area).sum();
    let mut pick = rng.random_range(0.0..total);
    let mut index = body.faces.len() - 1;
    for (i, f) in body.faces.iter().enumerate() {
        if pick < f.area() {
            index = i;
            break;
        }
        pick -= f.area();
    }
    let f = &body.faces[index];
    let a = rng.random_range(-f.half[0]..f.half[0]);
    let b = rng.random_range(-f.half[1]..f.half[1]);
    (index, f.origin + f.axes[0] * a + f.axes[1] * b)
}

/// Smallest eigenvalue of the gradient structure tensor over a 7x7 window.
fn corner_strength(grad: &crate::imaging::GradientField, x: [f64; 2]) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for dy in -3..=3 {
        for dx in -3..=3 {
            let (g, _) = grad.sample(x[0] + dx as f64, x[1] + dy as f64);
            a += g[0] * g[0];
            b += g[0] * g[1];
            c += g[1] * g[1];
        }
    }
    let tr = a + c;
    let det = a * c - b * b;
    tr / 2.0 - ((tr * tr / 4.0 - det).max(0.0)).sqrt()
}

const MIN_SEPARATION: f64 = 5.0;
const MIN_CORNER: f64 = 2e-3;

/// Renders all frames and places `features_per_body` features on every body.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticSequence, SynthError> {
    spec.validate()?;
    let frames: Vec<GrayImage> = (0..spec.frames).map(|k| spec.render_frame(k)).collect();
    let grad0 = gradient(&frames[0])?;
    let all_poses: Vec<Vec<Pose>> = (0..spec.frames).map(|k| spec.poses(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let mut points: Vec<(usize, Vector3<f64>)> = Vec::new();
    let mut placed0: Vec<[f64; 2]> = Vec::new();
    for (bi, body) in spec.bodies.iter().enumerate() {
        let mut count = 0;
        let mut attempts = 0;
        let budget = 400 * spec.features_per_body.max(1);
        while count < spec.features_per_body && attempts < budget {
            attempts += 1;
            let (fi, p) = sample_face_point(&mut rng, body);
            let hit = Hit { body: bi, face: fi };
            let Some(x0) = spec.project_body_point(bi, &p, 0) else {
                continue;
            };
            let crowded = placed0
                .iter()
                .any(|q| (q[0] - x0[0]).hypot(q[1] - x0[1]) < MIN_SEPARATION);
            if crowded
                || !spec.accept(hit, &p, &all_poses)
                || corner_strength(&grad0, x0) < MIN_CORNER
            {
                continue;
            }
            points.push((bi, p));
            placed0.push(x0);
            count += 1;
        }
        if count < spec.features_per_body {
            return Err(SynthError::Placement {
                body: bi,
                placed: count,
                wanted: spec.features_per_body,
            });
        }
    }
    let mut tracks = Vec::with_capacity(spec.frames);
    let mut visible = Vec::with_capacity(spec.frames);
    for (k, poses) in all_poses.iter().enumerate() {
        let mut row = Vec::with_capacity(points.len());
        let mut vis = Vec::with_capacity(points.len());
        for (bi, p) in &points {
            let x = spec
                .project_body_point(*bi, p, k)
                .ok_or(SynthError::BehindCamera {
                    body: *bi,
                    frame: k,
                })?;
            row.push(x);
            vis.push(spec.bodies[*bi].faces.iter().enumerate().any(|(fi, _)| {
                spec.visible(
                    poses,
                    Hit {
                        body: *bi,
                        face: fi,
                    },
                    p,
                )
            }));
        }
        tracks.push(row);
        visible.push(vis);
    }
    let k = spec.camera.k_matrix();
    let fundamentals = (0..spec.frames - 1)
        .map(|f| {
            all_poses[f]
                .iter()
                .zip(&all_poses[f + 1])
                .map(|(a, b)| {
                    let (r, t) = a.relative_to(b);
                    FundamentalMatrix::from_motion(&k, &r, &t)
                })
                .collect()
        })
        .collect();
    Ok(SyntheticSequence {
        name: spec.name.clone(),
        camera: spec.camera,
        frames,
        tracks,
        visible,
        labels: points.iter().map(|(b, _)| *b).collect(),
        fundamentals,
        repetitive: spec.repetitive,
        seed,
    })
}

/// Named scene configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Two textured cards moving in opposite directions.
    TwoBody,
    /// Same geometry with a repetitive grid texture.
    Checkerboard,
    /// One box rotating and translating.
    SingleBody,
    /// A fronto-parallel card translating in its own plane.
    PureTranslation,
    /// Two cards that never move.
    Static,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::TwoBody,
        Preset::Checkerboard,
        Preset::SingleBody,
        Preset::PureTranslation,
        Preset::Static,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::TwoBody => "two-body",
            Preset::Checkerboard => "checkerboard",
            Preset::SingleBody => "single-body",
            Preset::PureTranslation => "pure-translation",
            Preset::Static => "static",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SynthError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| SynthError::UnknownPreset(name.to_string()))
    }

    /// Default 256x256, 10 frames, 30 features per body.
    pub fn spec(&self, seed: u64) -> SceneSpec {
        self.spec_with(seed, 30)
    }

    pub fn spec_with(&self, seed: u64, features_per_body: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let camera = Camera::centered(256, 256, 300.0);
        let smooth = |rng: &mut ChaCha8Rng| Texture::Waves {
            base: 0.5,
            waves: Texture::random_waves(rng, 14, (0.07, 0.35), 0.42),
        };
        let background = Background {
            depth: 12.0,
            texture: Texture::Waves {
                base: 0.45,
                waves: Texture::random_waves(&mut rng, 6, (0.8, 2.5), 0.06),
            },
        };
        let left = Motion {
            center: Vector3::new(-0.7, 0.05, 4.0),
            orientation: Vector3::new(0.15, -0.25, 0.1),
            velocity: Vector3::new(0.006, -0.028, 0.01),
            spin: Vector3::new(0.006, 0.01, 0.012),
        };
        let right = Motion {
            center: Vector3::new(0.75, -0.05, 4.4),
            orientation: Vector3::new(-0.2, 0.2, -0.15),
            velocity: Vector3::new(-0.008, 0.03, -0.015),
            spin: Vector3::new(-0.01, -0.005, -0.015),
        };
        let (bodies, repetitive) = match self {
            Preset::TwoBody => (
                vec![
                    RigidBodySpec::card(0.55, 0.7, smooth(&mut rng), left),
                    RigidBodySpec::card(0.55, 0.7, smooth(&mut rng), right),
                ],
                false,
            ),
            Preset::Checkerboard => {
                let grid = |rng: &mut ChaCha8Rng| Texture::Grid {
                    base: 0.5,
                    contrast: 0.36,
                    period: 0.16,
                    detail: Texture::random_waves(rng, 8, (0.1, 0.5), 0.1),
                };
                (
                    vec![
                        RigidBodySpec::card(0.55, 0.7, grid(&mut rng), left),
                        RigidBodySpec::card(0.55, 0.7, grid(&mut rng), right),
                    ],
                    true,
                )
            }
            Preset::SingleBody => (
                vec![RigidBodySpec::cuboid(
                    [0.55, 0.55, 0.55],
                    smooth(&mut rng),
                    Motion {
                        center: Vector3::new(0.0, 0.0, 4.2),
                        orientation: Vector3::new(0.5, -0.6, 0.2),
                        velocity: Vector3::new(0.02, -0.01, 0.02),
                        spin: Vector3::new(0.01, 0.025, -0.015),
                    },
                )],
                false,
            ),
            Preset::PureTranslation => (
                vec![RigidBodySpec::card(
                    0.9,
                    0.9,
                    smooth(&mut rng),
                    Motion {
                        center: Vector3::new(-0.1, 0.05, 4.0),
                        orientation: Vector3::zeros(),
                        velocity: Vector3::new(0.02, 0.01, 0.0),
                        spin: Vector3::zeros(),
                    },
                )],
                false,
            ),
            Preset::Static => (
                vec![
                    RigidBodySpec::card(
                        0.55,
                        0.7,
                        smooth(&mut rng),
                        Motion::fixed(left.center, left.orientation),
                    ),
                    RigidBodySpec::card(
                        0.55,
                        0.7,
                        smooth(&mut rng),
                        Motion::fixed(right.center, right.orientation),
                    ),
                ],
                false,
            ),
        };
        SceneSpec {
            name: self.name().to_string(),
            camera,
            bodies,
            background: Some(background),
            frames: 10,
            features_per_body,
            patch_margin: 6,
            repetitive,
        }
    }
}

/// Renders a preset with its default size.
pub fn generate(preset: Preset, seed: u64) -> Result<SyntheticSequence, SynthError> {
    render_scene(&preset.spec(seed), seed)
}

// ---------------------------------------------------------------------------
// oracles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Z,
    E,
    C,
    U,
    M,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::Z, Block::E, Block::C, Block::U, Block::M];
}

/// Data residual `A_ij = grad_ij . u_i - tau_ij`, evaluated pixel by pixel.
fn oracle_residual(model: &LinearizedModel, u: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(model.len(), model.patch_len(), |i, j| {
        let g = model.grad(i, j);
        g[0] * u[2 * i] + g[1] * u[2 * i + 1] - model.tau(i, j)
    })
}

/// `P u` through the lifted correspondences `w(x, x + u) - w(x, x)`.
fn oracle_lift(embedding: &EpipolarEmbedding, u: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(9 * embedding.len());
    for (i, x) in embedding.points().iter().enumerate() {
        let moved = embed_point(*x, [x[0] + u[2 * i], x[1] + u[2 * i + 1]]);
        let base = embed_point(*x, *x);
        for r in 0..9 {
            out[9 * i + r] = moved[r] - base[r];
        }
    }
    out
}

fn oracle_w(embedding: &EpipolarEmbedding, m: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(9, embedding.len(), |r, i| {
        embed_point(embedding.points()[i], embedding.points()[i])[r] + m[9 * i + r]
    })
}

fn abs_sum(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// `gamma ||Z||_1 + 1/2 ||C||^2 + lambda ||E||_1` plus `rho/2` times the squared
/// constraint violations, summed term by term.
#[allow(clippy::too_many_arguments)]
pub fn oracle_objective(
    u: &DVector<f64>,
    c: &DMatrix<f64>,
    e: &DMatrix<f64>,
    z: &DMatrix<f64>,
    m: &DVector<f64>,
    embedding: &EpipolarEmbedding,
    model: &LinearizedModel,
    params: &AdmmParams,
    rho: f64,
) -> f64 {
    let a = oracle_residual(model, u);
    let w = oracle_w(embedding, m);
    let lift = oracle_lift(embedding, u);
    let mut violation = 0.0;
    for k in 0..z.len() {
        violation += (z[k] - a[k]).powi(2);
    }
    let wc = &w * c;
    for k in 0..w.len() {
        violation += (w[k] - wc[k] - e[k]).powi(2);
    }
    for k in 0..m.len() {
        violation += (m[k] - lift[k]).powi(2);
    }
    params.gamma * abs_sum(z)
        + 0.5 * c.iter().map(|v| v * v).sum::<f64>()
        + params.lambda * abs_sum(e)
        + 0.5 * rho * violation
}

/// Augmented Lagrangian rebuilt from the oracle pieces.
pub fn oracle_lagrangian(problem: &Problem<'_>, params: &AdmmParams, s: &AdmmState) -> f64 {
    let model = problem.model();
    let emb = problem.embedding();
    let a = oracle_residual(model, &s.u);
    let w = oracle_w(emb, &s.m);
    let lift = oracle_lift(emb, &s.u);
    let wc = &w * &s.c;
    let mut linear = 0.0;
    for k in 0..s.z.len() {
        linear += s.y2[k] * (s.z[k] - a[k]);
    }
    for k in 0..w.len() {
        linear += s.y1[k] * (w[k] - wc[k] - s.e[k]);
    }
    for k in 0..s.m.len() {
        linear += s.y[k] * (s.m[k] - lift[k]);
    }
    oracle_objective(&s.u, &s.c, &s.e, &s.z, &s.m, emb, model, params, s.rho) + linear
}

/// Root of the monotone scalar map `0 in alpha d|x| + q'(x)`, by bisection.
fn prox_scalar(alpha: f64, dq: impl Fn(f64) -> f64) -> f64 {
    let d0 = dq(0.0);
    if d0.abs() <= alpha {
        return 0.0;
    }
    // the minimizer lies on the side where the smooth slope is beaten by the kink
    let sign = if d0 < -alpha { 1.0 } else { -1.0 };
    let f = |x: f64| dq(x) + sign * alpha;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(sign * hi) * sign < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::NAN;
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(sign * mid) * sign < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    sign * 0.5 * (lo + hi)
}

/// Exact derivative of a scalar quadratic by a unit central difference.
fn quad_slope(q: impl Fn(f64) -> f64) -> impl Fn(f64) -> f64 {
    move |x| 0.5 * (q(x + 1.0) - q(x - 1.0))
}

/// Minimizes a quadratic given only its value oracle, by conjugate gradients on the
/// gradient obtained from unit central differences (exact for quadratics).
fn minimize_quadratic(f: impl Fn(&DVector<f64>) -> f64, x0: &DVector<f64>) -> DVector<f64> {
    let dim = x0.len();
    let grad = |x: &DVector<f64>| {
        DVector::from_fn(dim, |k, _| {
            let mut p = x.clone();
            let mut q = x.clone();
            p[k] += 1.0;
            q[k] -= 1.0;
            0.5 * (f(&p) - f(&q))
        })
    };
    let g0 = grad(x0);
    let hess = |v: &DVector<f64>| {
        let n = v.norm();
        if n == 0.0 {
            return DVector::zeros(dim);
        }
        (grad(&(x0 + v / n)) - &g0) * n
    };
    // solve H d = -g0 for the step d from x0
    let mut d = DVector::zeros(dim);
    let mut r = -g0.clone();
    let mut p = r.clone();
    let tol = 1e-15 * g0.norm().max(1e-300);
    for _ in 0..(4 * dim + 10) {
        let rr = r.norm_squared();
        if rr.sqrt() <= tol {
            break;
        }
        let hp = hess(&p);
        let alpha = rr / p.dot(&hp);
        d += &p * alpha;
        r -= &hp * alpha;
        let beta = r.norm_squared() / rr;
        p = &r + &p * beta;
    }
    // one refinement pass against the freshly evaluated residual
    let r_true = -grad(&(x0 + &d));
    let mut e = DVector::zeros(dim);
    let mut r = r_true;
    let mut p = r.clone();
    for _ in 0..(2 * dim + 5) {
        let rr = r.norm_squared();
        if rr.sqrt() <= tol {
            break;
        }
        let hp = hess(&p);
        let alpha = rr / p.dot(&hp);
        e += &p * alpha;
        r -= &hp * alpha;
        let beta = r.norm_squared() / rr;
        p = &r + &p * beta;
    }
    x0 + d + e
}

/// Minimizes the augmented Lagrangian over one block with every other block frozen.
/// Thresholding blocks use per-element bisection on the subgradient condition; quadratic
/// blocks use conjugate gradients driven only by Lagrangian evaluations. Vectors are
/// returned as single-column matrices.
pub fn oracle_minimize_block(
    problem: &Problem<'_>,
    params: &AdmmParams,
    state: &AdmmState,
    block: Block,
) -> Result<DMatrix<f64>, SynthError> {
    let rho = state.rho;
    let out = match block {
        Block::Z => {
            let a = oracle_residual(problem.model(), &state.u);
            DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
                let (aij, y) = (a[(i, j)], state.y2[(i, j)]);
                let q = move |z: f64| y * (z - aij) + 0.5 * rho * (z - aij).powi(2);
                prox_scalar(params.gamma, quad_slope(q))
            })
        }
        Block::E => {
            let w = oracle_w(problem.embedding(), &state.m);
            let t = &w - &w * &state.c;
            DMatrix::from_fn(9, t.ncols(), |r, i| {
                let (tij, y) = (t[(r, i)], state.y1[(r, i)]);
                let q = move |e: f64| y * (tij - e) + 0.5 * rho * (tij - e).powi(2);
                prox_scalar(params.lambda, quad_slope(q))
            })
        }
        Block::C => {
            let n = state.c.nrows();
            let f = |x: &DVector<f64>| {
                let mut s = state.clone();
                s.c = DMatrix::from_column_slice(n, n, x.as_slice());
                oracle_lagrangian(problem, params, &s)
            };
            let x = minimize_quadratic(f, &DVector::from_column_slice(state.c.as_slice()));
            DMatrix::from_column_slice(n, n, x.as_slice())
        }
        Block::U => {
            let f = |x: &DVector<f64>| {
                let mut s = state.clone();
                s.u = x.clone();
                oracle_lagrangian(problem, params, &s)
            };
            let x = minimize_quadratic(f, &state.u);
            DMatrix::from_column_slice(x.len(), 1, x.as_slice())
        }
        Block::M => {
            let f = |x: &DVector<f64>| {
                let mut s = state.clone();
                s.m = x.clone();
                oracle_lagrangian(problem, params, &s)
            };
            let x = minimize_quadratic(f, &state.m);
            DMatrix::from_column_slice(x.len(), 1, x.as_slice())
        }
    };
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SynthError::NonFinite(block))
    }
}

/// A random linearized problem with points drawn from two rigid motions, plus a random
/// ADMM state, for exercising single block updates.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: LinearizedModel,
    pub embedding: EpipolarEmbedding,
    pub state: AdmmState,
    pub params: AdmmParams,
}

impl RandomInstance {
    /// `n` features with `(2 half + 1)^2` pixel patches. Points follow two random rigid
    /// motions of a random 3D cloud (normalized coordinates); offsets are consistent with
    /// the true displacement up to small perturbations.
    pub fn generate(seed: u64, n: usize, half: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patch_len = (2 * half + 1).pow(2);
        let (points, truth) = two_motion_points(&mut rng, n);
        let mut grads = Vec::with_capacity(n * patch_len);
        let mut tau = Vec::with_capacity(n * patch_len);
        for i in 0..n {
            for _ in 0..patch_len {
                let g = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                tau.push(
                    g[0] * truth[2 * i] + g[1] * truth[2 * i + 1] + rng.random_range(-0.05..0.05),
                );
                grads.push(g);
            }
        }
        let u0 = DVector::zeros(2 * n);
        let model =
            LinearizedModel::from_parts(patch_len, grads, tau, vec![true; n * patch_len], u0);
        let embedding = EpipolarEmbedding::new(points);
        let mut r = |rows: usize, cols: usize, s: f64| {
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-s..s))
        };
        let state = AdmmState {
            z: r(n, patch_len, 0.5),
            e: r(9, n, 0.05),
            c: r(n, n, 0.3),
            u: DVector::from_column_slice(r(2 * n, 1, 0.1).as_slice()),
            m: DVector::from_column_slice(r(9 * n, 1, 0.1).as_slice()),
            y1: r(9, n, 1.0),
            y2: r(n, patch_len, 1.0),
            y: DVector::from_column_slice(r(9 * n, 1, 1.0).as_slice()),
            rho: 0.0,
        };
        let state = AdmmState {
            rho: rng.random_range(0.2..5.0),
            ..state
        };
        let params = AdmmParams {
            gamma: rng.random_range(0.05..1.0),
            lambda: rng.random_range(0.02..0.5),
            ..AdmmParams::default()
        };
        Self {
            model,
            embedding,
            state,
            params,
        }
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.model, &self.embedding).expect("consistent shapes")
    }
}

/// `n` normalized image points split between two random rigid motions, with their exact
/// displacements. The first half follows motion 0.
pub fn two_motion_points(rng: &mut impl Rng, n: usize) -> (Vec<[f64; 2]>, DVector<f64>) {
    let motions: Vec<(Rotation3<f64>, Vector3<f64>)> = (0..2)
        .map(|_| {
            let axis = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let t = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            (Rotation3::new(axis), t)
        })
        .collect();
    let mut points = Vec::with_capacity(n);
    let mut u = DVector::zeros(2 * n);
    for i in 0..n {
        let (r, t) = &motions[usize::from(i >= n / 2)];
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(3.0..5.0),
        );
        let q = r * p + t;
        let x = [p.x / p.z, p.y / p.z];
        let xp = [q.x / q.z, q.y / q.z];
        points.push([x[0] * 2.0, x[1] * 2.0]);
        u[2 * i] = 2.0 * (xp[0] - x[0]);
        u[2 * i + 1] = 2.0 * (xp[1] - x[1]);
    }
    (points, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::{self, merit, Regularizer};
    use crate::epipolar::{singular_values, subspace_rank};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cuboid_faces_point_outward() {
        let b = RigidBodySpec::cuboid(
            [1.0, 2.0, 3.0],
            Texture::Waves {
                base: 0.5,
                waves: vec![],
            },
            Motion::fixed(Vector3::zeros(), Vector3::zeros()),
        );
        for f in &b.faces {
            let n = f.normal();
            assert!(n.dot(&f.origin) > 0.0);
            assert_abs_diff_eq!(f.axes[0].dot(&f.axes[1]), 0.0);
        }
    }

    #[test]
    fn poses_are_rigid() {
        let spec = Preset::TwoBody.spec(3);
        for body in &spec.bodies {
            for k in 0..spec.frames {
                let r = body.motion.pose(k).rotation.into_inner();
                assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()).unwrap(), p);
        }
        assert!(matches!(
            Preset::from_name("nope"),
            Err(SynthError::UnknownPreset(_))
        ));
    }

    #[test]
    fn static_scene_has_constant_tracks_and_no_fundamentals() {
        let seq = generate(Preset::Static, 1).unwrap();
        for k in 1..seq.n_frames() {
            assert_eq!(seq.tracks[k], seq.tracks[0]);
            assert!(seq.fundamentals[k - 1].iter().all(Option::is_none));
        }
        assert_eq!(seq.frames[0], seq.frames[5]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = generate(Preset::TwoBody, 7).unwrap();
        let b = generate(Preset::TwoBody, 7).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.tracks, b.tracks);
        assert_eq!(a.n_features(), 60);
        assert_eq!(a.n_bodies(), 2);
    }

    #[test]
    fn tracks_satisfy_their_body_fundamental() {
        let seq = generate(Preset::TwoBody, 2).unwrap();
        for pair in 0..seq.n_frames() - 1 {
            for i in 0..seq.n_features() {
                let f = seq.fundamentals[pair][seq.labels[i]].expect("moving body");
                let x = seq.tracks[pair][i];
                let xp = seq.tracks[pair + 1][i];
                let w = embed_point(x, xp);
                let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(
                    f.residual(x, xp).abs() <= 1e-10 * wn,
                    "pair {pair} feature {i}"
                );
            }
        }
    }

    fn body_w(seq: &SyntheticSequence, body: usize, pair: usize) -> DMatrix<f64> {
        let idx = seq.body_members(body);
        let pts: Vec<[f64; 2]> = idx.iter().map(|&i| seq.tracks[pair][i]).collect();
        let (emb, norm) = EpipolarEmbedding::normalized(&pts).unwrap();
        let u = DVector::from_iterator(
            2 * idx.len(),
            idx.iter().flat_map(|&i| {
                let d = norm.apply_displacement([
                    seq.tracks[pair + 1][i][0] - seq.tracks[pair][i][0],
                    seq.tracks[pair + 1][i][1] - seq.tracks[pair][i][1],
                ]);
                d.into_iter()
            }),
        );
        emb.w_from_displacements(&u)
    }

    #[test]
    fn single_body_tracks_lie_in_an_epipolar_subspace() {
        let seq = generate(Preset::SingleBody, 4).unwrap();
        let sv = singular_values(&body_w(&seq, 0, 0));
        assert!(sv[8] <= 1e-8 * sv[0], "{sv:?}");
        assert!(sv[7] > 1e-6 * sv[0], "box should be non-planar: {sv:?}");
    }

    #[test]
    fn pure_translation_is_degenerate() {
        let seq = generate(Preset::PureTranslation, 5).unwrap();
        assert!(subspace_rank(&body_w(&seq, 0, 0)) < 8);
    }

    #[test]
    fn two_bodies_jointly_exceed_each_rank() {
        let seq = generate(Preset::TwoBody, 6).unwrap();
        let pts: Vec<[f64; 2]> = seq.tracks[0].clone();
        let (emb, norm) = EpipolarEmbedding::normalized(&pts).unwrap();
        let d = seq.displacement(0);
        let u = DVector::from_iterator(
            d.len(),
            (0..pts.len()).flat_map(|i| norm.apply_displacement([d[2 * i], d[2 * i + 1]])),
        );
        let joint = subspace_rank(&emb.w_from_displacements(&u));
        let r0 = subspace_rank(&body_w(&seq, 0, 0));
        let r1 = subspace_rank(&body_w(&seq, 1, 0));
        assert!(joint > r0 && joint > r1, "{joint} {r0} {r1}");
    }

    #[test]
    fn exact_displacement_gives_small_residual_map() {
        let seq = generate(Preset::TwoBody, 8).unwrap();
        let fs = seq.features(0, 3);
        let truth = seq.displacement(0);
        let model = crate::linearize::linearize_images(&seq.frames[0], &seq.frames[1], &fs, &truth)
            .unwrap();
        let a = model.residual_map(&truth);
        assert!(a.amax() <= 0.02, "{}", a.amax());
    }

    #[test]
    fn noisy_frames_are_reproducible() {
        let seq = generate(Preset::PureTranslation, 9).unwrap();
        let a = seq.noisy_frames(0.01, 3).unwrap();
        let b = seq.noisy_frames(0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(seq.noisy_frames(0.0, 3).unwrap(), seq.frames);
    }

    #[test]
    fn scene_without_bodies_is_rejected() {
        let mut spec = Preset::TwoBody.spec(1);
        spec.bodies.clear();
        assert!(matches!(render_scene(&spec, 1), Err(SynthError::NoBodies)));
        let mut spec = Preset::TwoBody.spec(1);
        spec.bodies[0].motion.center.z = -1.0;
        assert!(matches!(
            render_scene(&spec, 1),
            Err(SynthError::BehindCamera { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let model = LinearizedModel::from_parts(
            1,
            vec![[0.0, 0.0]],
            vec![0.0],
            vec![true],
            DVector::zeros(2),
        );
        let emb = EpipolarEmbedding::new(vec![[0.0, 0.0]]);
        let params = AdmmParams {
            gamma: 3.0,
            ..AdmmParams::default()
        };
        let zero = |r, c| DMatrix::zeros(r, c);
        let m = DVector::zeros(9);
        let u = DVector::zeros(2);
        // W = b has a single 1; C = 1 self-expresses it exactly
        let c1 = DMatrix::from_element(1, 1, 1.0);
        let val = oracle_objective(
            &u,
            &zero(1, 1),
            &zero(9, 1),
            &zero(1, 1),
            &m,
            &emb,
            &model,
            &params,
            2.0,
        );
        assert_abs_diff_eq!(val, 0.5 * 2.0 * 1.0, epsilon = 1e-15);
        let z = DMatrix::from_element(1, 1, 2.0);
        let model2 = LinearizedModel::from_parts(
            1,
            vec![[0.0, 0.0]],
            vec![-2.0],
            vec![true],
            DVector::zeros(2),
        );
        let val = oracle_objective(&u, &c1, &zero(9, 1), &z, &m, &emb, &model2, &params, 2.0);
        assert_abs_diff_eq!(val, 6.0 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn objective_matches_admm_merit() {
        for seed in 0..10 {
            let inst = RandomInstance::generate(seed, 5, 1);
            let p = inst.problem();
            let s = &inst.state;
            let a = oracle_objective(
                &s.u,
                &s.c,
                &s.e,
                &s.z,
                &s.m,
                &inst.embedding,
                &inst.model,
                &inst.params,
                s.rho,
            );
            let b = merit(s, &p, &inst.params, Regularizer::SelfExpressive);
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            let la = oracle_lagrangian(&p, &inst.params, s);
            let lb = admm::augmented_lagrangian(s, &p, &inst.params, Regularizer::SelfExpressive);
            assert!((la - lb).abs() <= 1e-10 * la.abs().max(1.0));
        }
    }

    #[test]
    fn scalar_prox_matches_hand_values() {
        // 1/2 (z - 1.2)^2 with kink weight 0.5
        let z = prox_scalar(0.5, quad_slope(|z| 0.5 * (z - 1.2) * (z - 1.2)));
        assert_abs_diff_eq!(z, 0.7, epsilon = 1e-14);
        let z = prox_scalar(0.5, quad_slope(|z| 0.5 * (z + 0.3) * (z + 0.3)));
        assert_eq!(z, 0.0);
    }

    #[test]
    fn c_oracle_returns_zero_for_zero_data() {
        let model = LinearizedModel::from_parts(
            1,
            vec![[0.0, 0.0]; 3],
            vec![0.0; 3],
            vec![true; 3],
            DVector::zeros(6),
        );
        let emb = EpipolarEmbedding::new(vec![[0.1, 0.2], [0.3, -0.4], [-0.5, 0.6]]);
        let p = Problem::new(&model, &emb).unwrap();
        let mut s = AdmmState::initial(&p, &DVector::zeros(6), 1.0);
        s.m = -emb.b();
        s.c = DMatrix::from_element(3, 3, 0.3);
        let c = oracle_minimize_block(&p, &AdmmParams::default(), &s, Block::C).unwrap();
        assert!(c.amax() < 1e-12);
    }

    #[test]
    fn oracles_agree_with_closed_forms() {
        for seed in 0..5 {
            let inst = RandomInstance::generate(seed, 5, 1);
            let p = inst.problem();
            let s = &inst.state;
            let pr = &inst.params;
            let z = oracle_minimize_block(&p, pr, s, Block::Z).unwrap();
            assert!((z - admm::update_z(s, &p, pr.gamma)).amax() < 1e-8);
            let e = oracle_minimize_block(&p, pr, s, Block::E).unwrap();
            assert!((e - admm::update_e(s, &p, pr.lambda)).amax() < 1e-8);
            let c = oracle_minimize_block(&p, pr, s, Block::C).unwrap();
            assert!((c - admm::update_c(s, &p)).amax() < 1e-8);
            let u = oracle_minimize_block(&p, pr, s, Block::U).unwrap();
            let uc = admm::update_u(s, &p, Regularizer::SelfExpressive).0;
            assert!((u.column(0) - uc).amax() < 1e-8);
            let m = oracle_minimize_block(&p, pr, s, Block::M).unwrap();
            assert!((m.column(0) - admm::update_m(s, &p)).amax() < 1e-8);
        }
    }
}
