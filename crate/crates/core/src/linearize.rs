//! First-order brightness-constancy model around an expansion point `u0`.
//!
//! For pixel `j` of patch `i` the linearized residual is
//! `A_ij = grad_ij . u_i - tau_ij` with
//! `tau_ij = grad_ij . u0_i + T(x_ij) - I(x_ij + u0_i)`.
//! Residual matrices are patch-major: row `i` holds the `(2h+1)^2` pixels of patch `i`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use thiserror::Error;

use crate::imaging::{gradient, GradientField, GrayImage, ImagingError};

#[derive(Debug, Error)]
pub enum LinearizeError {
    #[error("displacement vector has length {got}, expected {expected}")]
    DisplacementLength { expected: usize, got: usize },
    #[error("template {0}x{1} and current image {2}x{3} differ in size")]
    SizeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Feature centers in template coordinates plus the square patch half-size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    centers: Vec<[f64; 2]>,
    half: usize,
}

impl FeatureSet {
    pub fn new(centers: Vec<[f64; 2]>, half: usize) -> Self {
        Self { centers, half }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn half(&self) -> usize {
        self.half
    }

    /// Side length `2h + 1` of each patch.
    pub fn patch_side(&self) -> usize {
        2 * self.half + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch_side() * self.patch_side()
    }

    /// Offsets of the patch grid, row by row.
    pub fn offsets(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        let h = self.half as isize;
        (-h..=h).flat_map(move |dy| (-h..=h).map(move |dx| [dx as f64, dy as f64]))
    }

    /// Same patch geometry with every center multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            centers: self
                .centers
                .iter()
                .map(|c| [c[0] * factor, c[1] * factor])
                .collect(),
            half: self.half,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            centers: indices.iter().map(|&i| self.centers[i]).collect(),
            half: self.half,
        }
    }
}

/// Template, current image and the current image's gradient at one pyramid level.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub template: &'a GrayImage,
    pub current: &'a GrayImage,
    pub gradient: &'a GradientField,
}

impl<'a> FramePair<'a> {
    pub fn new(
        template: &'a GrayImage,
        current: &'a GrayImage,
        gradient: &'a GradientField,
    ) -> Result<Self, LinearizeError> {
        if template.width() != current.width() || template.height() != current.height() {
            return Err(LinearizeError::SizeMismatch(
                template.width(),
                template.height(),
                current.width(),
                current.height(),
            ));
        }
        Ok(Self {
            template,
            current,
            gradient,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    n: usize,
    patch_len: usize,
    grads: Vec<[f64; 2]>,
    tau: Vec<f64>,
    valid: Vec<bool>,
    u0: DVector<f64>,
}

impl LinearizedModel {
    /// Assembles a model from raw per-pixel data (patch-major, `n * patch_len` entries).
    /// Invalid pixels have their gradient and offset forced to zero.
    pub fn from_parts(
        patch_len: usize,
        mut grads: Vec<[f64; 2]>,
        mut tau: Vec<f64>,
        valid: Vec<bool>,
        u0: DVector<f64>,
    ) -> Self {
        let n = u0.len() / 2;
        assert_eq!(u0.len(), 2 * n, "expansion point must have even length");
        assert_eq!(grads.len(), n * patch_len);
        assert_eq!(tau.len(), n * patch_len);
        assert_eq!(valid.len(), n * patch_len);
        for k in 0..grads.len() {
            if !valid[k] {
                grads[k] = [0.0, 0.0];
                tau[k] = 0.0;
            }
        }
        Self {
            n,
            patch_len,
            grads,
            tau,
            valid,
            u0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn grad(&self, i: usize, j: usize) -> [f64; 2] {
        self.grads[i * self.patch_len + j]
    }

    pub fn tau(&self, i: usize, j: usize) -> f64 {
        self.tau[i * self.patch_len + j]
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.patch_len + j]
    }

    /// A feature is lost when none of its patch pixels could be sampled.
    pub fn is_lost(&self, i: usize) -> bool {
        !self.valid[i * self.patch_len..(i + 1) * self.patch_len]
            .iter()
            .any(|&v| v)
    }

    pub fn lost_features(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.is_lost(i)).collect()
    }

    /// `A_(u)` as an `N x patch_len` matrix.
    pub fn residual_map(&self, u: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(u.len(), 2 * self.n, "displacement length");
        DMatrix::from_fn(self.n, self.patch_len, |i, j| {
            let [gx, gy] = self.grad(i, j);
            gx * u[2 * i] + gy * u[2 * i + 1] - self.tau(i, j)
        })
    }

    /// `sum_ij |A_ij|` at `u`.
    pub fn l1_cost(&self, u: &DVector<f64>) -> f64 {
        self.residual_map(u).iter().map(|a| a.abs()).sum()
    }

    /// Per-feature normal matrices `H_i = sum_j grad_ij^T grad_ij`.
    pub fn normal_blocks(&self) -> Vec<Matrix2<f64>> {
        (0..self.n)
            .map(|i| {
                (0..self.patch_len).fold(Matrix2::zeros(), |acc, j| {
                    let g = Vector2::from(self.grad(i, j));
                    acc + g * g.transpose()
                })
            })
            .collect()
    }

    /// `H` (as 2x2 diagonal blocks) and `g` for the displacement subproblem:
    /// `g_i = sum_j (Y2_ij + rho (tau_ij + Z_ij)) grad_ij^T`.
    pub fn build_h_g(
        &self,
        y2: &DMatrix<f64>,
        z: &DMatrix<f64>,
        rho: f64,
    ) -> (Vec<Matrix2<f64>>, DVector<f64>) {
        assert_eq!(z.shape(), (self.n, self.patch_len));
        assert_eq!(y2.shape(), (self.n, self.patch_len));
        let h = self.normal_blocks();
        let mut g = DVector::zeros(2 * self.n);
        for i in 0..self.n {
            for j in 0..self.patch_len {
                let weight = y2[(i, j)] + rho * (self.tau(i, j) + z[(i, j)]);
                let [gx, gy] = self.grad(i, j);
                g[2 * i] += weight * gx;
                g[2 * i + 1] += weight * gy;
            }
        }
        (h, g)
    }

    /// Re-expresses the model for displacements measured in units of `1/scale` pixels:
    /// gradients are divided by `scale`, the expansion point multiplied. Residuals are unchanged.
    pub fn rescaled(&self, scale: f64) -> Self {
        Self {
            n: self.n,
            patch_len: self.patch_len,
            grads: self
                .grads
                .iter()
                .map(|g| [g[0] / scale, g[1] / scale])
                .collect(),
            tau: self.tau.clone(),
            valid: self.valid.clone(),
            u0: &self.u0 * scale,
        }
    }

    /// Keeps only the listed features, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut grads = Vec::with_capacity(indices.len() * self.patch_len);
        let mut tau = Vec::with_capacity(indices.len() * self.patch_len);
        let mut valid = Vec::with_capacity(indices.len() * self.patch_len);
        let mut u0 = DVector::zeros(2 * indices.len());
        for (k, &i) in indices.iter().enumerate() {
            let range = i * self.patch_len..(i + 1) * self.patch_len;
            grads.extend_from_slice(&self.grads[range.clone()]);
            tau.extend_from_slice(&self.tau[range.clone()]);
            valid.extend_from_slice(&self.valid[range]);
            u0[2 * k] = self.u0[2 * i];
            u0[2 * k + 1] = self.u0[2 * i + 1];
        }
        Self {
            n: indices.len(),
            patch_len: self.patch_len,
            grads,
            tau,
            valid,
            u0,
        }
    }
}

/// Linearizes `I(x_ij + u_i)` around `u0`. Patch pixels whose template or shifted
/// position leaves the image are masked out (zero gradient, zero offset).
pub fn linearize(
    pair: &FramePair<'_>,
    features: &FeatureSet,
    u0: &DVector<f64>,
) -> Result<LinearizedModel, LinearizeError> {
    let n = features.len();
    if u0.len() != 2 * n {
        return Err(LinearizeError::DisplacementLength {
            expected: 2 * n,
            got: u0.len(),
        });
    }
    let patch_len = features.patch_len();
    let mut grads = Vec::with_capacity(n * patch_len);
    let mut tau = Vec::with_capacity(n * patch_len);
    let mut valid = Vec::with_capacity(n * patch_len);
    for (i, c) in features.centers().iter().enumerate() {
        let (ux, uy) = (u0[2 * i], u0[2 * i + 1]);
        for [dx, dy] in features.offsets() {
            let (tx, ty) = (c[0] + dx, c[1] + dy);
            let t = pair.template.sample(tx, ty);
            let cur = pair.current.sample(tx + ux, ty + uy);
            let (g, g_clamped) = pair.gradient.sample(tx + ux, ty + uy);
            let ok = !(t.clamped || cur.clamped || g_clamped);
            valid.push(ok);
            grads.push(g);
            tau.push(g[0] * ux + g[1] * uy + t.value - cur.value);
        }
    }
    Ok(LinearizedModel::from_parts(
        patch_len,
        grads,
        tau,
        valid,
        u0.clone(),
    ))
}

/// Convenience wrapper that computes the current image's gradient first.
pub fn linearize_images(
    template: &GrayImage,
    current: &GrayImage,
    features: &FeatureSet,
    u0: &DVector<f64>,
) -> Result<LinearizedModel, LinearizeError> {
    let grad = gradient(current)?;
    let pair = FramePair::new(template, current, &grad)?;
    linearize(&pair, features, u0)
}
