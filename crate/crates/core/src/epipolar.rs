//! Epipolar subspace embedding.
//!
//! A correspondence `x -> x'` lifts to `w = vec(x̄' x̄ᵀ)` (column-major), which is
//! orthogonal to `vec(F)` for the fundamental matrix of its rigid motion. Stacking
//! the lifted features gives `vec(W) = b + P u`, where `b_i = vec(x̄_i x̄_iᵀ)` and
//! `P` is block diagonal with `9 x 2` blocks `[x̄_i ⊗ e1, x̄_i ⊗ e2]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EpipolarError {
    #[error("vector length {len} is not a multiple of {rows}")]
    BadLength { len: usize, rows: usize },
    #[error("cannot normalize a point set whose points all coincide")]
    Degenerate,
}

/// `vec(x̄' x̄ᵀ) = (x x', x y', x, y x', y y', y, x', y', 1)`.
pub fn embed_point(x: [f64; 2], xp: [f64; 2]) -> [f64; 9] {
    let [u, v] = x;
    let [up, vp] = xp;
    [u * up, u * vp, u, v * up, v * vp, v, up, vp, 1.0]
}

/// Column-major reshape of a vector into a `rows x (len / rows)` matrix.
pub fn vec_to_mat(v: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>, EpipolarError> {
    if rows == 0 || !v.len().is_multiple_of(rows) {
        return Err(EpipolarError::BadLength { len: v.len(), rows });
    }
    Ok(DMatrix::from_column_slice(
        rows,
        v.len() / rows,
        v.as_slice(),
    ))
}

pub fn mat_to_vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Isotropic similarity taking pixel coordinates to zero mean and RMS radius √2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: [f64; 2],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn fit(points: &[[f64; 2]]) -> Result<Self, EpipolarError> {
        if points.is_empty() {
            return Err(EpipolarError::Degenerate);
        }
        let n = points.len() as f64;
        let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let ms = points
            .iter()
            .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
            .sum::<f64>()
            / n;
        let rms = ms.sqrt();
        if rms.is_nan() || rms <= 1e-12 * (1.0 + cx.abs().max(cy.abs())) {
            return Err(EpipolarError::Degenerate);
        }
        Ok(Self {
            center: [cx, cy],
            scale: std::f64::consts::SQRT_2 / rms,
        })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.center[0]) * self.scale,
            (p[1] - self.center[1]) * self.scale,
        ]
    }

    pub fn invert(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] / self.scale + self.center[0],
            p[1] / self.scale + self.center[1],
        ]
    }

    /// Displacements only see the scale.
    pub fn apply_displacement(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0] * self.scale, u[1] * self.scale]
    }

    pub fn invert_displacement(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0] / self.scale, u[1] / self.scale]
    }

    /// Homogeneous 3x3 form.
    pub fn matrix(&self) -> Matrix3<f64> {
        let s = self.scale;
        Matrix3::new(
            s,
            0.0,
            -s * self.center[0],
            0.0,
            s,
            -s * self.center[1],
            0.0,
            0.0,
            1.0,
        )
    }

    /// Composition `self ∘ inner` (apply `inner` first).
    pub fn compose(&self, inner: &Normalization) -> Normalization {
        let shifted = self.invert([0.0, 0.0]);
        let c = inner.invert(shifted);
        Normalization {
            center: c,
            scale: self.scale * inner.scale,
        }
    }

    pub fn inverse(&self) -> Normalization {
        Normalization {
            center: [-self.center[0] * self.scale, -self.center[1] * self.scale],
            scale: 1.0 / self.scale,
        }
    }
}

/// Template points (already in the working coordinate frame) with the base vector `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarEmbedding {
    points: Vec<[f64; 2]>,
    b: DVector<f64>,
}

impl EpipolarEmbedding {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let mut b = DVector::zeros(9 * points.len());
        for (i, &p) in points.iter().enumerate() {
            b.rows_mut(9 * i, 9).copy_from_slice(&embed_point(p, p));
        }
        Self { points, b }
    }

    /// Normalizes pixel-space template points and embeds them.
    pub fn normalized(pixel_points: &[[f64; 2]]) -> Result<(Self, Normalization), EpipolarError> {
        let norm = Normalization::fit(pixel_points)?;
        let pts = pixel_points.iter().map(|&p| norm.apply(p)).collect();
        Ok((Self::new(pts), norm))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `B`, the 9 x N matrix form of `b`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(9, self.len(), self.b.as_slice())
    }

    /// `P u` without materializing `P`.
    pub fn apply_p(&self, u: &DVector<f64>) -> DVector<f64> {
        assert_eq!(u.len(), 2 * self.len(), "displacement length");
        let mut out = DVector::zeros(9 * self.len());
        for (i, &[x, y]) in self.points.iter().enumerate() {
            let (ux, uy) = (u[2 * i], u[2 * i + 1]);
            let hom = [x, y, 1.0];
            for (c, &coord) in hom.iter().enumerate() {
                out[9 * i + 3 * c] = coord * ux;
                out[9 * i + 3 * c + 1] = coord * uy;
            }
        }
        out
    }

    /// `Pᵀ v` for a 9N vector.
    pub fn apply_pt(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), 9 * self.len(), "embedding length");
        let mut out = DVector::zeros(2 * self.len());
        for (i, &[x, y]) in self.points.iter().enumerate() {
            let hom = [x, y, 1.0];
            for (c, &coord) in hom.iter().enumerate() {
                out[2 * i] += coord * v[9 * i + 3 * c];
                out[2 * i + 1] += coord * v[9 * i + 3 * c + 1];
            }
        }
        out
    }

    /// `PᵀP` is diagonal: both entries of feature `i` equal `‖x̄_i‖²`.
    pub fn pt_p_diagonal(&self, i: usize) -> f64 {
        let [x, y] = self.points[i];
        x * x + y * y + 1.0
    }

    /// Dense `P̄ = blockdiag(x̄_i ⊗ I3)`, 9N x 3N.
    pub fn p_bar_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(9 * n, 3 * n);
        for (i, &[x, y]) in self.points.iter().enumerate() {
            let block = Vector3::new(x, y, 1.0).kronecker(&Matrix3::identity());
            p.view_mut((9 * i, 3 * i), (9, 3)).copy_from(&block);
        }
        p
    }

    /// Dense `P`: `P̄` with every third column removed.
    pub fn p_dense(&self) -> DMatrix<f64> {
        let bar = self.p_bar_dense();
        let keep: Vec<usize> = (0..bar.ncols()).filter(|c| c % 3 != 2).collect();
        DMatrix::from_fn(bar.nrows(), keep.len(), |r, c| bar[(r, keep[c])])
    }

    /// `W = B + M`.
    pub fn w_matrix(&self, m: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(m.len(), 9 * self.len(), "embedding length");
        DMatrix::from_fn(9, self.len(), |r, c| self.b[9 * c + r] + m[9 * c + r])
    }

    /// `W_(u)` assembled point by point from tracked positions.
    pub fn w_from_displacements(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(9, self.len());
        for (i, &p) in self.points.iter().enumerate() {
            let tracked = [p[0] + u[2 * i], p[1] + u[2 * i + 1]];
            w.column_mut(i).copy_from_slice(&embed_point(p, tracked));
        }
        w
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// Singular values in descending order.
pub fn singular_values(w: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = w
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `1e-8` times the largest.
pub fn subspace_rank(w: &DMatrix<f64>) -> usize {
    let s = singular_values(w);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > 1e-8 * top).count(),
        _ => 0,
    }
}

/// Fundamental matrix with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    f: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// `F` for cameras `K[I|0]` and `K[R|t]`, i.e. points moving as `X' = R X + t`.
    /// Returns `None` for a zero translation, where `F` is undefined.
    pub fn from_motion(k: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<Self> {
        if t.norm() <= 1e-15 {
            return None;
        }
        let k_inv = k.try_inverse()?;
        let f = k_inv.transpose() * t.cross_matrix() * r * k_inv;
        Some(Self::from_matrix(f))
    }

    pub fn from_matrix(f: Matrix3<f64>) -> Self {
        Self { f: f / f.norm() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.f
    }

    /// Column-major `vec(F)`, so that `fᵀ embed_point(x, x') = x̄'ᵀ F x̄`.
    pub fn vectorized(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out.copy_from_slice(self.f.as_slice());
        out
    }

    pub fn residual(&self, x: [f64; 2], xp: [f64; 2]) -> f64 {
        let a = Vector3::new(x[0], x[1], 1.0);
        let b = Vector3::new(xp[0], xp[1], 1.0);
        b.dot(&(self.f * a))
    }

    /// The same constraint expressed in normalized coordinates (both views share `norm`).
    pub fn in_normalized(&self, norm: &Normalization) -> Self {
        let t_inv = norm
            .matrix()
            .try_inverse()
            .expect("similarity is invertible");
        Self::from_matrix(t_inv.transpose() * self.f * t_inv)
    }
}
