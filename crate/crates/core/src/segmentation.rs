//! Motion segmentation from a self-expression coefficient matrix.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use pathfinding::prelude::{kuhn_munkres, Matrix as PfMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{soft_threshold, AdmmParams};
use crate::epipolar::{EpipolarEmbedding, EpipolarError};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("coefficient matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("need 1 <= K <= N, got K = {k} with N = {n}")]
    BadClusterCount { k: usize, n: usize },
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
}

/// `S = |C| + |Cᵀ|` with a zero diagonal. Exactly symmetric.
pub fn affinity_from_c(c: &DMatrix<f64>) -> Result<DMatrix<f64>, SegmentationError> {
    if c.nrows() != c.ncols() {
        return Err(SegmentationError::NotSquare(c.nrows(), c.ncols()));
    }
    let n = c.nrows();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = c[(i, j)].abs() + c[(j, i)].abs();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Ratio of affinity mass between ground-truth groups to the mass within them.
pub fn between_within_ratio(s: &DMatrix<f64>, truth: &[usize]) -> f64 {
    let (mut between, mut within) = (0.0, 0.0);
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if i == j {
                continue;
            }
            if truth[i] == truth[j] {
                within += s[(i, j)];
            } else {
                between += s[(i, j)];
            }
        }
    }
    if within == 0.0 {
        f64::INFINITY
    } else {
        between / within
    }
}

const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 200;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a k-means++ seeding. Returns labels and inertia.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut pick = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if pick < *d {
                    idx = i;
                    break;
                }
                pick -= d;
            }
            idx
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().expect("just pushed")));
        }
    }
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for iter in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// Renumbers labels in order of first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Normalized spectral clustering of affinity `s` into `k` groups.
pub fn spectral_cluster(
    s: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, SegmentationError> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(SegmentationError::NotSquare(n, s.ncols()));
    }
    if k == 0 || k > n {
        return Err(SegmentationError::BadClusterCount { k, n });
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let degree: Vec<f64> = (0..n).map(|i| s.row(i).sum()).collect();
    if degree.iter().all(|&d| d <= 0.0) {
        warn!("affinity is identically zero; assigning labels round-robin");
        return Ok((0..n).map(|i| i % k).collect());
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let normalized = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * s[(i, j)] * inv_sqrt[j]);
    // the bottom eigenvectors of I - D^-1/2 S D^-1/2 are the top ones of the normalized affinity
    let eig = SymmetricEigen::new(normalized);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..k]
                .iter()
                .map(|&c| eig.eigenvectors[(i, c)])
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, inertia) = kmeans_once(&points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(canonical(&best.expect("at least one restart").0))
}

/// Smallest misclassified fraction over all matchings of predicted to true labels.
pub fn segmentation_error(labels: &[usize], truth: &[usize]) -> Result<f64, SegmentationError> {
    if labels.len() != truth.len() {
        return Err(SegmentationError::LengthMismatch(labels.len(), truth.len()));
    }
    let n = labels.len();
    if n == 0 {
        return Ok(0.0);
    }
    let k = labels.iter().chain(truth).max().map_or(1, |m| m + 1);
    let mut confusion = vec![vec![0i64; k]; k];
    for (&p, &t) in labels.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let matched = if k <= 6 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            let hits = (0..k).map(|i| confusion[i][p[i]]).sum::<i64>();
            best = best.max(hits);
        });
        best
    } else {
        let weights = PfMatrix::from_rows(confusion).expect("square confusion matrix");
        kuhn_munkres(&weights).0
    };
    Ok((n as i64 - matched) as f64 / n as f64)
}

fn permute(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub labels: Vec<usize>,
    /// Present when ground truth was supplied.
    pub error_rate: Option<f64>,
}

/// Affinity, clustering and (optionally) scoring in one call.
pub fn segment(
    c: &DMatrix<f64>,
    k: usize,
    seed: u64,
    truth: Option<&[usize]>,
) -> Result<SegmentationResult, SegmentationError> {
    let s = affinity_from_c(c)?;
    let labels = spectral_cluster(&s, k, seed)?;
    let error_rate = truth.map(|t| segmentation_error(&labels, t)).transpose()?;
    Ok(SegmentationResult { labels, error_rate })
}

/// Self-expression of a fixed data matrix, `min 1/2||C||^2 + lambda||E||_1` subject to
/// `W = WC + E`, by a two-block ADMM with the same penalty schedule as the tracker.
pub fn fixed_w_self_expression(w: &DMatrix<f64>, lambda: f64, params: &AdmmParams) -> DMatrix<f64> {
    let n = w.ncols();
    let d = w.nrows();
    let mut c = DMatrix::zeros(n, n);
    let mut y1 = DMatrix::zeros(d, n);
    let mut rho = params.rho0;
    let wwt = w * w.transpose();
    for _ in 0..params.max_iter {
        let arg = w - w * &c + &y1 / rho;
        let e = arg.map(|x| soft_threshold(x, lambda / rho));
        let rhs = w - &e + &y1 / rho;
        let mut gram = &wwt * rho;
        for k in 0..d {
            gram[(k, k)] += 1.0;
        }
        let chol = gram.cholesky().expect("I + rho W Wᵀ is SPD");
        c = w.transpose() * chol.solve(&rhs) * rho;
        let resid = w - w * &c - &e;
        y1 += &resid * rho;
        rho = (params.eta * rho).min(params.rho_max);
        if resid.amax() <= params.tol {
            break;
        }
    }
    c
}

/// Two-step baseline: embed already tracked displacements, solve the fixed-W
/// self-expression, then cluster.
pub fn two_step_segment(
    template: &[[f64; 2]],
    displacement: &[[f64; 2]],
    k: usize,
    lambda: f64,
    params: &AdmmParams,
    seed: u64,
) -> Result<Vec<usize>, SegmentationError> {
    if template.len() != displacement.len() {
        return Err(SegmentationError::LengthMismatch(
            template.len(),
            displacement.len(),
        ));
    }
    let (embedding, norm) = EpipolarEmbedding::normalized(template)?;
    let u = nalgebra::DVector::from_iterator(
        2 * template.len(),
        displacement
            .iter()
            .flat_map(|&d| norm.apply_displacement(d)),
    );
    let w = embedding.w_from_displacements(&u);
    let c = fixed_w_self_expression(&w, lambda, params);
    spectral_cluster(&affinity_from_c(&c)?, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_blocks(n1: usize, n2: usize) -> DMatrix<f64> {
        let n = n1 + n2;
        DMatrix::from_fn(n, n, |i, j| {
            if i != j && (i < n1) == (j < n1) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn affinity_of_zero_and_block_structure() {
        assert_eq!(
            affinity_from_c(&DMatrix::zeros(4, 4)).unwrap(),
            DMatrix::zeros(4, 4)
        );
        let c = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.5, -0.3, 0.0, 0.0, 0.2, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, -0.4, 0.9,
            ],
        );
        let s = affinity_from_c(&c).unwrap();
        assert_eq!(s, s.transpose());
        assert_eq!(s[(0, 1)], 0.5);
        assert_eq!(s[(2, 3)], 1.1);
        assert_eq!(s[(0, 2)], 0.0);
        assert!((0..4).all(|i| s[(i, i)] == 0.0));
        assert!(affinity_from_c(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn exact_blocks_split_perfectly() {
        let s = two_blocks(7, 5);
        let labels = spectral_cluster(&s, 2, 1).unwrap();
        let truth: Vec<usize> = (0..12).map(|i| usize::from(i >= 7)).collect();
        assert_eq!(segmentation_error(&labels, &truth).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_is_all_zero() {
        assert_eq!(
            spectral_cluster(&two_blocks(3, 3), 1, 0).unwrap(),
            vec![0; 6]
        );
        assert!(spectral_cluster(&two_blocks(3, 3), 7, 0).is_err());
        assert!(spectral_cluster(&two_blocks(3, 3), 0, 0).is_err());
    }

    #[test]
    fn noisy_blocks_still_split() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = two_blocks(20, 20);
        for i in 0..40 {
            for j in (i + 1)..40 {
                if s[(i, j)] == 0.0 && rng.random_range(0.0..1.0) < 0.01 {
                    s[(i, j)] = 1.0;
                    s[(j, i)] = 1.0;
                }
            }
        }
        let labels = spectral_cluster(&s, 2, 3).unwrap();
        let truth: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert_eq!(segmentation_error(&labels, &truth).unwrap(), 0.0);
    }

    #[test]
    fn zero_affinity_gives_deterministic_labels() {
        let a = spectral_cluster(&DMatrix::zeros(5, 5), 2, 1).unwrap();
        assert_eq!(a, vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(
            segmentation_error(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(),
            0.0
        );
        assert_eq!(
            segmentation_error(&[1, 0, 0, 1], &[0, 1, 1, 0]).unwrap(),
            0.0
        );
        assert_eq!(
            segmentation_error(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(),
            0.25
        );
        assert_eq!(
            segmentation_error(&[0, 0, 0, 0], &[0, 1, 1, 1]).unwrap(),
            0.25
        );
        assert!(segmentation_error(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn hungarian_path_for_many_labels() {
        let truth: Vec<usize> = (0..40).map(|i| i % 8).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| (t + 3) % 8).collect();
        assert_eq!(segmentation_error(&pred, &truth).unwrap(), 0.0);
        let mut wrong = pred.clone();
        wrong[0] = (wrong[0] + 1) % 8;
        assert_eq!(segmentation_error(&wrong, &truth).unwrap(), 1.0 / 40.0);
    }

    #[test]
    fn fixed_w_self_expression_is_block_diagonal_for_independent_subspaces() {
        // columns from two orthogonal 2D subspaces of R^9
        let w = DMatrix::from_fn(9, 6, |r, c| match (r, c) {
            (0, 0) | (1, 1) | (2, 3) | (3, 4) => 1.0,
            (0, 2) | (1, 2) => 0.5,
            (2, 5) => -0.7,
            (3, 5) => 0.2,
            _ => 0.0,
        });
        let c = fixed_w_self_expression(&w, 1e4, &AdmmParams::default());
        for i in 0..3 {
            for j in 3..6 {
                assert!(c[(i, j)].abs() < 1e-8 && c[(j, i)].abs() < 1e-8);
            }
        }
        assert!((&w * &c - &w).amax() < 1e-5);
    }

    proptest! {
        #[test]
        fn error_is_permutation_invariant(truth in prop::collection::vec(0usize..3, 1..30), shift in 0usize..3) {
            let pred: Vec<usize> = truth.iter().map(|&t| (t + shift) % 3).collect();
            prop_assert_eq!(segmentation_error(&pred, &truth).unwrap(), 0.0);
        }

        #[test]
        fn clustering_is_deterministic(seed in 0u64..1000) {
            let s = two_blocks(6, 9);
            prop_assert_eq!(spectral_cluster(&s, 2, seed).unwrap(), spectral_cluster(&s, 2, seed).unwrap());
        }
    }
}
