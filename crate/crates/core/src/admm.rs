//! Five-block ADMM for the self-expressive multi-body tracking problem
//!
//! ```text
//! min  gamma ||Z||_1 + 1/2 ||C||_F^2 + lambda ||E||_1
//! s.t. Z = A(u),  W(m) = W(m) C + E,  m = P u
//! ```
//!
//! with `vec(W(m)) = b + m`. Each sweep updates `Z, E, C, u, m` in closed form,
//! then the multipliers `Y1, Y2, y`, then grows the penalty `rho` geometrically.
//! The augmented Lagrangian is
//!
//! ```text
//! L = gamma||Z||_1 + 1/2||C||^2 + lambda||E||_1 + y'(m - Pu)
//!     + <Y1, W - WC - E> + <Y2, Z - A(u)>
//!     + rho/2 (||W - WC - E||^2 + ||Z - A(u)||^2 + ||m - Pu||^2)
//! ```
//!
//! With [`Regularizer::Disabled`] only the data block survives (`Z`, `u`, `Y2`),
//! which is the plain L1 KLT problem.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epipolar::{mat_to_vec, EpipolarEmbedding};
use crate::linearize::LinearizedModel;

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("non-finite value in {block} at iteration {iteration} (rho = {rho:e})")]
    NonFinite {
        block: &'static str,
        iteration: usize,
        rho: f64,
    },
    #[error("model has {model} features but embedding has {embedding}")]
    ShapeMismatch { model: usize, embedding: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub gamma: f64,
    pub lambda: f64,
    pub rho0: f64,
    pub rho_max: f64,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            gamma: 1.8e4,
            lambda: 1.0e4,
            rho0: 0.1,
            rho_max: 1e10,
            eta: 1.1,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let bad = |msg: &str| Err(AdmmError::InvalidParams(msg.to_string()));
        if !(self.gamma > 0.0 && self.lambda > 0.0) {
            return bad("gamma and lambda must be positive");
        }
        if self.eta.is_nan() || self.eta <= 1.0 {
            return bad("eta must exceed 1");
        }
        if !(self.rho0 > 0.0 && self.rho0 <= self.rho_max) {
            return bad("need 0 < rho0 <= rho_max");
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("tolerance must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularizer {
    /// Full problem with the self-expressive epipolar term.
    SelfExpressive,
    /// Data term only.
    Disabled,
}

/// Linearized data term plus epipolar embedding, both in the same displacement units.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    model: &'a LinearizedModel,
    embedding: &'a EpipolarEmbedding,
    h: Vec<Matrix2<f64>>,
}

impl<'a> Problem<'a> {
    pub fn new(
        model: &'a LinearizedModel,
        embedding: &'a EpipolarEmbedding,
    ) -> Result<Self, AdmmError> {
        if model.len() != embedding.len() {
            return Err(AdmmError::ShapeMismatch {
                model: model.len(),
                embedding: embedding.len(),
            });
        }
        Ok(Self {
            model,
            embedding,
            h: model.normal_blocks(),
        })
    }

    pub fn model(&self) -> &LinearizedModel {
        self.model
    }

    pub fn embedding(&self) -> &EpipolarEmbedding {
        self.embedding
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.model.patch_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub u: DVector<f64>,
    pub m: DVector<f64>,
    pub y1: DMatrix<f64>,
    pub y2: DMatrix<f64>,
    pub y: DVector<f64>,
    pub rho: f64,
}

impl AdmmState {
    /// `C = 0`, multipliers zero, `Z = A(u0)`, `m = P u0`, `E = 0`.
    pub fn initial(problem: &Problem<'_>, u0: &DVector<f64>, rho: f64) -> Self {
        let n = problem.len();
        let p = problem.patch_len();
        Self {
            z: problem.model.residual_map(u0),
            e: DMatrix::zeros(9, n),
            c: DMatrix::zeros(n, n),
            u: u0.clone(),
            m: problem.embedding.apply_p(u0),
            y1: DMatrix::zeros(9, n),
            y2: DMatrix::zeros(n, p),
            y: DVector::zeros(9 * n),
            rho,
        }
    }

    pub fn w(&self, problem: &Problem<'_>) -> DMatrix<f64> {
        problem.embedding.w_matrix(&self.m)
    }
}

/// Soft-thresholding `sign(x) max(|x| - alpha, 0)`.
#[inline]
pub fn soft_threshold(x: f64, alpha: f64) -> f64 {
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

/// `Z = T_{gamma/rho}[A(u) - Y2/rho]`.
pub fn update_z(state: &AdmmState, problem: &Problem<'_>, gamma: f64) -> DMatrix<f64> {
    let a = problem.model.residual_map(&state.u);
    let alpha = gamma / state.rho;
    a.zip_map(&state.y2, |a, y| soft_threshold(a - y / state.rho, alpha))
}

/// `E = T_{lambda/rho}[W - WC + Y1/rho]`.
pub fn update_e(state: &AdmmState, problem: &Problem<'_>, lambda: f64) -> DMatrix<f64> {
    let w = state.w(problem);
    let arg = &w - &w * &state.c + &state.y1 / state.rho;
    let alpha = lambda / state.rho;
    arg.map(|x| soft_threshold(x, alpha))
}

/// Solves `(I + rho WᵀW) C = rho Wᵀ (W - E + Y1/rho)`.
///
/// Uses `(I + rho WᵀW)⁻¹ Wᵀ = Wᵀ (I + rho W Wᵀ)⁻¹`, so only a 9x9 SPD system is factored.
pub fn update_c(state: &AdmmState, problem: &Problem<'_>) -> DMatrix<f64> {
    let w = state.w(problem);
    let rho = state.rho;
    let rhs = &w - &state.e + &state.y1 / rho;
    let mut gram = &w * w.transpose() * rho;
    for k in 0..9 {
        gram[(k, k)] += 1.0;
    }
    let s = match gram.cholesky() {
        Some(chol) => chol.solve(&rhs),
        // rounding can break definiteness when rho |W|^2 is huge
        None => {
            let eig = (&w * w.transpose()).symmetric_eigen();
            let inv = eig.eigenvalues.map(|l| 1.0 / (1.0 + rho * l.max(0.0)));
            &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose() * rhs
        }
    };
    w.transpose() * s * rho
}

/// Per-feature outcome of the displacement update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSolve {
    Regular,
    /// The 2x2 system was numerically singular; only its range was updated.
    Degenerate,
}

/// Solves `(rho PᵀP + rho H) u = g + Pᵀy + rho Pᵀm`, one 2x2 block per feature.
/// `PᵀP` is diagonal, so the system is block diagonal.
pub fn update_u(
    state: &AdmmState,
    problem: &Problem<'_>,
    regularizer: Regularizer,
) -> (DVector<f64>, Vec<BlockSolve>) {
    let rho = state.rho;
    let (_, g) = problem.model.build_h_g(&state.y2, &state.z, rho);
    let mut rhs = g;
    if regularizer == Regularizer::SelfExpressive {
        rhs += problem.embedding.apply_pt(&state.y);
        rhs += problem.embedding.apply_pt(&state.m) * rho;
    }
    let n = problem.len();
    let mut u = DVector::zeros(2 * n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        let mut k = problem.h[i] * rho;
        if regularizer == Regularizer::SelfExpressive {
            let d = rho * problem.embedding.pt_p_diagonal(i);
            k[(0, 0)] += d;
            k[(1, 1)] += d;
        }
        let r = Vector2::new(rhs[2 * i], rhs[2 * i + 1]);
        let prev = Vector2::new(state.u[2 * i], state.u[2 * i + 1]);
        let (ui, s) = solve_block(&k, &r, &prev);
        u[2 * i] = ui[0];
        u[2 * i + 1] = ui[1];
        status.push(s);
    }
    (u, status)
}

fn solve_block(
    k: &Matrix2<f64>,
    r: &Vector2<f64>,
    prev: &Vector2<f64>,
) -> (Vector2<f64>, BlockSolve) {
    let eig = k.symmetric_eigen();
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let l_max = eig.eigenvalues[hi];
    let l_min = eig.eigenvalues[lo];
    if l_max <= 0.0 || l_min <= 1e-9 * l_max {
        // least-change step restricted to the well-determined directions
        let resid = r - k * prev;
        let mut step = Vector2::zeros();
        if l_max > 0.0 {
            let v = eig.eigenvectors.column(hi);
            step += v * (v.dot(&resid) / l_max);
        }
        return (prev + step, BlockSolve::Degenerate);
    }
    let mut reg = *k;
    let delta = 1e-12 * k.trace();
    reg[(0, 0)] += delta;
    reg[(1, 1)] += delta;
    let chol = reg.cholesky().expect("regularized block is SPD");
    (chol.solve(r), BlockSolve::Regular)
}

/// Closed-form `m`: with `D = I - C`, `Q = D Dᵀ`, `T = (Y1/rho - E) Dᵀ`,
/// `G = mat(y/rho - Pu)` and `B = mat(b)`, the stationarity condition of `L` in `M` is
/// `M (Q + I) = -(G + B Q + T)`.
pub fn update_m(state: &AdmmState, problem: &Problem<'_>) -> DVector<f64> {
    let n = problem.len();
    let rho = state.rho;
    let w = state.w(problem);
    let b = problem.embedding.b_matrix();
    let pu = problem.embedding.apply_p(&state.u);
    let g_vec = &state.y / rho - pu;
    let g = DMatrix::from_column_slice(9, n, g_vec.as_slice());
    let d = DMatrix::identity(n, n) - &state.c;
    // B Q and T without forming the N x N product Q
    let bq = (&b * &d) * d.transpose();
    let t = (&state.y1 / rho - &state.e) * d.transpose();
    let rhs = -(g + bq + t);
    let m = match row_space_factor(&w, &state.c) {
        Some(k) => solve_low_rank(&rhs, &w, &k),
        None => solve_dense(&rhs, &d),
    };
    mat_to_vec(&m)
}

/// `K` with `C = Wᵀ K`, if `C` lies in the row space of `W` (always true after [`update_c`]).
fn row_space_factor(w: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = (w * w.transpose()).cholesky()?;
    let k = chol.solve(&(w * c));
    let scale = c.amax().max(1.0);
    ((w.transpose() * &k - c).amax() <= 1e-10 * scale).then_some(k)
}

/// `M (D Dᵀ + I) = rhs` by a dense Cholesky solve.
fn solve_dense(rhs: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q_plus_i = d * d.transpose();
    for k in 0..q_plus_i.nrows() {
        q_plus_i[(k, k)] += 1.0;
    }
    let chol = q_plus_i
        .cholesky()
        .expect("Q + I is symmetric positive definite");
    // M (Q + I) = rhs  <=>  (Q + I) Mᵀ = rhsᵀ
    chol.solve(&rhs.transpose()).transpose()
}

/// Same system with `C = U Vᵀ`, `U = Wᵀ`, `V = Kᵀ`. Then `Q + I = 2I - L S Lᵀ` with
/// `L = [U V]`, `S = [[-VᵀV, I], [I, 0]]`, and Woodbury leaves an 18x18 solve.
fn solve_low_rank(rhs: &DMatrix<f64>, w: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.ncols();
    let mut l = DMatrix::zeros(n, 18);
    l.columns_mut(0, 9).copy_from(&w.transpose());
    l.columns_mut(9, 9).copy_from(&k.transpose());
    let vtv = k * k.transpose();
    let mut s_inv = DMatrix::zeros(18, 18);
    for i in 0..9 {
        s_inv[(i, 9 + i)] = 1.0;
        s_inv[(9 + i, i)] = 1.0;
    }
    s_inv.view_mut((9, 9), (9, 9)).copy_from(&vtv);
    let j = l.transpose() * &l * 0.5 - s_inv;
    let rl = rhs * &l;
    match j.lu().solve(&rl.transpose()) {
        Some(x) => rhs * 0.5 - x.transpose() * l.transpose() * 0.25,
        None => solve_dense(rhs, &(DMatrix::identity(n, n) - w.transpose() * k)),
    }
}

/// Infinity norms of the three constraint residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `||m - Pu||_inf`
    pub lifting: f64,
    /// `||W - WC - E||_inf`
    pub self_expression: f64,
    /// `||Z - A(u)||_inf`
    pub data: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.lifting.max(self.self_expression).max(self.data)
    }
}

struct ConstraintValues {
    lifting: DVector<f64>,
    self_expression: DMatrix<f64>,
    data: DMatrix<f64>,
}

fn constraint_values(
    state: &AdmmState,
    problem: &Problem<'_>,
    regularizer: Regularizer,
) -> ConstraintValues {
    let data = &state.z - problem.model.residual_map(&state.u);
    match regularizer {
        Regularizer::SelfExpressive => {
            let w = state.w(problem);
            ConstraintValues {
                lifting: &state.m - problem.embedding.apply_p(&state.u),
                self_expression: &w - &w * &state.c - &state.e,
                data,
            }
        }
        Regularizer::Disabled => ConstraintValues {
            lifting: DVector::zeros(0),
            self_expression: DMatrix::zeros(0, 0),
            data,
        },
    }
}

fn inf_norm<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn residuals(state: &AdmmState, problem: &Problem<'_>, regularizer: Regularizer) -> Residuals {
    constraint_values(state, problem, regularizer).residuals()
}

impl ConstraintValues {
    fn residuals(&self) -> Residuals {
        Residuals {
            lifting: inf_norm(self.lifting.iter()),
            self_expression: inf_norm(self.self_expression.iter()),
            data: inf_norm(self.data.iter()),
        }
    }

    fn squared_norm(&self) -> f64 {
        self.lifting.norm_squared() + self.self_expression.norm_squared() + self.data.norm_squared()
    }
}

fn base_objective(state: &AdmmState, params: &AdmmParams, regularizer: Regularizer) -> f64 {
    let data = params.gamma * state.z.iter().map(|v| v.abs()).sum::<f64>();
    match regularizer {
        Regularizer::SelfExpressive => {
            data + 0.5 * state.c.norm_squared()
                + params.lambda * state.e.iter().map(|v| v.abs()).sum::<f64>()
        }
        Regularizer::Disabled => data,
    }
}

/// Objective plus `rho/2` times the squared constraint violations.
pub fn merit(
    state: &AdmmState,
    problem: &Problem<'_>,
    params: &AdmmParams,
    regularizer: Regularizer,
) -> f64 {
    let cv = constraint_values(state, problem, regularizer);
    base_objective(state, params, regularizer) + 0.5 * state.rho * cv.squared_norm()
}

/// The augmented Lagrangian at `state`.
pub fn augmented_lagrangian(
    state: &AdmmState,
    problem: &Problem<'_>,
    params: &AdmmParams,
    regularizer: Regularizer,
) -> f64 {
    let cv = constraint_values(state, problem, regularizer);
    let mut value = merit(state, problem, params, regularizer) + state.y2.dot(&cv.data);
    if regularizer == Regularizer::SelfExpressive {
        value += state.y.dot(&cv.lifting) + state.y1.dot(&cv.self_expression);
    }
    value
}

/// Dual ascent on all multipliers, then `rho = min(eta rho, rho_max)`.
pub fn update_multipliers(
    state: &mut AdmmState,
    problem: &Problem<'_>,
    params: &AdmmParams,
    regularizer: Regularizer,
) {
    let cv = constraint_values(state, problem, regularizer);
    apply_multipliers(state, params, cv, regularizer);
}

fn apply_multipliers(
    state: &mut AdmmState,
    params: &AdmmParams,
    cv: ConstraintValues,
    regularizer: Regularizer,
) {
    let rho = state.rho;
    state.y2 += cv.data * rho;
    if regularizer == Regularizer::SelfExpressive {
        state.y1 += cv.self_expression * rho;
        state.y += cv.lifting * rho;
    }
    state.rho = (params.eta * rho).min(params.rho_max);
}

/// Runs one primal sweep `Z, E, C, u, m` in place and returns the per-feature solve status.
pub fn primal_sweep(
    state: &mut AdmmState,
    problem: &Problem<'_>,
    params: &AdmmParams,
    regularizer: Regularizer,
) -> Vec<BlockSolve> {
    state.z = update_z(state, problem, params.gamma);
    if regularizer == Regularizer::SelfExpressive {
        state.e = update_e(state, problem, params.lambda);
        state.c = update_c(state, problem);
    }
    let (u, status) = update_u(state, problem, regularizer);
    state.u = u;
    if regularizer == Regularizer::SelfExpressive {
        state.m = update_m(state, problem);
    }
    status
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residuals: Residuals,
    pub objective: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    /// Features whose displacement block was singular in the final sweep.
    pub degenerate: Vec<bool>,
}

impl AdmmOutcome {
    pub fn u(&self) -> &DVector<f64> {
        &self.state.u
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.state.c
    }

    pub fn final_residuals(&self) -> Option<Residuals> {
        self.history.last().map(|r| r.residuals)
    }
}

fn check_finite(state: &AdmmState, iteration: usize) -> Result<(), AdmmError> {
    let blocks: [(&'static str, &[f64]); 8] = [
        ("Z", state.z.as_slice()),
        ("E", state.e.as_slice()),
        ("C", state.c.as_slice()),
        ("u", state.u.as_slice()),
        ("m", state.m.as_slice()),
        ("Y1", state.y1.as_slice()),
        ("Y2", state.y2.as_slice()),
        ("y", state.y.as_slice()),
    ];
    for (block, values) in blocks {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AdmmError::NonFinite {
                block,
                iteration,
                rho: state.rho,
            });
        }
    }
    Ok(())
}

fn check_inputs(problem: &Problem<'_>) -> Result<(), AdmmError> {
    let model = problem.model;
    let bad_model = (0..model.len()).any(|i| {
        (0..model.patch_len()).any(|j| {
            let g = model.grad(i, j);
            !(g[0].is_finite() && g[1].is_finite() && model.tau(i, j).is_finite())
        })
    });
    let bad_points = problem.embedding.b().iter().any(|v| !v.is_finite());
    if bad_model || bad_points {
        return Err(AdmmError::NonFinite {
            block: if bad_model { "A" } else { "b" },
            iteration: 0,
            rho: f64::NAN,
        });
    }
    Ok(())
}

/// Iterates sweeps, refreshes, multiplier updates and the convergence test until all
/// three residuals are within `params.tol` or `params.max_iter` sweeps have run.
pub fn run_admm(
    problem: &Problem<'_>,
    params: &AdmmParams,
    u0: &DVector<f64>,
    regularizer: Regularizer,
) -> Result<AdmmOutcome, AdmmError> {
    params.validate()?;
    let state = AdmmState::initial(problem, u0, params.rho0);
    run_admm_from(problem, params, state, regularizer)
}

/// Same as [`run_admm`] but from an explicit starting state.
pub fn run_admm_from(
    problem: &Problem<'_>,
    params: &AdmmParams,
    mut state: AdmmState,
    regularizer: Regularizer,
) -> Result<AdmmOutcome, AdmmError> {
    params.validate()?;
    check_inputs(problem)?;
    check_finite(&state, 0)?;
    let mut history = Vec::new();
    let mut degenerate = vec![false; problem.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let status = primal_sweep(&mut state, problem, params, regularizer);
        degenerate = status
            .iter()
            .map(|s| *s == BlockSolve::Degenerate)
            .collect();
        check_finite(&state, iterations)?;
        let cv = constraint_values(&state, problem, regularizer);
        let res = cv.residuals();
        history.push(IterationRecord {
            iteration: iterations,
            residuals: res,
            objective: base_objective(&state, params, regularizer)
                + 0.5 * state.rho * cv.squared_norm(),
            rho: state.rho,
        });
        apply_multipliers(&mut state, params, cv, regularizer);
        check_finite(&state, iterations)?;
        if res.max() <= params.tol {
            converged = true;
            break;
        }
    }
    Ok(AdmmOutcome {
        state,
        converged,
        iterations,
        history,
        degenerate,
    })
}
