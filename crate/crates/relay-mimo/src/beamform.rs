//! Receive and transmit beamforming.
//!
//! Phase 1 (BS transmitting): each receiver applies the conjugate transpose
//! of its channel's left singular matrix, so its effective downlink matrix
//! `S V^H` has mutually orthogonal rows with norms equal to the singular
//! values. Phase 2 (BS and RNs transmitting): each UE picks one receive
//! matrix that approximately diagonalizes the Gram matrices of all its
//! incoming channels at once, so the effective rows stay as close to
//! orthogonal as a single matrix allows.
//!
//! On the transmit side, the stacked selected rows `H` are inverted from the
//! right, `T = H^H (H H^H)^{-1}`, which nulls all intra-group interference;
//! the columns of `T` are then normalized to unit power and the squared
//! normalization weights divided by the noise give the effective
//! channel-to-noise ratio of each stream.

use crate::linalg;
use crate::{C64, CMat, CRow};
use thiserror::Error;

/// Relative threshold under which a singular value (or effective row norm)
/// counts as zero.
pub const SINGULAR_REL_TOL: f64 = 1e-9;

/// Condition-number cutoff beyond which a right inverse is declared
/// infeasible; such groups are discarded rather than regularized so the
/// zero-forcing identity stays exact.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Default sweep limit for the iterative joint diagonalizer.
pub const JOINT_DIAG_MAX_SWEEPS: usize = 200;

/// Default relative-residual tolerance for the iterative joint diagonalizer.
pub const JOINT_DIAG_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BeamformError {
    #[error("input matrix is rank deficient")]
    RankDeficient,
    #[error("stacked rows ({rows}) exceed transmit antennas ({antennas})")]
    TooManyRows { rows: usize, antennas: usize },
    #[error("stacked matrix is ill-conditioned (cond = {0:.3e}); group infeasible")]
    IllConditioned(f64),
    #[error("joint diagonalization produced a singular transform")]
    SingularTransform,
    #[error("empty input")]
    EmptyInput,
}

/// Effective downlink channel after receive beamforming: the SMC rows of one
/// receiver, strongest first.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    /// Receive-beamforming matrix applied on the left of the channel.
    pub receive_bf: CMat,
    /// Non-zero effective rows (the SMC vectors), in descending norm order.
    pub rows: Vec<CRow>,
    /// Row norms; for the SVD construction these equal the singular values.
    pub row_norms: Vec<f64>,
}

/// SVD-based receive beamforming for a phase-1 receiver.
///
/// The receive matrix is `U^H`; the effective channel `U^H H = S V^H` keeps
/// exactly `rank(H)` non-zero orthogonal rows.
pub fn svd_receive_bf(h: &CMat) -> Result<EffectiveChannel, BeamformError> {
    let gram = h * h.adjoint();
    let (eigs, u) = linalg::hermitian_eigen_desc(&gram);
    let sigma: Vec<f64> = eigs.iter().map(|&v| v.max(0.0).sqrt()).collect();
    let receive_bf = u.adjoint();
    let effective = &receive_bf * h;
    let full = h.nrows().min(h.ncols());
    let mut rows = Vec::new();
    let mut row_norms = Vec::new();
    for i in 0..h.nrows() {
        if sigma[i] > SINGULAR_REL_TOL * sigma[0] {
            rows.push(effective.row(i).into_owned());
            row_norms.push(sigma[i]);
        }
    }
    if rows.len() < full {
        return Err(BeamformError::RankDeficient);
    }
    Ok(EffectiveChannel {
        receive_bf,
        rows,
        row_norms,
    })
}

/// Result of joint diagonalization: the receive matrix and the residual of
/// the least-squares objective it minimized.
#[derive(Debug, Clone)]
pub struct JointDiagResult {
    /// Receive-beamforming matrix with unit-norm rows.
    pub receive_bf: CMat,
    /// Final value of the diagonalization objective (0 for the exact routes).
    pub objective: f64,
}

/// Least-squares joint-diagonalization objective for a candidate inverse
/// transform `b`: `sum_m ||A_m - B diag_m B^H||_F^2` with the per-matrix
/// diagonal targets chosen optimally for this `b`.
pub fn ls_diag_objective(mats: &[CMat], b: &CMat) -> f64 {
    let lambdas = solve_diag_targets(mats, b);
    residual_with_targets(mats, b, &lambdas)
}

/// Sum of squared off-diagonal magnitudes of `r * a * r^H` over all inputs,
/// divided by the total squared norm; measures how diagonal the transformed
/// Gram matrices are.
pub fn offdiag_ratio(mats: &[CMat], r: &CMat) -> f64 {
    let mut off = 0.0;
    let mut total = 0.0;
    for a in mats {
        let t = r * a * r.adjoint();
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                let m = t[(i, j)].norm_sqr();
                total += m;
                if i != j {
                    off += m;
                }
            }
        }
    }
    if total > 0.0 {
        (off / total).sqrt()
    } else {
        0.0
    }
}

fn normalize_rows(mut r: CMat) -> Result<CMat, BeamformError> {
    for i in 0..r.nrows() {
        let norm = r.row(i).norm();
        if norm <= 0.0 {
            return Err(BeamformError::SingularTransform);
        }
        let scale = C64::new(1.0 / norm, 0.0);
        for j in 0..r.ncols() {
            r[(i, j)] *= scale;
        }
    }
    Ok(r)
}

/// Orders the rows of `r` by decreasing aggregate effective gain over `mats`.
fn sort_rows_by_gain(r: CMat, mats: &[CMat]) -> CMat {
    let n = r.nrows();
    let mut gains = vec![0.0f64; n];
    for a in mats {
        let t = &r * a * r.adjoint();
        for (i, g) in gains.iter_mut().enumerate() {
            *g += t[(i, i)].re;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| gains[j].partial_cmp(&gains[i]).unwrap_or(std::cmp::Ordering::Equal));
    CMat::from_fn(n, r.ncols(), |i, j| r[(order[i], j)])
}

/// Finds a single receive matrix that jointly diagonalizes a family of
/// Hermitian PSD Gram matrices.
///
/// One matrix reduces to its eigendecomposition and two matrices to the
/// Hermitian pencil (exact in both cases); three or more run an alternating
/// least-squares minimization of the diagonalization objective. The returned
/// matrix has unit-norm rows so per-stream noise power is unchanged.
pub fn joint_diagonalize(
    mats: &[CMat],
    max_iter: usize,
    tol: f64,
) -> Result<JointDiagResult, BeamformError> {
    if mats.is_empty() {
        return Err(BeamformError::EmptyInput);
    }
    let n = mats[0].nrows();
    debug_assert!(mats.iter().all(|a| a.nrows() == n && a.ncols() == n));

    if mats.len() == 1 {
        let (_, u) = linalg::hermitian_eigen_desc(&mats[0]);
        let r = normalize_rows(u.adjoint())?;
        return Ok(JointDiagResult {
            receive_bf: r,
            objective: 0.0,
        });
    }

    if mats.len() == 2 {
        if let Some(r) = pencil_diagonalize(&mats[0], &mats[1]) {
            let r = sort_rows_by_gain(r, mats);
            let r = normalize_rows(r)?;
            return Ok(JointDiagResult {
                receive_bf: r,
                objective: 0.0,
            });
        }
        // Singular second matrix: fall through to the iterative method.
    }

    iterative_diagonalize(mats, max_iter, tol)
}

/// Exact two-matrix diagonalization through the Hermitian pencil
/// `A0 x = lambda A1 x`: with `A1 = L L^H` and the eigenvectors `Q` of
/// `L^{-1} A0 L^{-H}`, the congruence `R = (L^{-H} Q)^H` diagonalizes both
/// matrices. Returns `None` when `A1` has no Cholesky factor.
fn pencil_diagonalize(a0: &CMat, a1: &CMat) -> Option<CMat> {
    let sym = (a1 + a1.adjoint()) * C64::new(0.5, 0.0);
    let chol = sym.cholesky()?;
    let l = chol.l();
    // C = L^{-1} A0 L^{-H}
    let y = l.solve_lower_triangular(a0)?;
    let w = l.solve_lower_triangular(&y.adjoint())?;
    let c = w.adjoint();
    let (_, q) = linalg::hermitian_eigen_desc(&c);
    // X = L^{-H} Q  =>  solve L^H X = Q
    let x = l.adjoint().solve_upper_triangular(&q)?;
    Some(x.adjoint())
}

/// Optimal diagonal targets for fixed `b` (per input matrix): solves the
/// normal equations with Gram matrix `|b_i^H b_j|^2`.
fn solve_diag_targets(mats: &[CMat], b: &CMat) -> Vec<Vec<f64>> {
    let n = b.ncols();
    let bhb = b.adjoint() * b;
    let gram = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| bhb[(i, j)].norm_sqr());
    let lu = gram.lu();
    mats.iter()
        .map(|a| {
            let rhs = nalgebra::DVector::<f64>::from_fn(n, |i, _| {
                let bi = b.column(i);
                (bi.adjoint() * a * bi)[(0, 0)].re
            });
            match lu.solve(&rhs) {
                Some(sol) => sol.iter().copied().collect(),
                None => rhs.iter().copied().collect(),
            }
        })
        .collect()
}

fn residual_with_targets(mats: &[CMat], b: &CMat, lambdas: &[Vec<f64>]) -> f64 {
    let n = b.ncols();
    let mut total = 0.0;
    for (a, lam) in mats.iter().zip(lambdas) {
        let mut rec = CMat::zeros(a.nrows(), a.ncols());
        for i in 0..n {
            let bi = b.column(i);
            rec += (&bi * bi.adjoint()) * C64::new(lam[i], 0.0);
        }
        total += (a - rec).norm_squared();
    }
    total
}

/// Alternating least-squares diagonalization: update the diagonal targets in
/// closed form, then each column of the inverse transform via the dominant
/// eigenvector of its weighted residual. Monotone in the objective.
fn iterative_diagonalize(
    mats: &[CMat],
    max_iter: usize,
    tol: f64,
) -> Result<JointDiagResult, BeamformError> {
    let n = mats[0].nrows();
    // Start from the better of the identity and the eigenbasis of the sum.
    let mut sum = CMat::zeros(n, n);
    for a in mats {
        sum += a;
    }
    let (_, eigvecs) = linalg::hermitian_eigen_desc(&sum);
    let candidates = [CMat::identity(n, n), eigvecs];
    let mut b = candidates
        .iter()
        .min_by(|x, y| {
            ls_diag_objective(mats, x)
                .partial_cmp(&ls_diag_objective(mats, y))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap()
        .clone();

    let scale: f64 = mats.iter().map(|a| a.norm_squared()).sum::<f64>().max(1e-300);
    let mut lambdas = solve_diag_targets(mats, &b);
    let mut prev = residual_with_targets(mats, &b, &lambdas);

    for _ in 0..max_iter {
        // Column phase: b_l <- sqrt(beta / sum_m lambda_{m,l}^2) v, with
        // (beta, v) the dominant eigenpair of sum_m lambda_{m,l} P_m.
        for l in 0..n {
            let mut q = CMat::zeros(n, n);
            let mut lam_sq = 0.0;
            for (a, lam) in mats.iter().zip(&lambdas) {
                let mut p = a.clone();
                for i in 0..n {
                    if i == l {
                        continue;
                    }
                    let bi = b.column(i);
                    p -= (&bi * bi.adjoint()) * C64::new(lam[i], 0.0);
                }
                q += p * C64::new(lam[l], 0.0);
                lam_sq += lam[l] * lam[l];
            }
            if lam_sq <= 0.0 {
                continue;
            }
            let (vals, vecs) = linalg::hermitian_eigen_desc(&q);
            if vals[0] > 0.0 {
                let r = (vals[0] / lam_sq).sqrt();
                let v = vecs.column(0);
                for i in 0..n {
                    b[(i, l)] = v[i] * C64::new(r, 0.0);
                }
            }
        }
        lambdas = solve_diag_targets(mats, &b);
        let cur = residual_with_targets(mats, &b, &lambdas);
        if (prev - cur).abs() <= tol * scale {
            prev = cur;
            break;
        }
        prev = cur;
    }

    let r = b.try_inverse().ok_or(BeamformError::SingularTransform)?;
    let r = sort_rows_by_gain(r, mats);
    let r = normalize_rows(r)?;
    Ok(JointDiagResult {
        receive_bf: r,
        objective: prev,
    })
}

/// A zero-forcing transmit matrix with unit-power normalization.
#[derive(Debug, Clone)]
pub struct ZfbfResult {
    /// Right inverse of the stacked rows (normalization not applied).
    pub transmit: CMat,
    /// Diagonal normalization weights, one per served stream: `1/||t_i||`.
    pub weights: Vec<f64>,
    /// Effective CNR of each served stream: `|w_i|^2 / (dg * N0 * W)`, 1/W.
    pub cnrs: Vec<f64>,
}

fn right_inverse_checked(rows: &[CRow], antennas: usize) -> Result<CMat, BeamformError> {
    if rows.is_empty() {
        return Err(BeamformError::EmptyInput);
    }
    if rows.len() > antennas {
        return Err(BeamformError::TooManyRows {
            rows: rows.len(),
            antennas,
        });
    }
    let h = linalg::stack_rows(rows);
    let cond = linalg::condition_number(&h);
    if !(cond < CONDITION_LIMIT) {
        return Err(BeamformError::IllConditioned(cond));
    }
    linalg::right_inverse(&h).ok_or(BeamformError::IllConditioned(f64::INFINITY))
}

/// Phase-1 zero-forcing at the BS over the selected (refined) rows.
///
/// `noise` is `dg * N0 * W`. Every selected row is a served stream.
pub fn zfbf_phase1(rows: &[CRow], noise: f64) -> Result<ZfbfResult, BeamformError> {
    let antennas = rows.first().map(|r| r.len()).unwrap_or(0);
    let t = right_inverse_checked(rows, antennas)?;
    let mut weights = Vec::with_capacity(rows.len());
    let mut cnrs = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let w = 1.0 / t.column(i).norm();
        weights.push(w);
        cnrs.push(w * w / noise);
    }
    Ok(ZfbfResult {
        transmit: t,
        weights,
        cnrs,
    })
}

/// One phase-2 transmitter's stack: the rows it serves plus the auxiliary
/// rows it must null (the other transmitters' victims seen from here).
#[derive(Debug, Clone)]
pub struct TransmitterStack {
    pub served: Vec<CRow>,
    pub auxiliary: Vec<CRow>,
}

/// Phase-2 distributed zero-forcing: each transmitter inverts its own stack
/// of served plus auxiliary rows. Auxiliary columns carry zero power, so
/// weights and CNRs are reported for served rows only.
pub fn zfbf_phase2(
    stacks: &[TransmitterStack],
    noise: f64,
) -> Result<Vec<ZfbfResult>, BeamformError> {
    stacks
        .iter()
        .map(|stack| {
            let antennas = stack
                .served
                .first()
                .or_else(|| stack.auxiliary.first())
                .map(|r| r.len())
                .unwrap_or(0);
            let mut rows = stack.served.clone();
            rows.extend(stack.auxiliary.iter().cloned());
            let t = right_inverse_checked(&rows, antennas)?;
            let mut weights = Vec::with_capacity(stack.served.len());
            let mut cnrs = Vec::with_capacity(stack.served.len());
            for i in 0..stack.served.len() {
                let w = 1.0 / t.column(i).norm();
                weights.push(w);
                cnrs.push(w * w / noise);
            }
            Ok(ZfbfResult {
                transmit: t,
                weights,
                cnrs,
            })
        })
        .collect()
}
