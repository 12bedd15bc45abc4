//! Small complex linear-algebra helpers shared by the scenario and
//! beamforming modules.

use crate::{C64, CMat};
use nalgebra::{DMatrix, SymmetricEigen};

/// Closed-form 2x2 Hermitian eigendecomposition (descending eigenvalues).
/// The second eigenvector is the exact perpendicular of the first.
fn hermitian_eigen_2x2(a: &CMat) -> (Vec<f64>, CMat) {
    let a00 = a[(0, 0)].re;
    let a11 = a[(1, 1)].re;
    let b = (a[(0, 1)] + a[(1, 0)].conj()) * C64::new(0.5, 0.0);
    let half_tr = 0.5 * (a00 + a11);
    let radius = (0.25 * (a00 - a11) * (a00 - a11) + b.norm_sqr()).sqrt();
    let l1 = half_tr + radius;
    let l2 = half_tr - radius;
    let scale = a00.abs().max(a11.abs()).max(b.norm()).max(1e-300);
    let (vx, vy) = {
        let c1 = (b, C64::new(l1 - a00, 0.0));
        let c2 = (C64::new(l1 - a11, 0.0), b.conj());
        let n1 = c1.0.norm_sqr() + c1.1.norm_sqr();
        let n2 = c2.0.norm_sqr() + c2.1.norm_sqr();
        if n1.max(n2) <= (1e-30 * scale) * (1e-30 * scale) {
            (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
        } else if n1 >= n2 {
            let n = n1.sqrt();
            (c1.0 / n, c1.1 / n)
        } else {
            let n = n2.sqrt();
            (c2.0 / n, c2.1 / n)
        }
    };
    let vectors = CMat::from_row_slice(2, 2, &[vx, -vy.conj(), vy, vx.conj()]);
    (vec![l1, l2], vectors)
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order.
///
/// Returns `(eigenvalues, eigenvectors)` where column `i` of the eigenvector
/// matrix corresponds to `eigenvalues[i]`. The input is assumed Hermitian; it
/// is symmetrized first to absorb round-off.
pub(crate) fn hermitian_eigen_desc(a: &CMat) -> (Vec<f64>, CMat) {
    if a.nrows() == 2 {
        return hermitian_eigen_2x2(a);
    }
    let sym = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Singular values of `h`, descending, computed from the smaller Gram matrix.
pub(crate) fn singular_values(h: &CMat) -> Vec<f64> {
    let gram = if h.nrows() <= h.ncols() {
        h * h.adjoint()
    } else {
        h.adjoint() * h
    };
    let (vals, _) = hermitian_eigen_desc(&gram);
    vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// `true` when every row of `h` is linearly independent, judged by the
/// smallest singular value exceeding `rel_tol` times the largest.
pub(crate) fn has_full_row_rank(h: &CMat, rel_tol: f64) -> bool {
    let sv = singular_values(h);
    let smallest = sv[h.nrows().min(h.ncols()) - 1];
    smallest > rel_tol * sv[0]
}

/// Spectral condition number sigma_max / sigma_min of `h`.
pub(crate) fn condition_number(h: &CMat) -> f64 {
    let sv = singular_values(h);
    let smallest = sv[h.nrows().min(h.ncols()) - 1];
    if smallest <= 0.0 {
        f64::INFINITY
    } else {
        sv[0] / smallest
    }
}

/// Right inverse `T = H^H (H H^H)^{-1}` of a full-row-rank matrix.
pub(crate) fn right_inverse(h: &CMat) -> Option<CMat> {
    let gram = h * h.adjoint();
    let inv = gram.try_inverse()?;
    Some(h.adjoint() * inv)
}

/// Stacks row vectors into a matrix. Panics on an empty slice.
pub(crate) fn stack_rows(rows: &[crate::CRow]) -> CMat {
    let ncols = rows[0].len();
    DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c])
}

/// Largest entry magnitude of a complex matrix.
#[cfg(test)]
pub(crate) fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CRow;

    fn sample_matrix() -> CMat {
        CMat::from_row_slice(
            2,
            3,
            &[
                C64::new(1.0, 0.5),
                C64::new(-0.3, 0.2),
                C64::new(0.8, -1.1),
                C64::new(0.1, 0.9),
                C64::new(2.0, -0.4),
                C64::new(-0.7, 0.3),
            ],
        )
    }

    #[test]
    fn eigen_2x2_closed_form_matches_general_path() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let h = CMat::from_fn(2, 3, |_, _| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let gram = &h * h.adjoint();
            let (vals, vecs) = hermitian_eigen_desc(&gram);
            assert!(vals[0] >= vals[1]);
            let lam = CMat::from_fn(2, 2, |i, j| {
                if i == j { C64::new(vals[i], 0.0) } else { C64::new(0.0, 0.0) }
            });
            let rec = &vecs * lam * vecs.adjoint();
            assert!((rec - &gram).norm() < 1e-12 * (1.0 + gram.norm()));
            // Orthonormal columns.
            let eye = vecs.adjoint() * &vecs;
            assert!((eye - CMat::identity(2, 2)).norm() < 1e-12);
        }
    }

    #[test]
    fn eigen_reconstructs_hermitian_matrix() {
        let h = sample_matrix();
        let gram = &h * h.adjoint();
        let (vals, vecs) = hermitian_eigen_desc(&gram);
        assert!(vals[0] >= vals[1]);
        let lam = CMat::from_fn(2, 2, |i, j| {
            if i == j {
                C64::new(vals[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let rec = &vecs * lam * vecs.adjoint();
        assert!((rec - gram).norm() < 1e-12);
    }

    #[test]
    fn right_inverse_satisfies_identity() {
        let h = sample_matrix();
        let t = right_inverse(&h).unwrap();
        let prod = &h * t;
        let eye = CMat::identity(2, 2);
        assert!((prod - eye).norm() < 1e-12);
    }

    #[test]
    fn rank_detects_duplicated_row() {
        let row = CRow::from_row_slice(&[C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let h = stack_rows(&[row.clone(), row]);
        assert!(!has_full_row_rank(&h, 1e-9));
        assert!(condition_number(&h) > 1e12);
    }
}
