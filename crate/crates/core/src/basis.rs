//! Orthonormal task basis `B` (T × P) from principal component analysis, and
//! the projection `Z = Y B` into the latent task space.

use nalgebra::{DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{ensure_finite, ensure_non_empty, DenseMatrix};

/// Tolerance on `‖BᵀB − I‖_max` for a basis to count as orthonormal.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalBasis {
    b: DenseMatrix,
    explained_variance: DVector<f64>,
    total_variance: f64,
    column_means: DVector<f64>,
}

impl OrthogonalBasis {
    /// Wraps an externally supplied basis after checking `BᵀB = I`.
    ///
    /// Variance metadata is unknown for such a basis and is left at zero.
    pub fn from_matrix(b: DenseMatrix) -> Result<Self> {
        ensure_non_empty(&b, "basis")?;
        ensure_finite(&b, "basis")?;
        if b.ncols() > b.nrows() {
            return Err(Error::InvalidArgument(format!(
                "basis has {} columns but only {} rows",
                b.ncols(),
                b.nrows()
            )));
        }
        let gram = b.transpose() * &b;
        let dev = (gram - DenseMatrix::identity(b.ncols(), b.ncols())).amax();
        if dev > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        let (t, p) = b.shape();
        Ok(OrthogonalBasis {
            b,
            explained_variance: DVector::zeros(p),
            total_variance: 0.0,
            column_means: DVector::zeros(t),
        })
    }

    /// `B = I_T`, turning the low-rank model into the full Kronecker model.
    pub fn identity(t: usize) -> Self {
        OrthogonalBasis {
            b: DenseMatrix::identity(t, t),
            explained_variance: DVector::zeros(t),
            total_variance: 0.0,
            column_means: DVector::zeros(t),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn n_tasks(&self) -> usize {
        self.b.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.b.ncols()
    }

    /// Variance of the training data along each basis direction.
    pub fn explained_variance(&self) -> &DVector<f64> {
        &self.explained_variance
    }

    /// Fraction of total training variance captured by each component.
    pub fn explained_variance_ratio(&self) -> DVector<f64> {
        if self.total_variance > 0.0 {
            &self.explained_variance / self.total_variance
        } else {
            DVector::zeros(self.explained_variance.len())
        }
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }
}

/// Leading `p` principal directions of column-centred `y`.
///
/// Each column is flipped so that its largest-magnitude entry is positive,
/// which makes the result independent of solver sign choices.
pub fn fit_basis(y: &DenseMatrix, p: usize) -> Result<OrthogonalBasis> {
    ensure_non_empty(y, "response matrix")?;
    ensure_finite(y, "response matrix")?;
    let (n, t) = y.shape();
    if p == 0 || p > n.min(t) {
        return Err(Error::InvalidArgument(format!(
            "number of components {p} must lie in 1..={}",
            n.min(t)
        )));
    }

    let means = DVector::from_iterator(t, y.column_iter().map(|c| c.mean()));
    let mut centred = y.clone();
    for (mut col, m) in centred.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-m);
    }
    let total_ss = centred.norm_squared();
    if total_ss <= f64::EPSILON * y.norm_squared().max(f64::MIN_POSITIVE) || total_ss == 0.0 {
        return Err(Error::Degenerate(
            "responses have zero variance (all rows identical)".into(),
        ));
    }

    let svd = SVD::new(centred, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let dof = (n.max(2) - 1) as f64;

    let mut b = DenseMatrix::zeros(t, p);
    for k in 0..p {
        let mut col = v_t.row(k).transpose();
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        b.set_column(k, &col);
    }
    let explained_variance =
        DVector::from_iterator(p, svd.singular_values.iter().take(p).map(|s| s * s / dof));

    Ok(OrthogonalBasis {
        b,
        explained_variance,
        total_variance: total_ss / dof,
        column_means: means,
    })
}

/// Latent responses `Z = Y B`. No centring is applied.
pub fn project(basis: &OrthogonalBasis, y: &DenseMatrix) -> Result<DenseMatrix> {
    check_dims(
        "projection task count",
        basis.n_tasks(),
        y.ncols(),
        y.ncols() == basis.n_tasks(),
    )?;
    Ok(y * &basis.b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error(b: &DenseMatrix) -> f64 {
        (b.transpose() * b - DenseMatrix::identity(b.ncols(), b.ncols())).amax()
    }

    #[test]
    fn rank_one_captures_all_variance() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0]);
        let v = DVector::from_vec(vec![0.3, 0.1, -0.7, 0.2]);
        let y = &u * v.transpose();
        let basis = fit_basis(&y, 1).unwrap();
        assert!((basis.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, t) in [(10, 6), (4, 9)] {
            let y = random(&mut rng, n, t);
            let basis = fit_basis(&y, n.min(t)).unwrap();
            assert!(orthonormality_error(basis.matrix()) < 1e-8);
            let ev = basis.explained_variance();
            assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
            assert!(ev.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn spans_top_eigenvectors_of_centred_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = random(&mut rng, 20, 8);
        let basis = fit_basis(&y, 3).unwrap();

        let means = y.row_mean();
        let mut yc = y.clone();
        for mut row in yc.row_iter_mut() {
            row -= &means;
        }
        let e = sym_eig(&(yc.transpose() * &yc)).unwrap();
        let top = e.vectors.columns(0, 3).clone_owned();
        let proj_fit = basis.matrix() * basis.matrix().transpose();
        let proj_ref = &top * top.transpose();
        assert!((proj_fit - proj_ref).amax() < 1e-8);
        for k in 0..3 {
            assert!((basis.explained_variance()[k] - e.values[k] / 19.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random(&mut rng, 12, 5);
        let a = fit_basis(&y, 4).unwrap();
        let b = fit_basis(&y, 4).unwrap();
        assert_eq!(a, b);
        for col in a.matrix().column_iter() {
            let max = col.iter().cloned().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn errors() {
        let y = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(fit_basis(&y, 1), Err(Error::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random(&mut rng, 3, 5);
        assert!(fit_basis(&y, 0).is_err());
        assert!(fit_basis(&y, 4).is_err());
        let mut bad = y.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(fit_basis(&bad, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn identity_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random(&mut rng, 4, 3);
        let basis = OrthogonalBasis::identity(3);
        assert_eq!(project(&basis, &y).unwrap(), y);
        let zero = DenseMatrix::zeros(4, 3);
        assert_eq!(project(&basis, &zero).unwrap(), zero);
        assert!(project(&basis, &DenseMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn projection_reconstructs_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random(&mut rng, 9, 5);
        let basis = fit_basis(&y, 5).unwrap();
        let z = project(&basis, &y).unwrap();
        let back = z * basis.matrix().transpose();
        assert!((back - &y).amax() < 1e-8);

        // Low-rank responses reconstruct from as many components as their rank.
        let l = random(&mut rng, 9, 2);
        let r = random(&mut rng, 2, 5);
        let y2 = l * r;
        let means = y2.row_mean();
        let basis = fit_basis(&y2, 2).unwrap();
        let mut yc = y2.clone();
        for mut row in yc.row_iter_mut() {
            row -= &means;
        }
        let back = project(&basis, &yc).unwrap() * basis.matrix().transpose();
        assert!((back - yc).amax() < 1e-8);
    }

    #[test]
    fn from_matrix_validates() {
        assert!(OrthogonalBasis::from_matrix(DenseMatrix::identity(4, 2)).is_ok());
        assert!(OrthogonalBasis::from_matrix(DenseMatrix::from_element(3, 1, 1.0)).is_err());
        assert!(OrthogonalBasis::from_matrix(DenseMatrix::identity(2, 3)).is_err());
    }
}
