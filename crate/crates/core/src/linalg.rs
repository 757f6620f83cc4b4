//! Kronecker-product algebra and the symmetric eigendecomposition every
//! efficient likelihood and prediction formula is built on.
//!
//! Matrices are `nalgebra` column-major dense matrices. `vec` stacks columns
//! (first column first), which is also the raw storage order, so
//! `(A ⊗ B) vec(C) = vec(B C Aᵀ)` holds with no transposition anywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix, column-major.
pub type DenseMatrix = DMatrix<f64>;

/// Asymmetry tolerated by [`sym_eig`], relative to the largest entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Relative threshold below which an eigenvalue counts as zero for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Smallest admissible entry of `s_c ⊗ s_r + σ²` before taking reciprocals.
pub const KTILDE_FLOOR: f64 = 1e-12;

/// `A = U diag(S) Uᵀ` with `S` sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub vectors: DenseMatrix,
    pub values: DVector<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = scale_columns(&self.vectors, self.values.as_slice());
        scaled * self.vectors.transpose()
    }

    /// Eigenvalues with negatives (round-off on a PSD input) replaced by zero.
    pub fn clamped_values(&self) -> DVector<f64> {
        self.values.map(|v| v.max(0.0))
    }

    /// Number of eigenvalues above `RANK_TOLERANCE · max(S)`.
    pub fn rank(&self) -> usize {
        let top = self.values.iter().cloned().fold(0.0_f64, f64::max);
        if top <= 0.0 {
            return 0;
        }
        self.values
            .iter()
            .filter(|&&v| v > RANK_TOLERANCE * top)
            .count()
    }
}

pub(crate) fn ensure_finite(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_non_empty(m: &DenseMatrix, what: &'static str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// Returns `m · diag(d)`.
pub(crate) fn scale_columns(m: &DenseMatrix, d: &[f64]) -> DenseMatrix {
    let mut out = m.clone();
    for (mut col, &s) in out.column_iter_mut().zip(d) {
        col *= s;
    }
    out
}

/// Returns `diag(d) · m`.
pub(crate) fn scale_rows(m: &DenseMatrix, d: &[f64]) -> DenseMatrix {
    let mut out = m.clone();
    for (mut row, &s) in out.row_iter_mut().zip(d) {
        row *= s;
    }
    out
}

/// Kronecker product `a ⊗ b`; block `(i, j)` of the result is `a[i, j] · b`.
pub fn kron_product(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    ensure_non_empty(a, "kron_product lhs")?;
    ensure_non_empty(b, "kron_product rhs")?;
    let rows = a.nrows().checked_mul(b.nrows()).ok_or(Error::SizeOverflow)?;
    let cols = a.ncols().checked_mul(b.ncols()).ok_or(Error::SizeOverflow)?;
    rows.checked_mul(cols).ok_or(Error::SizeOverflow)?;

    let (br, bc) = b.shape();
    let mut out = DenseMatrix::zeros(rows, cols);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let aij = a[(i, j)];
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * aij));
        }
    }
    Ok(out)
}

/// Column-major stacking of `a` into a vector of length `rows · cols`.
pub fn vec(a: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DenseMatrix> {
    crate::error::check_dims(
        "unvec",
        rows * cols,
        v.len(),
        rows.checked_mul(cols) == Some(v.len()),
    )?;
    Ok(DenseMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// The input is symmetrized as `(A + Aᵀ)/2` before decomposing; inputs whose
/// asymmetry exceeds `SYMMETRY_TOLERANCE` (relative to `max |a_ij|`, floored
/// at 1) are rejected.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigenDecomposition> {
    ensure_non_empty(a, "sym_eig input")?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    ensure_finite(a, "sym_eig input")?;

    let scale = a.amax().max(1.0);
    let mut asymmetry = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            asymmetry = asymmetry.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asymmetry > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }

    let sym = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Singular(format!("eigendecomposition did not converge: {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();

    // faer returns ascending eigenvalues; flip to descending.
    let values = DVector::from_fn(n, |k, _| s[n - 1 - k]);
    let vectors = DenseMatrix::from_fn(n, n, |i, k| u[(i, n - 1 - k)]);
    Ok(EigenDecomposition { vectors, values })
}

fn shifted_kron_diag(s_c: &DVector<f64>, s_r: &DVector<f64>, sigma2: f64) -> Result<Vec<f64>> {
    if s_c.is_empty() || s_r.is_empty() {
        return Err(Error::Empty("kron_shift_inverse_diag eigenvalues"));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be finite and non-negative, got {sigma2}"
        )));
    }
    let mut out = Vec::with_capacity(s_c.len() * s_r.len());
    for &c in s_c.iter() {
        for &r in s_r.iter() {
            out.push(c * r + sigma2);
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shifted Kronecker eigenvalues"));
    }
    Ok(out)
}

/// `diag(K̃⁻¹)` for `K̃ = diag(s_c ⊗ s_r) + σ² I`.
///
/// Entry `i · |s_r| + j` is `1 / (s_c[i] s_r[j] + σ²)`, matching
/// `vec` of an `|s_r| × |s_c|` matrix. Errors if any denominator is at or
/// below `KTILDE_FLOOR`.
pub fn kron_shift_inverse_diag(
    s_c: &DVector<f64>,
    s_r: &DVector<f64>,
    sigma2: f64,
) -> Result<DVector<f64>> {
    let denom = shifted_kron_diag(s_c, s_r, sigma2)?;
    if let Some(bad) = denom.iter().find(|&&d| d <= KTILDE_FLOOR) {
        return Err(Error::Singular(format!(
            "shifted Kronecker eigenvalue {bad:e} at or below floor {KTILDE_FLOOR:e}"
        )));
    }
    Ok(DVector::from_iterator(denom.len(), denom.into_iter().map(f64::recip)))
}

/// As [`kron_shift_inverse_diag`] but floors denominators at `KTILDE_FLOOR`
/// instead of failing, returning how many entries were floored.
pub fn kron_shift_inverse_diag_floored(
    s_c: &DVector<f64>,
    s_r: &DVector<f64>,
    sigma2: f64,
) -> Result<(DVector<f64>, usize)> {
    let denom = shifted_kron_diag(s_c, s_r, sigma2)?;
    let mut floored = 0;
    let inv = denom.into_iter().map(|d| {
        if d <= KTILDE_FLOOR {
            floored += 1;
            KTILDE_FLOOR.recip()
        } else {
            d.recip()
        }
    });
    let inv: Vec<f64> = inv.collect();
    Ok((DVector::from_vec(inv), floored))
}

/// `ln |diag(s_a ⊗ s_b) + shift · I|`.
pub fn kron_shift_logdet(s_a: &DVector<f64>, s_b: &DVector<f64>, shift: f64) -> Result<f64> {
    let denom = shifted_kron_diag(s_a, s_b, shift)?;
    if denom.iter().any(|&d| d <= 0.0) {
        return Err(Error::Singular("non-positive shifted eigenvalue".into()));
    }
    Ok(denom.iter().map(|d| d.ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let a = random(rng, n, n);
        &a + a.transpose()
    }

    fn rel_frob(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn kron_scalar() {
        let k = kron_product(&DenseMatrix::from_element(1, 1, 2.0), &DenseMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_eq!(k, DenseMatrix::from_element(1, 1, 6.0));
    }

    #[test]
    fn kron_identity_is_block_diagonal() {
        let m = DenseMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let k = kron_product(&DenseMatrix::identity(2, 2), &m).unwrap();
        assert_eq!(k.shape(), (4, 6));
        assert_eq!(k.view((0, 0), (2, 3)).clone_owned(), m);
        assert_eq!(k.view((2, 3), (2, 3)).clone_owned(), m);
        assert!(k.view((0, 3), (2, 3)).iter().all(|&v| v == 0.0));
        assert!(k.view((2, 0), (2, 3)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 2);
        let b = random(&mut rng, 2, 2);
        let c = random(&mut rng, 2, 4);
        let d = random(&mut rng, 2, 3);
        let lhs = kron_product(&a, &b).unwrap() * kron_product(&c, &d).unwrap();
        let rhs = kron_product(&(&a * &c), &(&b * &d)).unwrap();
        assert!(rel_frob(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn kron_rejects_empty() {
        assert_eq!(
            kron_product(&DenseMatrix::zeros(0, 2), &DenseMatrix::identity(2, 2)),
            Err(Error::Empty("kron_product lhs"))
        );
    }

    #[test]
    fn vec_is_column_major() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let col = DenseMatrix::from_column_slice(3, 1, &[7.0, 8.0, 9.0]);
        assert_eq!(vec(&col).as_slice(), col.as_slice());
    }

    #[test]
    fn unvec_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 3, 4);
        assert_eq!(unvec(&vec(&a), 3, 4).unwrap(), a);
        assert!(unvec(&vec(&a), 5, 4).is_err());
    }

    #[test]
    fn sym_eig_diagonal() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.values.as_slice(), &[5.0, 2.0]);
        // Columns are the swapped unit vectors, up to sign.
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-14);
        assert!(e.vectors[(0, 0)].abs() < 1e-14 && e.vectors[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn sym_eig_identity() {
        let e = sym_eig(&DenseMatrix::identity(3, 3)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert_eq!(e.rank(), 3);
    }

    #[test]
    fn sym_eig_reconstructs_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_sym(&mut rng, 6);
        let e = sym_eig(&a).unwrap();
        assert!(rel_frob(&e.reconstruct(), &a) < 1e-10);
        let utu = e.vectors.transpose() * &e.vectors;
        assert!(rel_frob(&utu, &DenseMatrix::identity(6, 6)) < 1e-10);
        assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sym_eig_errors() {
        assert!(matches!(
            sym_eig(&DenseMatrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
        // Round-off asymmetry is accepted.
        let b = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-14, 1.0]);
        assert!(sym_eig(&b).is_ok());
    }

    #[test]
    fn rank_of_low_rank_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(&mut rng, 6, 2);
        let e = sym_eig(&(&f * f.transpose())).unwrap();
        assert_eq!(e.rank(), 2);
    }

    #[test]
    fn shift_inverse_small_cases() {
        let one = DVector::from_vec(vec![1.0]);
        let d = kron_shift_inverse_diag(&one, &one, 1.0).unwrap();
        assert_eq!(d.as_slice(), &[0.5]);

        let s_c = DVector::from_vec(vec![2.0, 0.0]);
        let s_r = DVector::from_vec(vec![3.0]);
        let d = kron_shift_inverse_diag(&s_c, &s_r, 1.0).unwrap();
        assert!((d[0] - 1.0 / 7.0).abs() < 1e-16);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn shift_inverse_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s_c = DVector::from_fn(3, |_, _| rng.random_range(0.0..2.0));
        let s_r = DVector::from_fn(4, |_, _| rng.random_range(0.0..2.0));
        let sigma2 = 0.3;
        let diag = kron_product(
            &DenseMatrix::from_diagonal(&s_c),
            &DenseMatrix::from_diagonal(&s_r),
        )
        .unwrap();
        let k = diag + DenseMatrix::identity(12, 12) * sigma2;
        let dense_inv = k.try_inverse().unwrap();
        let fast = kron_shift_inverse_diag(&s_c, &s_r, sigma2).unwrap();
        for i in 0..12 {
            assert!((fast[i] - dense_inv[(i, i)]).abs() < 1e-12 * dense_inv[(i, i)]);
        }
    }

    #[test]
    fn shift_inverse_singular() {
        let s = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            kron_shift_inverse_diag(&s, &s, 0.0),
            Err(Error::Singular(_))
        ));
        let (d, floored) = kron_shift_inverse_diag_floored(&s, &s, 0.0).unwrap();
        assert_eq!(floored, 3);
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], KTILDE_FLOOR.recip());
    }
}
