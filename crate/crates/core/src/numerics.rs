//! Dense complex linear-algebra kernels.
//!
//! Thin wrappers over `nalgebra` that add the contracts the solvers rely on:
//! descending spectra, full (square) singular-vector bases, input
//! symmetrization and a scale-aware split of non-positive eigenmodes.

use nalgebra::linalg::{SymmetricEigen, SVD};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

/// Relative cutoff for treating an eigenvalue as non-positive.
pub const NONPOSITIVE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Sorted descending.
    pub eigenvalues: DVector<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEig {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let lam = self.eigenvalues.map(Complex64::from);
        let scaled = &self.eigenvectors * ComplexMatrix::from_diagonal(&lam);
        scaled * self.eigenvectors.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }
}

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x m unitary.
    pub left: ComplexMatrix,
    /// min(m, n) values, descending.
    pub singulars: DVector<f64>,
    /// n x n unitary.
    pub right: ComplexMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let (m, n) = (self.left.nrows(), self.right.nrows());
        let mut sigma = ComplexMatrix::zeros(m, n);
        for (i, s) in self.singulars.iter().enumerate() {
            sigma[(i, i)] = Complex64::from(*s);
        }
        &self.left * sigma * self.right.adjoint()
    }
}

/// Result of splitting off the non-positive eigenmodes of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct NonpositiveSplit {
    /// `-(sum of lambda_j u_j u_j^H)` over eigenvalues at or below the cutoff; PSD.
    pub slack: ComplexMatrix,
    /// Number of eigenvalues at or below the cutoff.
    pub dropped: usize,
}

pub fn ensure_finite(a: &ComplexMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn ensure_square(a: &ComplexMatrix) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

/// `(a + a^H) / 2`.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.norm()
}

pub fn real_diagonal(a: &ComplexMatrix) -> Vec<f64> {
    a.diagonal().iter().map(|z| z.re).collect()
}

pub fn diag_matrix(v: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_iterator(
        v.len(),
        v.iter().map(|&x| Complex64::from(x)),
    ))
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn hermitian_eig(a: &ComplexMatrix) -> Result<HermitianEig> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let sym = hermitian_part(a);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let n = order.len();
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Orthonormal basis of the orthogonal complement of the span of `basis`'s
/// (orthonormal) columns.
pub fn orthonormal_complement(basis: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (rows, rank) = basis.shape();
    if rank >= rows {
        return Ok(ComplexMatrix::zeros(rows, 0));
    }
    let projector = identity(rows) - basis * basis.adjoint();
    let eig = hermitian_eig(&projector)?;
    Ok(eig.eigenvectors.columns(0, rows - rank).into_owned())
}

/// Full SVD: `a = left * diag(singulars) * right^H` with square unitary factors.
pub fn svd(a: &ComplexMatrix) -> Result<SvdResult> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    let r = m.min(n);
    let dec = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = dec.u.expect("left vectors requested");
    let v = dec.v_t.expect("right vectors requested").adjoint();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));

    let singulars = DVector::from_iterator(r, order.iter().map(|&i| dec.singular_values[i]));
    let mut thin_u = ComplexMatrix::zeros(m, r);
    let mut thin_v = ComplexMatrix::zeros(n, r);
    for (dst, &src) in order.iter().enumerate() {
        thin_u.set_column(dst, &u.column(src));
        thin_v.set_column(dst, &v.column(src));
    }

    let left = complete_basis(thin_u)?;
    let right = complete_basis(thin_v)?;
    Ok(SvdResult {
        left,
        singulars,
        right,
    })
}

fn complete_basis(thin: ComplexMatrix) -> Result<ComplexMatrix> {
    let (rows, cols) = thin.shape();
    if cols == rows {
        return Ok(thin);
    }
    let rest = orthonormal_complement(&thin)?;
    let mut full = ComplexMatrix::zeros(rows, rows);
    full.columns_mut(0, cols).copy_from(&thin);
    full.columns_mut(cols, rows - cols).copy_from(&rest);
    Ok(full)
}

/// Spectral norm cutoff below which an eigenvalue counts as non-positive.
pub fn nonpositive_threshold(spectral_norm: f64) -> f64 {
    NONPOSITIVE_REL_TOL * spectral_norm.max(1.0)
}

pub fn split_nonpositive_modes(f: &ComplexMatrix) -> Result<NonpositiveSplit> {
    let eig = hermitian_eig(f)?;
    let n = eig.eigenvalues.len();
    let norm2 = eig.max().abs().max(eig.min().abs());
    let tau = nonpositive_threshold(norm2);

    let mut slack = ComplexMatrix::zeros(n, n);
    let mut dropped = 0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= tau {
            dropped += 1;
            let u = eig.eigenvectors.column(j);
            slack -= (u * u.adjoint()).scale(lam);
        }
    }
    Ok(NonpositiveSplit {
        slack: hermitian_part(&slack),
        dropped,
    })
}

pub fn min_eigenvalue(a: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_eig(a)?.min())
}

pub fn is_psd(a: &ComplexMatrix, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(a)? >= -tol)
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn project_psd(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let mut eig = hermitian_eig(a)?;
    eig.eigenvalues.apply(|x| *x = x.max(0.0));
    Ok(hermitian_part(&eig.reconstruct()))
}

pub fn inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    ensure_square(a)?;
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("matrix is singular".into()))
}

/// Number of eigenvalues above `rel_tol * ||a||_2`.
pub fn numerical_rank(a: &ComplexMatrix, rel_tol: f64) -> Result<usize> {
    let eig = hermitian_eig(a)?;
    let scale = eig.max().abs().max(eig.min().abs());
    if scale == 0.0 {
        return Ok(0);
    }
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > rel_tol * scale)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        frobenius(&(a - b)) / frobenius(a).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn eig_of_diagonal() {
        let eig = hermitian_eig(&diag_matrix(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.eigenvalues[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.eigenvectors[(1, 0)].norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.eigenvectors[(0, 1)].norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_of_zero() {
        let eig = hermitian_eig(&ComplexMatrix::zeros(2, 2)).unwrap();
        assert_eq!(eig.eigenvalues.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn eig_of_complex_hermitian() {
        // det([[2-l, i],[-i, 2-l]]) = (2-l)^2 - 1  =>  l = 3, 1
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let eig = hermitian_eig(&a).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0], 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(eig.eigenvalues[1], 1.0, epsilon = 1e-13);
        assert!(rel_err(&a, &eig.reconstruct()) < 1e-12);
    }

    #[test]
    fn eig_rejects_bad_input() {
        assert!(matches!(
            hermitian_eig(&ComplexMatrix::zeros(2, 3)),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
        let mut a = ComplexMatrix::zeros(2, 2);
        a[(0, 1)] = c(f64::NAN, 0.0);
        assert!(matches!(hermitian_eig(&a), Err(Error::NonFinite)));
    }

    #[test]
    fn svd_basics() {
        let s = svd(&identity(2)).unwrap();
        assert_eq!(s.singulars.as_slice(), &[1.0, 1.0]);
        let s = svd(&diag_matrix(&[0.5, 2.0])).unwrap();
        assert_abs_diff_eq!(s.singulars[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.singulars[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn svd_of_reference_channel_matches_gram_eigenvalues() {
        let h = ComplexMatrix::from_row_slice(
            2,
            2,
            &[c(0.0541, -0.4066), c(-0.4339, 0.0033), c(-1.3200, -0.1872), c(0.8269, -0.0279)],
        );
        let s = svd(&h).unwrap();
        let gram = hermitian_eig(&(h.adjoint() * &h)).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(s.singulars[i], gram.eigenvalues[i].sqrt(), epsilon = 1e-12);
        }
        assert!(rel_err(&h, &s.reconstruct()) < 1e-12);
    }

    #[test]
    fn svd_completes_rectangular_bases() {
        let h = ComplexMatrix::from_row_slice(1, 3, &[c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)]);
        let s = svd(&h).unwrap();
        assert_eq!(s.right.shape(), (3, 3));
        assert_eq!(s.left.shape(), (1, 1));
        let gram = s.right.adjoint() * &s.right;
        assert!(frobenius(&(gram - identity(3))) < 1e-12);
        assert!(rel_err(&h, &s.reconstruct()) < 1e-12);

        let ht = h.adjoint();
        let s = svd(&ht).unwrap();
        assert_eq!(s.left.shape(), (3, 3));
        assert!(rel_err(&ht, &s.reconstruct()) < 1e-12);
    }

    #[test]
    fn split_examples() {
        let s = split_nonpositive_modes(&diag_matrix(&[2.0, -1.0])).unwrap();
        assert_eq!(s.dropped, 1);
        assert!(frobenius(&(s.slack - diag_matrix(&[0.0, 1.0]))) < 1e-14);

        let s = split_nonpositive_modes(&identity(2)).unwrap();
        assert_eq!(s.dropped, 0);
        assert_eq!(frobenius(&s.slack), 0.0);

        let s = split_nonpositive_modes(&diag_matrix(&[-0.5, -0.5])).unwrap();
        assert_eq!(s.dropped, 2);
        assert!(frobenius(&(s.slack - identity(2).scale(0.5))) < 1e-14);
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&identity(3), 1e-10).unwrap());
        assert!(!is_psd(&diag_matrix(&[1.0, -1.0]), 1e-10).unwrap());
        assert!(is_psd(&diag_matrix(&[1.0, -1e-12]), 1e-10).unwrap());
        assert!(is_psd(&ComplexMatrix::zeros(2, 3), 1e-10).is_err());
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), rows * cols).prop_map(move |v| {
            ComplexMatrix::from_iterator(rows, cols, v.into_iter().map(|(re, im)| c(re, im)))
        })
    }

    fn arb_hermitian() -> impl Strategy<Value = ComplexMatrix> {
        (1usize..7).prop_flat_map(|n| arb_matrix(n, n)).prop_map(|a| hermitian_part(&a))
    }

    proptest! {
        #[test]
        fn eig_reconstructs(a in arb_hermitian()) {
            let eig = hermitian_eig(&a).unwrap();
            let n = a.nrows();
            prop_assert!(frobenius(&(&a - eig.reconstruct())) <= 1e-10 * frobenius(&a).max(1e-300));
            let gram = eig.eigenvectors.adjoint() * &eig.eigenvectors;
            prop_assert!(frobenius(&(gram - identity(n))) < 1e-10);
            for w in eig.eigenvalues.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn svd_reconstructs((m, n) in (1usize..6, 1usize..6), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = ComplexMatrix::from_fn(m, n, |_, _| c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            let s = svd(&a).unwrap();
            prop_assert!(rel_err(&a, &s.reconstruct()) < 1e-10);
            for w in s.singulars.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            prop_assert!(frobenius(&(s.left.adjoint() * &s.left - identity(m))) < 1e-10);
            prop_assert!(frobenius(&(s.right.adjoint() * &s.right - identity(n))) < 1e-10);
        }

        #[test]
        fn split_is_orthogonal(f in arb_hermitian()) {
            let split = split_nonpositive_modes(&f).unwrap();
            prop_assert!(is_psd(&split.slack, 1e-10).unwrap());
            let cross = &split.slack * (&f + &split.slack);
            prop_assert!(frobenius(&cross) < 1e-8 * (1.0 + frobenius(&f)));
        }
    }
}
