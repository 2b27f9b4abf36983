//! Channel model, power constraints, input covariances and the rate functional.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    self, diag_matrix, ensure_finite, frobenius, hermitian_eig, hermitian_part, ComplexMatrix,
    SvdResult,
};

/// A channel is full rank when its smallest singular value exceeds this
/// fraction of the largest.
pub const RANK_REL_TOL: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;

/// Complex `m x n` gain matrix `H` (m receive, n transmit antennas).
#[derive(Debug)]
pub struct ChannelMatrix {
    h: ComplexMatrix,
    svd: SvdResult,
    decomposition: OnceLock<ChannelDecomposition>,
}

impl Clone for ChannelMatrix {
    fn clone(&self) -> Self {
        Self {
            h: self.h.clone(),
            svd: self.svd.clone(),
            decomposition: OnceLock::new(),
        }
    }
}

impl ChannelMatrix {
    pub fn new(h: ComplexMatrix) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::DimensionMismatch("channel must be at least 1x1".into()));
        }
        ensure_finite(&h)?;
        let svd = numerics::svd(&h)?;
        let largest = svd.singulars[0];
        let smallest = svd.singulars[svd.singulars.len() - 1];
        if !(smallest > RANK_REL_TOL * largest) {
            return Err(Error::RankDeficient { smallest, largest });
        }
        Ok(Self {
            h,
            svd,
            decomposition: OnceLock::new(),
        })
    }

    pub fn from_row_slice(m: usize, n: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {m}x{n} channel, got {}",
                m * n,
                entries.len()
            )));
        }
        Self::new(ComplexMatrix::from_row_slice(m, n, entries))
    }

    /// Receive antennas.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// Transmit antennas.
    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn h(&self) -> &ComplexMatrix {
        &self.h
    }

    pub fn svd(&self) -> &SvdResult {
        &self.svd
    }

    pub fn decomposition(&self) -> &ChannelDecomposition {
        self.decomposition
            .get_or_init(|| ChannelDecomposition::from_svd(&self.h, &self.svd))
    }

    /// Channel restricted to the given transmit antennas (columns).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let sub = ComplexMatrix::from_fn(self.m(), cols.len(), |i, j| self.h[(i, cols[j])]);
        Self::new(sub)
    }

    pub fn to_file_format(&self) -> ChannelFile {
        ChannelFile {
            m: self.m(),
            n: self.n(),
            entries: (0..self.m())
                .flat_map(|i| (0..self.n()).map(move |j| (i, j)))
                .map(|(i, j)| [self.h[(i, j)].re, self.h[(i, j)].im])
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(s)?;
        file.into_channel()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file_format())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// On-disk channel format: `{"m": .., "n": .., "entries": [[re, im], ...]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<[f64; 2]>,
}

impl ChannelFile {
    pub fn into_channel(self) -> Result<ChannelMatrix> {
        let entries: Vec<Complex64> = self
            .entries
            .iter()
            .map(|[re, im]| Complex64::new(*re, *im))
            .collect();
        ChannelMatrix::from_row_slice(self.m, self.n, &entries)
    }
}

/// Case-specific matrices derived from the channel SVD.
#[derive(Debug, Clone)]
pub enum DecompositionShape {
    /// `n <= m`: `K = V diag(sigma) V^H` and its inverse.
    Tall { k: ComplexMatrix, k_inv: ComplexMatrix },
    /// `n > m`: pseudo-inverse `H_inv` with `H H_inv = I_m`, row-space basis
    /// `v1` and null-space basis `v2`.
    Wide {
        h_inv: ComplexMatrix,
        v1: ComplexMatrix,
        v2: ComplexMatrix,
    },
}

#[derive(Debug, Clone)]
pub struct ChannelDecomposition {
    pub h: ComplexMatrix,
    pub svd: SvdResult,
    pub shape: DecompositionShape,
    /// `K_inv K_inv^H` when `n <= m`, `H_inv H_inv^H` otherwise.
    pub g_check: ComplexMatrix,
}

impl ChannelDecomposition {
    fn from_svd(h: &ComplexMatrix, svd: &SvdResult) -> Self {
        let (m, n) = h.shape();
        let right = &svd.right;
        let inv_sigma: Vec<f64> = svd.singulars.iter().map(|s| 1.0 / s).collect();
        let inv_sigma_sq: Vec<f64> = inv_sigma.iter().map(|s| s * s).collect();

        if n <= m {
            let sigma: Vec<f64> = svd.singulars.iter().copied().collect();
            let k = hermitian_part(&(right * diag_matrix(&sigma) * right.adjoint()));
            let k_inv = hermitian_part(&(right * diag_matrix(&inv_sigma) * right.adjoint()));
            let g_check = hermitian_part(&(right * diag_matrix(&inv_sigma_sq) * right.adjoint()));
            Self {
                h: h.clone(),
                svd: svd.clone(),
                shape: DecompositionShape::Tall { k, k_inv },
                g_check,
            }
        } else {
            let v1 = right.columns(0, m).into_owned();
            let v2 = right.columns(m, n - m).into_owned();
            let h_inv = &v1 * diag_matrix(&inv_sigma) * svd.left.adjoint();
            let g_check = hermitian_part(&(&v1 * diag_matrix(&inv_sigma_sq) * v1.adjoint()));
            Self {
                h: h.clone(),
                svd: svd.clone(),
                shape: DecompositionShape::Wide { h_inv, v1, v2 },
                g_check,
            }
        }
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_wide(&self) -> bool {
        matches!(self.shape, DecompositionShape::Wide { .. })
    }

    /// Same decomposition with the null-space basis replaced by `v2 * u` for an
    /// `(n-m) x (n-m)` unitary `u`. No-op for tall channels.
    pub fn with_rotated_null_basis(&self, u: &ComplexMatrix) -> Result<Self> {
        let mut out = self.clone();
        if let DecompositionShape::Wide { v2, .. } = &mut out.shape {
            if u.shape() != (v2.ncols(), v2.ncols()) {
                return Err(Error::DimensionMismatch(format!(
                    "null-space rotation must be {0}x{0}",
                    v2.ncols()
                )));
            }
            *v2 = &*v2 * u;
        }
        Ok(out)
    }
}

/// Explicit alias for the decomposition stored in the channel.
pub fn decompose(ch: &ChannelMatrix) -> &ChannelDecomposition {
    ch.decomposition()
}

/// Per-antenna power budget `p` (noise-normalized power units).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConstraint(Vec<f64>);

impl PowerConstraint {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidConstraint("empty power vector".into()));
        }
        if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidConstraint(format!(
                "entries must be finite and nonnegative, got {bad}"
            )));
        }
        if p.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidConstraint(
                "at least one antenna must have positive power".into(),
            ));
        }
        Ok(Self(p))
    }

    /// `total * w / sum(w)`.
    pub fn from_weights(weights: &[f64], total: f64) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !(total > 0.0) {
            return Err(Error::InvalidConstraint(
                "weights and total power must be positive".into(),
            ));
        }
        Self::new(weights.iter().map(|w| total * w / sum).collect())
    }

    pub fn equal(n: usize, total: f64) -> Result<Self> {
        Self::from_weights(&vec![1.0; n], total)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn diag(&self) -> ComplexMatrix {
        diag_matrix(&self.0)
    }
}

/// Hermitian PSD transmit covariance `Q = E[x x^H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCovariance(ComplexMatrix);

impl InputCovariance {
    /// Validates the Hermitian, PSD and real-diagonal invariants (with tolerances
    /// scaled by `max(1, ||q||_F)`) and stores the exactly Hermitian part.
    pub fn new(q: ComplexMatrix) -> Result<Self> {
        numerics::ensure_square(&q)?;
        ensure_finite(&q)?;
        let scale = frobenius(&q).max(1.0);
        let asym = frobenius(&(&q - q.adjoint()));
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::InvalidCovariance(format!(
                "not Hermitian (asymmetry {asym:e})"
            )));
        }
        let q = hermitian_part(&q);
        let min_eig = hermitian_eig(&q)?.min();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::InvalidCovariance(format!(
                "not PSD (min eigenvalue {min_eig:e})"
            )));
        }
        if q.diagonal().iter().any(|z| z.re < -PSD_TOL * scale) {
            return Err(Error::InvalidCovariance("negative diagonal entry".into()));
        }
        Ok(Self(q))
    }

    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn from_power(p: &PowerConstraint) -> Self {
        Self(p.diag())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        numerics::real_diagonal(&self.0)
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Row-major `[re, im]` pairs.
    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| [self.0[(i, j)].re, self.0[(i, j)].im])
            .collect()
    }

    pub fn from_pairs(n: usize, pairs: &[[f64; 2]]) -> Result<Self> {
        if pairs.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                n * n,
                pairs.len()
            )));
        }
        let entries: Vec<Complex64> = pairs.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        Self::new(ComplexMatrix::from_row_slice(n, n, &entries))
    }
}

fn check_columns(ch: &ChannelMatrix, q: &InputCovariance) -> Result<()> {
    if q.n() != ch.n() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {0}x{0} but channel has {1} transmit antennas",
            q.n(),
            ch.n()
        )));
    }
    Ok(())
}

/// `log det(I_m + H Q H^H)` in nats, summed over eigenvalues of `H Q H^H`.
pub fn rate(ch: &ChannelMatrix, q: &InputCovariance) -> Result<f64> {
    check_columns(ch, q)?;
    Ok(rate_unchecked(ch.h(), q.matrix()))
}

pub(crate) fn rate_unchecked(h: &ComplexMatrix, q: &ComplexMatrix) -> f64 {
    let r = h * q * h.adjoint();
    let eig = hermitian_eig(&r).expect("H Q H^H is square and finite");
    eig.eigenvalues.iter().map(|&l| l.max(0.0).ln_1p()).sum()
}

/// `log det(I_m + H Q H^H)` through a Cholesky factor; second route for tests
/// and diagnostics.
pub fn rate_cholesky(ch: &ChannelMatrix, q: &InputCovariance) -> Result<f64> {
    check_columns(ch, q)?;
    let a = numerics::identity(ch.m()) + ch.h() * q.matrix() * ch.h().adjoint();
    let chol = hermitian_part(&a)
        .cholesky()
        .ok_or_else(|| Error::Numerical("I + HQH^H not positive definite".into()))?;
    let diag: DVector<Complex64> = chol.l().diagonal();
    Ok(2.0 * diag.iter().map(|z| z.re.ln()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// `tr(Q) <= sum(p)`.
    Sum,
    /// `Q_ii <= p_i`.
    PerAntenna,
    /// `Q <= diag(p)` with a diagonal `Q`.
    Mac,
}

pub fn check_constraint(
    q: &InputCovariance,
    p: &PowerConstraint,
    mode: ConstraintMode,
    tol: f64,
) -> Result<bool> {
    if q.n() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {0}x{0} but constraint has {1} entries",
            q.n(),
            p.len()
        )));
    }
    let diag = q.diagonal();
    Ok(match mode {
        ConstraintMode::Sum => q.trace() <= p.total() + tol,
        ConstraintMode::PerAntenna => diag.iter().zip(p.as_slice()).all(|(d, cap)| *d <= cap + tol),
        ConstraintMode::Mac => {
            let n = q.n();
            let off_diag_ok = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .all(|(i, j)| q.matrix()[(i, j)].norm() < tol);
            off_diag_ok && numerics::is_psd(&(p.diag() - q.matrix()), tol)?
        }
    })
}
