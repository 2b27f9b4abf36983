//! Reference signalling schemes the per-antenna optimum is compared against.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{rate, ChannelDecomposition, ChannelMatrix, InputCovariance, PowerConstraint};
use crate::error::{Error, Result};
use crate::numerics::{diag_matrix, frobenius, hermitian_part, identity, inverse, ComplexMatrix};

/// Round-off band below zero that still counts as a nonnegative eigenbeam power.
pub const FORCED_NEGATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WaterfillResult {
    pub q: InputCovariance,
    /// Water level `mu`.
    pub water_level: f64,
    pub active_modes: usize,
    /// Optimal sum-power dual variable, `1 / mu`.
    pub nu_star: f64,
    /// Eigenvalues of `q` along the channel's right singular vectors.
    pub lambda_q: Vec<f64>,
    pub rate: f64,
}

/// Sum-power capacity by water-filling over `lambda_H = sigma^2`.
pub fn waterfill_sum(ch: &ChannelMatrix, total_power: f64) -> Result<WaterfillResult> {
    if !(total_power > 0.0) || !total_power.is_finite() {
        return Err(Error::InvalidConstraint(format!(
            "total power must be positive and finite, got {total_power}"
        )));
    }
    let svd = ch.svd();
    let gains: Vec<f64> = svd.singulars.iter().map(|s| s * s).collect();

    // Largest active set whose water level clears the weakest included mode.
    let mut active = 1;
    let mut mu = total_power + 1.0 / gains[0];
    let mut inv_sum = 1.0 / gains[0];
    for (k, &g) in gains.iter().enumerate().skip(1) {
        inv_sum += 1.0 / g;
        let candidate = (total_power + inv_sum) / (k + 1) as f64;
        if candidate > 1.0 / g {
            active = k + 1;
            mu = candidate;
        } else {
            break;
        }
    }

    let mut lambda_q: Vec<f64> = gains
        .iter()
        .enumerate()
        .map(|(i, g)| if i < active { (mu - 1.0 / g).max(0.0) } else { 0.0 })
        .collect();
    let sum: f64 = lambda_q.iter().sum();
    for l in lambda_q.iter_mut() {
        *l *= total_power / sum;
    }

    let v = svd.right.columns(0, lambda_q.len());
    let q = hermitian_part(&(v * diag_matrix(&lambda_q) * v.adjoint()));
    let q = InputCovariance::new(q)?;
    let rate = rate(ch, &q)?;
    Ok(WaterfillResult {
        q,
        water_level: mu,
        active_modes: active,
        nu_star: 1.0 / mu,
        lambda_q,
        rate,
    })
}

/// Rate of independent signalling, `Q = diag(p)`.
pub fn mac_rate(ch: &ChannelMatrix, p: &PowerConstraint) -> Result<f64> {
    if p.len() != ch.n() {
        return Err(Error::DimensionMismatch(format!(
            "power constraint has {} entries but the channel has {} transmit antennas",
            p.len(),
            ch.n()
        )));
    }
    rate(ch, &InputCovariance::from_power(p))
}

#[derive(Debug, Clone)]
pub struct ForcedEigenbeamResult {
    pub feasible: bool,
    pub lambda_q: Option<Vec<f64>>,
    pub q: Option<InputCovariance>,
    /// Zero when infeasible.
    pub rate: f64,
}

impl ForcedEigenbeamResult {
    fn infeasible() -> Self {
        Self {
            feasible: false,
            lambda_q: None,
            q: None,
            rate: 0.0,
        }
    }
}

/// Signalling along the channel's right singular vectors with powers chosen
/// so the per-antenna budgets are met exactly: `W lambda = p`,
/// `W_ji = |V_ji|^2`.
pub fn forced_eigenbeam(ch: &ChannelMatrix, p: &PowerConstraint) -> Result<ForcedEigenbeamResult> {
    let n = ch.n();
    if p.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "power constraint has {} entries but the channel has {n} transmit antennas",
            p.len()
        )));
    }
    let v = &ch.svd().right;
    let w = DMatrix::from_fn(n, n, |j, i| v[(j, i)].norm_sqr());
    let target = DVector::from_column_slice(p.as_slice());

    let Some(lambda) = solve_nonnegative(&w, &target) else {
        return Ok(ForcedEigenbeamResult::infeasible());
    };

    let q = hermitian_part(&(v * diag_matrix(lambda.as_slice()) * v.adjoint()));
    let q = InputCovariance::new(q)?;
    let rate = rate(ch, &q)?;
    Ok(ForcedEigenbeamResult {
        feasible: true,
        lambda_q: Some(lambda.iter().copied().collect()),
        q: Some(q),
        rate,
    })
}

fn solve_nonnegative(w: &DMatrix<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = w.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let singular = svd.singular_values.min() <= 1e-12 * smax;

    let mut lambda = if singular {
        min_norm_nonnegative(w, p)?
    } else {
        w.clone().lu().solve(p)?
    };
    if lambda.iter().any(|&l| l < -FORCED_NEGATIVE_TOL) {
        return None;
    }
    lambda.apply(|l| *l = l.max(0.0));
    let scale = 1.0 + p.amax();
    ((w * &lambda - p).amax() <= 1e-9 * scale).then_some(lambda)
}

/// Minimum-norm point of `{x : W x = p, x >= 0}` by Dykstra's alternating
/// projections started at the origin, or `None` if the set looks empty.
fn min_norm_nonnegative(w: &DMatrix<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
    let pinv = w.clone().pseudo_inverse(1e-12 * w.amax().max(1.0)).ok()?;
    let scale = 1.0 + p.amax();
    if (w * &pinv * p - p).amax() > 1e-9 * scale {
        return None;
    }
    let affine = |x: &DVector<f64>| x - &pinv * (w * x - p);

    let n = p.len();
    let mut x = DVector::zeros(n);
    let mut corr_a = DVector::zeros(n);
    let mut corr_b = DVector::zeros(n);
    for _ in 0..100_000 {
        let y = affine(&(&x + &corr_a));
        let new_a = &x + &corr_a - &y;
        let z = (&y + &corr_b).map(|v: f64| v.max(0.0));
        let new_b = &y + &corr_b - &z;
        let change = (&z - &x).amax() + (&new_a - &corr_a).amax() + (&new_b - &corr_b).amax();
        x = z;
        corr_a = new_a;
        corr_b = new_b;
        if change < 1e-15 * scale {
            break;
        }
    }
    ((w * &x - p).amax() <= 1e-9 * scale).then_some(x)
}

#[derive(Debug, Clone)]
pub struct MisoSolution {
    pub q: InputCovariance,
    pub rate: f64,
}

/// Phase-matched single-beam solution for a single receive antenna:
/// `w_k = sqrt(P_k) e^{-j arg h_k}`, `Q = w w^H`.
pub fn miso_closed_form(h_row: &ComplexMatrix, p: &PowerConstraint) -> Result<MisoSolution> {
    if h_row.nrows() != 1 {
        return Err(Error::NotMiso(h_row.nrows()));
    }
    if h_row.ncols() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "power constraint has {} entries but the channel has {} transmit antennas",
            p.len(),
            h_row.ncols()
        )));
    }
    let w = DVector::from_iterator(
        p.len(),
        h_row
            .iter()
            .zip(p.as_slice())
            .map(|(h, pk)| Complex64::from_polar(pk.sqrt(), -h.arg())),
    );
    let q = InputCovariance::new(hermitian_part(&(&w * w.adjoint())))?;
    let gain: f64 = h_row.iter().zip(p.as_slice()).map(|(h, pk)| h.norm() * pk.sqrt()).sum();
    Ok(MisoSolution {
        q,
        rate: (gain * gain).ln_1p(),
    })
}

#[derive(Debug, Clone)]
pub struct MacDual {
    /// `B = (P + G_check)^-1`.
    pub b: ComplexMatrix,
    /// `||B - H^H (I + H P H^H)^-1 H||_F`.
    pub stationarity_residual: f64,
}

/// Dual variable of the independent-signalling problem, `n <= m` only.
pub fn mac_dual(dec: &ChannelDecomposition, p: &PowerConstraint) -> Result<MacDual> {
    if dec.is_wide() {
        return Err(Error::BranchMismatch {
            op: "mac_dual",
            expected: "n <= m",
            m: dec.m(),
            n: dec.n(),
        });
    }
    if p.len() != dec.n() {
        return Err(Error::DimensionMismatch(format!(
            "power constraint has {} entries but the channel has {} transmit antennas",
            p.len(),
            dec.n()
        )));
    }
    let b = hermitian_part(&inverse(&(p.diag() + &dec.g_check))?);
    let h = &dec.h;
    let grad = h.adjoint() * inverse(&(identity(dec.m()) + h * p.diag() * h.adjoint()))? * h;
    Ok(MacDual {
        stationarity_residual: frobenius(&(&b - grad)),
        b,
    })
}
