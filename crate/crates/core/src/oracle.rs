//! Independent reference solvers.
//!
//! [`pg_solve`] maximises `log det(I + H Q H^H)` by projected gradient ascent
//! with a backtracking step, projecting onto the feasible set with Dykstra's
//! alternating projections. It shares no code path with the dual iteration in
//! [`crate::perantenna`] beyond the rate functional, which makes it a useful
//! cross-check. [`grid_verify_2x2`] brute-forces two-antenna instances.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{rate_unchecked, ChannelMatrix, InputCovariance, PowerConstraint};
use crate::error::{Error, Result};
use crate::numerics::{frobenius, hermitian_eig, hermitian_part, identity, inverse, project_psd, ComplexMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleConstraint {
    Sum,
    PerAntenna,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Initial step; doubled after each accepted step, halved on rejection.
    pub step_size: f64,
    pub max_outer: usize,
    /// Stop after 50 consecutive accepted steps that each improve the rate by
    /// less than this.
    pub obj_tol: f64,
    pub projection_iters: usize,
    pub constraint_mode: OracleConstraint,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_outer: 100_000,
            obj_tol: 1e-13,
            projection_iters: 10_000,
            constraint_mode: OracleConstraint::PerAntenna,
        }
    }
}

impl OracleConfig {
    pub fn sum() -> Self {
        Self {
            constraint_mode: OracleConstraint::Sum,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.obj_tol > 0.0) {
            return Err(Error::InvalidConfig("step_size and obj_tol must be positive".into()));
        }
        if self.max_outer == 0 || self.projection_iters == 0 {
            return Err(Error::InvalidConfig("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

const STALL_STEPS: usize = 50;

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub q: InputCovariance,
    pub rate: f64,
    /// Outer iterations, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub converged: bool,
}

/// `H^H (I + H Q H^H)^-1 H`, the gradient of the rate with respect to `Q`.
pub fn gradient(ch: &ChannelMatrix, q: &InputCovariance) -> Result<ComplexMatrix> {
    if q.n() != ch.n() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {0}x{0} but the channel has {1} transmit antennas",
            q.n(),
            ch.n()
        )));
    }
    gradient_raw(ch.h(), q.matrix())
}

fn gradient_raw(h: &ComplexMatrix, q: &ComplexMatrix) -> Result<ComplexMatrix> {
    let a = identity(h.nrows()) + h * q * h.adjoint();
    Ok(hermitian_part(&(h.adjoint() * inverse(&a)? * h)))
}

fn cap_diagonal(q: &ComplexMatrix, p: &[f64]) -> ComplexMatrix {
    let mut out = q.clone();
    for (i, cap) in p.iter().enumerate() {
        out[(i, i)] = Complex64::from(out[(i, i)].re.min(*cap));
    }
    out
}

/// Euclidean projection of `v` onto `{x >= 0, sum(x) <= total}`.
fn project_capped_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= total {
        return clipped;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - total) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Projection onto the feasible set for `cfg.constraint_mode`.
///
/// Per-antenna mode runs Dykstra between the PSD cone and the diagonal cap
/// `{Q_ii <= P_i}`; sum mode projects the eigenvalues onto the capped simplex.
pub fn project_feasible(q: &ComplexMatrix, p: &PowerConstraint, cfg: &OracleConfig) -> Result<InputCovariance> {
    if q.shape() != (p.len(), p.len()) {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but constraint has {} entries",
            q.nrows(),
            q.ncols(),
            p.len()
        )));
    }
    let q = hermitian_part(q);
    let out = match cfg.constraint_mode {
        OracleConstraint::Sum => {
            let mut eig = hermitian_eig(&q)?;
            let projected = project_capped_simplex(eig.eigenvalues.as_slice(), p.total());
            eig.eigenvalues.copy_from_slice(&projected);
            hermitian_part(&eig.reconstruct())
        }
        OracleConstraint::PerAntenna => dykstra(&q, p.as_slice(), cfg.projection_iters)?,
    };
    InputCovariance::new(out)
}

fn dykstra(q: &ComplexMatrix, p: &[f64], iters: usize) -> Result<ComplexMatrix> {
    let scale = 1.0 + frobenius(q);
    let n = q.nrows();
    let mut x = q.clone();
    let mut corr_psd = ComplexMatrix::zeros(n, n);
    let mut corr_cap = ComplexMatrix::zeros(n, n);
    let mut y = project_psd(&x)?;
    for _ in 0..iters {
        y = project_psd(&(&x + &corr_psd))?;
        let new_psd = &x + &corr_psd - &y;
        let x_new = cap_diagonal(&(&y + &corr_cap), p);
        let new_cap = &y + &corr_cap - &x_new;
        let change = frobenius(&(&x_new - &x))
            + frobenius(&(&new_psd - &corr_psd))
            + frobenius(&(&new_cap - &corr_cap));
        x = x_new;
        corr_psd = new_psd;
        corr_cap = new_cap;
        if change < 1e-12 * scale {
            break;
        }
    }
    // y is PSD and within round-off of the cap; a congruence with a diagonal
    // shrink makes the cap exact without leaving the cone.
    let shrink: Vec<f64> = (0..n)
        .map(|i| {
            let d = y[(i, i)].re;
            if d > p[i] && d > 0.0 {
                (p[i] / d).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut out = y;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] *= shrink[i] * shrink[j];
        }
    }
    Ok(hermitian_part(&out))
}

fn initial_point(p: &PowerConstraint, mode: OracleConstraint) -> ComplexMatrix {
    match mode {
        OracleConstraint::PerAntenna => p.diag(),
        OracleConstraint::Sum => identity(p.len()).scale(p.total() / p.len() as f64),
    }
}

/// Projected gradient ascent on the rate.
pub fn pg_solve(ch: &ChannelMatrix, p: &PowerConstraint, cfg: &OracleConfig) -> Result<OracleReport> {
    cfg.validate()?;
    if p.len() != ch.n() {
        return Err(Error::DimensionMismatch(format!(
            "power constraint has {} entries but the channel has {} transmit antennas",
            p.len(),
            ch.n()
        )));
    }
    let h = ch.h();
    let mut q = initial_point(p, cfg.constraint_mode);
    let mut f = rate_unchecked(h, &q);
    let mut step = cfg.step_size;
    let mut stalled = 0;
    let mut accepted = 0;

    for it in 0..cfg.max_outer {
        let g = gradient_raw(h, &q)?;
        let candidate = project_feasible(&(&q + g.scale(step)), p, cfg)?.into_matrix();
        let f_new = rate_unchecked(h, &candidate);
        if f_new >= f {
            stalled = if f_new - f < cfg.obj_tol { stalled + 1 } else { 0 };
            q = candidate;
            f = f_new;
            step *= 2.0;
            accepted += 1;
            if stalled >= STALL_STEPS {
                return Ok(OracleReport {
                    q: InputCovariance::new(q)?,
                    rate: f,
                    iterations: it + 1,
                    accepted_steps: accepted,
                    converged: true,
                });
            }
        } else {
            step *= 0.5;
            if step < 1e-14 {
                // No ascent direction survives projection: stationary point.
                return Ok(OracleReport {
                    q: InputCovariance::new(q)?,
                    rate: f,
                    iterations: it + 1,
                    accepted_steps: accepted,
                    converged: true,
                });
            }
        }
    }
    Ok(OracleReport {
        q: InputCovariance::new(q)?,
        rate: f,
        iterations: cfg.max_outer,
        accepted_steps: accepted,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMaximum {
    pub rate: f64,
    pub rho: f64,
    pub theta: f64,
}

/// Brute-force maximum of the rate over `Q = [[P1, z], [z*, P2]]` with
/// `z = rho sqrt(P1 P2) e^{j theta}` on a `resolution x resolution` grid,
/// `rho` in `[0, 1]` and `theta` in `[0, 2 pi)`.
pub fn grid_verify_2x2(ch: &ChannelMatrix, p: &PowerConstraint, resolution: usize) -> Result<GridMaximum> {
    if ch.n() != 2 {
        return Err(Error::NotTwoTransmit(ch.n()));
    }
    if p.len() != 2 {
        return Err(Error::DimensionMismatch(format!("expected 2 powers, got {}", p.len())));
    }
    if resolution < 2 {
        return Err(Error::InvalidConfig("grid resolution must be at least 2".into()));
    }
    // det(I_m + H Q H^H) = det(I_2 + Q G) with G = H^H H.
    let g = ch.h().adjoint() * ch.h();
    let (g11, g12, g21, g22) = (g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let (p1, p2) = (p.as_slice()[0], p.as_slice()[1]);
    let amp = (p1 * p2).sqrt();
    let eval = |rho: f64, theta: f64| -> f64 {
        let z = Complex64::from_polar(rho * amp, theta);
        let a11 = 1.0 + p1 * g11 + z * g21;
        let a12 = p1 * g12 + z * g22;
        let a21 = z.conj() * g11 + p2 * g21;
        let a22 = 1.0 + z.conj() * g12 + p2 * g22;
        (a11 * a22 - a12 * a21).re.ln()
    };

    let best = (0..resolution)
        .into_par_iter()
        .map(|i| {
            let rho = i as f64 / (resolution - 1) as f64;
            let mut row_best = GridMaximum {
                rate: f64::NEG_INFINITY,
                rho,
                theta: 0.0,
            };
            for j in 0..resolution {
                let theta = 2.0 * PI * j as f64 / resolution as f64;
                let r = eval(rho, theta);
                if r > row_best.rate {
                    row_best = GridMaximum { rate: r, rho, theta };
                }
            }
            row_best
        })
        .reduce(
            || GridMaximum {
                rate: f64::NEG_INFINITY,
                rho: 0.0,
                theta: 0.0,
            },
            pick_larger,
        );
    Ok(best)
}

// Ties go to the smaller (rho, theta) so the reduction is order-independent.
fn pick_larger(a: GridMaximum, b: GridMaximum) -> GridMaximum {
    match a.rate.total_cmp(&b.rate) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if (a.rho, a.theta) <= (b.rho, b.theta) {
                a
            } else {
                b
            }
        }
    }
}
