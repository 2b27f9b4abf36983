//! Per-antenna power constrained capacity.
//!
//! For a fixed positive diagonal dual variable `D` (stored through its inverse
//! `d_check = diag(D)^-1`), the Lagrangian maximiser `Q(D)` has a closed form:
//!
//! - `n <= m`: `Q = Ď - Ǩ Ǩ^H + Ǩ S Ǩ^H`, where `-S` collects the
//!   non-positive eigenmodes of `K Ď K^H - I_n`.
//! - `n > m`: `Q = Ď - Ȟ Ȟ^H + Z - X`, where `Z = Ȟ S Ȟ^H` with `-S` the
//!   non-positive eigenmodes of `H Ď H^H - I_m`, and `X` is supported on the
//!   channel null space and chosen so that `V2^H D Q = 0`.
//!
//! The optimum is reached by the fixed-point update
//! `Ď <- Ď + P - diag(Q(Ď))`, stopped on the duality gap
//! `|tr[D (Q - P)]| < eps`.

use serde::Serialize;

use crate::channel::{
    rate_unchecked, ChannelDecomposition, ChannelMatrix, DecompositionShape, InputCovariance,
    PowerConstraint,
};
use crate::error::{Error, Result};
use crate::numerics::{
    diag_matrix, frobenius, hermitian_eig, hermitian_part, identity, inverse, numerical_rank,
    split_nonpositive_modes, ComplexMatrix,
};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Relative eigenvalue threshold used when counting the rank of `Q`.
pub const RANK_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Stop once `|tr[D (Q - P)]| < eps`.
    pub eps: f64,
    pub max_iter: usize,
    /// Keep per-iteration records (needed by [`monotonicity_diag`]).
    pub keep_trace: bool,
    /// Additionally require `max_i |P_i - Q_ii|` below this before stopping.
    /// `None` means `10 * eps`.
    pub diag_tol: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            max_iter: DEFAULT_MAX_ITER,
            keep_trace: true,
            diag_tol: None,
        }
    }
}

impl SolverOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    fn diag_tol(&self) -> f64 {
        self.diag_tol.unwrap_or(10.0 * self.eps)
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Inverse dual prices `Ď = D^-1`, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDiagonal(Vec<f64>);

impl DualDiagonal {
    pub fn new(d_check: Vec<f64>) -> Result<Self> {
        if d_check.is_empty() || d_check.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidConfig(
                "dual diagonal entries must be finite and strictly positive".into(),
            ));
        }
        Ok(Self(d_check))
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

    /// `Ď` as a diagonal matrix.
    pub fn matrix(&self) -> ComplexMatrix {
        diag_matrix(&self.0)
    }

    /// `D = Ď^-1` as a diagonal matrix.
    pub fn dual_matrix(&self) -> ComplexMatrix {
        diag_matrix(&self.0.iter().map(|x| 1.0 / x).collect::<Vec<_>>())
    }
}

/// `Q(D)` together with the dropped-mode slack matrix.
#[derive(Debug, Clone)]
pub struct DualResponse {
    pub q: InputCovariance,
    /// `S_n` (tall) or `S_m` (wide); PSD.
    pub slack: ComplexMatrix,
    pub dropped_modes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Signed duality gap `-tr[D_i (Q_i - P)]`.
    pub gap: f64,
    pub max_diag_violation: f64,
    pub d_check: Vec<f64>,
    pub dropped_modes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    /// Whether the run used the `n > m` iteration.
    pub wide: bool,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct KktResidual {
    /// `M = D - H^H (I + H Q H^H)^-1 H`.
    pub m_matrix: ComplexMatrix,
    /// `||(R_m - F_m + I_m) R_m||_F` with `R_m = H Q H^H`, `F_m = H Ď H^H`.
    pub stationarity_norm: f64,
    /// `||M Q||_F`.
    pub slackness_norm: f64,
    /// Smallest eigenvalue of `M` (negative means `M` is not PSD).
    pub psd_violation: f64,
    /// `||V2^H D Q||_F` for `n > m`.
    pub null_space_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub q: InputCovariance,
    /// `Ď` that produced `q`. Zero-power antennas are removed from the problem
    /// and report `0.0` here.
    pub d_check: Vec<f64>,
    /// Signed duality gap of the returned iterate.
    pub gap: f64,
    pub iterations: usize,
    /// Nats per channel use.
    pub rate: f64,
    pub trace: SolveTrace,
    pub dropped_modes: usize,
    pub converged: bool,
    pub kkt: Option<KktResidual>,
}

impl SolveReport {
    pub fn max_diag_violation(&self, p: &PowerConstraint) -> f64 {
        self.q
            .diagonal()
            .iter()
            .zip(p.as_slice())
            .map(|(q, p)| (q - p).abs())
            .fold(0.0, f64::max)
    }

    pub fn rank(&self) -> usize {
        numerical_rank(self.q.matrix(), RANK_THRESHOLD).unwrap_or(0)
    }

    pub fn to_json(&self) -> SolveReportJson {
        SolveReportJson {
            rate_nats: self.rate,
            gap: self.gap,
            iterations: self.iterations,
            k_dropped: self.dropped_modes,
            q: self.q.to_pairs(),
            d_check: self.d_check.clone(),
            converged: self.converged,
        }
    }
}

/// Wire format of a [`SolveReport`].
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct SolveReportJson {
    pub rate_nats: f64,
    pub gap: f64,
    pub iterations: usize,
    pub k_dropped: usize,
    #[serde(rename = "Q")]
    pub q: Vec<[f64; 2]>,
    #[serde(rename = "D_check")]
    pub d_check: Vec<f64>,
    pub converged: bool,
}

fn check_len(what: &str, got: usize, n: usize) -> Result<()> {
    if got != n {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {got} entries but the channel has {n} transmit antennas"
        )));
    }
    Ok(())
}

/// Initial point `Ď_0 = P + diag(Ǧ)`.
pub fn init_dual(dec: &ChannelDecomposition, p: &PowerConstraint) -> Result<DualDiagonal> {
    check_len("power constraint", p.len(), dec.n())?;
    DualDiagonal::new(
        p.as_slice()
            .iter()
            .zip(dec.g_check.diagonal().iter())
            .map(|(p, g)| p + g.re)
            .collect(),
    )
}

pub fn q_from_dual_tall(dec: &ChannelDecomposition, d: &DualDiagonal) -> Result<DualResponse> {
    let DecompositionShape::Tall { k, k_inv } = &dec.shape else {
        return Err(Error::BranchMismatch {
            op: "q_from_dual_tall",
            expected: "n <= m",
            m: dec.m(),
            n: dec.n(),
        });
    };
    check_len("dual diagonal", d.len(), dec.n())?;
    let n = dec.n();
    let d_mat = d.matrix();

    let f = hermitian_part(&(k * &d_mat * k.adjoint())) - identity(n);
    let split = split_nonpositive_modes(&f)?;
    let z = k_inv * &split.slack * k_inv.adjoint();
    let q = d_mat - &dec.g_check + z;
    Ok(DualResponse {
        q: as_covariance(q)?,
        slack: split.slack,
        dropped_modes: split.dropped,
    })
}

pub fn q_from_dual_wide(dec: &ChannelDecomposition, d: &DualDiagonal) -> Result<DualResponse> {
    let DecompositionShape::Wide { h_inv, v1, v2 } = &dec.shape else {
        return Err(Error::BranchMismatch {
            op: "q_from_dual_wide",
            expected: "n > m",
            m: dec.m(),
            n: dec.n(),
        });
    };
    check_len("dual diagonal", d.len(), dec.n())?;
    let (m, n) = (dec.m(), dec.n());
    let h = &dec.h;
    let d_check = d.matrix();
    let dual = d.dual_matrix();

    let f = hermitian_part(&(h * &d_check * h.adjoint())) - identity(m);
    let split = split_nonpositive_modes(&f)?;
    let z = h_inv * &split.slack * h_inv.adjoint();

    let dual_v2 = &dual * v2;
    let w = inverse(&hermitian_part(&(v2.adjoint() * &dual_v2)))?;
    let b = v1.adjoint() * (&z - &dec.g_check) * &dual_v2 * &w;
    let a = (identity(n - m) - b.adjoint() * v1.adjoint() * &dual_v2) * &w;
    let x = v2 * &a * v2.adjoint() + v1 * &b * v2.adjoint() + v2 * b.adjoint() * v1.adjoint();

    let q = d_check - &dec.g_check + z - x;
    Ok(DualResponse {
        q: as_covariance(q)?,
        slack: split.slack,
        dropped_modes: split.dropped,
    })
}

pub fn q_from_dual(dec: &ChannelDecomposition, d: &DualDiagonal) -> Result<DualResponse> {
    if dec.is_wide() {
        q_from_dual_wide(dec, d)
    } else {
        q_from_dual_tall(dec, d)
    }
}

fn as_covariance(q: ComplexMatrix) -> Result<InputCovariance> {
    InputCovariance::new(hermitian_part(&q)).map_err(|e| {
        Error::Numerical(format!("closed-form covariance violated its invariants: {e}"))
    })
}

/// `-tr[D (Q - P)] = sum_i (P_i - Q_ii) / Ď_i`; may be negative.
pub fn duality_gap(d: &DualDiagonal, q: &InputCovariance, p: &PowerConstraint) -> Result<f64> {
    if d.len() != q.n() || p.len() != q.n() {
        return Err(Error::DimensionMismatch(format!(
            "dual ({}), covariance ({}) and constraint ({}) sizes differ",
            d.len(),
            q.n(),
            p.len()
        )));
    }
    Ok(gap_unchecked(d.as_slice(), &q.diagonal(), p.as_slice()))
}

fn gap_unchecked(d_check: &[f64], q_diag: &[f64], p: &[f64]) -> f64 {
    d_check
        .iter()
        .zip(q_diag)
        .zip(p)
        .map(|((d, q), p)| (p - q) / d)
        .sum()
}

/// Dual iteration for `n <= m`.
pub fn drop_rank_n(
    dec: &ChannelDecomposition,
    d0: &DualDiagonal,
    p: &PowerConstraint,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if dec.is_wide() {
        return Err(Error::BranchMismatch {
            op: "drop_rank_n",
            expected: "n <= m",
            m: dec.m(),
            n: dec.n(),
        });
    }
    iterate(dec, d0, p, opts)
}

/// Dual iteration for `n > m`.
pub fn drop_rank_m(
    dec: &ChannelDecomposition,
    d0: &DualDiagonal,
    p: &PowerConstraint,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    if !dec.is_wide() {
        return Err(Error::BranchMismatch {
            op: "drop_rank_m",
            expected: "n > m",
            m: dec.m(),
            n: dec.n(),
        });
    }
    iterate(dec, d0, p, opts)
}

/// Runs whichever iteration matches the channel shape from a given start.
pub fn solve_from(
    dec: &ChannelDecomposition,
    d0: &DualDiagonal,
    p: &PowerConstraint,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    iterate(dec, d0, p, opts)
}

struct Iterate {
    response: DualResponse,
    d_check: Vec<f64>,
    gap: f64,
    violation: f64,
    index: usize,
}

fn iterate(
    dec: &ChannelDecomposition,
    d0: &DualDiagonal,
    p: &PowerConstraint,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_len("power constraint", p.len(), dec.n())?;
    check_len("dual diagonal", d0.len(), dec.n())?;
    if p.as_slice().iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidConstraint(
            "the dual iteration needs strictly positive per-antenna powers".into(),
        ));
    }
    let pv = p.as_slice();
    let diag_tol = opts.diag_tol();
    let mut trace = SolveTrace {
        wide: dec.is_wide(),
        records: Vec::new(),
    };
    let mut d = d0.clone();
    let mut best: Option<Iterate> = None;

    for i in 0..opts.max_iter {
        let response = q_from_dual(dec, &d)?;
        let q_diag = response.q.diagonal();
        let residual: Vec<f64> = pv.iter().zip(&q_diag).map(|(p, q)| p - q).collect();
        let gap = gap_unchecked(d.as_slice(), &q_diag, pv);
        let violation = residual.iter().fold(0.0, |acc: f64, r| acc.max(r.abs()));

        if opts.keep_trace {
            trace.records.push(IterationRecord {
                gap,
                max_diag_violation: violation,
                d_check: d.as_slice().to_vec(),
                dropped_modes: response.dropped_modes,
            });
        }

        let done = gap.abs() < opts.eps && violation <= diag_tol;
        let improves = best.as_ref().is_none_or(|b| violation < b.violation);
        let next: Vec<f64> = d
            .as_slice()
            .iter()
            .zip(&residual)
            .map(|(d, r)| {
                let updated = d + r;
                // keep Ď strictly positive; the dual map is undefined otherwise
                if updated > 0.0 {
                    updated
                } else {
                    0.5 * d
                }
            })
            .collect();

        if done || improves {
            best = Some(Iterate {
                response,
                d_check: d.as_slice().to_vec(),
                gap,
                violation,
                index: i,
            });
        }
        if done {
            return Ok(finish(dec, best.expect("just set"), trace, true));
        }
        d = DualDiagonal::new(next)?;
    }
    let best = best.expect("max_iter >= 1");
    Ok(finish(dec, best, trace, false))
}

fn finish(dec: &ChannelDecomposition, it: Iterate, trace: SolveTrace, converged: bool) -> SolveReport {
    let rate = rate_unchecked(&dec.h, it.response.q.matrix());
    SolveReport {
        rate,
        q: it.response.q,
        d_check: it.d_check,
        gap: it.gap,
        iterations: it.index,
        trace,
        dropped_modes: it.response.dropped_modes,
        converged,
        kkt: None,
    }
}

/// Optimal input covariance for `ch` under per-antenna powers `p`.
pub fn opt_cov(ch: &ChannelMatrix, p: &PowerConstraint, eps: f64) -> Result<SolveReport> {
    opt_cov_with(ch, p, &SolverOptions::with_eps(eps))
}

pub fn opt_cov_with(
    ch: &ChannelMatrix,
    p: &PowerConstraint,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_len("power constraint", p.len(), ch.n())?;

    let active: Vec<usize> = (0..ch.n()).filter(|&i| p.as_slice()[i] > 0.0).collect();
    if active.len() == ch.n() {
        return solve_full(ch, p, opts);
    }

    // Antennas with zero budget carry no signal: solve without them and
    // re-embed with zero rows and columns.
    let reduced_ch = ch.select_columns(&active)?;
    let reduced_p = PowerConstraint::new(active.iter().map(|&i| p.as_slice()[i]).collect())?;
    let reduced = solve_full(&reduced_ch, &reduced_p, opts)?;

    let n = ch.n();
    let mut q = ComplexMatrix::zeros(n, n);
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            q[(i, j)] = reduced.q.matrix()[(a, b)];
        }
    }
    let mut d_check = vec![0.0; n];
    for (a, &i) in active.iter().enumerate() {
        d_check[i] = reduced.d_check[a];
    }
    Ok(SolveReport {
        q: InputCovariance::new(q)?,
        d_check,
        ..reduced
    })
}

fn solve_full(ch: &ChannelMatrix, p: &PowerConstraint, opts: &SolverOptions) -> Result<SolveReport> {
    let dec = ch.decomposition();
    let d0 = init_dual(dec, p)?;
    let mut report = if dec.is_wide() {
        drop_rank_m(dec, &d0, p, opts)?
    } else {
        drop_rank_n(dec, &d0, p, opts)?
    };
    let d = DualDiagonal::new(report.d_check.clone())?;
    report.kkt = Some(kkt_check(ch, &report.q, &d)?);
    Ok(report)
}

pub fn kkt_check(ch: &ChannelMatrix, q: &InputCovariance, d: &DualDiagonal) -> Result<KktResidual> {
    let (m, n) = (ch.m(), ch.n());
    if q.n() != n || d.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "covariance ({}) and dual ({}) must match {n} transmit antennas",
            q.n(),
            d.len()
        )));
    }
    let h = ch.h();
    let qm = q.matrix();
    let dual = d.dual_matrix();

    let r = hermitian_part(&(h * qm * h.adjoint()));
    let grad = h.adjoint() * inverse(&(identity(m) + &r))? * h;
    let m_matrix = hermitian_part(&(&dual - grad));

    let f = hermitian_part(&(h * d.matrix() * h.adjoint()));
    let stationarity = (&r - f + identity(m)) * &r;

    let null_space_residual = match &ch.decomposition().shape {
        DecompositionShape::Wide { v2, .. } => Some(frobenius(&(v2.adjoint() * &dual * qm))),
        DecompositionShape::Tall { .. } => None,
    };

    Ok(KktResidual {
        stationarity_norm: frobenius(&stationarity),
        slackness_norm: frobenius(&(&m_matrix * qm)),
        psd_violation: hermitian_eig(&m_matrix)?.min(),
        m_matrix,
        null_space_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    /// `Ď_i` entrywise nonincreasing over the whole trace.
    pub monotone: bool,
    /// For `n > m`: a sign pattern `π` under which `Ď_i π` is nonincreasing
    /// over at least the second half of the run.
    pub sign_pattern: Option<Vec<i8>>,
    /// Number of leading steps excluded before `Ď_i π` becomes monotone.
    pub prefix: usize,
}

fn step_ok(prev: f64, next: f64, sign: f64) -> bool {
    sign * (next - prev) <= 1e-12 * prev.abs().max(1.0)
}

/// Leading steps to skip before coordinate `j` of `sign * Ď_i` is nonincreasing.
fn coordinate_prefix(records: &[IterationRecord], j: usize, sign: f64) -> usize {
    let steps = records.len().saturating_sub(1);
    (0..steps)
        .rev()
        .find(|&s| !step_ok(records[s].d_check[j], records[s + 1].d_check[j], sign))
        .map_or(0, |s| s + 1)
}

pub fn monotonicity_diag(trace: &SolveTrace) -> Result<MonotonicityReport> {
    let records = &trace.records;
    if records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = records[0].d_check.len();
    let monotone = (0..n).all(|j| coordinate_prefix(records, j, 1.0) == 0);
    if !trace.wide {
        return Ok(MonotonicityReport {
            monotone,
            sign_pattern: None,
            prefix: if monotone { 0 } else { (0..n).map(|j| coordinate_prefix(records, j, 1.0)).max().unwrap_or(0) },
        });
    }

    // The best prefix decomposes per coordinate, so the optimal pattern picks
    // the better sign independently for each antenna.
    let mut pattern = Vec::with_capacity(n);
    let mut prefix = 0;
    for j in 0..n {
        let down = coordinate_prefix(records, j, 1.0);
        let up = coordinate_prefix(records, j, -1.0);
        if down <= up {
            pattern.push(1);
            prefix = prefix.max(down);
        } else {
            pattern.push(-1);
            prefix = prefix.max(up);
        }
    }
    let steps = records.len() - 1;
    Ok(MonotonicityReport {
        monotone,
        sign_pattern: (2 * prefix <= steps).then_some(pattern),
        prefix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{is_psd, ComplexMatrix};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn reference_channel() -> ChannelMatrix {
        ChannelMatrix::from_row_slice(
            2,
            2,
            &[c(0.0541, -0.4066), c(-0.4339, 0.0033), c(-1.3200, -0.1872), c(0.8269, -0.0279)],
        )
        .unwrap()
    }

    fn pc(v: &[f64]) -> PowerConstraint {
        PowerConstraint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn init_dual_examples() {
        let eye = ChannelMatrix::new(identity(2)).unwrap();
        let d = init_dual(eye.decomposition(), &pc(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(d.as_slice()[0], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d.as_slice()[1], 1.5, epsilon = 1e-14);

        let diag = ChannelMatrix::new(diag_matrix(&[2.0, 1.0])).unwrap();
        let d = init_dual(diag.decomposition(), &pc(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(d.as_slice()[0], 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(d.as_slice()[1], 2.0, epsilon = 1e-14);

        let ch = reference_channel();
        let dec = ch.decomposition();
        let d = init_dual(dec, &pc(&[0.5, 0.5])).unwrap();
        for (i, x) in d.as_slice().iter().enumerate() {
            assert_abs_diff_eq!(*x, 0.5 + dec.g_check[(i, i)].re, epsilon = 1e-14);
            assert!(*x > 0.0);
        }
    }

    #[test]
    fn tall_map_examples() {
        let eye = ChannelMatrix::new(identity(2)).unwrap();
        let dec = eye.decomposition();

        let r = q_from_dual_tall(dec, &DualDiagonal::new(vec![1.5, 1.5]).unwrap()).unwrap();
        assert_eq!(r.dropped_modes, 0);
        assert!(frobenius(&(r.q.matrix() - identity(2).scale(0.5))) < 1e-14);

        let r = q_from_dual_tall(dec, &DualDiagonal::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(r.dropped_modes, 2);
        assert!(frobenius(r.q.matrix()) < 1e-14);
        assert!(frobenius(&(r.slack - identity(2).scale(0.5))) < 1e-14);

        let ch = reference_channel();
        let d0 = init_dual(ch.decomposition(), &pc(&[0.5, 0.5])).unwrap();
        let r = q_from_dual_tall(ch.decomposition(), &d0).unwrap();
        assert!(is_psd(r.q.matrix(), 1e-12).unwrap());

        let row = ChannelMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(matches!(
            q_from_dual_tall(row.decomposition(), &DualDiagonal::new(vec![1.0, 1.0]).unwrap()),
            Err(Error::BranchMismatch { .. })
        ));
    }

    #[test]
    fn wide_map_satisfies_null_space_condition() {
        let row = ChannelMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let dec = row.decomposition();
        // F - I = 2c - 1 > 0 for c = 1
        let d = DualDiagonal::new(vec![1.0, 1.0]).unwrap();
        let r = q_from_dual_wide(dec, &d).unwrap();
        assert_eq!(r.dropped_modes, 0);
        let DecompositionShape::Wide { v2, .. } = &dec.shape else { panic!() };
        assert!(frobenius(&(v2.adjoint() * d.dual_matrix() * r.q.matrix())) < 1e-9);
        assert!(numerical_rank(r.q.matrix(), RANK_THRESHOLD).unwrap() <= 1);

        let eye = ChannelMatrix::new(identity(2)).unwrap();
        assert!(matches!(
            q_from_dual_wide(eye.decomposition(), &d),
            Err(Error::BranchMismatch { .. })
        ));
    }

    /// The wide map's `Q` must be the unique PSD matrix with
    /// `H Q H^H = R_m` (positive modes of `F_m - I`) and range in `Ď V1`,
    /// which is `Ď H^H F^-1 R F^-1 H Ď` with `F = H Ď H^H`.
    #[test]
    fn wide_map_matches_compact_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for (m, n) in [(1, 2), (1, 4), (2, 3), (2, 4), (3, 5)] {
            let h = ComplexMatrix::from_fn(m, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let ch = ChannelMatrix::new(h.clone()).unwrap();
            let d = DualDiagonal::new((0..n).map(|_| rng.random_range(0.05..2.0)).collect()).unwrap();
            let r = q_from_dual_wide(ch.decomposition(), &d).unwrap();

            let f = hermitian_part(&(&h * d.matrix() * h.adjoint()));
            let eig = hermitian_eig(&(&f - identity(m))).unwrap();
            let mut pos = ComplexMatrix::zeros(m, m);
            for (j, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam > 0.0 {
                    let u = eig.eigenvectors.column(j);
                    pos += (u * u.adjoint()).scale(lam);
                }
            }
            let f_inv = inverse(&f).unwrap();
            let compact = d.matrix() * h.adjoint() * &f_inv * pos * &f_inv * &h * d.matrix();
            let scale = 1.0 + frobenius(&compact);
            assert!(frobenius(&(r.q.matrix() - compact)) < 1e-9 * scale, "{m}x{n}");
        }
    }

    #[test]
    fn gap_examples() {
        let d = DualDiagonal::new(vec![1.0, 1.0]).unwrap();
        let p = pc(&[0.5, 0.5]);
        let q = InputCovariance::new(diag_matrix(&[0.5, 0.5])).unwrap();
        assert_eq!(duality_gap(&d, &q, &p).unwrap(), 0.0);
        let q = InputCovariance::new(diag_matrix(&[0.4, 0.4])).unwrap();
        assert_abs_diff_eq!(duality_gap(&d, &q, &p).unwrap(), 0.2, epsilon = 1e-14);
        let q = InputCovariance::new(diag_matrix(&[0.6, 0.6])).unwrap();
        assert!(duality_gap(&d, &q, &p).unwrap() < 0.0);
        assert!(duality_gap(&d, &InputCovariance::zeros(3), &p).is_err());
    }

    #[test]
    fn identity_channel_exits_immediately() {
        let eye = ChannelMatrix::new(identity(2)).unwrap();
        let p = pc(&[0.5, 0.5]);
        let report = opt_cov(&eye, &p, 1e-8).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.gap, 0.0);
        assert!(frobenius(&(report.q.matrix() - identity(2).scale(0.5))) < 1e-14);
    }

    #[test]
    fn scalar_channel() {
        let one = ChannelMatrix::from_row_slice(1, 1, &[c(1.0, 0.0)]).unwrap();
        let report = opt_cov(&one, &pc(&[1.0]), 1e-8).unwrap();
        assert_abs_diff_eq!(report.q.matrix()[(0, 0)].re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(report.rate, std::f64::consts::LN_2, epsilon = 1e-10);
    }

    #[test]
    fn reference_channel_solve() {
        let ch = reference_channel();
        let p = pc(&[0.5, 0.5]);
        let report = opt_cov(&ch, &p, 1e-8).unwrap();
        assert!(report.converged);
        assert!(report.gap.abs() < 1e-8);
        assert!(report.max_diag_violation(&p) < 1e-6);
        let mac = crate::channel::rate(&ch, &InputCovariance::from_power(&p)).unwrap();
        assert!(report.rate > mac + 1e-3);
        let kkt = report.kkt.as_ref().unwrap();
        assert!(kkt.slackness_norm < 1e-6 * (1.0 + frobenius(report.q.matrix())));
        assert!(kkt.psd_violation > -1e-8);
        assert!(kkt.stationarity_norm < 1e-8);
    }

    #[test]
    fn strong_weak_diagonal_channel() {
        let ch = ChannelMatrix::new(diag_matrix(&[10.0, 0.1])).unwrap();
        let p = pc(&[0.5, 0.5]);
        let report = opt_cov(&ch, &p, 1e-8).unwrap();
        assert!(report.converged);
        assert!(report.max_diag_violation(&p) < 1e-6);
        // a diagonal channel keeps Q diagonal: nothing to gain from correlation
        assert!(report.q.matrix()[(0, 1)].norm() < 1e-9);
        assert_eq!(report.rank(), 2 - report.dropped_modes);
    }

    #[test]
    fn miso_two_antennas() {
        let row = ChannelMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let p = pc(&[0.5, 0.5]);
        let report = opt_cov(&row, &p, 1e-8).unwrap();
        assert!(report.converged);
        let expected = ComplexMatrix::from_element(2, 2, c(0.5, 0.0));
        assert!(frobenius(&(report.q.matrix() - expected)) < 1e-6);
        assert_abs_diff_eq!(report.rate, 3f64.ln(), epsilon = 1e-8);
        assert!(report.kkt.unwrap().null_space_residual.unwrap() < 1e-8);
    }

    #[test]
    fn miso_phase_matching() {
        // w = (sqrt(.5), sqrt(.5) e^{-j pi/2}) => Q_12 = w_1 conj(w_2) = 0.5 j
        let row = ChannelMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let report = opt_cov(&row, &pc(&[0.5, 0.5]), 1e-8).unwrap();
        let q12 = report.q.matrix()[(0, 1)];
        assert_abs_diff_eq!(q12.norm(), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(q12.re, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(q12.im, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(report.rate, 3f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn zero_power_antennas_are_removed() {
        let ch = ChannelMatrix::from_row_slice(
            2,
            3,
            &[c(1.0, 0.2), c(0.3, -0.5), c(-0.7, 0.1), c(0.4, 0.4), c(-0.2, 0.9), c(0.6, 0.0)],
        )
        .unwrap();
        let p = pc(&[0.6, 0.0, 0.4]);
        let report = opt_cov(&ch, &p, 1e-8).unwrap();
        assert!(report.converged);
        for j in 0..3 {
            assert_eq!(report.q.matrix()[(1, j)].norm(), 0.0);
            assert_eq!(report.q.matrix()[(j, 1)].norm(), 0.0);
        }
        assert_eq!(report.d_check[1], 0.0);
        assert!(report.max_diag_violation(&p) < 1e-6);
    }

    #[test]
    fn mismatched_constraint_is_rejected() {
        let ch = reference_channel();
        assert!(matches!(
            opt_cov(&ch, &pc(&[1.0, 1.0, 1.0]), 1e-8),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(opt_cov(&ch, &pc(&[1.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn max_iterations_returns_flagged_iterate() {
        let ch = reference_channel();
        let opts = SolverOptions {
            eps: 1e-14,
            max_iter: 3,
            diag_tol: Some(1e-16),
            ..SolverOptions::default()
        };
        let report = opt_cov_with(&ch, &pc(&[0.9, 0.1]), &opts).unwrap();
        assert!(!report.converged);
        assert_eq!(report.trace.records.len(), 3);
    }

    #[test]
    fn kkt_negative_control() {
        let ch = reference_channel();
        let p = pc(&[0.5, 0.5]);
        let report = opt_cov(&ch, &p, 1e-8).unwrap();
        let d = DualDiagonal::new(report.d_check.clone()).unwrap();
        let wrong = kkt_check(&ch, &InputCovariance::from_power(&p), &d).unwrap();
        assert!(wrong.slackness_norm > 1e-3);
    }

    #[test]
    fn kkt_zero_covariance() {
        let ch = reference_channel();
        let d = DualDiagonal::new(vec![0.1, 0.1]).unwrap();
        let kkt = kkt_check(&ch, &InputCovariance::zeros(2), &d).unwrap();
        assert_eq!(kkt.slackness_norm, 0.0);
    }

    #[test]
    fn tall_trace_is_monotone() {
        let ch = reference_channel();
        let report = opt_cov(&ch, &pc(&[0.9, 0.1]), 1e-8).unwrap();
        assert!(report.iterations > 0);
        let diag = monotonicity_diag(&report.trace).unwrap();
        assert!(diag.monotone);
        assert_eq!(diag.sign_pattern, None);
    }

    #[test]
    fn early_exit_trace_is_trivially_monotone() {
        let eye = ChannelMatrix::new(identity(2)).unwrap();
        let report = opt_cov(&eye, &pc(&[0.5, 0.5]), 1e-8).unwrap();
        assert_eq!(report.trace.records.len(), 1);
        assert!(monotonicity_diag(&report.trace).unwrap().monotone);
        assert!(matches!(monotonicity_diag(&SolveTrace::default()), Err(Error::EmptyTrace)));
    }

    #[test]
    fn start_below_fixed_point_increases_first() {
        // Ď_0 small enough that every mode is dropped: Q_0 = 0 so Ď_1 = Ď_0 + P.
        let ch = reference_channel();
        let p = pc(&[0.5, 0.5]);
        let d0 = DualDiagonal::new(vec![1e-3, 1e-3]).unwrap();
        let report = drop_rank_n(ch.decomposition(), &d0, &p, &SolverOptions::default()).unwrap();
        assert!(report.converged);
        let r = &report.trace.records;
        assert!(r[1].d_check[0] > r[0].d_check[0]);
        assert!(!monotonicity_diag(&report.trace).unwrap().monotone);
    }

    /// Brute-force reference for the sign-pattern search: try all 2^n patterns.
    fn exhaustive_pattern(records: &[IterationRecord]) -> usize {
        let n = records[0].d_check.len();
        (0..1usize << n)
            .map(|mask| {
                let signs: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 0 { 1.0 } else { -1.0 }).collect();
                let steps = records.len() - 1;
                (0..steps)
                    .rev()
                    .find(|&s| (0..n).any(|j| !step_ok(records[s].d_check[j], records[s + 1].d_check[j], signs[j])))
                    .map_or(0, |s| s + 1)
            })
            .min()
            .unwrap()
    }

    #[test]
    fn wide_sign_pattern_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for (m, n) in [(1, 3), (2, 4), (2, 3), (3, 6)] {
            let h = ComplexMatrix::from_fn(m, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let ch = ChannelMatrix::new(h).unwrap();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let p = PowerConstraint::from_weights(&w, 1.0).unwrap();
            let report = opt_cov(&ch, &p, 1e-8).unwrap();
            let diag = monotonicity_diag(&report.trace).unwrap();
            assert_eq!(diag.prefix, exhaustive_pattern(&report.trace.records));
            assert!(diag.sign_pattern.is_some(), "{m}x{n}: prefix {} of {}", diag.prefix, report.iterations);
        }
    }
}
