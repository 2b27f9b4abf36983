//! Monte-Carlo harness for ergodic rates over i.i.d. Rayleigh channels.
//!
//! Every sample draws from its own ChaCha8 stream: the generator is seeded
//! with the run seed and the stream id is `(snr_index << 32) | sample_index`.
//! Samples can therefore be evaluated in any order (and in parallel) while
//! the output stays bit-identical; averages are accumulated sequentially in
//! sample order.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::baselines::{forced_eigenbeam, mac_rate, waterfill_sum};
use crate::channel::{rate, ChannelMatrix, InputCovariance, PowerConstraint};
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::perantenna::{opt_cov_with, SolverOptions};

/// Slack allowed in the per-sample ordering `c_mac <= c_pa <= c_sum`.
pub const SANDWICH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum PowerProfile {
    /// `P_k = P / n`.
    Equal,
    /// `P_k` proportional to `k^2`, `k = 1..n`.
    KSquared,
    /// Explicit weights, normalised to sum to one.
    Weights(Vec<f64>),
}

impl PowerProfile {
    pub fn weights(&self, n: usize) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match self {
            PowerProfile::Equal => vec![1.0; n],
            PowerProfile::KSquared => (1..=n).map(|k| (k * k) as f64).collect(),
            PowerProfile::Weights(w) => {
                if w.len() != n {
                    return Err(Error::InvalidConfig(format!(
                        "{} weights given for {n} transmit antennas",
                        w.len()
                    )));
                }
                w.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidConfig("weights must be nonnegative with a positive sum".into()));
        }
        Ok(raw.iter().map(|w| w / total).collect())
    }

    pub fn constraint(&self, n: usize, total_power: f64) -> Result<PowerConstraint> {
        PowerConstraint::from_weights(&self.weights(n)?, total_power)
    }
}

#[derive(Debug, Clone)]
pub struct ErgodicConfig {
    pub m: usize,
    pub n: usize,
    pub snr_db_grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub profile: PowerProfile,
}

impl ErgodicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("antenna counts must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
        if self.snr_db_grid.is_empty() || self.snr_db_grid.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid must be a nonempty list of finite values".into()));
        }
        self.profile.weights(self.n).map(|_| ())
    }
}

/// RNG for one (SNR point, sample) pair.
pub fn sample_rng(seed: u64, snr_index: usize, sample_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((snr_index as u64) << 32) | sample_index as u64);
    rng
}

/// `m x n` matrix of i.i.d. CN(0, 1) entries, redrawn on the (numerically
/// negligible) event of rank deficiency.
pub fn rayleigh_sample<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> ChannelMatrix {
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std");
    loop {
        let h = ComplexMatrix::from_fn(m, n, |_, _| {
            num_complex::Complex64::new(normal.sample(rng), normal.sample(rng))
        });
        if let Ok(ch) = ChannelMatrix::new(h) {
            return ch;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub c_sum: f64,
    pub c_pa: f64,
    pub c_mac: f64,
    pub c_forced: f64,
    pub forced_feasible: bool,
    pub converged: bool,
}

impl SampleOutcome {
    pub fn sandwich_holds(&self) -> bool {
        self.c_mac <= self.c_pa + SANDWICH_TOL && self.c_pa <= self.c_sum + SANDWICH_TOL
    }
}

/// All four rates on one channel.
pub fn evaluate(ch: &ChannelMatrix, p: &PowerConstraint, opts: &SolverOptions) -> Result<SampleOutcome> {
    let pa = opt_cov_with(ch, p, opts)?;
    let forced = forced_eigenbeam(ch, p)?;
    Ok(SampleOutcome {
        c_sum: waterfill_sum(ch, p.total())?.rate,
        c_pa: pa.rate,
        c_mac: mac_rate(ch, p)?,
        c_forced: forced.rate,
        forced_feasible: forced.feasible,
        converged: pa.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: impl IntoIterator<Item = f64>) -> MeanStderr {
    let values: Vec<f64> = values.into_iter().collect();
    let n = values.len();
    if n == 0 {
        return MeanStderr::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanStderr { mean, stderr }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub c_sum: MeanStderr,
    pub c_pa: MeanStderr,
    pub c_mac: MeanStderr,
    pub c_forced: MeanStderr,
    pub infeasible_fraction: f64,
    pub nonconverged: usize,
    pub sandwich_violations: usize,
    pub samples: Vec<SampleOutcome>,
}

impl SweepRow {
    fn from_samples(snr_db: f64, samples: Vec<SampleOutcome>) -> Self {
        let count = samples.len() as f64;
        Self {
            snr_db,
            c_sum: mean_stderr(samples.iter().map(|s| s.c_sum)),
            c_pa: mean_stderr(samples.iter().map(|s| s.c_pa)),
            c_mac: mean_stderr(samples.iter().map(|s| s.c_mac)),
            c_forced: mean_stderr(samples.iter().map(|s| s.c_forced)),
            infeasible_fraction: samples.iter().filter(|s| !s.forced_feasible).count() as f64 / count,
            nonconverged: samples.iter().filter(|s| !s.converged).count(),
            sandwich_violations: samples.iter().filter(|s| !s.sandwich_holds()).count(),
            samples,
        }
    }
}

pub fn sweep(cfg: &ErgodicConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let opts = SolverOptions {
        keep_trace: false,
        ..SolverOptions::default()
    };
    cfg.snr_db_grid
        .iter()
        .enumerate()
        .map(|(si, &snr_db)| {
            let p = cfg.profile.constraint(cfg.n, 10f64.powf(snr_db / 10.0))?;
            let samples = (0..cfg.samples)
                .into_par_iter()
                .map(|k| {
                    let mut rng = sample_rng(cfg.seed, si, k);
                    let ch = rayleigh_sample(cfg.m, cfg.n, &mut rng);
                    evaluate(&ch, &p, &opts)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow::from_samples(snr_db, samples))
        })
        .collect()
}

fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

pub const SWEEP_CSV_HEADER: &str =
    "snr_db,c_sum,c_pa,c_mac,c_forced,se_sum,se_pa,se_mac,se_forced,infeasible_frac,nonconverged";

/// CSV with one row per SNR point; rates in nats, or bits if `bits` is set.
pub fn sweep_csv(rows: &[SweepRow], bits: bool) -> String {
    let k = if bits { std::f64::consts::LOG2_E } else { 1.0 };
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let cols = [
            fmt_float(r.snr_db),
            fmt_float(k * r.c_sum.mean),
            fmt_float(k * r.c_pa.mean),
            fmt_float(k * r.c_mac.mean),
            fmt_float(k * r.c_forced.mean),
            fmt_float(k * r.c_sum.stderr),
            fmt_float(k * r.c_pa.stderr),
            fmt_float(k * r.c_mac.stderr),
            fmt_float(k * r.c_forced.stderr),
            fmt_float(r.infeasible_fraction),
            r.nonconverged.to_string(),
        ];
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRow {
    pub p1: f64,
    pub c_sum: f64,
    pub c_pa: f64,
    pub c_mac: f64,
    pub c_forced: f64,
}

impl SplitRow {
    /// Largest pairwise distance between the sum, per-antenna and forced rates.
    pub fn spread(&self) -> f64 {
        let v = [self.c_sum, self.c_pa, self.c_forced];
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

#[derive(Debug, Clone)]
pub struct SplitSweep {
    pub rows: Vec<SplitRow>,
    /// Row where the sum, per-antenna and forced curves are closest.
    pub meeting_index: usize,
    pub nonconverged: usize,
}

/// Rates for `p = (P1, total - P1)` with `P1 = total * i / (grid + 1)`,
/// `i = 1..=grid`.
pub fn power_split_sweep(ch: &ChannelMatrix, total_power: f64, grid: usize) -> Result<SplitSweep> {
    if ch.n() != 2 {
        return Err(Error::NotTwoTransmit(ch.n()));
    }
    if grid == 0 {
        return Err(Error::InvalidConfig("grid must have at least one point".into()));
    }
    let c_sum = waterfill_sum(ch, total_power)?.rate;
    let opts = SolverOptions {
        keep_trace: false,
        ..SolverOptions::default()
    };
    let mut rows = Vec::with_capacity(grid);
    let mut nonconverged = 0;
    for i in 1..=grid {
        let p1 = total_power * i as f64 / (grid + 1) as f64;
        let row = split_point(ch, c_sum, p1, total_power - p1, &opts)?;
        nonconverged += usize::from(!row.1);
        rows.push(row.0);
    }
    let meeting_index = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.spread().total_cmp(&b.1.spread()))
        .map(|(i, _)| i)
        .expect("grid >= 1");
    Ok(SplitSweep {
        rows,
        meeting_index,
        nonconverged,
    })
}

/// Rates at a single split `(p1, p2)`.
pub fn split_rates(ch: &ChannelMatrix, p1: f64, p2: f64) -> Result<SplitRow> {
    let c_sum = waterfill_sum(ch, p1 + p2)?.rate;
    Ok(split_point(ch, c_sum, p1, p2, &SolverOptions::default())?.0)
}

fn split_point(ch: &ChannelMatrix, c_sum: f64, p1: f64, p2: f64, opts: &SolverOptions) -> Result<(SplitRow, bool)> {
    let p = PowerConstraint::new(vec![p1, p2])?;
    let pa = opt_cov_with(ch, &p, opts)?;
    Ok((
        SplitRow {
            p1,
            c_sum,
            c_pa: pa.rate,
            c_mac: mac_rate(ch, &p)?,
            c_forced: forced_eigenbeam(ch, &p)?.rate,
        },
        pa.converged,
    ))
}

pub const SPLIT_CSV_HEADER: &str = "P1,c_sum,c_pa,c_mac,c_forced";

pub fn split_csv(sweep: &SplitSweep, bits: bool) -> String {
    let k = if bits { std::f64::consts::LOG2_E } else { 1.0 };
    let mut out = String::from(SPLIT_CSV_HEADER);
    out.push('\n');
    for r in &sweep.rows {
        let cols = [r.p1, k * r.c_sum, k * r.c_pa, k * r.c_mac, k * r.c_forced].map(fmt_float);
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    let meet = &sweep.rows[sweep.meeting_index];
    let _ = writeln!(
        out,
        "# meeting point: row {} P1={} spread={}",
        sweep.meeting_index + 1,
        fmt_float(meet.p1),
        fmt_float(k * meet.spread())
    );
    out
}

#[derive(Debug, Clone)]
pub struct NoCsitReport {
    pub passed: bool,
    /// Mean rate of `Q = diag(p)`.
    pub baseline_mean: f64,
    pub challenger_means: Vec<f64>,
    /// Standard error of the paired difference baseline - challenger.
    pub paired_stderr: Vec<f64>,
}

/// `D^{1/2} R D^{1/2}` with `R` a random correlation matrix (normalised Gram
/// of Gaussian vectors), so the diagonal equals `p`.
pub fn random_challenger<R: Rng + ?Sized>(p: &PowerConstraint, rng: &mut R) -> Result<InputCovariance> {
    let n = p.len();
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let a = ComplexMatrix::from_fn(n, n, |_, _| num_complex::Complex64::new(normal.sample(rng), normal.sample(rng)));
    let g = &a * a.adjoint();
    let sqrt_p: Vec<f64> = p.as_slice().iter().map(|x| x.sqrt()).collect();
    let q = ComplexMatrix::from_fn(n, n, |i, j| {
        g[(i, j)] / (g[(i, i)].re * g[(j, j)].re).sqrt() * sqrt_p[i] * sqrt_p[j]
    });
    InputCovariance::new(crate::numerics::hermitian_part(&q))
}

/// Paired comparison of `Q = diag(p)` against fixed challengers over common
/// Rayleigh draws. Passes iff the baseline mean is at least every challenger
/// mean minus two paired standard errors.
pub fn no_csit_compare<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    p: &PowerConstraint,
    samples: usize,
    challengers: &[InputCovariance],
    rng: &mut R,
) -> Result<NoCsitReport> {
    if p.len() != n || challengers.iter().any(|c| c.n() != n) {
        return Err(Error::DimensionMismatch("constraint and challengers must have n entries".into()));
    }
    if samples == 0 || challengers.is_empty() {
        return Err(Error::InvalidConfig("need at least one sample and one challenger".into()));
    }
    let base_q = InputCovariance::from_power(p);
    let mut base = Vec::with_capacity(samples);
    let mut diffs = vec![Vec::with_capacity(samples); challengers.len()];
    let mut chal = vec![Vec::with_capacity(samples); challengers.len()];
    for _ in 0..samples {
        let ch = rayleigh_sample(m, n, rng);
        let b = rate(&ch, &base_q)?;
        base.push(b);
        for (k, q) in challengers.iter().enumerate() {
            let r = rate(&ch, q)?;
            chal[k].push(r);
            diffs[k].push(b - r);
        }
    }
    let baseline_mean = mean_stderr(base).mean;
    let challenger_means: Vec<f64> = chal.into_iter().map(|c| mean_stderr(c).mean).collect();
    let paired: Vec<MeanStderr> = diffs.into_iter().map(mean_stderr).collect();
    let passed = paired.iter().all(|d| d.mean >= -2.0 * d.stderr);
    Ok(NoCsitReport {
        passed,
        baseline_mean,
        challenger_means,
        paired_stderr: paired.iter().map(|d| d.stderr).collect(),
    })
}

/// Draws `challengers` random correlated covariances with diagonal `p` and
/// compares them against `Q = diag(p)`.
pub fn no_csit_check<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    p: &PowerConstraint,
    samples: usize,
    challengers: usize,
    rng: &mut R,
) -> Result<NoCsitReport> {
    if challengers == 0 {
        return Err(Error::InvalidConfig("need at least one challenger".into()));
    }
    let qs = (0..challengers)
        .map(|_| random_challenger(p, rng))
        .collect::<Result<Vec<_>>>()?;
    no_csit_compare(m, n, p, samples, &qs, rng)
}
