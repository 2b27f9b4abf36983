//! Acceptance battery. Each criterion is a self-contained randomized or
//! reference-channel experiment that reports pass/fail with a short summary.

use std::fmt;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{miso_closed_form, waterfill_sum};
use crate::channel::{ChannelMatrix, InputCovariance, PowerConstraint};
use crate::ergodic::{
    no_csit_check, power_split_sweep, rayleigh_sample, split_rates, sweep, ErgodicConfig, PowerProfile,
    SANDWICH_TOL,
};
use crate::error::Result;
use crate::numerics::{identity, numerical_rank};
use crate::oracle::{grid_verify_2x2, pg_solve, OracleConfig};
use crate::perantenna::{init_dual, opt_cov, opt_cov_with, solve_from, DualDiagonal, SolverOptions};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Reduced sample counts and grids.
    pub quick: bool,
    pub seed: u64,
    /// Perturb the solver output so the battery must fail (negative control).
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quick: false,
            seed: 20_240_917,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "oracle equivalence"),
    (2, "KKT battery"),
    (3, "power split sweep"),
    (4, "equal-power ergodic"),
    (5, "k^2 profile ergodic"),
    (6, "MISO closed form"),
    (7, "dual monotonicity"),
    (8, "convergence speed"),
    (9, "no-CSIT optimality"),
    (10, "performance"),
];

struct Scale {
    c1_channels: usize,
    c1_grid: usize,
    c2_channels: usize,
    ergodic_samples: usize,
    c6_channels: usize,
    c7_runs: usize,
    c8_runs: usize,
    c9_samples: usize,
}

impl Scale {
    fn new(quick: bool) -> Self {
        if quick {
            Self {
                c1_channels: 5,
                c1_grid: 200,
                c2_channels: 10,
                ergodic_samples: 200,
                c6_channels: 20,
                c7_runs: 30,
                c8_runs: 30,
                c9_samples: 400,
            }
        } else {
            Self {
                c1_channels: 50,
                c1_grid: 500,
                c2_channels: 50,
                ergodic_samples: 200,
                c6_channels: 100,
                c7_runs: 100,
                c8_runs: 100,
                c9_samples: 2000,
            }
        }
    }
}

/// Reference 2x2 channel used for the power split experiment.
pub fn reference_channel() -> ChannelMatrix {
    let c = Complex64::new;
    ChannelMatrix::from_row_slice(
        2,
        2,
        &[c(0.0541, -0.4066), c(-0.4339, 0.0033), c(-1.3200, -0.1872), c(0.8269, -0.0279)],
    )
    .expect("reference channel is full rank")
}

fn random_constraint(rng: &mut ChaCha8Rng, n: usize) -> PowerConstraint {
    let total = 10f64.powf(rng.random_range(-0.5..1.0));
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    PowerConstraint::from_weights(&w, total).expect("positive weights")
}

fn fault(opts: &VerifyOptions) -> f64 {
    if opts.inject_fault {
        1e-2
    } else {
        0.0
    }
}

fn snr_grid() -> Vec<f64> {
    (0..6).map(|k| -5.0 + 5.0 * k as f64).collect()
}

type Check = Result<(bool, String)>;

fn oracle_equivalence(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
    let cfg = OracleConfig::default();
    let mut worst_pg = 0.0f64;
    let mut worst_grid = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut total = 0;
    for m in 1..=4 {
        for n in 1..=4 {
            for _ in 0..scale.c1_channels {
                let ch = rayleigh_sample(m, n, &mut rng);
                let p = random_constraint(&mut rng, n);
                let ours = opt_cov(&ch, &p, 1e-8)?.rate + fault(opts);
                let pg = pg_solve(&ch, &p, &cfg)?;
                let diff = (ours - pg.rate).abs();
                worst_pg = worst_pg.max(diff);
                let mut ok = diff < 1e-4 && pg.converged;
                if n == 2 {
                    let excess = grid_verify_2x2(&ch, &p, scale.c1_grid)?.rate - ours;
                    worst_grid = worst_grid.max(excess);
                    ok &= excess <= 1e-3;
                }
                failures += usize::from(!ok);
                total += 1;
            }
        }
    }
    Ok((
        failures == 0,
        format!("{failures}/{total} failed; max |opt - pg| = {worst_pg:.2e}, max grid excess = {worst_grid:.2e}"),
    ))
}

fn kkt_battery(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
    let mut violations = Vec::new();
    let mut nonconverged = 0;
    let mut total = 0;
    for m in 1..=4 {
        for n in 1..=4 {
            for _ in 0..scale.c2_channels {
                let ch = rayleigh_sample(m, n, &mut rng);
                let p = random_constraint(&mut rng, n);
                let r = opt_cov(&ch, &p, 1e-8)?;
                total += 1;
                if !r.converged {
                    nonconverged += 1;
                    continue;
                }
                let kkt = r.kkt.as_ref().expect("opt_cov attaches KKT residuals");
                let qn = crate::numerics::frobenius(r.q.matrix());
                let diag = r.max_diag_violation(&p) + fault(opts);
                let rank = numerical_rank(r.q.matrix(), 1e-9)?;
                let checks = [
                    (r.gap.abs() < 1e-8, "gap"),
                    (diag < 1e-6, "diag"),
                    (kkt.slackness_norm < 1e-6 * (1.0 + qn), "MQ"),
                    (kkt.psd_violation > -1e-8, "M psd"),
                    (rank <= m.min(n), "rank"),
                ];
                for (ok, what) in checks {
                    if !ok {
                        violations.push(format!("{m}x{n} {what}"));
                    }
                }
            }
        }
    }
    let shown: Vec<&str> = violations.iter().take(5).map(String::as_str).collect();
    Ok((
        violations.is_empty(),
        format!(
            "{} violations in {} solves ({nonconverged} not converged){}{}",
            violations.len(),
            total - nonconverged,
            if shown.is_empty() { "" } else { ": " },
            shown.join(", ")
        ),
    ))
}

fn split_sweep_check(opts: &VerifyOptions) -> Check {
    let ch = reference_channel();
    let sweep = power_split_sweep(&ch, 1.0, 101)?;
    let sandwich = sweep
        .rows
        .iter()
        .all(|r| r.c_mac <= r.c_pa + SANDWICH_TOL && r.c_pa <= r.c_sum + SANDWICH_TOL);

    let mid = sweep
        .rows
        .iter()
        .find(|r| (r.p1 - 0.5).abs() < 1e-12)
        .copied()
        .unwrap_or(split_rates(&ch, 0.5, 0.5)?);
    let strict = mid.c_pa - mid.c_mac > 1e-3 && mid.c_sum - mid.c_pa > 1e-3;

    let wf = waterfill_sum(&ch, 1.0)?;
    let p1 = wf.q.diagonal()[0];
    let meet = split_rates(&ch, p1, 1.0 - p1)?;
    let spread = meet.spread() + fault(opts);
    let meets = spread < 1e-6;

    // Longest run of consecutive grid points with an exactly zero forced rate.
    let mut longest = 0;
    let mut run = 0;
    for r in &sweep.rows {
        run = if r.c_forced == 0.0 { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    let zero_band = longest >= 2;

    Ok((
        sandwich && strict && meets && zero_band && sweep.nonconverged == 0,
        format!(
            "sandwich {sandwich}; at P1=0.5 mac {:.4} < pa {:.4} < sum {:.4}; meet at P1={p1:.4} spread {spread:.1e}; \
             zero forced run {longest} points",
            mid.c_mac, mid.c_pa, mid.c_sum
        ),
    ))
}

fn equal_power_ergodic(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, n) in [(2, 4), (4, 2)] {
        let cfg = ErgodicConfig {
            m,
            n,
            snr_db_grid: snr_grid(),
            samples: scale.ergodic_samples,
            seed: opts.seed ^ 4,
            profile: PowerProfile::Equal,
        };
        let rows = sweep(&cfg)?;
        let mut forced_gap = 0.0f64;
        let mut worst_ratio = 0.0f64;
        let mut bad = 0;
        for row in &rows {
            for s in &row.samples {
                forced_gap = forced_gap.max((s.c_forced - s.c_mac).abs() + fault(opts));
            }
            let loss = row.samples.iter().map(|s| s.c_sum - s.c_pa).sum::<f64>() / row.samples.len() as f64;
            worst_ratio = worst_ratio.max(loss / row.c_sum.mean);
            bad += row.sandwich_violations + row.nonconverged;
        }
        let this = forced_gap <= 1e-9 && worst_ratio < 0.1 && bad == 0;
        ok &= this;
        parts.push(format!(
            "{n}tx/{m}rx: max |forced - mac| {forced_gap:.1e}, max (sum - pa)/sum {worst_ratio:.3}, bad {bad}"
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn k_squared_ergodic(opts: &VerifyOptions, scale: &Scale) -> Check {
    let cfg = ErgodicConfig {
        m: 3,
        n: 3,
        snr_db_grid: snr_grid(),
        samples: scale.ergodic_samples,
        seed: opts.seed ^ 5,
        profile: PowerProfile::KSquared,
    };
    let rows = sweep(&cfg)?;
    let (worst_ratio, worst_se, worst_snr) = rows
        .iter()
        .map(|r| {
            (
                r.c_forced.mean / r.c_pa.mean + fault(opts) * 10.0,
                r.c_forced.stderr / r.c_pa.mean,
                r.snr_db,
            )
        })
        .fold((0.0, 0.0, f64::NAN), |acc, x| if x.0 > acc.0 { x } else { acc });
    let min_infeasible = rows.iter().map(|r| r.infeasible_fraction).fold(1.0, f64::min);
    let bad: usize = rows.iter().map(|r| r.sandwich_violations + r.nonconverged).sum();
    Ok((
        worst_ratio < 0.05 && min_infeasible > 0.0 && bad == 0,
        format!(
            "max forced/pa {worst_ratio:.4} (se {worst_se:.4}) at {worst_snr} dB, \
             min infeasible fraction {min_infeasible:.3}, bad {bad}"
        ),
    ))
}

fn miso_check(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 6);
    let mut worst = 0.0f64;
    let mut total = 0;
    for n in 2..=4 {
        for _ in 0..scale.c6_channels {
            let ch = rayleigh_sample(1, n, &mut rng);
            let p = random_constraint(&mut rng, n);
            let ours = opt_cov(&ch, &p, 1e-8)?.rate + fault(opts);
            let closed = miso_closed_form(ch.h(), &p)?.rate;
            worst = worst.max((ours - closed).abs());
            total += 1;
        }
    }
    Ok((worst < 1e-8, format!("max |opt - closed form| = {worst:.2e} over {total} channels")))
}

fn monotonicity_check(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 7);
    let solver = SolverOptions::default();
    let mut violations = 0;
    let mut steps = 0;
    let mut bad_runs = 0;
    let mut worst = 0.0f64;
    let mut nonconverged = 0;
    for k in 0..scale.c7_runs {
        let n = 1 + k % 4;
        let m = rng.random_range(n..=4);
        let ch = rayleigh_sample(m, n, &mut rng);
        let p = random_constraint(&mut rng, n);
        let dec = ch.decomposition();
        let base = init_dual(dec, &p)?;
        let d0: Vec<f64> = base
            .as_slice()
            .iter()
            .map(|d| d + rng.random_range(0.0..1.0) * d)
            .collect();
        let r = solve_from(dec, &DualDiagonal::new(d0)?, &p, &solver)?;
        nonconverged += usize::from(!r.converged);
        let before = violations;
        for w in r.trace.records.windows(2) {
            steps += 1;
            let rise = w[0]
                .d_check
                .iter()
                .zip(&w[1].d_check)
                .map(|(a, b)| (b - a) / a.abs().max(1.0))
                .fold(f64::NEG_INFINITY, f64::max);
            if rise > 1e-12 {
                violations += 1;
                worst = worst.max(rise);
            }
        }
        bad_runs += usize::from(violations > before);
    }
    if opts.inject_fault {
        violations += 1;
    }
    Ok((
        violations == 0 && nonconverged == 0,
        format!(
            "{violations} increasing steps out of {steps}; {bad_runs}/{} runs affected, largest relative rise {worst:.1e} \
             ({nonconverged} not converged)",
            scale.c7_runs
        ),
    ))
}

fn convergence_speed(opts: &VerifyOptions, scale: &Scale) -> Check {
    const EPS: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 8);
    let solver = SolverOptions::with_eps(EPS);
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, n) in [(3, 3), (2, 4)] {
        let mut iterations = Vec::new();
        let mut fast_runs = 0;
        for _ in 0..scale.c8_runs {
            let ch = rayleigh_sample(m, n, &mut rng);
            let p = random_constraint_at(&mut rng, n, 1.0);
            let r = opt_cov_with(&ch, &p, &solver)?;
            iterations.push(r.iterations + if opts.inject_fault { 1000 } else { 0 });
            let gaps: Vec<f64> = r.trace.records.iter().map(|x| x.gap.abs()).collect();
            let decays = (10..gaps.len().saturating_sub(25))
                .filter(|&i| gaps[i] >= EPS)
                .all(|i| gaps[i + 25] <= 0.1 * gaps[i]);
            fast_runs += usize::from(decays && r.converged);
        }
        iterations.sort_unstable();
        let median = iterations[iterations.len() / 2];
        let frac = fast_runs as f64 / scale.c8_runs as f64;
        ok &= median < 200 && frac >= 0.9;
        parts.push(format!(
            "{m}x{n}: median {median} iterations (max {}), {:.0}% runs with 10x gap decay per 25",
            iterations.last().copied().unwrap_or(0),
            100.0 * frac
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn random_constraint_at(rng: &mut ChaCha8Rng, n: usize, total: f64) -> PowerConstraint {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    PowerConstraint::from_weights(&w, total).expect("positive weights")
}

fn no_csit(opts: &VerifyOptions, scale: &Scale) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 9);
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, n) in [(2, 2), (2, 3)] {
        for profile in [PowerProfile::Equal, PowerProfile::KSquared] {
            let p = profile.constraint(n, 1.0)?;
            let report = no_csit_check(m, n, &p, scale.c9_samples, 10, &mut rng)?;
            let passed = report.passed && !opts.inject_fault;
            ok &= passed;
            let margin = report
                .challenger_means
                .iter()
                .map(|c| report.baseline_mean - c)
                .fold(f64::INFINITY, f64::min);
            parts.push(format!("{m}x{n} {profile:?}: min margin {margin:+.4}"));
        }
        // With equal powers Q = P is the scaled identity that the no-CSIT sum
        // optimum uses, so the two rates coincide by construction.
        let p = PowerConstraint::equal(n, 1.0)?;
        let scaled_identity = InputCovariance::new(identity(n).scale(1.0 / n as f64))?;
        ok &= InputCovariance::from_power(&p).matrix() == scaled_identity.matrix();
    }
    Ok((ok, parts.join("; ")))
}

fn performance(opts: &VerifyOptions) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 10);
    let mut slowest = Duration::ZERO;
    for _ in 0..5 {
        let ch = rayleigh_sample(8, 8, &mut rng);
        let p = random_constraint(&mut rng, 8);
        let start = Instant::now();
        let r = opt_cov(&ch, &p, 1e-8)?;
        slowest = slowest.max(start.elapsed());
        if !r.converged {
            return Ok((false, "8x8 solve did not converge".into()));
        }
    }
    let quick = VerifyOptions {
        quick: true,
        ..*opts
    };
    let start = Instant::now();
    let outcomes: Vec<CriterionOutcome> = (1..=9).map(|id| run_criterion(id, &quick)).collect();
    let quick_time = start.elapsed();
    let quick_failed = outcomes.iter().filter(|o| !o.passed).count();
    let slowest_ms = slowest.as_secs_f64() * 1e3 + if opts.inject_fault { 1e4 } else { 0.0 };
    Ok((
        slowest_ms < 1e3 && quick_time < Duration::from_secs(60),
        format!(
            "slowest 8x8 solve {slowest_ms:.1} ms; quick battery of criteria 1-9 took {:.1} s \
             ({quick_failed} of them failed)",
            quick_time.as_secs_f64()
        ),
    ))
}

pub fn run_criterion(id: u8, opts: &VerifyOptions) -> CriterionOutcome {
    let scale = Scale::new(opts.quick);
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, name)| *name)
        .unwrap_or("unknown");
    let start = Instant::now();
    let result = match id {
        1 => oracle_equivalence(opts, &scale),
        2 => kkt_battery(opts, &scale),
        3 => split_sweep_check(opts),
        4 => equal_power_ergodic(opts, &scale),
        5 => k_squared_ergodic(opts, &scale),
        6 => miso_check(opts, &scale),
        7 => monotonicity_check(opts, &scale),
        8 => convergence_speed(opts, &scale),
        9 => no_csit(opts, &scale),
        10 => performance(opts),
        _ => Ok((false, format!("no criterion with id {id}"))),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionOutcome {
        id,
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CriterionOutcome> {
    CRITERIA.iter().map(|(id, _)| run_criterion(*id, opts)).collect()
}
