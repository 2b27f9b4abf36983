//! Command-line front end. Data goes to stdout or `--output`, diagnostics to
//! stderr. Exit codes: 0 success, 1 input error, 2 solver did not converge.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::baselines::{forced_eigenbeam, mac_rate, waterfill_sum};
use crate::channel::{ChannelMatrix, PowerConstraint};
use crate::ergodic::{power_split_sweep, split_csv, sweep, sweep_csv, ErgodicConfig, PowerProfile};
use crate::error::{Error, Result};
use crate::perantenna::{opt_cov_with, SolverOptions, DEFAULT_EPS, DEFAULT_MAX_ITER};
use crate::verify::{run_all, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mimo-pac", version, about = "MIMO capacity under per-antenna power constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal covariance for one channel, with baselines and KKT residuals (JSON).
    Solve {
        /// Channel JSON file: {"m": .., "n": .., "entries": [[re, im], ...]} row-major.
        #[arg(long)]
        channel: PathBuf,
        /// Comma-separated per-antenna powers.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        power: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Also report rates in bits.
        #[arg(long)]
        bits: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Rates over the split p = (P1, P - P1) of a two-antenna budget (CSV).
    SweepSplit {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        total_power: f64,
        /// Number of interior grid points.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        bits: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo ergodic rates over Rayleigh channels (CSV).
    Ergodic {
        /// Receive antennas.
        #[arg(long)]
        m: usize,
        /// Transmit antennas.
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ProfileArg::Equal)]
        profile: ProfileArg,
        /// Comma-separated weights for `--profile weights`.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// SNR grid in dB as start:step:stop.
        #[arg(long, default_value = "-5:5:20", allow_hyphen_values = true)]
        snr: String,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        bits: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the acceptance battery and print a pass/fail table.
    Verify {
        /// Reduced sample counts.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Equal,
    K2,
    Weights,
}

/// Parses `start:step:stop` into an inclusive grid.
pub fn parse_snr_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Parse(format!("SNR grid must look like start:step:stop, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, step, stop) = (nums[0], nums[1], nums[2]);
    if !(start.is_finite() && step.is_finite() && stop.is_finite()) || step <= 0.0 || stop < start {
        return Err(Error::Parse(format!(
            "SNR grid needs a positive step and stop >= start, got {text:?}"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + step * k as f64).collect())
}

fn emit(output: Option<&PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_solve(
    channel: &PathBuf,
    power: Vec<f64>,
    eps: f64,
    max_iter: usize,
    bits: bool,
    output: Option<&PathBuf>,
) -> Result<i32> {
    let ch = ChannelMatrix::load(channel)?;
    let p = PowerConstraint::new(power)?;
    if p.len() != ch.n() {
        return Err(Error::DimensionMismatch(format!(
            "--power has {} entries but the channel has {} transmit antennas",
            p.len(),
            ch.n()
        )));
    }
    let opts = SolverOptions {
        eps,
        max_iter,
        keep_trace: false,
        diag_tol: None,
    };
    let report = opt_cov_with(&ch, &p, &opts)?;
    let sum = waterfill_sum(&ch, p.total())?;
    let forced = forced_eigenbeam(&ch, &p)?;

    let mut doc = serde_json::to_value(report.to_json())?;
    let obj = doc.as_object_mut().expect("report serialises to an object");
    obj.insert(
        "baselines".into(),
        json!({
            "sum_rate_nats": sum.rate,
            "water_level": sum.water_level,
            "mac_rate_nats": mac_rate(&ch, &p)?,
            "forced_rate_nats": forced.rate,
            "forced_feasible": forced.feasible,
        }),
    );
    if let Some(k) = &report.kkt {
        obj.insert(
            "kkt".into(),
            json!({
                "stationarity": k.stationarity_norm,
                "slackness": k.slackness_norm,
                "min_eig_m": k.psd_violation,
                "null_space": k.null_space_residual,
            }),
        );
    }
    if bits {
        obj.insert("rate_bits".into(), json!(report.rate * std::f64::consts::LOG2_E));
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    emit(output, &text)?;

    if report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: no convergence after {} iterations (gap {:.3e}); best iterate reported",
            max_iter, report.gap
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn cmd_sweep_split(channel: &PathBuf, total: f64, grid: usize, bits: bool, output: Option<&PathBuf>) -> Result<i32> {
    let ch = ChannelMatrix::load(channel)?;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidConstraint(format!("--total-power must be positive, got {total}")));
    }
    let result = power_split_sweep(&ch, total, grid)?;
    emit(output, &split_csv(&result, bits))?;
    Ok(EXIT_OK)
}

fn profile_from_args(profile: ProfileArg, weights: Option<Vec<f64>>) -> Result<PowerProfile> {
    match (profile, weights) {
        (ProfileArg::Weights, Some(w)) => Ok(PowerProfile::Weights(w)),
        (ProfileArg::Weights, None) => Err(Error::InvalidConfig("--profile weights needs --weights".into())),
        (_, Some(_)) => Err(Error::InvalidConfig("--weights is only valid with --profile weights".into())),
        (ProfileArg::Equal, None) => Ok(PowerProfile::Equal),
        (ProfileArg::K2, None) => Ok(PowerProfile::KSquared),
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve {
            channel,
            power,
            eps,
            max_iter,
            bits,
            output,
        } => cmd_solve(&channel, power, eps, max_iter, bits, output.as_ref()),
        Command::SweepSplit {
            channel,
            total_power,
            grid,
            bits,
            output,
        } => cmd_sweep_split(&channel, total_power, grid, bits, output.as_ref()),
        Command::Ergodic {
            m,
            n,
            profile,
            weights,
            snr,
            samples,
            seed,
            bits,
            output,
        } => (|| {
            let cfg = ErgodicConfig {
                m,
                n,
                snr_db_grid: parse_snr_grid(&snr)?,
                samples,
                seed,
                profile: profile_from_args(profile, weights)?,
            };
            let rows = sweep(&cfg)?;
            emit(output.as_ref(), &sweep_csv(&rows, bits))?;
            Ok(EXIT_OK)
        })(),
        Command::Verify {
            quick,
            seed,
            inject_fault,
        } => {
            let mut opts = VerifyOptions {
                quick,
                inject_fault,
                ..VerifyOptions::default()
            };
            if let Some(seed) = seed {
                opts.seed = seed;
            }
            let outcomes = run_all(&opts);
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_INPUT })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
