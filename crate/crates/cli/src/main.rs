use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use swerve::mpc::{plan, tied_two_step_problem, BarrierMode};
use swerve::msf::YMaxTable;
use swerve::sim::{min_clearance, run_episode_with_table, scenario_for, write_trace, DangerZone, EpisodeOptions};
use swerve::{load_scenario, CostWeights, VehicleParams};

/// Emergency obstacle avoidance simulator.
#[derive(Debug, Parser)]
#[command(name = "swerve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = BarrierMode::Repaired)]
        barrier: BarrierMode,
        /// Write the per-tick trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Sensor latency in seconds, overriding the scenario.
        #[arg(long)]
        latency: Option<f64>,
        /// Run on the maximum-steering planner alone.
        #[arg(long)]
        no_mpc: bool,
    },
    /// Run a grid of reconstructed scenarios and write a summary.
    Sweep {
        /// Comma-separated speeds (m/s).
        #[arg(long, value_delimiter = ',', default_value = "5,6,7")]
        speeds: Vec<f64>,
        /// Time-to-collision range `a..b` (s).
        #[arg(long, default_value = "1.4..5")]
        taus: String,
        #[arg(long, default_value_t = 0.5)]
        tau_step: f64,
        /// Comma-separated lateral steering indices.
        #[arg(long, value_delimiter = ',', default_value = "0.25")]
        nus: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = BarrierMode::Repaired)]
        barrier: BarrierMode,
    },
    /// Write the tabulated maximum-steering reach as `t,v,y_max`.
    YmaxTable {
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the two-step tied-input problem for two weight sets.
    Example2,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Returns whether every simulated episode was collision-free.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            scenario,
            barrier,
            trace,
            latency,
            no_mpc,
        } => run(&scenario, barrier, trace.as_deref(), latency, no_mpc),
        Command::Sweep {
            speeds,
            taus,
            tau_step,
            nus,
            out,
            barrier,
        } => sweep(&speeds, &parse_range(&taus, tau_step)?, &nus, &out, barrier),
        Command::YmaxTable { out } => {
            let table = YMaxTable::default_grid(&VehicleParams::default())?;
            let mut w = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
            w.write_record(["t", "v", "y_max"])?;
            for (t, v, y) in table.rows() {
                w.serialize((t, v, y))?;
            }
            w.flush()?;
            Ok(true)
        }
        Command::Example2 => {
            example2()?;
            Ok(true)
        }
    }
}

fn run(path: &Path, barrier: BarrierMode, trace: Option<&Path>, latency: Option<f64>, no_mpc: bool) -> Result<bool> {
    let scenario = load_scenario(path)?;
    let table = YMaxTable::default_grid(&scenario.vehicle)?;
    let options = EpisodeOptions {
        barrier,
        latency,
        mpc_disabled: no_mpc,
        ..EpisodeOptions::default()
    };
    let result = run_episode_with_table(&scenario, &options, &table)?;
    if let Some(out) = trace {
        write_trace(&result, out)?;
    }
    let report = min_clearance(&result, &DangerZone::of(&scenario));
    if let Some(d) = result.detection {
        println!("detected at t = {:.2} s: tau = {:.2} s, nu = {:.3}", d.t_detect, d.tau, d.nu);
    }
    println!(
        "collided = {}, min clearance = {:.3} m, peak |delta| = {:.3} rad, plans = {}, fallback ticks = {}",
        report.collided,
        report.min_lateral_clearance,
        result.peak_steer(),
        result.plan_calls,
        result.fallback_ticks
    );
    if let Some(reason) = &result.aborted {
        println!("aborted: {reason}");
    }
    Ok(!report.collided)
}

/// `a..b` sampled every `step`, both ends included.
fn parse_range(text: &str, step: f64) -> Result<Vec<f64>> {
    let Some((a, b)) = text.split_once("..") else {
        bail!("expected a range like 1.4..5, got `{text}`");
    };
    let a: f64 = a.trim().parse().with_context(|| format!("bad range start `{a}`"))?;
    let b: f64 = b.trim().parse().with_context(|| format!("bad range end `{b}`"))?;
    if !(step > 0.0) || !(a <= b) {
        bail!("range `{text}` with step {step} is empty");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    let mut values: Vec<f64> = (0..=n).map(|i| a + i as f64 * step).collect();
    if b - values[n] > 1e-9 {
        values.push(b);
    }
    Ok(values)
}

fn sweep(speeds: &[f64], taus: &[f64], nus: &[f64], out: &Path, barrier: BarrierMode) -> Result<bool> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let table = YMaxTable::default_grid(&VehicleParams::default())?;
    let summary_path = out.join("summary.csv");
    let mut summary = csv::Writer::from_path(&summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    summary.write_record(["v", "tau", "nu", "collided", "min_clearance", "peak_delta"])?;
    let options = EpisodeOptions {
        barrier,
        ..EpisodeOptions::default()
    };
    let mut all_clear = true;
    for &v in speeds {
        for &tau in taus {
            for &nu in nus {
                let scenario = scenario_for(v, tau, nu, &table)?;
                let trace = run_episode_with_table(&scenario, &options, &table)?;
                write_trace(&trace, out.join(format!("trace_v{v}_tau{tau}_nu{nu}.csv")))?;
                let report = min_clearance(&trace, &DangerZone::of(&scenario));
                all_clear &= !report.collided;
                summary.serialize((v, tau, nu, report.collided, report.min_lateral_clearance, trace.peak_steer()))?;
            }
        }
    }
    summary.flush()?;
    println!("wrote {}", summary_path.display());
    Ok(all_clear)
}

fn example2() -> Result<()> {
    let cases = [
        ("uniform", CostWeights::uniform(), (0.00, 0.53)),
        ("(0.50, 0.25, 0.05, 0.20)", CostWeights::new(0.5, 0.25, 0.05, 0.2)?, (-0.35, 1.00)),
    ];
    for (name, weights, reference) in cases {
        let (s0, scenario, options) = tied_two_step_problem(weights)?;
        let solution = plan(&s0, &scenario, None, &options)?;
        let (u_x, u_y) = solution.first();
        println!(
            "weights {name}: u = ({u_x:.3}, {u_y:.3}), cost = {:.4}, {} after {} iterations; reference ({:.2}, {:.2})",
            solution.cost,
            solution.status.as_str(),
            solution.iterations,
            reference.0,
            reference.1
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..2", 0.5).unwrap(), vec![1.0, 1.5, 2.0]);
        assert_eq!(parse_range("1.4..2", 0.5).unwrap(), vec![1.4, 1.9, 2.0]);
        assert_eq!(parse_range("3..3", 1.0).unwrap(), vec![3.0]);
        assert!(parse_range("3..1", 1.0).is_err());
        assert!(parse_range("3", 1.0).is_err());
    }
}
