//! `hyperbo`: single runs, seed sweeps, the oracle suite, and bound reports.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration
//! error, 3 numerical or runtime-check failure, 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperbo::benchlab::sweep;
use hyperbo::engine::{compute_bound_diagnostics, run, RunTrace};
use hyperbo::infogain::gamma_rate;
use hyperbo::io::{fmt_f64, read_trace_csv, write_run_files, ConfigFile, RunMeta};
use hyperbo::kernel::KernelFamily;
use hyperbo::verify;
use hyperbo::Error;

/// Environment variable fixing the number of worker threads.
const THREADS_ENV: &str = "HYPERBO_THREADS";

#[derive(Parser, Debug)]
#[command(name = "hyperbo", version, about = "Bayesian optimization with shrinking length-scale bounds")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write `trace.csv` and `trace.json`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run `seeds` consecutive seeds starting at the config seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: u64,
    },
    /// Run the oracle and invariant checks.
    Verify {
        /// Write `verify_report.csv` and `verify_report.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write bound-diagnostic CSVs for every trace in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Confidence parameter; defaults to the value stored with each trace.
        #[arg(long)]
        delta: Option<f64>,
        /// RKHS norm of the objective; defaults to the grid estimate stored
        /// with each trace.
        #[arg(long = "rkhs-norm")]
        rkhs_norm: Option<f64>,
        /// Add squared-exponential and Matérn information-gain rate columns.
        #[arg(long = "rate-curves")]
        rate_curves: bool,
    },
}

enum Failure {
    Verify(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::from(e))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Lib(Error::from(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Numerical { .. } | Error::CheckFailed(_) | Error::Objective(_) => 3,
        Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::Sweep { config, out, seeds } => cmd_sweep(&config, &out, seeds),
        Command::Verify { out, seed } => cmd_verify(out.as_deref(), seed),
        Command::Report {
            input,
            out,
            delta,
            rkhs_norm,
            rate_curves,
        } => cmd_report(&input, &out, delta, rkhs_norm, rate_curves),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let file = ConfigFile::load(config)?;
    let mut cfg = file.to_run_config()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let objective = file.objective.build(file.noise_spec()?);
    log::info!("running {:?} for {} rounds, seed {}", cfg.policy, cfg.horizon, cfg.seed);
    match run(objective.as_ref(), &cfg) {
        Ok(trace) => {
            write_run_files(out, "trace", &trace, None)?;
            println!(
                "{} rounds, best f {}, shrink events {}",
                trace.records.len(),
                trace.best_f().map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into()),
                trace.shrink_events()
            );
            Ok(())
        }
        Err(fail) => {
            write_run_files(out, "trace", &fail.partial, Some(fail.error.to_string()))?;
            Err(Failure::Lib(fail.error))
        }
    }
}

fn cmd_sweep(config: &Path, out: &Path, seeds: u64) -> Result<(), Failure> {
    let file = ConfigFile::load(config)?;
    let cfg = file.to_run_config()?;
    if seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()).into());
    }
    let objective = file.objective.build(file.noise_spec()?);
    let seed_list: Vec<u64> = (0..seeds).map(|k| cfg.seed.wrapping_add(k)).collect();
    let threshold = file.objective.success_threshold();
    let (summary, runs) = sweep(cfg.policy, objective.as_ref(), &seed_list, &cfg, threshold)?;
    fs::create_dir_all(out)?;
    for (seed, r) in seed_list.iter().zip(&runs) {
        let stem = format!("seed_{seed}");
        match r {
            Ok(trace) => write_run_files(out, &stem, trace, None)?,
            Err(f) => write_run_files(out, &stem, &f.partial, Some(f.error.to_string()))?,
        }
    }
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n",
    )?;
    println!(
        "{} seeds, success rate {:.3}, failed seeds {}",
        summary.n_seeds,
        summary.success_rate,
        summary.failed_seeds.len()
    );
    Ok(())
}

fn cmd_verify(out: Option<&Path>, seed: u64) -> Result<(), Failure> {
    let report = verify::run_all(seed)?;
    for c in &report.checks {
        println!(
            "{} {:<40} measured {:.3e}  tolerance {:.1e}  ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("verify_report.csv"))?;
        w.write_record(["check", "measured", "tolerance", "passed", "detail"])?;
        for c in &report.checks {
            w.write_record([
                c.name.clone(),
                fmt_f64(c.measured),
                fmt_f64(c.tolerance),
                c.passed.to_string(),
                c.detail.clone(),
            ])?;
        }
        w.flush()?;
        fs::write(
            dir.join("verify_report.json"),
            serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        )?;
    }
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(failed.join(", ")))
    }
}

fn load_trace(csv_path: &Path) -> Result<RunTrace, Failure> {
    let meta_path = csv_path.with_extension("json");
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::Io(format!("{}: {e}", meta_path.display())))?;
    let rows = read_trace_csv(fs::File::open(csv_path)?)?;
    Ok(meta.to_trace(&rows))
}

fn cmd_report(
    input: &Path,
    out: &Path,
    delta: Option<f64>,
    rkhs_norm: Option<f64>,
    rate_curves: bool,
) -> Result<(), Failure> {
    let mut csvs: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension("json").is_file())
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(Error::Io(format!("no traces found in {}", input.display())).into());
    }
    fs::create_dir_all(out)?;
    for path in &csvs {
        let trace = load_trace(path)?;
        let delta = delta
            .or_else(|| trace.diagnostics.as_ref().map(|d| d.delta))
            .ok_or_else(|| Error::Config(format!("{}: no delta stored; pass --delta", path.display())))?;
        let norm = rkhs_norm.or(trace.rkhs_norm_estimate).ok_or_else(|| {
            Error::Config(format!("{}: no RKHS norm estimate stored; pass --rkhs-norm", path.display()))
        })?;
        let diag = compute_bound_diagnostics(&trace, norm, delta)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
        let mut w = csv::Writer::from_path(out.join(format!("{stem}_bounds.csv")))?;
        let mut header = vec!["t", "R_t", "info_gain", "phi_t", "beta_t", "bound_curve"];
        if rate_curves {
            header.extend(["gamma_rate_se", "gamma_rate_matern52"]);
        }
        w.write_record(&header)?;
        let d = trace.domain.dim();
        for (i, rec) in trace.records.iter().enumerate() {
            let mut row = vec![
                rec.t.to_string(),
                rec.cumulative_regret.map(fmt_f64).unwrap_or_default(),
                fmt_f64(diag.info_gain_series[i]),
                fmt_f64(diag.phi_t[i]),
                fmt_f64(diag.beta_t[i]),
                fmt_f64(diag.bound_curve[i]),
            ];
            if rate_curves {
                let t = rec.t as f64;
                row.push(fmt_f64(gamma_rate(KernelFamily::SquaredExponential, d, t)));
                row.push(fmt_f64(gamma_rate(KernelFamily::Matern52, d, t)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        let c = &diag.variance_sum;
        println!(
            "{stem}: beta_T {:.4e}, C2 {:.3}, variance sum {:.4e} <= {:.4e}: {}",
            diag.beta_final,
            diag.c2,
            c.variance_sum,
            c.bound,
            c.holds()
        );
    }
    Ok(())
}
