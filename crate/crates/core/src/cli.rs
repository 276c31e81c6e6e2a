//! Command-line front end.

use crate::output::{read_timeseries_csv, unix_now, write_partial, write_run};
use crate::postprocess::{average_of, coefficient_of_performance};
use crate::scenario::load_scenario_file;
use crate::solver::run_transient;
use crate::sweep::{run_sweep, worker_count, SweepSpec};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Closed-loop geothermal heat extraction simulator.
#[derive(Debug, Parser)]
#[command(name = "geoloop", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Directory receiving `<name>-<hash>/`.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run every scenario of a sweep spec and write `summary.csv`.
    Sweep {
        spec: PathBuf,
        /// Parallel jobs; defaults to $GEOLOOP_WORKERS or the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-derive summary quantities from an existing run directory.
    Post { dir: PathBuf },
    /// Run the verification suite.
    Verify,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Sweep { spec, workers } => cmd_sweep(&spec, workers),
        Command::Post { dir } => cmd_post(&dir),
        Command::Verify => cmd_verify(),
    }
}

fn cmd_run(config: &Path, out: &Path) -> i32 {
    let scenario = match load_scenario_file(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let started = unix_now();
    match run_transient(&scenario) {
        Ok(run) => match write_run(out, &scenario, &run, started) {
            Ok(a) => {
                println!("{}", a.directory.display());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
        Err(failure) => {
            eprintln!("error: {failure}");
            if let Some(series) = &failure.series {
                match write_partial(out, &scenario, series, &failure.mst, started) {
                    Ok(dir) => eprintln!("partial records written to {}", dir.display()),
                    Err(e) => eprintln!("error: {e}"),
                }
            }
            EXIT_FAILURE
        }
    }
}

fn cmd_sweep(path: &Path, workers: Option<usize>) -> i32 {
    let spec = match SweepSpec::from_file(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run_sweep(&spec, workers.unwrap_or_else(worker_count)) {
        Ok(rows) => {
            println!("{} runs, summary in {}", rows.len(), spec.output_root.join("summary.csv").display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_post(dir: &Path) -> i32 {
    let scenario = match load_scenario_file(&dir.join("scenario.toml")) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let rows = match read_timeseries_csv(&dir.join("series.csv")) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let Some(peak) = rows.iter().max_by(|a, b| a[1].total_cmp(&b[1])) else {
        eprintln!("error: empty series");
        return EXIT_FAILURE;
    };
    let power: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[3])).collect();
    let (t0, t1) = (rows[0][0], rows[rows.len() - 1][0]);
    let breakdown = if peak[0] < t0 + 0.9 * (t1 - t0) {
        format!("{}", peak[0])
    } else {
        "none".into()
    };
    println!("scenario        {}", scenario.id());
    println!("layout          {}", scenario.layout.kind.as_str());
    println!("mdot_kg_s       {}", scenario.fluid.mass_flow_rate);
    println!("records         {}", rows.len());
    println!("peak_theta_K    {}", peak[1]);
    println!("peak_time_s     {}", peak[0]);
    println!(
        "peak_cop        {}",
        coefficient_of_performance(scenario.boundary.inlet_temperature, peak[1]).value
    );
    match average_of(&power) {
        Ok(p) => println!("avg_power_W     {p}"),
        Err(_) => println!("avg_power_W     n/a"),
    }
    println!("breakdown_s     {breakdown}");
    EXIT_OK
}

fn cmd_verify() -> i32 {
    match crate::verify::run_suite() {
        Ok(report) => {
            println!("{report}");
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
