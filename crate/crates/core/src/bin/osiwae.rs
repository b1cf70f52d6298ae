use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use osiwae::harness::checkpoint::Checkpoint;
use osiwae::harness::checks::{run_criterion, CRITERIA};
use osiwae::harness::config::ExperimentConfig;
use osiwae::harness::dump::{linspace, proposal_density_dump, write_dump, Probe, GROWTH_PROBE};
use osiwae::harness::run::{load_data, reference_means, run_experiment, RunOptions};
use osiwae::harness::simulate::{read_stream, simulate, write_stream};
use osiwae::models::build_model;
use osiwae::oracle::{kalman_filter, GaussianBelief, LgssmParams};
use osiwae::{Error, Result};

#[derive(Parser)]
#[command(name = "osiwae", version, about = "Online learning of state-space models with particle methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured model under its true parameters and write a stream file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Overrides the configured data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment: metrics, checkpoints and a manifest in the output directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this time index.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Kalman filtering means and log-likelihood increments for an LGSSM stream.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Stream file; defaults to simulating from the config.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Check {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Directory for the determinism runs.
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
    /// Tabulate a checkpoint's proposal against the optimal and prior kernels.
    DumpProposal {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = GROWTH_PROBE.x)]
        x: f64,
        #[arg(long, default_value_t = GROWTH_PROBE.y)]
        y: f64,
        #[arg(long, default_value_t = GROWTH_PROBE.t)]
        t: usize,
        #[arg(long, default_value_t = -25.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 25.0)]
        hi: f64,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, out, horizon, seed } => {
            let config = ExperimentConfig::load(&config)?;
            let built = build_model(&config.model)?;
            let trace = simulate(
                built.dynamics(),
                &built.truth,
                horizon.unwrap_or(config.horizon),
                seed.unwrap_or(config.data_seed()),
            )?;
            write_stream(&out, &trace)?;
        }
        Command::Fit { config, resume, stop_at } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(&config, &RunOptions { resume, stop_at })?;
            eprintln!(
                "{:?} at step {:?}; outputs in {}",
                outcome.manifest.status,
                outcome.manifest.last_step,
                config.output.dir.display()
            );
        }
        Command::Oracle { config, stream, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            let built = build_model(&config.model)?;
            let lg = built
                .linear_gaussian
                .as_ref()
                .ok_or_else(|| Error::Config("the oracle needs an lgssm model".into()))?;
            let trace = match stream {
                Some(p) => read_stream(&p)?,
                None => load_data(&config, &built)?,
            };
            config.horizon = trace.observations.len();
            let params = LgssmParams::from_model(lg, &built.truth);
            let var: Vec<f64> = lg.prior_std.iter().map(|s| s * s).collect();
            let run = kalman_filter(&params, &GaussianBelief::diagonal(&lg.prior_mean, &var), &trace.values())?;
            debug_assert_eq!(reference_means(&built, &trace, config.horizon)?.as_ref(), Some(&run.means));
            let mut w = csv::Writer::from_writer(output(out.as_ref())?);
            let mut header = vec!["t".to_string()];
            header.extend((0..lg.dim()).map(|k| format!("mean{k}")));
            header.push("log_likelihood_increment".into());
            w.write_record(&header)?;
            for (t, (m, inc)) in run.means.iter().zip(&run.increments).enumerate() {
                let mut row = vec![t.to_string()];
                row.extend(m.iter().map(|v| format!("{v:e}")));
                row.push(format!("{inc:e}"));
                w.write_record(&row)?;
            }
            w.flush()?;
            eprintln!("total log-likelihood {:.6}", run.log_likelihood);
        }
        Command::Check { only, scratch } => {
            let ids: Vec<u8> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only };
            let scratch = scratch.unwrap_or_else(|| std::env::temp_dir().join(format!("osiwae-check-{}", std::process::id())));
            std::fs::create_dir_all(&scratch)?;
            let mut all = true;
            for id in ids {
                let outcome = run_criterion(id, &scratch)?;
                println!("{outcome}");
                all &= outcome.passed;
            }
            return Ok(all);
        }
        Command::DumpProposal { checkpoint, x, y, t, lo, hi, points, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let rows = proposal_density_dump(&ck, Probe { x, y, t }, &linspace(lo, hi, points))?;
            write_dump(output(out.as_ref())?, &rows)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
