use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memosched::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "memosched", version, about = "Search keep-rate schedules for training on noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel candidate evaluations; defaults to $MEMOSCHED_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Cap on evaluator calls.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> memosched::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => harness::load_config(path)?,
            None => ExperimentConfig {
                workers: harness::workers_from_env().unwrap_or(1),
                ..ExperimentConfig::default()
            },
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
        if let Some(budget) = self.budget {
            config.search.budget = Some(budget);
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search a schedule and write the run artifacts.
    Search(Common),
    /// Run several search rules under one budget and write comparison.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of newton,gd,ng,random.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<memosched::search::UpdateRule>,
    },
    /// Fit the mixture to the co-teaching curve.
    FitCoteaching {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 10.0)]
        t_k: f64,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
    /// Train once with a given schedule (keep everything by default).
    TrainOnce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Write `t,R` rows for a schedule file.
    EmitPlot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
    },
}

fn run(cli: Cli) -> memosched::Result<()> {
    match cli.command {
        Command::Search(common) => {
            let config = common.resolve()?;
            let result = harness::run_experiment(&config)?;
            println!("best_f {} after {} calls", result.outcome.best_f, result.outcome.trace.calls());
        }
        Command::Compare { common, rules } => {
            let mut config = common.resolve()?;
            if !rules.is_empty() {
                config.rules = rules;
            }
            let traces = harness::compare_search_algorithms(&config)?;
            for (rule, trace) in &traces {
                let best = trace.iterations.last().map_or(f64::INFINITY, |r| r.best_f);
                println!("{rule}: best_f {best} after {} calls", trace.calls());
            }
        }
        Command::FitCoteaching {
            common,
            tau,
            c,
            t_k,
            horizon,
        } => {
            let config = common.resolve()?;
            let fit = harness::fit_coteaching(tau, c, t_k, horizon, &config.shape_map, &config.out_dir)?;
            println!("residual {}", fit.residual);
        }
        Command::TrainOnce { common, schedule } => {
            let config = common.resolve()?;
            let x = schedule.as_deref().map(harness::load_schedule).transpose()?;
            let report = harness::train_once(&config, x.as_ref())?;
            println!(
                "test_acc {} label_precision {} val_loss {}",
                report.final_test_acc(),
                report.mean_label_precision(),
                report.final_val_loss
            );
        }
        Command::EmitPlot {
            common,
            schedule,
            horizon,
        } => {
            let config = common.resolve()?;
            let x = harness::load_schedule(&schedule)?;
            let csv = harness::emit_schedule_plot_data(&x, horizon, &config.shape_map)?;
            std::fs::create_dir_all(&config.out_dir)?;
            std::fs::write(config.out_dir.join("schedule_curve.csv"), csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
