//! `pairs`: fit, filter, simulate, optimise and backtest a pairs-trading
//! spread model from the command line.
//!
//! Every subcommand reads the same flat TOML config (`--config`), with
//! `--set key=value` overriding individual keys. Exit status is 0 on
//! success, 2 for invalid input and 3 for numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pairs_core::config::RunConfig;
use pairs_core::data::{load_combined, load_pair, parse_date, synthetic_panel, PricePanel};
use pairs_core::estimation::{fit_mle, initial_spread, ols_init, FitResult};
use pairs_core::filter::run_filter;
use pairs_core::model::simulate_spread;
use pairs_core::optimizer::{optimize_rule, GridSummary};
use pairs_core::pipeline::{run_backtest, run_pipeline, split_index};
use pairs_core::rng::derive_seed;
use pairs_core::{parallel, Error, Result};

#[derive(Parser)]
#[command(name = "pairs", version, about = "Pairs trading with a quasi Monte Carlo Kalman filter")]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Combined CSV with columns date, A, B.
    #[arg(long, conflicts_with_all = ["a", "b"], required_unless_present = "a")]
    data: Option<PathBuf>,
    /// CSV of date, price for the first asset.
    #[arg(long, requires = "b")]
    a: Option<PathBuf>,
    /// CSV of date, price for the second asset.
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<PricePanel> {
        match (&self.data, &self.a, &self.b) {
            (Some(p), _, _) => load_combined(p),
            (None, Some(a), Some(b)) => {
                let (panel, warnings) = load_pair(a, b)?;
                for w in warnings {
                    log::warn!("{w}");
                }
                Ok(panel)
            }
            _ => Err(Error::Config("give --data or both --a and --b".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Maximum-likelihood fit on the in-sample period; writes fit JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Filtered spread over the whole panel; writes CSV.
    Filter {
        #[command(flatten)]
        data: DataArgs,
        /// Fit JSON; the config's model template is used when absent.
        #[arg(long, value_name = "FILE")]
        fit: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Simulates the config's model: a spread path, or a price panel with --days.
    Simulate {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Write a synthetic two-asset price panel of this many weekdays.
        #[arg(long)]
        days: Option<usize>,
        /// First date of the synthetic panel.
        #[arg(long, default_value = "2012-01-02")]
        start: String,
        /// Starting price of the second asset.
        #[arg(long, default_value_t = 30.0)]
        base_price: f64,
    },
    /// Monte Carlo search for the optimal boundaries; writes grid.csv and grid.json.
    OptimizeRule {
        /// Fit JSON; the config's model template is used when absent.
        #[arg(long, value_name = "FILE")]
        fit: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Trades the out-of-sample period (or the whole panel without a split date).
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "FILE")]
        fit: PathBuf,
        /// grid.json from optimize-rule.
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fit, optimise and backtest in one go.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut overrides = cli.set.clone();
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    RunConfig::from_toml_with_overrides(&text, &overrides)
}

fn read_fit(path: &Path) -> Result<FitResult> {
    FitResult::from_json(&fs::read_to_string(path)?)
}

fn training_slice(config: &RunConfig, panel: &PricePanel) -> Result<PricePanel> {
    let split = split_index(config, panel)?;
    Ok(panel.split_at_date(panel.dates[split - 1]).0)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Fit { data, out } => {
            let train = training_slice(config, &data.load()?)?;
            let fit = fit_mle(&config.model()?, &config.free_mask()?, &train.pa, &train.pb, &config.fit())?;
            fs::write(out, fit.to_json()?)?;
            println!("loglik {:.4} over {} observations (improved: {})", fit.loglik, fit.observations, fit.improved);
        }
        Command::Filter { data, fit, out } => {
            let panel = data.load()?;
            let (model, init) = match fit {
                Some(p) => {
                    let f = read_fit(p)?;
                    (f.model, f.initial_spread)
                }
                None => {
                    let model = config.model()?;
                    let init = initial_spread(&model, &panel.pa, &panel.pb, &ols_init(&panel.pa, &panel.pb)?);
                    (model, init)
                }
            };
            let output = run_filter(&model, &panel.pa, &panel.pb, init, &config.filter())?;
            output.write_csv(&panel.date_strings(), fs::File::create(out)?)?;
            println!("loglik {:.4}, {} variance clamps", output.total_loglik, output.diagnostics.variance_clamps);
        }
        Command::Simulate { out, days, start, base_price } => {
            let model = config.model()?;
            match days {
                Some(n) => {
                    let panel = synthetic_panel(&model, *n, config.seed, parse_date(start)?, *base_price)?;
                    panel.write_csv(fs::File::create(out)?)?;
                }
                None => {
                    let path = simulate_spread(&model, config.horizon, None, derive_seed(config.seed, "simulate", 0))?;
                    let mut text = String::from("t,spread\n");
                    for (t, x) in path.values.iter().enumerate() {
                        text.push_str(&format!("{t},{x}\n"));
                    }
                    fs::write(out, text)?;
                }
            }
        }
        Command::OptimizeRule { fit, out } => {
            let model = match fit {
                Some(p) => read_fit(p)?.model,
                None => config.model()?,
            };
            let grid = optimize_rule(&model, config.strategy, &config.grid(), &config.costs(), derive_seed(config.seed, "grid", 0))?;
            fs::create_dir_all(out)?;
            grid.write_csv(fs::File::create(out.join("grid.csv"))?)?;
            fs::write(out.join("grid.json"), serde_json::to_string_pretty(&grid.summary())?)?;
            println!(
                "{} {:?}: u* = {}, l* = {}, value {:.4} ± {:.4}",
                grid.strategy, grid.criterion, grid.best_u, grid.best_l, grid.best_value, grid.best_std_error
            );
        }
        Command::Backtest { data, fit, grid, out } => {
            let panel = data.load()?;
            let fit = read_fit(fit)?;
            let grid: GridSummary = serde_json::from_str(&fs::read_to_string(grid)?)?;
            let start = if config.split_date.is_some() { split_index(config, &panel)? } else { 0 };
            let report = run_backtest(config, &panel, start, &fit, &grid, out, &mut Vec::new())?;
            print_report(&report);
        }
        Command::Pipeline { data, out } => {
            let outcome = run_pipeline(config, &data.load()?, out)?;
            print_report(&outcome.report);
        }
    }
    Ok(())
}

fn print_report(report: &pairs_core::pipeline::ReportFile) {
    match &report.performance {
        Some(p) => println!(
            "{} u={} l={}: {} test days, return {:.4}, sharpe {}, max drawdown {:.4}, {} trades",
            report.strategy,
            report.u,
            report.l,
            report.test_days,
            p.annual_return,
            p.sharpe.map_or("n/a".into(), |s| format!("{s:.4}")),
            p.max_drawdown,
            p.trade_count
        ),
        None => println!("{} u={} l={}: empty out-of-sample period", report.strategy, report.u, report.l),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = load_config(&cli).and_then(|config| {
        // the pipeline installs its own pool
        if matches!(cli.command, Command::Pipeline { .. }) {
            run(&cli, &config)
        } else {
            parallel::with_workers(config.workers, || run(&cli, &config))?
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
