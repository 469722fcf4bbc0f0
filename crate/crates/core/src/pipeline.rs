//! End-to-end run: fit in-sample, optimise the rule on the fitted model,
//! then filter, trade and score the out-of-sample period.
//!
//! Artifacts written to the output directory:
//!
//! | file          | content                                          |
//! |---------------|--------------------------------------------------|
//! | `fit.json`    | [`FitResult`] including the fitted model         |
//! | `grid.csv`    | every grid cell ([`GridResult::write_csv`])      |
//! | `grid.json`   | optimum and search settings                      |
//! | `filter.csv`  | filtered spread over the whole panel             |
//! | `signals.csv` | out-of-sample positions                          |
//! | `daily.csv`   | out-of-sample daily returns and drawdowns        |
//! | `report.json` | out-of-sample statistics and run flags           |
//!
//! Nothing time-dependent is written, so identical inputs give identical
//! bytes. A failing stage leaves the artifacts of earlier stages in place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{pnl_from_signals, CostModel, Notional, ReportSummary, SharpeMode};
use crate::config::RunConfig;
use crate::data::{parse_date, PricePanel};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitResult};
use crate::filter::{run_filter, FilterOutput};
use crate::optimizer::{optimize_rule, GridResult, GridSummary};
use crate::rng::derive_seed;
use crate::strategies::{make_boundaries, run_strategy, BoundarySeries, SignalSeries, Strategy, TradeRule};

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Bars after an entry bar, while holding, at which the spread lies outside
/// the band. Strategy C guarantees zero.
pub fn band_violations(spread: &[f64], bounds: &BoundarySeries, signals: &SignalSeries) -> usize {
    let p = &signals.positions;
    (1..p.len())
        .filter(|&t| p[t] != 0 && p[t - 1] == p[t])
        .filter(|&t| spread[t] < bounds.lower[t] || spread[t] > bounds.upper[t])
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfSample {
    pub signals: SignalSeries,
    pub bounds: BoundarySeries,
    pub report: Option<crate::backtest::BacktestReport>,
    pub band_violations: usize,
}

/// Signals and returns over `range` of the panel, with signals driven by the
/// filtered spread and P&L measured on the observed spread.
#[allow(clippy::too_many_arguments)]
pub fn trade_period(
    panel: &PricePanel,
    range: std::ops::Range<usize>,
    filtered: &FilterOutput,
    fit: &FitResult,
    rule: &TradeRule,
    sd: f64,
    costs: &CostModel,
    mode: SharpeMode,
) -> Result<OutOfSample> {
    let model = &fit.model;
    let x = &filtered.filtered_mean[range.clone()];
    let bounds = make_boundaries(sd, rule, model, Some(x), x.len())?;
    let signals = run_strategy(rule.strategy, x, &bounds)?;
    let gamma = model.hedge_ratio;
    let observed: Vec<f64> = range.clone().map(|t| panel.pa[t] - gamma * panel.pb[t]).collect();
    let gross: Vec<f64> = range.clone().map(|t| panel.pa[t] + gamma * panel.pb[t]).collect();
    let notional = match mode {
        SharpeMode::Application => Notional::EntryValue(&gross),
        SharpeMode::Simulation => Notional::Unit,
    };
    let report = if x.len() >= 2 {
        Some(pnl_from_signals(&observed, &signals, notional, costs, mode)?)
    } else {
        None
    };
    Ok(OutOfSample {
        band_violations: if rule.strategy == Strategy::C {
            band_violations(x, &bounds, &signals)
        } else {
            0
        },
        signals,
        bounds,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub strategy: Strategy,
    pub u: f64,
    pub l: f64,
    pub close_level: f64,
    pub spread_sd: f64,
    pub train_days: usize,
    pub test_days: usize,
    pub test_start: Option<String>,
    pub test_end: Option<String>,
    /// Fewer than two out-of-sample bars; no statistics reported.
    pub empty_test_period: bool,
    pub band_violations: usize,
    pub filter_variance_clamps: usize,
    pub performance: Option<ReportSummary>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub fit: FitResult,
    pub grid: GridResult,
    pub report: ReportFile,
    pub artifacts: Vec<PathBuf>,
}

fn write(out: &Path, name: &str, bytes: &[u8], list: &mut Vec<PathBuf>) -> Result<()> {
    let p = out.join(name);
    fs::write(&p, bytes)?;
    list.push(p);
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Index of the first out-of-sample bar: one past the last date on or
/// before `split_date`, or the panel length when no split is configured.
pub fn split_index(config: &RunConfig, panel: &PricePanel) -> Result<usize> {
    match &config.split_date {
        Some(s) => {
            let d = parse_date(s)?;
            if d < panel.dates[0] {
                return Err(Error::Config(format!("split date {d} precedes the data ({})", panel.dates[0])));
            }
            Ok(panel.dates.partition_point(|x| *x <= d))
        }
        None => Ok(panel.len()),
    }
}

/// Filters the whole panel with the fitted model and trades bars
/// `test_start..` with the optimised rule. Writes `filter.csv`,
/// `signals.csv`, `daily.csv` (when there are statistics) and `report.json`.
pub fn run_backtest(
    config: &RunConfig,
    panel: &PricePanel,
    test_start: usize,
    fit: &FitResult,
    grid: &GridSummary,
    out_dir: &Path,
    artifacts: &mut Vec<PathBuf>,
) -> Result<ReportFile> {
    fs::create_dir_all(out_dir)?;
    let filtered = run_filter(&fit.model, &panel.pa, &panel.pb, fit.initial_spread, &config.filter())?;
    let dates = panel.date_strings();
    write(out_dir, "filter.csv", &csv_bytes(|b| filtered.write_csv(&dates, b))?, artifacts)?;
    let rule = TradeRule::new(grid.best_u, grid.best_l, grid.strategy, grid.close_level)?;
    let test = test_start.min(panel.len())..panel.len();
    let oos = trade_period(panel, test.clone(), &filtered, fit, &rule, grid.spread_sd, &config.costs(), config.sharpe_mode())?;
    let test_dates = &dates[test.clone()];
    write(out_dir, "signals.csv", &csv_bytes(|b| oos.signals.write_csv(test_dates, b))?, artifacts)?;
    if let Some(r) = &oos.report {
        write(out_dir, "daily.csv", &csv_bytes(|b| r.write_daily_csv(test_dates, b))?, artifacts)?;
    } else {
        log::warn!("out-of-sample period has {} bars; no statistics", test.len());
    }
    let report = ReportFile {
        strategy: grid.strategy,
        u: rule.u,
        l: rule.l,
        close_level: rule.close,
        spread_sd: grid.spread_sd,
        train_days: test.start,
        test_days: test.len(),
        test_start: test_dates.first().cloned(),
        test_end: test_dates.last().cloned(),
        empty_test_period: oos.report.is_none(),
        band_violations: oos.band_violations,
        filter_variance_clamps: filtered.diagnostics.variance_clamps,
        performance: oos.report.as_ref().map(|r| r.summary()),
    };
    write(out_dir, "report.json", serde_json::to_string_pretty(&report)?.as_bytes(), artifacts)?;
    Ok(report)
}

/// Runs the three stages on `panel`, writing artifacts into `out_dir`.
pub fn run_pipeline(config: &RunConfig, panel: &PricePanel, out_dir: &Path) -> Result<PipelineOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    crate::parallel::with_workers(config.workers, || run_stages(config, panel, out_dir))?
}

fn run_stages(config: &RunConfig, panel: &PricePanel, out_dir: &Path) -> Result<PipelineOutcome> {
    let mut artifacts = Vec::new();
    let split = split_index(config, panel)?;
    let (train, _) = panel.split_at_date(panel.dates[split - 1]);

    let template = config.model()?;
    let mask = config.free_mask()?;
    let fit = stage("fit", fit_mle(&template, &mask, &train.pa, &train.pb, &config.fit()))?;
    write(out_dir, "fit.json", fit.to_json()?.as_bytes(), &mut artifacts)?;

    let grid = stage(
        "optimize",
        optimize_rule(&fit.model, config.strategy, &config.grid(), &config.costs(), derive_seed(config.seed, "grid", 0)),
    )?;
    write(out_dir, "grid.csv", &csv_bytes(|b| grid.write_csv(b))?, &mut artifacts)?;
    let summary = grid.summary();
    write(out_dir, "grid.json", serde_json::to_string_pretty(&summary)?.as_bytes(), &mut artifacts)?;

    let report = stage("backtest", run_backtest(config, panel, split, &fit, &summary, out_dir, &mut artifacts))?;
    Ok(PipelineOutcome {
        fit,
        grid,
        report,
        artifacts,
    })
}
