//! Daily returns and performance statistics for a signal series.
//!
//! Returns are simple (arithmetic): a position held from bar `t−1` into bar
//! `t` earns `−pos·Δx / notional`, so a short spread (`+1`) gains when the
//! spread falls, and every unit of position change pays `per_asset`. A round
//! trip (open then close) therefore costs `2·per_asset`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategies::SignalSeries;

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Proportional cost charged per unit of position change.
    pub per_asset: f64,
    /// Annualised risk-free rate (application-mode Sharpe only).
    pub risk_free: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_asset: 0.002,
            risk_free: 0.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_asset >= 0.0 && self.per_asset.is_finite()) {
            return Err(Error::invalid("cost", format!("per-asset cost {} must be ≥ 0", self.per_asset)));
        }
        if !self.risk_free.is_finite() {
            return Err(Error::invalid("cost", "risk-free rate must be finite"));
        }
        Ok(())
    }
}

/// How the Sharpe ratio is reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpeMode {
    /// Mean over standard deviation of daily returns, risk-free rate 0.
    Simulation,
    /// Annualised excess return over annualised standard deviation.
    Application,
}

/// Denominator turning spread moves into returns.
#[derive(Clone, Copy, Debug)]
pub enum Notional<'a> {
    /// One spread unit.
    Unit,
    /// Gross portfolio value per bar; each trade is scaled by its value on
    /// the entry bar.
    EntryValue(&'a [f64]),
}

/// Daily returns of `signals` traded on `spread`.
pub fn daily_returns(
    spread: &[f64],
    signals: &SignalSeries,
    notional: Notional<'_>,
    costs: &CostModel,
) -> Result<Vec<f64>> {
    let pos = &signals.positions;
    if spread.len() != pos.len() {
        return Err(Error::invalid(
            "backtest",
            format!("spread has {} bars, signals {}", spread.len(), pos.len()),
        ));
    }
    costs.validate()?;
    if let Notional::EntryValue(v) = notional {
        if v.len() != spread.len() {
            return Err(Error::invalid("backtest", "notional series length differs"));
        }
        if let Some(bad) = v.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid("scale", format!("notional {bad} must be > 0")));
        }
    }
    let mut scale = 1.0;
    let mut out = Vec::with_capacity(spread.len());
    let mut prev = 0i8;
    for t in 0..spread.len() {
        let mut r = 0.0;
        if t > 0 && prev != 0 {
            r -= f64::from(prev) * (spread[t] - spread[t - 1]) / scale;
        }
        let p = pos[t];
        r -= costs.per_asset * f64::from((p - prev).abs());
        if p != prev && p != 0 {
            if let Notional::EntryValue(v) = notional {
                scale = v[t];
            }
        }
        out.push(r);
        prev = p;
    }
    Ok(out)
}

pub fn cumulative(returns: &[f64]) -> Vec<f64> {
    returns
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

/// Running peak (starting from the initial zero) minus current value.
pub fn drawdown_series(cr: &[f64]) -> Vec<f64> {
    let mut peak = 0.0f64;
    cr.iter()
        .map(|&c| {
            peak = peak.max(c);
            peak - c
        })
        .collect()
}

pub fn max_drawdown(cr: &[f64]) -> f64 {
    drawdown_series(cr).into_iter().fold(0.0, f64::max)
}

/// Mean and sample standard deviation.
fn mean_std(r: &[f64]) -> (f64, f64) {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.max(0.0).sqrt();
    // rounding leaves a residue of order ε·|mean| in constant streams
    (mean, if sd <= 1e-12 * mean.abs() { 0.0 } else { sd })
}

/// Unannualised Sharpe ratio of daily returns with zero risk-free rate;
/// `None` when the returns are constant.
pub fn simulation_sharpe(r: &[f64]) -> Option<f64> {
    if r.len() < 2 {
        return None;
    }
    let (mean, sd) = mean_std(r);
    (sd > 0.0).then(|| mean / sd)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub daily_returns: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub drawdown: Vec<f64>,
    pub total_return: f64,
    pub annual_return: f64,
    pub annual_std: f64,
    pub sharpe: Option<f64>,
    pub sharpe_mode: SharpeMode,
    pub calmar: Option<f64>,
    pub max_drawdown: f64,
    pub pain_index: f64,
    pub trade_count: usize,
}

/// Summary statistics of a daily return series.
pub fn performance(
    returns: Vec<f64>,
    trade_count: usize,
    costs: &CostModel,
    mode: SharpeMode,
) -> Result<BacktestReport> {
    if returns.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: returns.len(),
        });
    }
    let cr = cumulative(&returns);
    let dd = drawdown_series(&cr);
    let md = dd.iter().copied().fold(0.0, f64::max);
    let (mean, sd) = mean_std(&returns);
    let annual_return = mean * TRADING_DAYS;
    let annual_std = sd * TRADING_DAYS.sqrt();
    let sharpe = match mode {
        SharpeMode::Simulation => (sd > 0.0).then(|| mean / sd),
        SharpeMode::Application => (sd > 0.0).then(|| (annual_return - costs.risk_free) / annual_std),
    };
    Ok(BacktestReport {
        total_return: *cr.last().expect("non-empty"),
        pain_index: dd.iter().sum::<f64>() / dd.len() as f64,
        calmar: (md > 0.0).then(|| annual_return / md),
        max_drawdown: md,
        annual_return,
        annual_std,
        sharpe,
        sharpe_mode: mode,
        trade_count,
        daily_returns: returns,
        cumulative: cr,
        drawdown: dd,
    })
}

/// Daily returns and statistics in one call.
pub fn pnl_from_signals(
    spread: &[f64],
    signals: &SignalSeries,
    notional: Notional<'_>,
    costs: &CostModel,
    mode: SharpeMode,
) -> Result<BacktestReport> {
    let r = daily_returns(spread, signals, notional, costs)?;
    performance(r, signals.trade_count(), costs, mode)
}

/// Summary fields only, for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub total_return: f64,
    pub annual_return: f64,
    pub annual_std: f64,
    pub sharpe: Option<f64>,
    pub sharpe_mode: SharpeMode,
    pub calmar: Option<f64>,
    pub max_drawdown: f64,
    pub pain_index: f64,
    pub trade_count: usize,
    pub days: usize,
}

impl BacktestReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            total_return: self.total_return,
            annual_return: self.annual_return,
            annual_std: self.annual_std,
            sharpe: self.sharpe,
            sharpe_mode: self.sharpe_mode,
            calmar: self.calmar,
            max_drawdown: self.max_drawdown,
            pain_index: self.pain_index,
            trade_count: self.trade_count,
            days: self.daily_returns.len(),
        }
    }

    /// CSV with columns `date,return,cumulative,drawdown`.
    pub fn write_daily_csv<W: Write>(&self, dates: &[String], out: W) -> Result<()> {
        if dates.len() != self.daily_returns.len() {
            return Err(Error::invalid("report export", "date count differs from series length"));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "return", "cumulative", "drawdown"])?;
        for (i, d) in dates.iter().enumerate() {
            w.write_record([
                d.clone(),
                self.daily_returns[i].to_string(),
                self.cumulative[i].to_string(),
                self.drawdown[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
