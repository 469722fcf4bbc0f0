//! Monte Carlo grid search over boundary multipliers.
//!
//! `N` spread paths are simulated once and shared by every `(u, l)` cell
//! (common random numbers). Each cell runs the strategy automaton over every
//! path, and the cell value is the mean per-path cumulative return or Sharpe
//! ratio. Paths are processed in fixed-size chunks whose partial sums are
//! combined in chunk order, so the result is bit-identical for any number of
//! worker threads.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backtest::CostModel;
use crate::error::{Error, Result};
use crate::model::{simulate_spread, DriftFamily, ModelSpec};
use crate::parallel;
use crate::rng::derive_seed;
use crate::strategies::{next_position, Band, Strategy};

/// Paths per reduction chunk. Fixed so the summation order never depends on
/// the thread count.
const CHUNK: usize = 32;
/// Attempts per path before giving up on a model that keeps escaping.
const MAX_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Mean cumulative return.
    Cr,
    /// Mean (unannualised, zero risk-free) Sharpe ratio of daily returns.
    Sr,
    /// Mean annualised return over maximum drawdown.
    Calmar,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cr" => Ok(Criterion::Cr),
            "sr" => Ok(Criterion::Sr),
            "calmar" => Ok(Criterion::Calmar),
            _ => Err(Error::invalid("criterion", format!("unknown criterion {s:?} (cr, sr, calmar)"))),
        }
    }
}

/// `start, start + step, …` for `count` values, computed from integers so the
/// grid is exact to one rounding.
pub fn linear_grid(start_tenths: i32, count: usize) -> Vec<f64> {
    (0..count as i32).map(|k| f64::from(start_tenths + k) / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub u_values: Vec<f64>,
    pub l_values: Vec<f64>,
    pub criterion: Criterion,
    pub paths: usize,
    pub horizon: usize,
    /// Add the negation of every path to the path set.
    pub mirrored: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            u_values: linear_grid(1, 25),
            l_values: linear_grid(-25, 25),
            criterion: Criterion::Cr,
            paths: 2000,
            horizon: 1000,
            mirrored: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if self.u_values.is_empty() || self.l_values.is_empty() {
            return Err(Error::invalid("grid", "boundary grids must be non-empty"));
        }
        if !sorted(&self.u_values) || !sorted(&self.l_values) {
            return Err(Error::invalid("grid", "boundary grids must be strictly increasing"));
        }
        if self.u_values[0] <= 0.0 || *self.l_values.last().unwrap() >= 0.0 {
            return Err(Error::invalid("grid", "need u > 0 and l < 0"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("grid", "need at least one path"));
        }
        if self.horizon < 2 {
            return Err(Error::invalid("grid", "horizon must be at least 2"));
        }
        Ok(())
    }
}

/// Simulated paths shared by all cells.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub paths: Vec<Vec<f64>>,
    /// Per-bar band scale for each path; constant paths use `sd` everywhere.
    pub scales: Option<Vec<Vec<f64>>>,
    /// Close level.
    pub center: f64,
    /// Stationary standard deviation.
    pub sd: f64,
    /// Paths per reduction group: 2 when mirrored pairs are summed together.
    pub group: usize,
    /// Paths redrawn because they left the admissible region.
    pub resampled: usize,
}

fn escape_bound(model: &ModelSpec) -> Option<f64> {
    // the quadratic drift is explosive beyond its unstable fixed point
    (model.drift.family() == DriftFamily::Quadratic).then_some(1.0)
}

/// Simulates path `n`, redrawing with derived seeds while it leaves the
/// admissible region or overflows.
fn simulate_path(model: &ModelSpec, horizon: usize, seed: u64, n: usize) -> Result<(Vec<f64>, usize)> {
    let base = derive_seed(seed, "path", n as u64);
    let bound = escape_bound(model);
    for attempt in 0..MAX_RESAMPLES {
        let s = if attempt == 0 {
            base
        } else {
            derive_seed(base, "resample", attempt as u64)
        };
        match simulate_spread(model, horizon, None, s) {
            Ok(p) if bound.is_none_or(|b| p.values.iter().all(|x| x.abs() <= b)) => {
                return Ok((p.values, attempt));
            }
            Ok(_) | Err(Error::NonFinite { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonFinite { step: horizon })
}

/// Simulates the path set for `strategy`. Strategy C on a non-constant
/// diffusion gets a per-bar band scale from each path's own history.
pub fn simulate_paths(model: &ModelSpec, strategy: Strategy, grid: &GridSpec, seed: u64) -> Result<PathSet> {
    grid.validate()?;
    model.validate()?;
    let (center, sd) = model.spread_moments()?;
    let sims = parallel::map_indexed(grid.paths, |n| simulate_path(model, grid.horizon, seed, n));
    let mut paths = Vec::with_capacity(grid.paths * if grid.mirrored { 2 } else { 1 });
    let mut resampled = 0;
    for s in sims {
        let (p, r) = s?;
        resampled += r;
        if grid.mirrored {
            let m = p.iter().map(|x| -x).collect();
            paths.push(p);
            paths.push(m);
        } else {
            paths.push(p);
        }
    }
    let scales = if strategy == Strategy::C && !model.diffusion.is_constant() {
        let s = parallel::map_indexed(paths.len(), |i| {
            crate::strategies::volatility_scale(model, &paths[i], sd)
        });
        Some(s.into_iter().collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    Ok(PathSet {
        paths,
        scales,
        center,
        sd,
        group: if grid.mirrored { 2 } else { 1 },
        resampled,
    })
}

/// Criteria of one strategy on one path.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PathMetrics {
    pub cr: f64,
    /// Sharpe ratio of daily returns; 0 for a constant return stream.
    pub sr: f64,
    /// Annualised return over maximum drawdown; 0 without drawdown.
    pub calmar: f64,
    pub trades: usize,
}

/// Runs `strategy` with multipliers `(u, l)` on one path, in spread units.
pub fn path_metrics(
    strategy: Strategy,
    u: f64,
    l: f64,
    center: f64,
    path: &[f64],
    scale: PathScale<'_>,
    costs: &CostModel,
) -> PathMetrics {
    let band = |t: usize| {
        let s = match scale {
            PathScale::Constant(s) => s,
            PathScale::Series(v) => v[t],
        };
        Band {
            upper: center + u * s,
            lower: center + l * s,
        }
    };
    let (mut sum, mut sumsq) = (0.0, 0.0);
    let (mut peak, mut md) = (0.0f64, 0.0f64);
    let mut trades = 0;
    let mut pos = 0i8;
    let mut prev: Option<(f64, Band)> = None;
    for (t, &x) in path.iter().enumerate() {
        let b = band(t);
        let next = next_position(strategy, pos, prev, x, b, center);
        let mut r = 0.0;
        if let Some((px, _)) = prev {
            r -= f64::from(pos) * (x - px);
        }
        if next != pos {
            r -= costs.per_asset * f64::from((next - pos).abs());
            if next != 0 {
                trades += 1;
            }
        }
        sum += r;
        sumsq += r * r;
        peak = peak.max(sum);
        md = md.max(peak - sum);
        pos = next;
        prev = Some((x, b));
    }
    let n = path.len() as f64;
    let mean = sum / n;
    let var = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
    let sd = var.sqrt();
    PathMetrics {
        cr: sum,
        sr: if trades > 0 && sd > 1e-12 * mean.abs() && sd > 0.0 { mean / sd } else { 0.0 },
        calmar: if md > 0.0 { mean * crate::backtest::TRADING_DAYS / md } else { 0.0 },
        trades,
    }
}

#[derive(Clone, Copy, Debug)]
pub enum PathScale<'a> {
    Constant(f64),
    Series(&'a [f64]),
}

/// Mean and standard error of each criterion over the path set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub u: f64,
    pub l: f64,
    pub cr: f64,
    pub sr: f64,
    pub calmar: f64,
    pub cr_se: f64,
    pub sr_se: f64,
    pub calmar_se: f64,
    pub mean_trades: f64,
}

impl CellStats {
    pub fn value(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Cr => self.cr,
            Criterion::Sr => self.sr,
            Criterion::Calmar => self.calmar,
        }
    }

    pub fn std_error(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Cr => self.cr_se,
            Criterion::Sr => self.sr_se,
            Criterion::Calmar => self.calmar_se,
        }
    }
}

/// Running sums for one cell: Σm, Σm² for the three criteria and Σtrades.
#[derive(Clone, Copy, Debug, Default)]
struct Sums([f64; 7]);

impl Sums {
    fn add(&mut self, m: &PathMetrics) {
        let v = [m.cr, m.cr * m.cr, m.sr, m.sr * m.sr, m.calmar, m.calmar * m.calmar, m.trades as f64];
        for (a, b) in self.0.iter_mut().zip(v) {
            *a += b;
        }
    }

    fn merge(&mut self, o: &Sums) {
        for (a, b) in self.0.iter_mut().zip(o.0) {
            *a += b;
        }
    }
}

fn finish(u: f64, l: f64, s: &Sums, n: usize) -> CellStats {
    let nf = n as f64;
    let stat = |sum: f64, sq: f64| {
        let mean = sum / nf;
        let se = if n > 1 {
            (((sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };
    let (cr, cr_se) = stat(s.0[0], s.0[1]);
    let (sr, sr_se) = stat(s.0[2], s.0[3]);
    let (calmar, calmar_se) = stat(s.0[4], s.0[5]);
    CellStats {
        u,
        l,
        cr,
        sr,
        calmar,
        cr_se,
        sr_se,
        calmar_se,
        mean_trades: s.0[6] / nf,
    }
}

fn scale_of(set: &PathSet, i: usize) -> PathScale<'_> {
    match &set.scales {
        Some(s) => PathScale::Series(&s[i]),
        None => PathScale::Constant(set.sd),
    }
}

/// Adds the metrics of paths `range` for every cell to `sums`, summing each
/// reduction group (a path and its mirror) before accumulating it.
fn accumulate(
    set: &PathSet,
    strategy: Strategy,
    cells: &[(f64, f64)],
    costs: &CostModel,
    range: std::ops::Range<usize>,
) -> Vec<Sums> {
    let mut sums = vec![Sums::default(); cells.len()];
    let mut start = range.start;
    while start < range.end {
        let end = (start + set.group).min(range.end);
        for (c, &(u, l)) in cells.iter().enumerate() {
            let mut g = Sums::default();
            for i in start..end {
                g.add(&path_metrics(strategy, u, l, set.center, &set.paths[i], scale_of(set, i), costs));
            }
            sums[c].merge(&g);
        }
        start = end;
    }
    sums
}

/// Criteria of cell `(u, l)` over a path set.
pub fn evaluate_cell(set: &PathSet, strategy: Strategy, u: f64, l: f64, costs: &CostModel) -> CellStats {
    let cells = [(u, l)];
    let n = set.paths.len();
    let chunks = chunk_ranges(n, set.group);
    let parts = parallel::map_indexed(chunks.len(), |k| accumulate(set, strategy, &cells, costs, chunks[k].clone()));
    let mut total = Sums::default();
    for p in &parts {
        total.merge(&p[0]);
    }
    finish(u, l, &total, n)
}

/// Per-path metrics of one cell, in path order.
pub fn cell_path_metrics(set: &PathSet, strategy: Strategy, u: f64, l: f64, costs: &CostModel) -> Vec<PathMetrics> {
    parallel::map_indexed(set.paths.len(), |i| {
        path_metrics(strategy, u, l, set.center, &set.paths[i], scale_of(set, i), costs)
    })
}

fn chunk_ranges(n: usize, group: usize) -> Vec<std::ops::Range<usize>> {
    let size = CHUNK * group;
    (0..n.div_ceil(size)).map(|k| k * size..((k + 1) * size).min(n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub strategy: Strategy,
    pub criterion: Criterion,
    pub u_values: Vec<f64>,
    pub l_values: Vec<f64>,
    /// Row-major: `cells[i * l_values.len() + j]` is `(u_values[i], l_values[j])`.
    pub cells: Vec<CellStats>,
    pub best_index: (usize, usize),
    pub best_u: f64,
    pub best_l: f64,
    pub best_value: f64,
    pub best_std_error: f64,
    pub close_level: f64,
    pub spread_sd: f64,
    pub paths: usize,
    pub horizon: usize,
    pub resampled_paths: usize,
    /// No cell traded on any path.
    pub no_trades: bool,
}

impl GridResult {
    pub fn cell(&self, i: usize, j: usize) -> &CellStats {
        &self.cells[i * self.l_values.len() + j]
    }

    /// Cell maximising `criterion`; ties go to the smallest `(i, j)`.
    pub fn argmax(&self, criterion: Criterion) -> (usize, usize) {
        let nl = self.l_values.len();
        let mut best = 0;
        for (k, c) in self.cells.iter().enumerate() {
            if c.value(criterion) > self.cells[best].value(criterion) {
                best = k;
            }
        }
        (best / nl, best % nl)
    }

    /// CSV with columns `u,l,cr,sr,calmar,cr_se,sr_se,calmar_se,mean_trades`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            strategy: self.strategy,
            criterion: self.criterion,
            best_u: self.best_u,
            best_l: self.best_l,
            best_value: self.best_value,
            best_std_error: self.best_std_error,
            close_level: self.close_level,
            spread_sd: self.spread_sd,
            paths: self.paths,
            horizon: self.horizon,
            resampled_paths: self.resampled_paths,
            no_trades: self.no_trades,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub strategy: Strategy,
    pub criterion: Criterion,
    pub best_u: f64,
    pub best_l: f64,
    pub best_value: f64,
    pub best_std_error: f64,
    pub close_level: f64,
    pub spread_sd: f64,
    pub paths: usize,
    pub horizon: usize,
    pub resampled_paths: usize,
    pub no_trades: bool,
}

/// Evaluates every cell of `grid` on an existing path set.
pub fn evaluate_grid(
    set: &PathSet,
    strategy: Strategy,
    grid: &GridSpec,
    costs: &CostModel,
) -> Result<GridResult> {
    grid.validate()?;
    costs.validate()?;
    let cells: Vec<(f64, f64)> = grid
        .u_values
        .iter()
        .flat_map(|&u| grid.l_values.iter().map(move |&l| (u, l)))
        .collect();
    let n = set.paths.len();
    let chunks = chunk_ranges(n, set.group);
    let parts = parallel::map_indexed(chunks.len(), |k| accumulate(set, strategy, &cells, costs, chunks[k].clone()));
    let mut totals = vec![Sums::default(); cells.len()];
    for p in &parts {
        for (t, s) in totals.iter_mut().zip(p) {
            t.merge(s);
        }
    }
    let stats: Vec<CellStats> = cells.iter().zip(&totals).map(|(&(u, l), s)| finish(u, l, s, n)).collect();
    let no_trades = stats.iter().all(|c| c.mean_trades == 0.0);
    if no_trades {
        log::warn!("no cell of the {strategy} grid traded on any path");
    }
    let mut result = GridResult {
        strategy,
        criterion: grid.criterion,
        u_values: grid.u_values.clone(),
        l_values: grid.l_values.clone(),
        cells: stats,
        best_index: (0, 0),
        best_u: 0.0,
        best_l: 0.0,
        best_value: 0.0,
        best_std_error: 0.0,
        close_level: set.center,
        spread_sd: set.sd,
        paths: n,
        horizon: grid.horizon,
        resampled_paths: set.resampled,
        no_trades,
    };
    let (i, j) = result.argmax(grid.criterion);
    let best = *result.cell(i, j);
    result.best_index = (i, j);
    result.best_u = best.u;
    result.best_l = best.l;
    result.best_value = best.value(grid.criterion);
    result.best_std_error = best.std_error(grid.criterion);
    Ok(result)
}

/// Simulates paths from `model` and searches the grid for `strategy`.
pub fn optimize_rule(
    model: &ModelSpec,
    strategy: Strategy,
    grid: &GridSpec,
    costs: &CostModel,
    seed: u64,
) -> Result<GridResult> {
    let set = simulate_paths(model, strategy, grid, seed)?;
    evaluate_grid(&set, strategy, grid, costs)
}
