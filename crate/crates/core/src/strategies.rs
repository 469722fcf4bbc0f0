//! Trading boundaries and the three signal automata.
//!
//! Positions are `+1` (short the spread: short A, long γ·B), `−1` (long the
//! spread) or `0`. Signals are evaluated on a bar's close and acted on at the
//! same close. A crossing means a strict inequality on the previous bar and a
//! non-strict one on the current bar.
//!
//! * **A** opens when the spread is outside the band and closes at the centre.
//! * **B** opens on an upward crossing of the upper bound (short) or a
//!   downward crossing of the lower bound (long) and only ever flips after
//!   that.
//! * **C** opens when the spread re-enters the band (crossing the upper bound
//!   from above, the lower from below) and closes at the centre or when the
//!   spread leaves the band again; take-profit wins a tie.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    A,
    B,
    C,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::A, Strategy::B, Strategy::C];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Strategy::A),
            "B" => Ok(Strategy::B),
            "C" => Ok(Strategy::C),
            _ => Err(Error::invalid("strategy", format!("unknown strategy {s:?} (A, B or C)"))),
        }
    }
}

/// Boundary multipliers in units of the spread's standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeRule {
    pub u: f64,
    pub l: f64,
    pub strategy: Strategy,
    /// Close level in spread units.
    pub close: f64,
}

impl TradeRule {
    pub fn new(u: f64, l: f64, strategy: Strategy, close: f64) -> Result<Self> {
        if !(u > 0.0 && l < 0.0 && u.is_finite() && l.is_finite() && close.is_finite()) {
            return Err(Error::invalid("trade rule", format!("need u > 0 > l, got u={u}, l={l}")));
        }
        Ok(Self { u, l, strategy, close })
    }
}

/// Upper and lower bounds at one bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeries {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub center: f64,
}

impl BoundarySeries {
    pub fn constant(rule: &TradeRule, sd: f64, len: usize) -> Result<Self> {
        Self::scaled(rule, &vec![sd; len])
    }

    /// `U_t = C + u·s_t`, `L_t = C + l·s_t`.
    pub fn scaled(rule: &TradeRule, scale: &[f64]) -> Result<Self> {
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::ZeroVariance(format!("boundary scale {s} is not positive")));
        }
        Ok(Self {
            upper: scale.iter().map(|s| rule.close + rule.u * s).collect(),
            lower: scale.iter().map(|s| rule.close + rule.l * s).collect(),
            center: rule.close,
        })
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    #[inline]
    pub fn band(&self, t: usize) -> Band {
        Band {
            upper: self.upper[t],
            lower: self.lower[t],
        }
    }
}

/// Local-volatility scale `s_t = g(x_{t−1})/√(1 − a²)`, with `s_0 = sd`.
///
/// `a` is the drift slope; lags beyond the first use earlier values of
/// `spread`. Reduces to a constant when the diffusion is constant.
pub fn volatility_scale(model: &ModelSpec, spread: &[f64], sd: f64) -> Result<Vec<f64>> {
    let a = model.drift.slope();
    if a.abs() >= 1.0 {
        return Err(Error::invalid("volatility scale", format!("drift slope {a} is not mean reverting")));
    }
    let norm = (1.0 - a * a).sqrt();
    let lags = model.diffusion.lags().max(1);
    let pad = model.diffusion.padding_value();
    let mut out = Vec::with_capacity(spread.len());
    let mut history = vec![pad; lags];
    for t in 0..spread.len() {
        if t == 0 {
            out.push(sd);
            continue;
        }
        for (i, h) in history.iter_mut().enumerate() {
            *h = (t - 1).checked_sub(i).map_or(pad, |k| spread[k]);
        }
        out.push(model.diffusion.eval(&history)? / norm);
    }
    Ok(out)
}

/// Boundaries for `rule`. Strategy C under a non-constant diffusion scales
/// the band by [`volatility_scale`] of `filtered`; everything else uses the
/// stationary standard deviation `sd`.
pub fn make_boundaries(
    sd: f64,
    rule: &TradeRule,
    model: &ModelSpec,
    filtered: Option<&[f64]>,
    len: usize,
) -> Result<BoundarySeries> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::ZeroVariance(format!("spread standard deviation {sd}")));
    }
    match filtered {
        Some(x) if rule.strategy == Strategy::C && !model.diffusion.is_constant() => {
            if x.len() != len {
                return Err(Error::invalid("boundaries", "spread length differs from requested length"));
            }
            BoundarySeries::scaled(rule, &volatility_scale(model, x, sd)?)
        }
        _ => BoundarySeries::constant(rule, sd, len),
    }
}

/// One bar of a strategy automaton: the position after the close of the bar
/// with spread `x` and band `band`, given the position held into it and the
/// previous bar (absent on the first bar).
#[inline]
pub fn next_position(
    strategy: Strategy,
    pos: i8,
    prev: Option<(f64, Band)>,
    x: f64,
    band: Band,
    center: f64,
) -> i8 {
    match strategy {
        Strategy::A => {
            let pos = match pos {
                1 if x <= center => 0,
                -1 if x >= center => 0,
                p => p,
            };
            if pos != 0 {
                pos
            } else if x >= band.upper {
                1
            } else if x <= band.lower {
                -1
            } else {
                0
            }
        }
        Strategy::B => match prev {
            Some((px, pb)) if px < pb.upper && x >= band.upper => 1,
            Some((px, pb)) if px > pb.lower && x <= band.lower => -1,
            _ => pos,
        },
        Strategy::C => {
            let pos = match pos {
                // take-profit is checked before the stop-out
                1 if x <= center || x > band.upper => 0,
                -1 if x >= center || x < band.lower => 0,
                p => p,
            };
            if pos != 0 {
                return pos;
            }
            match prev {
                Some((px, pb)) if px > pb.upper && x <= band.upper => 1,
                Some((px, pb)) if px < pb.lower && x >= band.lower => -1,
                _ => 0,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub open: usize,
    /// Bar at which the position was closed or flipped; `None` if still open.
    pub close: Option<usize>,
    pub direction: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalSeries {
    pub positions: Vec<i8>,
    pub trades: Vec<Trade>,
}

impl SignalSeries {
    /// Rebuilds the trade log from positions.
    pub fn from_positions(positions: Vec<i8>) -> Self {
        let mut trades: Vec<Trade> = Vec::new();
        let mut prev = 0i8;
        for (t, &p) in positions.iter().enumerate() {
            if p != prev {
                if prev != 0 {
                    trades.last_mut().expect("open trade").close = Some(t);
                }
                if p != 0 {
                    trades.push(Trade {
                        open: t,
                        close: None,
                        direction: p,
                    });
                }
            }
            prev = p;
        }
        Self { positions, trades }
    }

    pub fn trade_count(&self) -> usize {
        self.trades.len()
    }

    /// CSV with columns `date,position`.
    pub fn write_csv<W: Write>(&self, dates: &[String], out: W) -> Result<()> {
        if dates.len() != self.positions.len() {
            return Err(Error::invalid("signal export", "date count differs from series length"));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "position"])?;
        for (d, p) in dates.iter().zip(&self.positions) {
            w.write_record([d.as_str(), &p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `strategy` over a spread series.
pub fn run_strategy(strategy: Strategy, spread: &[f64], bounds: &BoundarySeries) -> Result<SignalSeries> {
    if spread.len() != bounds.len() {
        return Err(Error::invalid(
            "signals",
            format!("spread has {} bars, bounds {}", spread.len(), bounds.len()),
        ));
    }
    let mut positions = Vec::with_capacity(spread.len());
    let mut pos = 0i8;
    for (t, &x) in spread.iter().enumerate() {
        let prev = t.checked_sub(1).map(|p| (spread[p], bounds.band(p)));
        pos = next_position(strategy, pos, prev, x, bounds.band(t), bounds.center);
        positions.push(pos);
    }
    Ok(SignalSeries::from_positions(positions))
}

pub fn signals_a(spread: &[f64], bounds: &BoundarySeries) -> Result<SignalSeries> {
    run_strategy(Strategy::A, spread, bounds)
}

pub fn signals_b(spread: &[f64], bounds: &BoundarySeries) -> Result<SignalSeries> {
    run_strategy(Strategy::B, spread, bounds)
}

pub fn signals_c(spread: &[f64], bounds: &BoundarySeries) -> Result<SignalSeries> {
    run_strategy(Strategy::C, spread, bounds)
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn sample_moments(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::InsufficientHistory { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("spread series is constant".into()));
    }
    Ok((mean, var.sqrt()))
}

/// The k-σ rule: bounds at `±k` sample standard deviations around the
/// sample mean.
pub fn rule_i_boundaries(spread: &[f64], k: f64, strategy: Strategy) -> Result<TradeRule> {
    let (mean, _) = sample_moments(spread)?;
    TradeRule::new(k, -k, strategy, mean)
}

/// Density of the first time a standardised Ornstein-Uhlenbeck process
/// started at `z0` hits zero.
pub fn first_passage_density(z0: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let e2 = (-2.0 * t).exp();
    let d = -(-2.0 * t).exp_m1();
    (2.0 / std::f64::consts::PI).sqrt() * z0.abs() * (-t).exp() / d.powf(1.5)
        * (-z0 * z0 * e2 / (2.0 * d)).exp()
}

/// Mode of [`first_passage_density`] in closed form.
pub fn first_passage_tstar(z0: f64) -> Result<f64> {
    if z0 == 0.0 || !z0.is_finite() {
        return Err(Error::invalid("z0", "must be finite and non-zero"));
    }
    let z2 = z0 * z0;
    let root = ((z2 - 3.0).powi(2) + 4.0 * z2).sqrt();
    Ok(0.5 * (1.0 + 0.5 * (root + z2 - 3.0)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BenchmarkModel, DiffusionSpec, DriftSpec, NoiseSpec};
    use approx::assert_relative_eq;

    fn unit_bounds(len: usize, u: f64, l: f64) -> BoundarySeries {
        BoundarySeries::constant(&TradeRule::new(u, l, Strategy::A, 0.0).unwrap(), 1.0, len).unwrap()
    }

    fn replay(s: Strategy, x: &[f64]) -> Vec<i8> {
        run_strategy(s, x, &unit_bounds(x.len(), 1.0, -1.0)).unwrap().positions
    }

    #[test]
    fn strategy_a_replays() {
        let a = signals_a(&[1.2, 0.5, -0.1], &unit_bounds(3, 1.0, -1.0)).unwrap();
        assert_eq!(a.positions, vec![1, 1, 0]);
        assert_eq!(a.trades, vec![Trade { open: 0, close: Some(2), direction: 1 }]);
        assert_eq!(replay(Strategy::A, &[0.3, -0.9, 0.99, 0.0]), vec![0; 4]);
        assert_eq!(replay(Strategy::A, &[-1.5, 0.2]), vec![-1, 0]);
    }

    #[test]
    fn strategy_b_replays() {
        assert_eq!(replay(Strategy::B, &[0.0, 1.1, 0.2, -1.1, 0.0]), vec![0, 1, 1, -1, -1]);
        assert_eq!(replay(Strategy::B, &[-0.5, 0.0, 0.5, 0.9]), vec![0; 4]);
        assert_eq!(replay(Strategy::B, &[0.0, 1.5, 0.0, 1.5, 0.5, 1.2]), vec![0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn strategy_c_replays() {
        assert_eq!(replay(Strategy::C, &[1.4, 0.9, 0.3, -0.05]), vec![0, 1, 1, 0]);
        assert_eq!(replay(Strategy::C, &[1.4, 0.9, 1.2]), vec![0, 1, 0]);
        assert_eq!(replay(Strategy::C, &[0.5, -0.5, 0.9, -0.9]), vec![0; 4]);
        assert_eq!(replay(Strategy::C, &[-1.3, -0.4, -1.01]), vec![0, -1, 0]);
    }

    #[test]
    fn crossing_needs_strict_previous_bar() {
        // sitting exactly on U is not "above" it
        assert_eq!(replay(Strategy::C, &[1.0, 0.5]), vec![0, 0]);
        assert_eq!(replay(Strategy::B, &[1.0, 1.0]), vec![0, 0]);
        assert_eq!(replay(Strategy::B, &[0.99, 1.0]), vec![0, 1]);
    }

    #[test]
    fn take_profit_wins_over_stop_out() {
        // a short whose next bar gaps below both C and L is a take-profit
        let s = run_strategy(Strategy::C, &[1.5, 0.8, -2.0], &unit_bounds(3, 1.0, -1.0)).unwrap();
        assert_eq!(s.positions, vec![0, 1, 0]);
    }

    #[test]
    fn model_one_boundary_example() {
        let m = BenchmarkModel::Linear.spec();
        let (mean, sd) = m.stationary_moments().unwrap();
        assert_relative_eq!(sd, 0.0049 / (1.0f64 - 0.959 * 0.959).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(sd, 0.017290, epsilon = 5e-7);
        let rule = TradeRule::new(0.7, -0.7, Strategy::A, mean).unwrap();
        let b = make_boundaries(sd, &rule, &m, None, 5).unwrap();
        assert_relative_eq!(b.upper[0], 0.012103, epsilon = 5e-7);
        assert!(b.upper.iter().all(|u| *u == b.upper[0]));
    }

    #[test]
    fn heteroscedastic_bounds_for_c_only() {
        let m = BenchmarkModel::Arch.spec();
        let x = [0.0, 0.1, -0.2, 0.05];
        let rule = TradeRule::new(1.0, -1.0, Strategy::C, 0.0).unwrap();
        let b = make_boundaries(1.67, &rule, &m, Some(&x), 4).unwrap();
        assert_eq!(b.upper[0], 1.67);
        let norm = (1.0f64 - 0.959 * 0.959).sqrt();
        assert_relative_eq!(b.upper[2], (0.00089f64 + 0.08 * 0.01).sqrt() / norm, max_relative = 1e-12);
        assert_relative_eq!(b.lower[3], -(0.00089f64 + 0.08 * 0.04).sqrt() / norm, max_relative = 1e-12);
        let a = TradeRule { strategy: Strategy::A, ..rule };
        assert!(make_boundaries(1.67, &a, &m, Some(&x), 4).unwrap().upper.iter().all(|u| *u == 1.67));
    }

    #[test]
    fn doubling_diffusion_doubles_band() {
        let one = ModelSpec::spread_only(
            DriftSpec::linear(0.0, 0.5),
            DiffusionSpec::arch1(0.01, 0.3),
            NoiseSpec::standard_normal(),
        );
        // 4× the ARCH coefficients doubles g pointwise
        let two = ModelSpec::spread_only(
            DriftSpec::linear(0.0, 0.5),
            DiffusionSpec::arch1(0.04, 1.2),
            NoiseSpec::standard_normal(),
        );
        let x = [0.2, -0.4, 0.1];
        let rule = TradeRule::new(1.3, -0.6, Strategy::C, 0.1).unwrap();
        let b1 = make_boundaries(1.0, &rule, &one, Some(&x), 3).unwrap();
        let b2 = make_boundaries(1.0, &rule, &two, Some(&x), 3).unwrap();
        for t in 1..3 {
            assert_relative_eq!(b2.upper[t] - 0.1, 2.0 * (b1.upper[t] - 0.1), max_relative = 1e-12);
        }
        assert!(make_boundaries(0.0, &rule, &one, None, 3).is_err());
    }

    #[test]
    fn rule_one() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = rule_i_boundaries(&x, 1.0, Strategy::A).unwrap();
        assert_eq!((r.u, r.l, r.close), (1.0, -1.0, 2.5));
        let r = rule_i_boundaries(&x, 2.0, Strategy::A).unwrap();
        assert_eq!((r.u, r.l), (2.0, -2.0));
        assert!(matches!(rule_i_boundaries(&[3.0; 5], 1.0, Strategy::A), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn tstar_closed_form() {
        assert_relative_eq!(first_passage_tstar(3f64.sqrt()).unwrap(), 0.5 * (1.0 + 3f64.sqrt()).ln(), epsilon = 1e-12);
        assert_relative_eq!(first_passage_tstar(3f64.sqrt()).unwrap(), 0.502526, epsilon = 1e-6);
        for z in [0.5, 1.0, 2.0, 5.0] {
            assert_eq!(first_passage_tstar(z).unwrap(), first_passage_tstar(-z).unwrap());
        }
        assert!(first_passage_tstar(0.0).is_err());
    }

    #[test]
    fn trade_log_counts_flips() {
        let s = SignalSeries::from_positions(vec![0, 1, 1, -1, -1, 0, 1]);
        assert_eq!(s.trade_count(), 3);
        assert_eq!(s.trades[0].close, Some(3));
        assert_eq!(s.trades[1], Trade { open: 3, close: Some(5), direction: -1 });
        assert_eq!(s.trades[2].close, None);
    }

    #[test]
    fn csv_export() {
        let s = SignalSeries::from_positions(vec![0, -1]);
        let mut buf = Vec::new();
        s.write_csv(&["d1".into(), "d2".into()], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "date,position\nd1,0\nd2,-1\n");
    }
}
