//! Run configuration: one flat TOML table, with `key=value` overrides.
//!
//! ```toml
//! mode = "application"          # application | simulation
//! seed = 7
//! split_date = "2017-12-29"     # last in-sample date
//! strategy = "C"
//! criterion = "sr"              # cr | sr | calmar
//! paths = 2000
//! horizon = 1000
//! cost_per_asset = 0.002
//! # model template, same keys as a model file
//! drift = "linear"
//! drift_coefficients = [0.0, 0.9]
//! diffusion = "constant"
//! diffusion_coefficients = [0.03]
//! noise = "gaussian"
//! noise_params = [0.0, 1.0]
//! hedge_ratio = 1.0
//! obs_noise_var = 0.01
//! fixed = []                    # parameter names held at their template value
//! ```

use serde::{Deserialize, Serialize};

use crate::backtest::{CostModel, SharpeMode};
use crate::error::{Error, Result};
use crate::estimation::{FitConfig, FreeMask};
use crate::filter::FilterConfig;
use crate::model::{DriftFamily, ModelFile, ModelSpec};
use crate::optimizer::{Criterion, GridSpec};
use crate::qmc::QmcConfig;
use crate::strategies::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulation,
    Application,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub split_date: Option<String>,

    pub strategy: Strategy,
    pub criterion: Criterion,
    pub paths: usize,
    pub horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub grid_step: f64,
    pub mirrored: bool,

    pub cost_per_asset: f64,
    /// Defaults to 0 in simulation mode and 0.02 in application mode.
    pub risk_free: Option<f64>,

    pub qmc_points: usize,
    pub search_points: usize,
    pub final_points: usize,
    pub max_components: usize,
    pub noise_components: usize,
    pub halton_bases: [u64; 2],
    pub halton_skip: u64,
    pub moment_match: bool,
    pub restarts: usize,
    pub max_iterations: usize,

    pub drift: DriftFamily,
    pub drift_coefficients: Vec<f64>,
    pub diffusion: String,
    pub diffusion_coefficients: Vec<f64>,
    pub diffusion_lags: Option<usize>,
    pub diffusion_power: Option<f64>,
    pub noise: String,
    pub noise_params: Vec<f64>,
    pub hedge_ratio: f64,
    pub obs_noise_var: f64,
    /// Parameters held fixed during estimation.
    pub fixed: Vec<String>,
    /// Parameters estimated in addition to the defaults (e.g. `noise[0]`).
    pub free: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            mode: Mode::Application,
            seed: 0,
            workers: 0,
            split_date: None,
            strategy: Strategy::C,
            criterion: Criterion::Sr,
            paths: 2000,
            horizon: 1000,
            u_min: 0.1,
            u_max: 2.5,
            l_min: -2.5,
            l_max: -0.1,
            grid_step: 0.1,
            mirrored: false,
            cost_per_asset: 0.002,
            risk_free: None,
            qmc_points: QmcConfig::DEFAULT_POINTS,
            search_points: fit.search_points,
            final_points: fit.final_points,
            max_components: fit.max_components,
            noise_components: 0,
            halton_bases: [2, 3],
            halton_skip: QmcConfig::DEFAULT_SKIP,
            moment_match: true,
            restarts: fit.restarts,
            max_iterations: fit.max_iterations,
            drift: DriftFamily::Linear,
            drift_coefficients: vec![0.0, 0.9],
            diffusion: "constant".into(),
            diffusion_coefficients: vec![0.03],
            diffusion_lags: None,
            diffusion_power: None,
            noise: "gaussian".into(),
            noise_params: vec![0.0, 1.0],
            hedge_ratio: 1.0,
            obs_noise_var: 0.01,
            fixed: Vec::new(),
            free: Vec::new(),
        }
    }
}

/// Splits `key=value`; the value is parsed as a TOML value, falling back to
/// a bare string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(Error::Config(format!("override {text:?} has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

impl RunConfig {
    /// Parses a config file, applies overrides, and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        let cfg: RunConfig = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.grid().validate()?;
        self.costs().validate()?;
        self.filter().validate()?;
        self.free_mask()?;
        if let Some(d) = &self.split_date {
            crate::data::parse_date(d)?;
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec> {
        ModelSpec::try_from(ModelFile {
            drift: self.drift,
            drift_coefficients: self.drift_coefficients.clone(),
            diffusion: self.diffusion.clone(),
            diffusion_coefficients: self.diffusion_coefficients.clone(),
            diffusion_lags: self.diffusion_lags,
            diffusion_power: self.diffusion_power,
            noise: self.noise.clone(),
            noise_params: self.noise_params.clone(),
            hedge_ratio: self.hedge_ratio,
            obs_noise_var: self.obs_noise_var,
        })
    }

    pub fn free_mask(&self) -> Result<FreeMask> {
        let model = self.model()?;
        let mut mask = FreeMask::default_for(&model);
        for name in &self.free {
            mask.set(&model, name, true)?;
        }
        for name in &self.fixed {
            mask.set(&model, name, false)?;
        }
        Ok(mask)
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        if !(step > 0.0) || !(hi >= lo) {
            return Vec::new();
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        // round to 12 decimals so 0.1-steps print as written
        (0..n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect()
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            u_values: Self::axis(self.u_min, self.u_max, self.grid_step),
            l_values: Self::axis(self.l_min, self.l_max, self.grid_step),
            criterion: self.criterion,
            paths: self.paths,
            horizon: self.horizon,
            mirrored: self.mirrored,
        }
    }

    pub fn sharpe_mode(&self) -> SharpeMode {
        match self.mode {
            Mode::Simulation => SharpeMode::Simulation,
            Mode::Application => SharpeMode::Application,
        }
    }

    pub fn costs(&self) -> CostModel {
        CostModel {
            per_asset: self.cost_per_asset,
            risk_free: self.risk_free.unwrap_or(match self.mode {
                Mode::Simulation => 0.0,
                Mode::Application => 0.02,
            }),
        }
    }

    pub fn qmc(&self, points: usize) -> QmcConfig {
        QmcConfig {
            points,
            bases: (self.halton_bases[0], self.halton_bases[1]),
            skip: self.halton_skip,
            moment_match: self.moment_match,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            qmc: self.qmc(self.qmc_points),
            max_components: self.max_components,
            noise_components: self.noise_components,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            search_points: self.search_points,
            final_points: self.final_points,
            max_components: self.max_components,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}
