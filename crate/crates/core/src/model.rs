//! The state-space model of a pair.
//!
//! ```text
//! P_A,t   = γ·P_B,t + x_t + ε_t,        ε_t ~ N(0, σ_ε²)
//! x_{t+1} = f(x_t; θ) + g(x_t; θ)·η_t,  η_t ~ p(η)
//! ```
//!
//! The observation intercept is fixed at zero because it cannot be separated
//! from the drift intercept; the spread carries the pair's long-run level.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal, StudentsT};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::UniformStream;

/// Steps discarded before recording when no starting value is given.
pub const BURN_IN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftFamily {
    /// `θ₁ + θ₂·x`
    Linear,
    /// `θ₁ + θ₂·x + θ₃·x²`
    Quadratic,
    /// `θ₁ + θ₂/x + θ₃·x + θ₄·x²`
    AitSahalia,
}

impl DriftFamily {
    pub fn arity(self) -> usize {
        match self {
            DriftFamily::Linear => 2,
            DriftFamily::Quadratic => 3,
            DriftFamily::AitSahalia => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftSpec {
    family: DriftFamily,
    coefficients: Vec<f64>,
}

impl DriftSpec {
    pub fn new(family: DriftFamily, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != family.arity() {
            return Err(Error::invalid(
                "drift",
                format!(
                    "{family:?} takes {} coefficients, got {}",
                    family.arity(),
                    coefficients.len()
                ),
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("drift", "non-finite coefficient"));
        }
        Ok(Self {
            family,
            coefficients,
        })
    }

    pub fn linear(intercept: f64, slope: f64) -> Self {
        Self {
            family: DriftFamily::Linear,
            coefficients: vec![intercept, slope],
        }
    }

    pub fn family(&self) -> DriftFamily {
        self.family
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    /// Coefficient multiplying `x` (the mean-reversion slope).
    pub fn slope(&self) -> f64 {
        match self.family {
            DriftFamily::Linear | DriftFamily::Quadratic => self.coefficients[1],
            DriftFamily::AitSahalia => self.coefficients[2],
        }
    }

    /// Index of the slope inside [`DriftSpec::coefficients`].
    pub fn slope_index(&self) -> usize {
        match self.family {
            DriftFamily::Linear | DriftFamily::Quadratic => 1,
            DriftFamily::AitSahalia => 2,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> Result<f64> {
        let c = &self.coefficients;
        match self.family {
            DriftFamily::Linear => Ok(c[0] + c[1] * x),
            DriftFamily::Quadratic => Ok(c[0] + c[1] * x + c[2] * x * x),
            DriftFamily::AitSahalia => {
                if x == 0.0 {
                    return Err(Error::DriftSingularity);
                }
                Ok(c[0] + c[1] / x + c[2] * x + c[3] * x * x)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DiffusionFamily {
    /// `g = θ₀`
    Constant,
    /// `g = sqrt(θ₀ + Σᵢ θᵢ·x²_{t-i+1})`
    Arch { lags: usize },
    /// `g = (θ₀ + Σᵢ θᵢ·|x_{t-i+1}|^δ)^(1/δ)`
    Aparch { lags: usize, power: f64 },
}

impl DiffusionFamily {
    pub fn lags(self) -> usize {
        match self {
            DiffusionFamily::Constant => 0,
            DiffusionFamily::Arch { lags } | DiffusionFamily::Aparch { lags, .. } => lags,
        }
    }
}

/// Volatility function `g`.
///
/// For the lagged families the first lag is the current state `x_t`, so an
/// ARCH(1) diffusion reads `sqrt(θ₀ + θ₁·x_t²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSpec {
    family: DiffusionFamily,
    coefficients: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(family: DiffusionFamily, coefficients: Vec<f64>) -> Result<Self> {
        let expected = family.lags() + 1;
        if coefficients.len() != expected {
            return Err(Error::invalid(
                "diffusion",
                format!("{family:?} takes {expected} coefficients, got {}", coefficients.len()),
            ));
        }
        if let DiffusionFamily::Arch { lags: 0 } | DiffusionFamily::Aparch { lags: 0, .. } = family {
            return Err(Error::invalid("diffusion", "lag order must be positive"));
        }
        if let DiffusionFamily::Aparch { power, .. } = family {
            if !(power > 0.0 && power.is_finite()) {
                return Err(Error::invalid("diffusion", "APARCH power must be > 0"));
            }
        }
        if coefficients.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("diffusion", "coefficients must be finite and >= 0"));
        }
        Ok(Self {
            family,
            coefficients,
        })
    }

    pub fn constant(sigma: f64) -> Self {
        Self {
            family: DiffusionFamily::Constant,
            coefficients: vec![sigma],
        }
    }

    pub fn arch1(intercept: f64, slope: f64) -> Self {
        Self {
            family: DiffusionFamily::Arch { lags: 1 },
            coefficients: vec![intercept, slope],
        }
    }

    pub fn family(&self) -> DiffusionFamily {
        self.family
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn lags(&self) -> usize {
        self.family.lags()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, DiffusionFamily::Constant)
            || self.coefficients[1..].iter().all(|c| *c == 0.0)
    }

    /// `g` given the most recent states, newest first (`history[0] = x_t`).
    pub fn eval(&self, history: &[f64]) -> Result<f64> {
        let m = self.lags();
        if history.len() < m {
            return Err(Error::InsufficientHistory {
                needed: m,
                got: history.len(),
            });
        }
        Ok(self.eval_unchecked(history))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, history: &[f64]) -> f64 {
        let c = &self.coefficients;
        match self.family {
            DiffusionFamily::Constant => c[0],
            DiffusionFamily::Arch { lags } => {
                let mut v = c[0];
                for i in 0..lags {
                    v += c[i + 1] * history[i] * history[i];
                }
                v.sqrt()
            }
            DiffusionFamily::Aparch { lags, power } => {
                let mut v = c[0];
                for i in 0..lags {
                    v += c[i + 1] * history[i].abs().powf(power);
                }
                v.powf(1.0 / power)
            }
        }
    }

    /// `g` at state `x` with older lags taken from `older` (newest first).
    #[inline]
    pub(crate) fn eval_at(&self, x: f64, older: &[f64]) -> f64 {
        let c = &self.coefficients;
        match self.family {
            DiffusionFamily::Constant => c[0],
            DiffusionFamily::Arch { lags } => {
                let mut v = c[0] + c[1] * x * x;
                for i in 1..lags {
                    v += c[i + 1] * older[i - 1] * older[i - 1];
                }
                v.sqrt()
            }
            DiffusionFamily::Aparch { lags, power } => {
                let mut v = c[0] + c[1] * x.abs().powf(power);
                for i in 1..lags {
                    v += c[i + 1] * older[i - 1].abs().powf(power);
                }
                v.powf(1.0 / power)
            }
        }
    }

    /// Unconditional lag value used to pad the history before `t = m`.
    pub fn padding_value(&self) -> f64 {
        let c = &self.coefficients;
        match self.family {
            DiffusionFamily::Constant => 0.0,
            _ => {
                let persistence: f64 = c[1..].iter().sum();
                if persistence < 1.0 {
                    (c[0] / (1.0 - persistence)).sqrt()
                } else {
                    c[0].sqrt()
                }
            }
        }
    }
}

/// Innovation density `p(η)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSpec {
    Gaussian { mean: f64, std: f64 },
    StudentT { dof: f64 },
    /// Generalised error distribution with scale `α`, shape `β` and location `μ`.
    Ged { scale: f64, shape: f64, location: f64 },
}

impl NoiseSpec {
    pub fn standard_normal() -> Self {
        NoiseSpec::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian { mean, std } => {
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::invalid("noise", "Gaussian needs std > 0"));
                }
            }
            NoiseSpec::StudentT { dof } => {
                if !(dof > 2.0 && dof.is_finite()) {
                    return Err(Error::invalid("noise", "Student-t needs dof > 2"));
                }
            }
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => {
                if !(scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite())
                    || !location.is_finite()
                {
                    return Err(Error::invalid("noise", "GED needs scale > 0 and shape > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NoiseSpec::Gaussian { .. })
    }

    /// Point of symmetry of the density.
    pub fn center(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { mean, .. } => mean,
            NoiseSpec::StudentT { .. } => 0.0,
            NoiseSpec::Ged { location, .. } => location,
        }
    }

    pub fn mean(&self) -> f64 {
        self.center()
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { std, .. } => std * std,
            NoiseSpec::StudentT { dof } => dof / (dof - 2.0),
            NoiseSpec::Ged { scale, shape, .. } => {
                scale * scale * (ln_gamma(3.0 / shape) - ln_gamma(1.0 / shape)).exp()
            }
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn ln_pdf(&self, eta: f64) -> f64 {
        match *self {
            NoiseSpec::Gaussian { mean, std } => {
                let z = (eta - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            NoiseSpec::StudentT { dof } => {
                ln_gamma(0.5 * (dof + 1.0))
                    - ln_gamma(0.5 * dof)
                    - 0.5 * (dof * std::f64::consts::PI).ln()
                    - 0.5 * (dof + 1.0) * (eta * eta / dof).ln_1p()
            }
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => {
                (shape / (2.0 * scale)).ln()
                    - ln_gamma(1.0 / shape)
                    - ((eta - location).abs() / scale).powf(shape)
            }
        }
    }

    pub fn pdf(&self, eta: f64) -> f64 {
        match *self {
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => {
                shape / (2.0 * scale * gamma(1.0 / shape))
                    * (-((eta - location).abs() / scale).powf(shape)).exp()
            }
            _ => self.ln_pdf(eta).exp(),
        }
    }

    /// Inverse CDF, used to turn one uniform draw into one innovation.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            NoiseSpec::Gaussian { mean, std } => Normal::new(mean, std)
                .expect("validated")
                .inverse_cdf(u),
            NoiseSpec::StudentT { dof } => StudentsT::new(0.0, 1.0, dof)
                .expect("validated")
                .inverse_cdf(u),
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => {
                // |η - μ|/α raised to β is Gamma(1/β, 1)
                let q = (2.0 * u - 1.0).abs();
                let g = Gamma::new(1.0 / shape, 1.0).expect("validated");
                let y = g.inverse_cdf(q).powf(1.0 / shape);
                if u >= 0.5 {
                    location + scale * y
                } else {
                    location - scale * y
                }
            }
        }
    }

    /// Family name and parameter vector, as written in model files.
    pub fn to_parts(&self) -> (&'static str, Vec<f64>) {
        match *self {
            NoiseSpec::Gaussian { mean, std } => ("gaussian", vec![mean, std]),
            NoiseSpec::StudentT { dof } => ("student_t", vec![dof]),
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => ("ged", vec![scale, shape, location]),
        }
    }

    pub fn from_parts(family: &str, params: &[f64]) -> Result<Self> {
        let spec = match (family, params) {
            ("gaussian", [mean, std]) => NoiseSpec::Gaussian {
                mean: *mean,
                std: *std,
            },
            ("gaussian", []) => NoiseSpec::standard_normal(),
            ("student_t", [dof]) => NoiseSpec::StudentT { dof: *dof },
            ("ged", [scale, shape, location]) => NoiseSpec::Ged {
                scale: *scale,
                shape: *shape,
                location: *location,
            },
            _ => {
                return Err(Error::invalid(
                    "noise",
                    format!("unknown family `{family}` with {} parameters", params.len()),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut f64> {
        match self {
            NoiseSpec::Gaussian { mean, std } => vec![mean, std],
            NoiseSpec::StudentT { dof } => vec![dof],
            NoiseSpec::Ged {
                scale,
                shape,
                location,
            } => vec![scale, shape, location],
        }
    }
}

/// Full parameterisation `ψ = (γ, θ, σ_ε²)` plus the family choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub noise: NoiseSpec,
    pub hedge_ratio: f64,
    pub obs_noise_var: f64,
}

impl ModelSpec {
    pub fn new(
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        noise: NoiseSpec,
        hedge_ratio: f64,
        obs_noise_var: f64,
    ) -> Result<Self> {
        let spec = Self {
            drift,
            diffusion,
            noise,
            hedge_ratio,
            obs_noise_var,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spread-only model (no observation equation), as used for simulation.
    pub fn spread_only(drift: DriftSpec, diffusion: DiffusionSpec, noise: NoiseSpec) -> Self {
        Self {
            drift,
            diffusion,
            noise,
            hedge_ratio: 0.0,
            obs_noise_var: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        DriftSpec::new(self.drift.family, self.drift.coefficients.clone())?;
        DiffusionSpec::new(self.diffusion.family, self.diffusion.coefficients.clone())?;
        self.noise.validate()?;
        if !self.hedge_ratio.is_finite() {
            return Err(Error::invalid("model", "hedge ratio must be finite"));
        }
        if !(self.obs_noise_var > 0.0 && self.obs_noise_var.is_finite()) {
            return Err(Error::invalid("model", "observation noise variance must be > 0"));
        }
        Ok(())
    }

    /// Closed-form stationary mean and standard deviation of the spread,
    /// available for linear drift with constant or ARCH diffusion.
    pub fn stationary_moments(&self) -> Option<(f64, f64)> {
        if self.drift.family != DriftFamily::Linear {
            return None;
        }
        let (c, a) = (self.drift.coefficients[0], self.drift.slope());
        if a.abs() >= 1.0 {
            return None;
        }
        let mean = c / (1.0 - a);
        let v_eta = self.noise.variance();
        match self.diffusion.family {
            DiffusionFamily::Constant => {
                let s = self.diffusion.coefficients[0];
                let mean = (c + s * self.noise.mean()) / (1.0 - a);
                let var = s * s * v_eta / (1.0 - a * a);
                (var > 0.0).then(|| (mean, var.sqrt()))
            }
            DiffusionFamily::Arch { .. } if self.noise.mean() == 0.0 => {
                let k = &self.diffusion.coefficients;
                let persistence: f64 = k[1..].iter().sum();
                let denom = 1.0 - a * a - v_eta * persistence;
                if denom <= 0.0 {
                    return None;
                }
                let second = (c * c + 2.0 * a * c * mean + v_eta * k[0]) / denom;
                let var = second - mean * mean;
                (var > 0.0).then(|| (mean, var.sqrt()))
            }
            _ => None,
        }
    }

    /// Stationary mean and standard deviation, by closed form when available
    /// and otherwise from one long deterministic simulation.
    pub fn spread_moments(&self) -> Result<(f64, f64)> {
        if let Some(m) = self.stationary_moments() {
            return Ok(m);
        }
        let path = simulate_spread(self, 200_000, None, 0x5eed_5eed)?;
        let n = path.values.len() as f64;
        let mean = path.values.iter().sum::<f64>() / n;
        let var = path.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance("simulated spread is constant".into()));
        }
        Ok((mean, var.sqrt()))
    }

    fn burn_in_start(&self) -> f64 {
        match self.stationary_moments() {
            Some((mean, _)) => mean,
            None if self.drift.family == DriftFamily::AitSahalia => 1.0,
            None => 0.0,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Flat key-value layout of a [`ModelSpec`] on disk.
///
/// ```toml
/// drift = "linear"                    # linear | quadratic | ait_sahalia
/// drift_coefficients = [0.0, 0.959]
/// diffusion = "constant"              # constant | arch | aparch
/// diffusion_coefficients = [0.0049]   # [θ₀, θ₁, …, θ_m]
/// diffusion_lags = 1                  # arch / aparch only
/// diffusion_power = 2.0               # aparch only
/// noise = "gaussian"                  # gaussian | student_t | ged
/// noise_params = [0.0, 1.0]           # [μ, σ] | [ν] | [α, β, μ]
/// hedge_ratio = 1.98
/// obs_noise_var = 0.012
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub drift: DriftFamily,
    pub drift_coefficients: Vec<f64>,
    pub diffusion: String,
    pub diffusion_coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_lags: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_power: Option<f64>,
    pub noise: String,
    #[serde(default)]
    pub noise_params: Vec<f64>,
    #[serde(default)]
    pub hedge_ratio: f64,
    pub obs_noise_var: f64,
}

impl TryFrom<ModelFile> for ModelSpec {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let lags = f
            .diffusion_lags
            .unwrap_or(f.diffusion_coefficients.len().saturating_sub(1));
        let family = match f.diffusion.as_str() {
            "constant" => DiffusionFamily::Constant,
            "arch" => DiffusionFamily::Arch { lags },
            "aparch" => DiffusionFamily::Aparch {
                lags,
                power: f
                    .diffusion_power
                    .ok_or_else(|| Error::invalid("diffusion", "aparch needs diffusion_power"))?,
            },
            other => return Err(Error::invalid("diffusion", format!("unknown family `{other}`"))),
        };
        ModelSpec::new(
            DriftSpec::new(f.drift, f.drift_coefficients)?,
            DiffusionSpec::new(family, f.diffusion_coefficients)?,
            NoiseSpec::from_parts(&f.noise, &f.noise_params)?,
            f.hedge_ratio,
            f.obs_noise_var,
        )
    }
}

impl From<ModelSpec> for ModelFile {
    fn from(m: ModelSpec) -> Self {
        let (diffusion, lags, power) = match m.diffusion.family {
            DiffusionFamily::Constant => ("constant", None, None),
            DiffusionFamily::Arch { lags } => ("arch", Some(lags), None),
            DiffusionFamily::Aparch { lags, power } => ("aparch", Some(lags), Some(power)),
        };
        let (noise, noise_params) = m.noise.to_parts();
        ModelFile {
            drift: m.drift.family,
            drift_coefficients: m.drift.coefficients,
            diffusion: diffusion.into(),
            diffusion_coefficients: m.diffusion.coefficients,
            diffusion_lags: lags,
            diffusion_power: power,
            noise: noise.into(),
            noise_params,
            hedge_ratio: m.hedge_ratio,
            obs_noise_var: m.obs_noise_var,
        }
    }
}

/// The four benchmark spread dynamics used for rule optimisation studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkModel {
    /// `x' = 0.9590·x + 0.0049·η`, Gaussian.
    Linear,
    /// `x' = 0.9·x + 0.5590·x² + 0.0049·η`, Gaussian.
    Quadratic,
    /// `x' = 0.9590·x + sqrt(0.00089 + 0.08·x²)·η`, Gaussian.
    Arch,
    /// `x' = 0.9590·x + (0.0049/√3)·η`, `η ~ t₃`.
    HeavyTailed,
}

impl BenchmarkModel {
    pub const ALL: [BenchmarkModel; 4] = [
        BenchmarkModel::Linear,
        BenchmarkModel::Quadratic,
        BenchmarkModel::Arch,
        BenchmarkModel::HeavyTailed,
    ];

    pub fn spec(self) -> ModelSpec {
        let gaussian = NoiseSpec::standard_normal();
        match self {
            BenchmarkModel::Linear => ModelSpec::spread_only(
                DriftSpec::linear(0.0, 0.9590),
                DiffusionSpec::constant(0.0049),
                gaussian,
            ),
            BenchmarkModel::Quadratic => ModelSpec::spread_only(
                DriftSpec {
                    family: DriftFamily::Quadratic,
                    coefficients: vec![0.0, 0.9, 0.5590],
                },
                DiffusionSpec::constant(0.0049),
                gaussian,
            ),
            BenchmarkModel::Arch => ModelSpec::spread_only(
                DriftSpec::linear(0.0, 0.9590),
                DiffusionSpec::arch1(0.00089, 0.08),
                gaussian,
            ),
            BenchmarkModel::HeavyTailed => ModelSpec::spread_only(
                DriftSpec::linear(0.0, 0.9590),
                DiffusionSpec::constant(0.0049 / 3f64.sqrt()),
                NoiseSpec::StudentT { dof: 3.0 },
            ),
        }
    }

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(n: usize) -> Option<Self> {
        Self::ALL.get(n.checked_sub(1)?).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadPath {
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Evaluates `f` at a point.
pub fn eval_drift(spec: &DriftSpec, x: f64) -> Result<f64> {
    spec.eval(x)
}

/// Evaluates `g` given recent states, newest first.
pub fn eval_diffusion(spec: &DiffusionSpec, history: &[f64]) -> Result<f64> {
    spec.eval(history)
}

pub fn noise_pdf(spec: &NoiseSpec, eta: f64) -> f64 {
    spec.pdf(eta)
}

/// Simulates `horizon` states of the spread.
///
/// With `x0 = Some(v)` the path starts at `v` (the first recorded value);
/// otherwise it starts near the stationary mean and runs [`BURN_IN`] unrecorded
/// steps first. Innovation `t` is the `t`-th draw of the stream keyed by
/// `seed`, pushed through the noise quantile function.
pub fn simulate_spread(
    model: &ModelSpec,
    horizon: usize,
    x0: Option<f64>,
    seed: u64,
) -> Result<SpreadPath> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let mut stream = UniformStream::new(seed);
    let noise = model.noise;
    let values = simulate_with(model, horizon, x0, |_| noise.quantile(stream.next_uniform()))?;
    Ok(SpreadPath { values, seed })
}

/// Simulation driven by explicit innovations `innovation(step)`.
///
/// Steps are counted from the first (possibly burn-in) transition.
pub fn simulate_with(
    model: &ModelSpec,
    horizon: usize,
    x0: Option<f64>,
    mut innovation: impl FnMut(usize) -> f64,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let (start, burn) = match x0 {
        Some(v) => (v, 0),
        None => (model.burn_in_start(), BURN_IN),
    };
    let lags = model.diffusion.lags();
    // newest first; history[0] is the current state
    let mut history = vec![model.diffusion.padding_value(); lags.max(1)];
    history[0] = start;
    let mut out = Vec::with_capacity(horizon);
    let mut x = start;
    if burn == 0 {
        out.push(x);
    }
    let total = burn + horizon - usize::from(burn == 0);
    for step in 0..total {
        let f = model.drift.eval(x)?;
        let g = model.diffusion.eval_unchecked(&history);
        x = f + g * innovation(step);
        if !x.is_finite() {
            return Err(Error::NonFinite { step });
        }
        if lags > 1 {
            history.rotate_right(1);
        }
        history[0] = x;
        if step >= burn {
            out.push(x);
        }
    }
    debug_assert_eq!(out.len(), horizon);
    Ok(out)
}
