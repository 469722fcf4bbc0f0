//! Maximum-likelihood estimation of the model parameters.
//!
//! The parameter vector is laid out as
//! `[γ, drift coefficients…, diffusion coefficients…, noise parameters…, σ_ε²]`.
//! Free parameters are mapped to the real line by a logistic box transform
//! and the negative filter log-likelihood is minimised by Nelder-Mead from
//! the OLS start and from jittered restarts. The search runs on a coarse
//! point set; the surviving candidates are rescored on a finer one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_filter_with, CloudBank, FilterConfig, InitialSpread};
use crate::model::{DiffusionFamily, DriftFamily, ModelSpec, NoiseSpec};
use crate::optim::{Bounds, NelderMead};
use crate::parallel;
use crate::rng::{derive_seed, UniformStream};

/// Below this many observations the fit still runs but is flagged.
pub const MIN_OBSERVATIONS: usize = 30;

/// Least-squares starting point for the hedge ratio and noise split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsInit {
    pub hedge_ratio: f64,
    pub intercept: f64,
    /// Half the residual variance.
    pub obs_noise_var: f64,
    /// The other half, attributed to the spread.
    pub spread_var: f64,
    /// Lag-one autocorrelation of the residuals, clipped to ±0.99.
    pub ar_slope: f64,
    /// `P_A − γ₀·P_B` (the intercept stays in the spread).
    pub residuals: Vec<f64>,
    pub low_sample: bool,
}

/// Regresses `P_A` on `P_B` with an intercept.
pub fn ols_init(pa: &[f64], pb: &[f64]) -> Result<OlsInit> {
    if pa.len() != pb.len() || pa.len() < 3 {
        return Err(Error::InsufficientHistory {
            needed: 3,
            got: pa.len().min(pb.len()),
        });
    }
    let n = pa.len() as f64;
    let (ma, mb) = (pa.iter().sum::<f64>() / n, pb.iter().sum::<f64>() / n);
    let (mut sbb, mut sab) = (0.0, 0.0);
    for (a, b) in pa.iter().zip(pb) {
        sbb += (b - mb) * (b - mb);
        sab += (a - ma) * (b - mb);
    }
    if !(sbb > 1e-12 * mb.abs().max(1.0).powi(2) * n) {
        return Err(Error::ZeroVariance("second price series is constant".into()));
    }
    let gamma = sab / sbb;
    let intercept = ma - gamma * mb;
    let residuals: Vec<f64> = pa.iter().zip(pb).map(|(a, b)| a - gamma * b).collect();
    let var = residuals.iter().map(|e| (e - intercept).powi(2)).sum::<f64>() / (n - 1.0);
    let ar_slope = if var > 0.0 {
        let cov: f64 = residuals
            .windows(2)
            .map(|w| (w[0] - intercept) * (w[1] - intercept))
            .sum::<f64>()
            / (n - 1.0);
        (cov / var).clamp(-0.99, 0.99)
    } else {
        0.0
    };
    let low_sample = pa.len() < MIN_OBSERVATIONS;
    if low_sample {
        log::warn!("only {} observations; estimates are unreliable", pa.len());
    }
    Ok(OlsInit {
        hedge_ratio: gamma,
        intercept,
        obs_noise_var: 0.5 * var,
        spread_var: 0.5 * var,
        ar_slope,
        residuals,
        low_sample,
    })
}

/// Role of one entry of the parameter vector; decides its default bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Hedge,
    Slope,
    Coefficient,
    VarianceLike,
    Dof,
    Location,
    Shape,
}

fn roles(model: &ModelSpec) -> Vec<Role> {
    let mut r = vec![Role::Hedge];
    let slope = model.drift.slope_index();
    r.extend((0..model.drift.coefficients().len()).map(|i| if i == slope { Role::Slope } else { Role::Coefficient }));
    r.extend(model.diffusion.coefficients().iter().map(|_| Role::VarianceLike));
    r.extend(match model.noise {
        NoiseSpec::Gaussian { .. } => vec![Role::Location, Role::VarianceLike],
        NoiseSpec::StudentT { .. } => vec![Role::Dof],
        NoiseSpec::Ged { .. } => vec![Role::VarianceLike, Role::Shape, Role::Location],
    });
    r.push(Role::VarianceLike);
    r
}

fn default_bounds(role: Role) -> Bounds {
    match role {
        Role::Hedge | Role::Coefficient | Role::Location => Bounds::new(-10.0, 10.0),
        Role::Slope => Bounds::new(-0.999, 0.999),
        Role::VarianceLike => Bounds::new(1e-10, 10.0),
        Role::Dof => Bounds::new(2.01, 200.0),
        Role::Shape => Bounds::new(0.1, 10.0),
    }
}

/// Human-readable names of the parameter vector entries.
pub fn parameter_names(model: &ModelSpec) -> Vec<String> {
    let mut names = vec!["hedge_ratio".to_string()];
    names.extend((0..model.drift.coefficients().len()).map(|i| format!("drift[{i}]")));
    names.extend((0..model.diffusion.coefficients().len()).map(|i| format!("diffusion[{i}]")));
    names.extend((0..model.noise.to_parts().1.len()).map(|i| format!("noise[{i}]")));
    names.push("obs_noise_var".into());
    names
}

pub fn get_params(model: &ModelSpec) -> Vec<f64> {
    let mut v = vec![model.hedge_ratio];
    v.extend_from_slice(model.drift.coefficients());
    v.extend_from_slice(model.diffusion.coefficients());
    v.extend(model.noise.to_parts().1);
    v.push(model.obs_noise_var);
    v
}

/// Writes `params` into a copy of `model` (no validation).
pub fn set_params(model: &ModelSpec, params: &[f64]) -> ModelSpec {
    let mut m = model.clone();
    let mut it = params.iter().copied();
    m.hedge_ratio = it.next().expect("parameter count");
    for c in m.drift.coefficients_mut() {
        *c = it.next().expect("parameter count");
    }
    for c in m.diffusion.coefficients_mut() {
        *c = it.next().expect("parameter count");
    }
    for p in m.noise.params_mut() {
        *p = it.next().expect("parameter count");
    }
    m.obs_noise_var = it.next().expect("parameter count");
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Points per component while searching.
    pub search_points: usize,
    /// Points per component when rescoring candidates.
    pub final_points: usize,
    pub max_components: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Simplex diameter (transformed coordinates) at which a restart stops.
    pub x_tolerance: f64,
    /// Initial simplex step in transformed coordinates.
    pub initial_step: f64,
    /// Standard deviation of restart jitter in transformed coordinates.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            search_points: 64,
            final_points: 256,
            max_components: crate::mixture::DEFAULT_MAX_COMPONENTS,
            restarts: 3,
            max_iterations: 500,
            x_tolerance: 1e-6,
            initial_step: 0.5,
            jitter: 0.3,
            seed: 0,
        }
    }
}

/// Which parameters are estimated, and within which box.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeMask {
    pub free: Vec<bool>,
    pub bounds: Vec<Bounds>,
}

impl FreeMask {
    /// Everything free except the noise parameters (whose scale is not
    /// identified separately from the diffusion).
    pub fn default_for(model: &ModelSpec) -> Self {
        let roles = roles(model);
        let n_noise = model.noise.to_parts().1.len();
        let noise_start = roles.len() - 1 - n_noise;
        Self {
            free: (0..roles.len()).map(|i| !(noise_start..noise_start + n_noise).contains(&i)).collect(),
            bounds: roles.into_iter().map(default_bounds).collect(),
        }
    }

    pub fn none(model: &ModelSpec) -> Self {
        let mut m = Self::default_for(model);
        m.free.iter_mut().for_each(|f| *f = false);
        m
    }

    /// Fixes or frees parameters by name (see [`parameter_names`]).
    pub fn set(&mut self, model: &ModelSpec, name: &str, free: bool) -> Result<()> {
        let names = parameter_names(model);
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid("free mask", format!("unknown parameter {name:?}; expected one of {names:?}")))?;
        self.free[i] = free;
        Ok(())
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub search_loglik: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    /// Log-likelihood of `model` at the fine point set.
    pub loglik: f64,
    /// Log-likelihood of the starting point at the fine point set.
    pub initial_loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Some restart improved on the starting point.
    pub improved: bool,
    pub restarts: Vec<RestartSummary>,
    pub parameter_names: Vec<String>,
    pub free: Vec<bool>,
    pub initial_spread: InitialSpread,
    pub observations: usize,
    pub low_sample: bool,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Prior of `x₀` for a candidate hedge ratio: centred on the first observed
/// spread, with the OLS residual variance.
pub fn initial_spread(model: &ModelSpec, pa: &[f64], pb: &[f64], ols: &OlsInit) -> InitialSpread {
    InitialSpread {
        mean: pa[0] - model.hedge_ratio * pb[0],
        var: (ols.obs_noise_var + ols.spread_var).max(1e-10),
    }
}

/// Starting point: the template, with free parameters that have a natural
/// least-squares value replaced by it.
pub fn starting_model(template: &ModelSpec, mask: &FreeMask, ols: &OlsInit) -> ModelSpec {
    let mut start = get_params(template);
    let mut guess = start.clone();
    let a = ols.ar_slope;
    let vx = ols.spread_var.max(1e-10);
    let innovation_var = vx * (1.0 - a * a) / template.noise.variance();
    guess[0] = ols.hedge_ratio;
    let d0 = 1;
    let nd = template.drift.coefficients().len();
    match template.drift.family() {
        DriftFamily::Linear => {
            guess[d0] = ols.intercept * (1.0 - a);
            guess[d0 + 1] = a;
        }
        DriftFamily::Quadratic => {
            guess[d0] = ols.intercept * (1.0 - a);
            guess[d0 + 1] = a;
            guess[d0 + 2] = 0.0;
        }
        DriftFamily::AitSahalia => guess[d0 + 2] = a,
    }
    let g0 = d0 + nd;
    match template.diffusion.family() {
        DiffusionFamily::Constant => guess[g0] = innovation_var.sqrt(),
        DiffusionFamily::Arch { lags } => {
            // half the innovation variance from the intercept, half from lags
            let second = vx + ols.intercept * ols.intercept;
            guess[g0] = 0.5 * innovation_var;
            for i in 0..lags {
                guess[g0 + 1 + i] = 0.5 * innovation_var / second / lags as f64;
            }
        }
        DiffusionFamily::Aparch { .. } => {}
    }
    let last = guess.len() - 1;
    guess[last] = ols.obs_noise_var.max(1e-10);
    for i in 0..start.len() {
        if mask.free[i] {
            let b = mask.bounds[i];
            // pull guesses into the box
            start[i] = if b.contains(guess[i]) { guess[i] } else { b.to_bounded(b.to_unbounded(guess[i])) };
        }
    }
    set_params(template, &start)
}

struct Objective<'a> {
    template: &'a ModelSpec,
    mask: &'a FreeMask,
    index: Vec<usize>,
    pa: &'a [f64],
    pb: &'a [f64],
    ols: &'a OlsInit,
    filter: FilterConfig,
    noise: Option<crate::mixture::GaussianMixture>,
    bank: CloudBank,
}

impl<'a> Objective<'a> {
    fn new(
        template: &'a ModelSpec,
        mask: &'a FreeMask,
        pa: &'a [f64],
        pb: &'a [f64],
        ols: &'a OlsInit,
        points: usize,
        max_components: usize,
    ) -> Result<Self> {
        let filter = FilterConfig {
            max_components,
            ..FilterConfig::with_points(points)
        };
        filter.validate()?;
        let noise_free = {
            let n = template.noise.to_parts().1.len();
            let end = mask.free.len() - 1;
            mask.free[end - n..end].iter().any(|f| *f)
        };
        let noise = if noise_free {
            None
        } else {
            Some(filter.noise_mixture(template)?)
        };
        let slots = match &noise {
            Some(n) if n.len() == 1 => 1,
            Some(n) => max_components * n.len(),
            None => 0,
        };
        let bank = CloudBank::new(&filter.qmc, pa.len(), slots);
        Ok(Self {
            template,
            mask,
            index: (0..mask.free.len()).filter(|&i| mask.free[i]).collect(),
            pa,
            pb,
            ols,
            filter,
            noise,
            bank,
        })
    }

    fn model_at(&self, base: &[f64], z: &[f64]) -> ModelSpec {
        let mut p = base.to_vec();
        for (k, &i) in self.index.iter().enumerate() {
            p[i] = self.mask.bounds[i].to_bounded(z[k]);
        }
        set_params(self.template, &p)
    }

    fn loglik(&self, model: &ModelSpec) -> f64 {
        let eval = || -> Result<f64> {
            model.validate()?;
            let init = initial_spread(model, self.pa, self.pb, self.ols);
            let fitted;
            let noise = match &self.noise {
                Some(n) => n,
                None => {
                    fitted = self.filter.noise_mixture(model)?;
                    &fitted
                }
            };
            Ok(run_filter_with(model, self.pa, self.pb, init, noise, self.filter.max_components, &self.bank)?.total_loglik)
        };
        match eval() {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Standard normal draws for restart jitter.
fn jitter(seed: u64, restart: usize, n: usize) -> Vec<f64> {
    let mut s = UniformStream::new(derive_seed(seed, "restart", restart as u64));
    (0..n)
        .map(|_| {
            let (u1, u2) = (s.next_uniform(), s.next_uniform());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// Fits the free parameters of `template` to the price series.
pub fn fit_mle(
    template: &ModelSpec,
    mask: &FreeMask,
    pa: &[f64],
    pb: &[f64],
    config: &FitConfig,
) -> Result<FitResult> {
    template.validate()?;
    let n_params = get_params(template).len();
    if mask.free.len() != n_params || mask.bounds.len() != n_params {
        return Err(Error::invalid("free mask", format!("expected {n_params} entries")));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("restarts", "need at least one"));
    }
    let ols = ols_init(pa, pb)?;
    let start = starting_model(template, mask, &ols);
    start.validate()?;
    let base = get_params(&start);
    let search = Objective::new(template, mask, pa, pb, &ols, config.search_points, config.max_components)?;
    let fine = Objective::new(template, mask, pa, pb, &ols, config.final_points, config.max_components)?;
    let initial_loglik = fine.loglik(&start);
    if !initial_loglik.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let z0: Vec<f64> = search.index.iter().map(|&i| mask.bounds[i].to_unbounded(base[i])).collect();
    let nm = NelderMead {
        max_iterations: config.max_iterations,
        x_tolerance: config.x_tolerance,
        f_tolerance: 0.0,
        initial_step: config.initial_step,
    };
    let runs = parallel::map_indexed(config.restarts, |r| {
        let mut z = z0.clone();
        if r > 0 {
            for (zi, e) in z.iter_mut().zip(jitter(config.seed, r, z0.len())) {
                *zi += config.jitter * e;
            }
        }
        let min = nm.minimize(&z, |z| -search.loglik(&search.model_at(&base, z)));
        let model = search.model_at(&base, &min.x);
        let loglik = fine.loglik(&model);
        (
            model,
            RestartSummary {
                index: r,
                search_loglik: -min.value,
                loglik,
                iterations: min.iterations,
                evaluations: min.evaluations,
                converged: min.converged,
            },
        )
    });
    // deterministic max; ties keep the lower restart index
    let mut best: Option<usize> = None;
    for (k, (_, s)) in runs.iter().enumerate() {
        if s.loglik.is_finite() && best.is_none_or(|b| s.loglik > runs[b].1.loglik) {
            best = Some(k);
        }
    }
    let iterations = runs.iter().map(|(_, s)| s.iterations).sum();
    let evaluations = runs.iter().map(|(_, s)| s.evaluations).sum();
    let restarts: Vec<RestartSummary> = runs.iter().map(|(_, s)| s.clone()).collect();
    let (model, loglik, improved, converged) = match best {
        Some(b) if runs[b].1.loglik >= initial_loglik => {
            let (m, s) = &runs[b];
            (m.clone(), s.loglik, true, s.converged)
        }
        _ => {
            if mask.free_count() > 0 {
                log::warn!("no restart improved on the starting point");
            }
            (start.clone(), initial_loglik, false, mask.free_count() == 0)
        }
    };
    Ok(FitResult {
        initial_spread: initial_spread(&model, pa, pb, &ols),
        model,
        loglik,
        initial_loglik,
        iterations,
        evaluations,
        converged,
        improved,
        restarts,
        parameter_names: parameter_names(template),
        free: mask.free.clone(),
        observations: pa.len(),
        low_sample: ols.low_sample,
    })
}
