//! Quasi Monte Carlo Kalman filter.
//!
//! The posterior over the spread is a Gaussian mixture. Each step pairs every
//! posterior component with every component of the fitted noise mixture,
//! predicts with moments evaluated on a Box-Muller Halton cloud, updates with a
//! Kalman gain built from cloud moments of the synthetic observation
//! `x⁽ᵍ⁾ + γ·P_B`, reweights by the predictive density, and finally merges the
//! result back down to at most `max_components` components.
//!
//! Row 0 of every output series is the prior `N(μ, Σ)` of `x₀`; the recursion
//! first predicts `x₁` and updates on the observation at `t = 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{self, Component, GaussianMixture};
use crate::model::ModelSpec;
use crate::qmc::QmcConfig;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Floor applied to predicted and posterior variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Cloud stages: prediction from the posterior, update from the prior.
const STAGE_PREDICT: u8 = 0;
const STAGE_UPDATE: u8 = 1;

/// Largest precomputed cloud bank, in f64 values (64 MiB).
const BANK_BUDGET: usize = 8 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub qmc: QmcConfig,
    /// Posterior components kept after each step.
    pub max_components: usize,
    /// Components of the noise approximation; 0 picks the family default.
    pub noise_components: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            qmc: QmcConfig::default(),
            max_components: mixture::DEFAULT_MAX_COMPONENTS,
            noise_components: 0,
        }
    }
}

impl FilterConfig {
    pub fn with_points(points: usize) -> Self {
        Self {
            qmc: QmcConfig::with_points(points),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.qmc.validate()?;
        if self.max_components == 0 {
            return Err(Error::invalid("max components", "must be at least 1"));
        }
        Ok(())
    }

    /// Fits the noise approximation for `model` under this configuration.
    pub fn noise_mixture(&self, model: &ModelSpec) -> Result<GaussianMixture> {
        let m = if self.noise_components == 0 {
            mixture::default_components(&model.noise)
        } else {
            self.noise_components
        };
        mixture::fit_mixture(&model.noise, m)
    }
}

/// Posterior over `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub posterior: GaussianMixture,
    pub t: usize,
}

pub fn init_state(mean: f64, var: f64) -> Result<FilterState> {
    if !(var > 0.0 && var.is_finite()) || !mean.is_finite() {
        return Err(Error::invalid("initial state", format!("need Σ > 0, got {var}")));
    }
    Ok(FilterState {
        posterior: GaussianMixture::single(mean, var)?,
        t: 0,
    })
}

/// Moments of one predictive branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveComponent {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub obs_mean: f64,
    pub obs_var: f64,
    pub cross_cov: f64,
    pub gain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentUpdate {
    pub mean: f64,
    pub var: f64,
    /// `ln φ(P_A − c − γ·P_B; V)`.
    pub ln_density: f64,
    pub predictive: PredictiveComponent,
    /// The posterior variance hit [`VARIANCE_FLOOR`].
    pub clamped: bool,
}

/// Predicted mean and variance of one branch.
///
/// `cloud` holds standard normal points; the state cloud is `b + √P·z`.
/// `older` supplies lags beyond the first for multi-lag diffusions.
pub fn predict_component(
    mean: f64,
    var: f64,
    noise: &Component,
    model: &ModelSpec,
    older: &[f64],
    cloud: &[f64],
) -> Result<(f64, f64)> {
    let n = cloud.len() as f64;
    let sd = var.sqrt();
    let mut sum = 0.0;
    let mut g2 = 0.0;
    for z in cloud {
        let x = mean + sd * z;
        let f = model.drift.eval(x)?;
        let g = model.diffusion.eval_at(x, older);
        sum += f + g * noise.mean;
        g2 += g * g;
    }
    let c = sum / n;
    let mut ss = 0.0;
    for z in cloud {
        let x = mean + sd * z;
        let f = model.drift.eval(x)?;
        let g = model.diffusion.eval_at(x, older);
        let d = f + g * noise.mean - c;
        ss += d * d;
    }
    let q = ss / n + g2 / n * noise.var;
    Ok((c, q.max(VARIANCE_FLOOR)))
}

/// Kalman-style update of one branch on the observation `(P_A, P_B)`.
pub fn update_component(
    prior_mean: f64,
    prior_var: f64,
    obs: (f64, f64),
    model: &ModelSpec,
    cloud: &[f64],
) -> ComponentUpdate {
    let (pa, pb) = obs;
    let n = cloud.len() as f64;
    let sd = prior_var.sqrt();
    let offset = model.hedge_ratio * pb;
    let mut sum_x = 0.0;
    for z in cloud {
        sum_x += prior_mean + sd * z;
    }
    let mean_x = sum_x / n;
    let obs_mean = mean_x + offset;
    let (mut vyy, mut vxy) = (0.0, 0.0);
    for z in cloud {
        let x = prior_mean + sd * z;
        let dy = x + offset - obs_mean;
        vyy += dy * dy;
        vxy += (x - prior_mean) * dy;
    }
    let obs_var = vyy / n + model.obs_noise_var;
    let cross_cov = vxy / n;
    let gain = cross_cov / obs_var;
    let mean = prior_mean + gain * (pa - obs_mean);
    let raw_var = prior_var - gain * gain * obs_var;
    let clamped = !(raw_var > VARIANCE_FLOOR);
    let innovation = pa - prior_mean - offset;
    let ln_density = -0.5 * innovation * innovation / obs_var - 0.5 * obs_var.ln() - LN_SQRT_2PI;
    ComponentUpdate {
        mean,
        var: if clamped { VARIANCE_FLOOR } else { raw_var },
        ln_density,
        predictive: PredictiveComponent {
            prior_mean,
            prior_var,
            obs_mean,
            obs_var,
            cross_cov,
            gain,
        },
        clamped,
    }
}

/// Standard normal clouds for every `(t, slot, stage)` of a run, computed
/// once and shared read-only (e.g. across likelihood evaluations).
#[derive(Clone, Debug)]
pub struct CloudBank {
    qmc: QmcConfig,
    horizon: usize,
    slots: usize,
    data: Vec<f64>,
}

impl CloudBank {
    /// Precomputes clouds for `t < horizon` and `slot < slots`, shrinking
    /// `slots` to stay within a fixed memory budget.
    pub fn new(qmc: &QmcConfig, horizon: usize, slots: usize) -> Self {
        let per_slot = 2 * qmc.points * horizon.max(1);
        let slots = slots.min(BANK_BUDGET / per_slot.max(1));
        let mut data = Vec::with_capacity(per_slot * slots);
        let mut scratch = Vec::with_capacity(qmc.points);
        for t in 0..horizon {
            for slot in 0..slots {
                for stage in [STAGE_PREDICT, STAGE_UPDATE] {
                    qmc.standard_cloud(t, slot, stage, &mut scratch);
                    data.extend_from_slice(&scratch);
                }
            }
        }
        Self {
            qmc: qmc.clone(),
            horizon,
            slots,
            data,
        }
    }

    /// An empty bank that computes every cloud on demand.
    pub fn on_demand(qmc: &QmcConfig) -> Self {
        Self::new(qmc, 0, 0)
    }

    fn cloud<'a>(&'a self, t: usize, slot: usize, stage: u8, scratch: &'a mut Vec<f64>) -> &'a [f64] {
        if t < self.horizon && slot < self.slots {
            let g = self.qmc.points;
            let start = ((t * self.slots + slot) * 2 + stage as usize) * g;
            &self.data[start..start + g]
        } else {
            self.qmc.standard_cloud(t, slot, stage, scratch);
            scratch
        }
    }
}

/// Counters collected while filtering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    /// Posterior variances raised to [`VARIANCE_FLOOR`].
    pub variance_clamps: usize,
    /// Largest branch count before reduction.
    pub peak_branches: usize,
}

struct StepContext<'a> {
    model: &'a ModelSpec,
    noise: &'a GaussianMixture,
    max_components: usize,
    bank: &'a CloudBank,
}

fn step_inner(
    ctx: &StepContext<'_>,
    state: &FilterState,
    obs: (f64, f64),
    older: &[f64],
    diag: &mut FilterDiagnostics,
    scratch: &mut Vec<f64>,
) -> Result<(FilterState, f64)> {
    if !(obs.0.is_finite() && obs.1.is_finite()) {
        return Err(Error::invalid("observation", format!("non-finite prices {obs:?}")));
    }
    let t = state.t;
    let noise = ctx.noise.components();
    let mut branches = Vec::with_capacity(state.posterior.len() * noise.len());
    let mut ln_w = Vec::with_capacity(branches.capacity());
    for (j, post) in state.posterior.components().iter().enumerate() {
        for (k, eta) in noise.iter().enumerate() {
            let slot = j * noise.len() + k;
            let (c, q) = {
                let cloud = ctx.bank.cloud(t, slot, STAGE_PREDICT, scratch);
                predict_component(post.mean, post.var, eta, ctx.model, older, cloud)?
            };
            let up = {
                let cloud = ctx.bank.cloud(t, slot, STAGE_UPDATE, scratch);
                update_component(c, q, obs, ctx.model, cloud)
            };
            if up.clamped {
                diag.variance_clamps += 1;
            }
            ln_w.push((post.weight * eta.weight).ln() + up.ln_density);
            branches.push(up);
        }
    }
    diag.peak_branches = diag.peak_branches.max(branches.len());
    let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite { step: t + 1 });
    }
    let total: f64 = ln_w.iter().map(|l| (l - max).exp()).sum();
    let increment = max + total.ln();
    let comps: Vec<Component> = branches
        .iter()
        .zip(&ln_w)
        .map(|(b, l)| Component::new((l - max).exp() / total, b.mean, b.var))
        .filter(|c| c.weight > 0.0)
        .collect();
    let posterior = mixture::reduce_mixture(&GaussianMixture::normalized(comps)?, ctx.max_components)?;
    Ok((
        FilterState {
            posterior,
            t: t + 1,
        },
        increment,
    ))
}

/// One predict/update step from `state` (at time `t`) to `t + 1`.
///
/// Returns the new posterior and `ln p(P_A,t+1 | past)`, the log of the
/// prior-weighted sum of branch predictive densities.
pub fn step(
    state: &FilterState,
    obs: (f64, f64),
    model: &ModelSpec,
    noise: &GaussianMixture,
    config: &FilterConfig,
) -> Result<(FilterState, f64)> {
    let bank = CloudBank::on_demand(&config.qmc);
    let ctx = StepContext {
        model,
        noise,
        max_components: config.max_components,
        bank: &bank,
    };
    let older = vec![model.diffusion.padding_value(); model.diffusion.lags().saturating_sub(1)];
    step_inner(
        &ctx,
        state,
        obs,
        &older,
        &mut FilterDiagnostics::default(),
        &mut Vec::new(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    pub loglik_increments: Vec<f64>,
    pub total_loglik: f64,
    pub diagnostics: FilterDiagnostics,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.filtered_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered_mean.is_empty()
    }

    /// CSV with columns `date,mean,variance,loglik_increment`.
    pub fn write_csv<W: Write>(&self, dates: &[String], out: W) -> Result<()> {
        if dates.len() != self.len() {
            return Err(Error::invalid("filter export", "date count differs from series length"));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "mean", "variance", "loglik_increment"])?;
        for (i, d) in dates.iter().enumerate() {
            w.write_record([
                d.clone(),
                self.filtered_mean[i].to_string(),
                self.filtered_var[i].to_string(),
                self.loglik_increments[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Prior for `x₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSpread {
    pub mean: f64,
    pub var: f64,
}

/// Runs the filter over aligned price series with a precomputed noise
/// mixture and cloud bank (the hot path of likelihood maximisation).
pub fn run_filter_with(
    model: &ModelSpec,
    pa: &[f64],
    pb: &[f64],
    init: InitialSpread,
    noise: &GaussianMixture,
    max_components: usize,
    bank: &CloudBank,
) -> Result<FilterOutput> {
    if pa.is_empty() || pa.len() != pb.len() {
        return Err(Error::invalid(
            "prices",
            format!("need equal non-empty series, got {} and {}", pa.len(), pb.len()),
        ));
    }
    let mut state = init_state(init.mean, init.var)?;
    let n = pa.len();
    let mut out = FilterOutput {
        filtered_mean: Vec::with_capacity(n),
        filtered_var: Vec::with_capacity(n),
        loglik_increments: Vec::with_capacity(n),
        total_loglik: 0.0,
        diagnostics: FilterDiagnostics::default(),
    };
    out.filtered_mean.push(init.mean);
    out.filtered_var.push(init.var);
    out.loglik_increments.push(0.0);
    let ctx = StepContext {
        model,
        noise,
        max_components,
        bank,
    };
    let extra_lags = model.diffusion.lags().saturating_sub(1);
    let pad = model.diffusion.padding_value();
    let mut older = vec![pad; extra_lags];
    let mut scratch = Vec::new();
    for t in 1..n {
        if extra_lags > 0 {
            // lags beyond the current state come from earlier filtered means
            for (i, o) in older.iter_mut().enumerate() {
                *o = t.checked_sub(2 + i).map_or(pad, |k| out.filtered_mean[k]);
            }
        }
        let (next, inc) = step_inner(&ctx, &state, (pa[t], pb[t]), &older, &mut out.diagnostics, &mut scratch)
            .map_err(|e| Error::Filter {
                t,
                source: Box::new(e),
            })?;
        let (m, v) = next.posterior.moments();
        out.filtered_mean.push(m);
        out.filtered_var.push(v.max(VARIANCE_FLOOR));
        out.loglik_increments.push(inc);
        out.total_loglik += inc;
        state = next;
    }
    Ok(out)
}

/// Runs the filter with the noise mixture and clouds derived from `config`.
pub fn run_filter(
    model: &ModelSpec,
    pa: &[f64],
    pb: &[f64],
    init: InitialSpread,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    config.validate()?;
    model.validate()?;
    let noise = config.noise_mixture(model)?;
    let slots = if noise.len() == 1 {
        1
    } else {
        config.max_components * noise.len()
    };
    let bank = CloudBank::new(&config.qmc, pa.len(), slots);
    run_filter_with(model, pa, pb, init, &noise, config.max_components, &bank)
}

/// Total log-likelihood of the observations under `model`.
pub fn log_likelihood(
    model: &ModelSpec,
    pa: &[f64],
    pb: &[f64],
    init: InitialSpread,
    config: &FilterConfig,
) -> Result<f64> {
    Ok(run_filter(model, pa, pb, init, config)?.total_loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionSpec, DriftSpec, NoiseSpec};
    use crate::qmc::HaltonStream;
    use approx::assert_relative_eq;

    fn linear_model(a: f64, sigma: f64, gamma: f64, r: f64) -> ModelSpec {
        ModelSpec::new(
            DriftSpec::linear(0.0, a),
            DiffusionSpec::constant(sigma),
            NoiseSpec::standard_normal(),
            gamma,
            r,
        )
        .unwrap()
    }

    fn cloud(points: usize) -> Vec<f64> {
        let mut z = Vec::new();
        QmcConfig::with_points(points).standard_cloud(3, 0, 0, &mut z);
        z
    }

    #[test]
    fn init_state_examples() {
        let s = init_state(0.0, 1.0).unwrap();
        assert_eq!(s.posterior.components(), &[Component::new(1.0, 0.0, 1.0)]);
        let s = init_state(5.0, 0.01).unwrap();
        assert_eq!(s.posterior.moments(), (5.0, 0.01));
        assert!(init_state(0.0, 0.0).is_err());
        assert!(init_state(0.0, -1.0).is_err());
    }

    #[test]
    fn linear_prediction_matches_exact_formulas() {
        let m = linear_model(0.8, 0.3, 1.0, 0.1);
        let eta = Component::new(1.0, 0.0, 1.0);
        let (c, q) = predict_component(1.5, 0.4, &eta, &m, &[], &cloud(128)).unwrap();
        assert_relative_eq!(c, 0.8 * 1.5, max_relative = 1e-3);
        assert_relative_eq!(q, 0.64 * 0.4 + 0.09, max_relative = 1e-3);
    }

    #[test]
    fn raw_halton_prediction_is_close() {
        let m = linear_model(0.8, 0.3, 1.0, 0.1);
        let eta = Component::new(1.0, 0.0, 1.0);
        let mut s = HaltonStream::default();
        let z: Vec<f64> = (0..4096).map(|_| s.next_normal()).collect();
        let (c, q) = predict_component(1.5, 0.4, &eta, &m, &[], &z).unwrap();
        assert_relative_eq!(c, 1.2, max_relative = 1e-3);
        assert_relative_eq!(q, 0.346, max_relative = 1e-2);
    }

    #[test]
    fn noiseless_prediction_is_cloud_variance_of_drift() {
        let m = linear_model(0.5, 0.0, 1.0, 0.1);
        let eta = Component::new(1.0, 0.0, 1.0);
        let z = cloud(64);
        let (c, q) = predict_component(2.0, 0.25, &eta, &m, &[], &z).unwrap();
        let f: Vec<f64> = z.iter().map(|v| 0.5 * (2.0 + 0.5 * v)).collect();
        let mean = f.iter().sum::<f64>() / 64.0;
        let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert_relative_eq!(c, mean, epsilon = 1e-14);
        assert_relative_eq!(q, var, epsilon = 1e-14);
    }

    #[test]
    fn point_mass_prediction() {
        let m = ModelSpec::new(
            DriftSpec::new(crate::model::DriftFamily::Quadratic, vec![0.1, 0.7, 0.3]).unwrap(),
            DiffusionSpec::arch1(0.01, 0.2),
            NoiseSpec::standard_normal(),
            1.0,
            0.1,
        )
        .unwrap();
        let eta = Component::new(1.0, 0.4, 0.5);
        let b = 0.6;
        let (c, _) = predict_component(b, 1e-14, &eta, &m, &[], &cloud(128)).unwrap();
        let exact = 0.1 + 0.7 * b + 0.3 * b * b + (0.01f64 + 0.2 * b * b).sqrt() * 0.4;
        assert_relative_eq!(c, exact, epsilon = 1e-6);
    }

    #[test]
    fn ait_sahalia_singularity_propagates() {
        let m = ModelSpec::new(
            DriftSpec::new(crate::model::DriftFamily::AitSahalia, vec![0.0, 1.0, 0.5, 0.0]).unwrap(),
            DiffusionSpec::constant(0.1),
            NoiseSpec::standard_normal(),
            1.0,
            0.1,
        )
        .unwrap();
        let eta = Component::new(1.0, 0.0, 1.0);
        // var = 0 puts every cloud point on x = 0
        let err = predict_component(0.0, 0.0, &eta, &m, &[], &cloud(8)).unwrap_err();
        assert!(matches!(err, Error::DriftSingularity));
    }

    #[test]
    fn update_is_the_scalar_kalman_update() {
        let m = linear_model(0.9, 0.2, 1.5, 0.05);
        let (c, q) = (0.3, 0.2);
        let obs = (10.0, 6.4);
        let up = update_component(c, q, obs, &m, &cloud(128));
        let k = q / (q + 0.05);
        assert_relative_eq!(up.predictive.gain, k, max_relative = 1e-12);
        assert_relative_eq!(up.mean, c + k * (obs.0 - c - 1.5 * obs.1), max_relative = 1e-12);
        assert_relative_eq!(up.var, q - k * k * (q + 0.05), max_relative = 1e-12);
        assert!(up.predictive.obs_var >= m.obs_noise_var);
    }

    #[test]
    fn uninformative_and_zero_innovation_updates() {
        let m = linear_model(0.9, 0.2, 1.0, 1e12);
        let up = update_component(0.3, 0.2, (5.0, 1.0), &m, &cloud(64));
        assert!(up.predictive.gain.abs() < 1e-10);
        assert_relative_eq!(up.mean, 0.3, epsilon = 1e-9);
        let m = linear_model(0.9, 0.2, 1.0, 0.1);
        let z = cloud(64);
        let probe = update_component(0.3, 0.2, (0.0, 1.0), &m, &z);
        let at_mean = update_component(0.3, 0.2, (probe.predictive.obs_mean, 1.0), &m, &z);
        assert_eq!(at_mean.mean, 0.3);
    }

    #[test]
    fn identical_components_stay_identical() {
        let m = linear_model(0.9, 0.2, 1.0, 0.1);
        let noise = GaussianMixture::single(0.0, 1.0).unwrap();
        let state = FilterState {
            posterior: GaussianMixture::new(vec![
                Component::new(0.5, 0.4, 0.3),
                Component::new(0.5, 0.4, 0.3),
            ])
            .unwrap(),
            t: 4,
        };
        let cfg = FilterConfig {
            qmc: QmcConfig {
                moment_match: true,
                ..QmcConfig::with_points(64)
            },
            max_components: 4,
            noise_components: 1,
        };
        let (next, _) = step(&state, (1.0, 0.5), &m, &noise, &cfg).unwrap();
        let c = next.posterior.components();
        assert_eq!(c.len(), 2);
        assert_relative_eq!(c[0].weight, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c[0].mean, c[1].mean, epsilon = 1e-12);
        assert_relative_eq!(c[0].var, c[1].var, epsilon = 1e-12);
    }

    #[test]
    fn mixture_noise_keeps_weights_normalised() {
        let m = ModelSpec::new(
            DriftSpec::linear(0.0, 0.9),
            DiffusionSpec::constant(0.1),
            NoiseSpec::StudentT { dof: 4.0 },
            1.0,
            0.05,
        )
        .unwrap();
        let cfg = FilterConfig {
            max_components: 4,
            ..FilterConfig::with_points(32)
        };
        let pa: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let pb = vec![1.0; 30];
        let out = run_filter(&m, &pa, &pb, InitialSpread { mean: 0.0, var: 0.1 }, &cfg).unwrap();
        assert_eq!(out.len(), 30);
        assert!(out.filtered_var.iter().all(|v| *v > 0.0));
        assert!(out.diagnostics.peak_branches <= 12);
        assert!(out.total_loglik.is_finite());
    }

    #[test]
    fn csv_export() {
        let out = FilterOutput {
            filtered_mean: vec![0.5, 0.25],
            filtered_var: vec![1.0, 0.5],
            loglik_increments: vec![0.0, -1.5],
            total_loglik: -1.5,
            diagnostics: FilterDiagnostics::default(),
        };
        let mut buf = Vec::new();
        out.write_csv(&["2020-01-01".into(), "2020-01-02".into()], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "date,mean,variance,loglik_increment\n2020-01-01,0.5,1,0\n2020-01-02,0.25,0.5,-1.5\n"
        );
    }
}
