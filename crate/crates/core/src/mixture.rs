//! Gaussian mixtures: fitting a noise density by relative entropy, collapsing
//! a filter posterior to a bounded number of components, and moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseSpec;
use crate::optim::NelderMead;
use crate::quadrature::GaussLegendre;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Half-width of the KL quadrature window, in noise standard deviations.
pub const KL_HALF_WIDTH: f64 = 12.0;
/// Total quadrature nodes (panels × points per panel).
pub const KL_NODES: usize = 2048;
const KL_ORDER: usize = 16;

/// Default reduction cap used inside the filter.
pub const DEFAULT_MAX_COMPONENTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

impl Component {
    pub fn new(weight: f64, mean: f64, var: f64) -> Self {
        Self { weight, mean, var }
    }

    #[inline]
    pub fn ln_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * d * d / self.var - 0.5 * self.var.ln() - LN_SQRT_2PI
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct GaussianMixture {
    components: Vec<Component>,
}

/// On-disk layout: parallel arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureFile {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl TryFrom<MixtureFile> for GaussianMixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        if f.weights.len() != f.means.len() || f.means.len() != f.variances.len() {
            return Err(Error::invalid("mixture", "array lengths differ"));
        }
        GaussianMixture::new(
            f.weights
                .iter()
                .zip(&f.means)
                .zip(&f.variances)
                .map(|((w, m), v)| Component::new(*w, *m, *v))
                .collect(),
        )
    }
}

impl From<GaussianMixture> for MixtureFile {
    fn from(m: GaussianMixture) -> Self {
        MixtureFile {
            weights: m.components.iter().map(|c| c.weight).collect(),
            means: m.components.iter().map(|c| c.mean).collect(),
            variances: m.components.iter().map(|c| c.var).collect(),
        }
    }
}

impl GaussianMixture {
    /// Validates weights (in (0,1], summing to one within 1e-12) and variances.
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture", "needs at least one component"));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.weight <= 1.0 + 1e-12) {
                return Err(Error::invalid("mixture", format!("weight {} outside (0,1]", c.weight)));
            }
            if !(c.var > 0.0 && c.var.is_finite() && c.mean.is_finite()) {
                return Err(Error::invalid("mixture", format!("bad component {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture", format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    /// Normalises positive weights to sum to one.
    pub fn normalized(mut components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("mixture", "weights do not sum to a positive value"));
        }
        components.iter_mut().for_each(|c| c.weight /= total);
        components.retain(|c| c.weight > 0.0);
        Self::new(components)
    }

    pub fn single(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![Component::new(1.0, mean, var)])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let max = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.ln_density(x))
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + self
            .components
            .iter()
            .map(|c| (c.weight.ln() + c.ln_density(x) - max).exp())
            .sum::<f64>()
            .ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn moments(&self) -> (f64, f64) {
        mixture_moments(self)
    }
}

/// Total mean `Σαᵢaᵢ` and variance `Σαᵢ(Pᵢ + aᵢ²) − mean²`.
pub fn mixture_moments(mix: &GaussianMixture) -> (f64, f64) {
    let mean: f64 = mix.components.iter().map(|c| c.weight * c.mean).sum();
    // centred form of the same identity, kept for accuracy when |mean| ≫ sd
    let var: f64 = mix
        .components
        .iter()
        .map(|c| c.weight * (c.var + (c.mean - mean) * (c.mean - mean)))
        .sum();
    (mean, var)
}

fn kl_rule(noise: &NoiseSpec) -> GaussLegendre {
    let (c, s) = (noise.center(), noise.std());
    GaussLegendre::new(
        c - KL_HALF_WIDTH * s,
        c + KL_HALF_WIDTH * s,
        KL_NODES / KL_ORDER,
        KL_ORDER,
    )
}

/// Precomputed `w·p(η)` and `ln p(η)` on the quadrature nodes.
struct KlTable {
    nodes: Vec<f64>,
    weighted_p: Vec<f64>,
    ln_p: Vec<f64>,
}

impl KlTable {
    fn new(noise: &NoiseSpec) -> Self {
        let rule = kl_rule(noise);
        let ln_p: Vec<f64> = rule.nodes().iter().map(|x| noise.ln_pdf(*x)).collect();
        let weighted_p = rule
            .weights()
            .iter()
            .zip(&ln_p)
            .map(|(w, l)| w * l.exp())
            .collect();
        Self {
            nodes: rule.nodes().to_vec(),
            weighted_p,
            ln_p,
        }
    }

    fn kl(&self, q: &GaussianMixture) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weighted_p)
            .zip(&self.ln_p)
            .map(|((x, wp), lp)| wp * (lp - q.ln_pdf(*x)))
            .sum()
    }
}

/// Relative entropy `∫ p·ln(p/q)` by Gauss-Legendre quadrature over
/// ±12 noise standard deviations (2048 nodes).
pub fn kl_divergence(p: &NoiseSpec, q: &GaussianMixture) -> f64 {
    KlTable::new(p).kl(q).max(0.0)
}

/// Symmetric parameterisation about the noise centre: an optional centre
/// component plus `pairs` mirrored pairs at ±offset.
struct SymmetricLayout {
    center: f64,
    scale: f64,
    pairs: usize,
    has_center: bool,
}

impl SymmetricLayout {
    fn groups(&self) -> usize {
        self.pairs + usize::from(self.has_center)
    }

    fn dim(&self) -> usize {
        (self.groups() - 1) + self.pairs + self.groups()
    }

    /// Unconstrained vector → mixture. Layout:
    /// `[logits(groups-1), ln offsets(pairs), ln variances(groups)]`.
    fn decode(&self, z: &[f64]) -> Option<GaussianMixture> {
        let g = self.groups();
        let (logits, rest) = z.split_at(g - 1);
        let (offsets, log_vars) = rest.split_at(self.pairs);
        let mut raw = Vec::with_capacity(g);
        raw.push(0.0);
        raw.extend_from_slice(logits);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = raw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let s2 = self.scale * self.scale;
        let mut comps = Vec::with_capacity(self.pairs * 2 + 1);
        let mut group = 0;
        if self.has_center {
            comps.push(Component::new(e[0] / total, self.center, s2 * log_vars[0].exp()));
            group = 1;
        }
        for k in 0..self.pairs {
            let w = e[group + k] / total / 2.0;
            let d = self.scale * offsets[k].exp();
            let v = s2 * log_vars[group + k].exp();
            comps.push(Component::new(w, self.center - d, v));
            comps.push(Component::new(w, self.center + d, v));
        }
        if comps.iter().any(|c| !(c.weight > 0.0) || !(c.var > 0.0) || !c.var.is_finite()) {
            return None;
        }
        GaussianMixture::normalized(comps).ok()
    }

    /// Equal weights, components at quantiles `k/(m+1)`, common variance
    /// chosen so the total variance matches the noise.
    fn initial(&self, noise: &NoiseSpec, m: usize) -> Vec<f64> {
        let var = noise.variance();
        let offsets: Vec<f64> = (0..self.pairs)
            .map(|k| {
                let u = (m - k) as f64 / (m + 1) as f64;
                (noise.quantile(u) - self.center).abs().max(1e-3 * self.scale)
            })
            .collect();
        let w = 1.0 / m as f64;
        let spread: f64 = offsets.iter().map(|d| 2.0 * w * d * d).sum();
        let mut common = var - spread;
        if common <= 0.05 * var {
            common = var / m as f64;
        }
        let mut z = vec![0.0; self.groups() - 1];
        // pairs carry twice the weight of the centre group
        if self.has_center {
            z.iter_mut().for_each(|l| *l = 2f64.ln());
        }
        z.extend(offsets.iter().map(|d| (d / self.scale).ln()));
        z.extend(std::iter::repeat_n((common / (self.scale * self.scale)).ln(), self.groups()));
        z
    }
}

/// Fits an `m`-component mixture to `noise` by minimising the quadrature KL.
///
/// Gaussian noise is returned exactly as a single component. Other families
/// are symmetric about their centre, so the fit is constrained to mirrored
/// component pairs (plus a centre component when `m` is odd).
pub fn fit_mixture(noise: &NoiseSpec, m: usize) -> Result<GaussianMixture> {
    noise.validate()?;
    if m == 0 {
        return Err(Error::invalid("component count", "must be at least 1"));
    }
    if let NoiseSpec::Gaussian { mean, std } = *noise {
        return GaussianMixture::single(mean, std * std);
    }
    let layout = SymmetricLayout {
        center: noise.center(),
        scale: noise.std(),
        pairs: m / 2,
        has_center: m % 2 == 1,
    };
    let table = KlTable::new(noise);
    let start = layout.initial(noise, m);
    debug_assert_eq!(start.len(), layout.dim());
    let nm = NelderMead {
        max_iterations: 4000,
        x_tolerance: 1e-7,
        f_tolerance: 0.0,
        initial_step: 0.3,
    };
    let objective = |z: &[f64]| match layout.decode(z) {
        Some(q) => table.kl(&q),
        None => f64::INFINITY,
    };
    // one restart from the first optimum shakes NM out of early collapse
    let first = nm.minimize(&start, objective);
    let result = nm.minimize(&first.x, objective);
    let fitted = layout
        .decode(&result.x)
        .ok_or_else(|| Error::invalid("mixture fit", "optimum decodes to an invalid mixture"))?;
    if !result.converged {
        return Err(Error::MixtureFit {
            iterations: first.iterations + result.iterations,
            kl: result.value,
            last: Box::new(fitted),
        });
    }
    Ok(fitted)
}

/// Default component count per noise family.
pub fn default_components(noise: &NoiseSpec) -> usize {
    if noise.is_gaussian() {
        1
    } else {
        3
    }
}

/// Moment-preserving merge of two components.
pub fn merge(a: &Component, b: &Component) -> Component {
    let w = a.weight + b.weight;
    let (fa, fb) = (a.weight / w, b.weight / w);
    let mean = fa * a.mean + fb * b.mean;
    let d = a.mean - b.mean;
    let var = fa * a.var + fb * b.var + fa * fb * d * d;
    Component::new(w, mean, var)
}

/// Upper bound on the KL cost of merging two components.
fn merge_cost(a: &Component, b: &Component) -> f64 {
    let m = merge(a, b);
    0.5 * (m.weight * m.var.ln() - a.weight * a.var.ln() - b.weight * b.var.ln())
}

/// Greedily merges the cheapest pair until at most `max_components` remain.
///
/// Merges preserve total weight, mean and variance; the merged component
/// takes the lower index and the later one is removed, so the result is
/// independent of evaluation order.
pub fn reduce_mixture(mix: &GaussianMixture, max_components: usize) -> Result<GaussianMixture> {
    if max_components == 0 {
        return Err(Error::invalid("max components", "must be at least 1"));
    }
    let mut comps = mix.components.clone();
    if comps.len() <= max_components {
        return Ok(mix.clone());
    }
    if max_components == 1 {
        let (mean, var) = mixture_moments(mix);
        return GaussianMixture::single(mean, var);
    }
    while comps.len() > max_components {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..comps.len() {
            for j in i + 1..comps.len() {
                let c = merge_cost(&comps[i], &comps[j]);
                if c < best.2 {
                    best = (i, j, c);
                }
            }
        }
        let (i, j, _) = best;
        comps[i] = merge(&comps[i], &comps[j]);
        comps.remove(j);
    }
    GaussianMixture::normalized(comps)
}
