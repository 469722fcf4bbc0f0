//! Box-Muller transformed Halton point sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radical inverse of `i` in `base`: the digits of `i` mirrored about the
/// radix point.
#[inline]
pub fn halton(base: u64, i: u64) -> f64 {
    debug_assert!(base >= 2);
    if base == 2 {
        // bit reversal
        return (i.reverse_bits() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    }
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    let mut n = i;
    while n > 0 {
        r += f * (n % base) as f64;
        n /= base;
        f *= inv;
    }
    r
}

fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

/// A two-dimensional Halton sequence; point `k` (from 0) uses index
/// `skip + k + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaltonStream {
    bases: (u64, u64),
    skip: u64,
    index: u64,
}

impl Default for HaltonStream {
    fn default() -> Self {
        Self {
            bases: (2, 3),
            skip: QmcConfig::DEFAULT_SKIP,
            index: 0,
        }
    }
}

impl HaltonStream {
    pub fn new(bases: (u64, u64), skip: u64) -> Result<Self> {
        if !is_prime(bases.0) || !is_prime(bases.1) || bases.0 == bases.1 {
            return Err(Error::invalid(
                "halton bases",
                format!("need two distinct primes, got {bases:?}"),
            ));
        }
        Ok(Self {
            bases,
            skip,
            index: 0,
        })
    }

    pub fn bases(&self) -> (u64, u64) {
        self.bases
    }

    pub fn skip(&self) -> u64 {
        self.skip
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Next point in (0,1)².
    #[inline]
    pub fn next_point(&mut self) -> (f64, f64) {
        self.index += 1;
        let i = self.skip + self.index;
        (halton(self.bases.0, i), halton(self.bases.1, i))
    }

    /// Next standard normal draw (cosine branch of Box-Muller).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let (u1, u2) = self.next_point();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `n` draws of `N(mean, var)`, i.e. `mean + √var·z` for the next `n`
/// Box-Muller normals `z` of the stream.
pub fn gaussian_qmc(n: usize, mean: f64, var: f64, stream: &mut HaltonStream) -> Result<Vec<f64>> {
    if !(var >= 0.0) {
        return Err(Error::invalid("variance", format!("{var} is negative")));
    }
    if var == 0.0 {
        stream.index += n as u64;
        return Ok(vec![mean; n]);
    }
    let sd = var.sqrt();
    Ok((0..n).map(|_| mean + sd * stream.next_normal()).collect())
}

/// Point-set settings shared by the filter's prediction and update stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QmcConfig {
    /// Points per mixture component per step.
    pub points: usize,
    pub bases: (u64, u64),
    pub skip: u64,
    /// Shift each standard-normal cloud to exact sample mean 0 and variance 1.
    pub moment_match: bool,
}

impl QmcConfig {
    pub const DEFAULT_SKIP: u64 = 20;
    pub const DEFAULT_POINTS: usize = 128;

    pub fn with_points(points: usize) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::invalid("qmc points", "need at least 2"));
        }
        HaltonStream::new(self.bases, self.skip).map(|_| ())
    }

    /// Stream with a skip offset specific to `(t, slot, stage)`, so different
    /// components and steps never share a point set.
    pub fn stream_for(&self, t: usize, slot: usize, stage: u8) -> HaltonStream {
        let key = crate::rng::derive_seed(t as u64, "halton", ((slot as u64) << 2) | u64::from(stage));
        HaltonStream {
            bases: self.bases,
            skip: self.skip + (key % (1 << 20)),
            index: 0,
        }
    }

    /// Standard normal cloud for `(t, slot, stage)`, written into `out`.
    pub fn standard_cloud(&self, t: usize, slot: usize, stage: u8, out: &mut Vec<f64>) {
        let mut stream = self.stream_for(t, slot, stage);
        out.clear();
        out.extend((0..self.points).map(|_| stream.next_normal()));
        if self.moment_match {
            standardize(out);
        }
    }
}

impl Default for QmcConfig {
    fn default() -> Self {
        Self {
            points: Self::DEFAULT_POINTS,
            bases: (2, 3),
            skip: Self::DEFAULT_SKIP,
            moment_match: true,
        }
    }
}

/// Rescales `z` in place to sample mean 0 and (population) variance 1.
pub fn standardize(z: &mut [f64]) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        let inv = 1.0 / var.sqrt();
        z.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn base_two_radical_inverse() {
        let got: Vec<f64> = (1..=7).map(|i| halton(2, i)).collect();
        assert_eq!(got, vec![0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875]);
        for k in 0..20 {
            assert_eq!(halton(2, 1 << k), 0.5f64.powi(k + 1));
        }
    }

    #[test]
    fn base_three_first_digit() {
        assert_relative_eq!(halton(3, 1), 1.0 / 3.0, epsilon = 1e-16);
        assert_relative_eq!(halton(3, 5), 2.0 / 3.0 + 1.0 / 9.0, epsilon = 1e-16);
    }

    #[test]
    fn first_box_muller_point() {
        let mut s = HaltonStream::new((2, 3), 0).unwrap();
        let z = gaussian_qmc(1, 0.0, 1.0, &mut s).unwrap()[0];
        let expected = (2.0 * 2f64.ln()).sqrt() * (2.0 * std::f64::consts::PI / 3.0).cos();
        assert!((z - expected).abs() < 1e-12);
        assert_relative_eq!(z, -0.58871, epsilon = 1e-5);
    }

    #[test]
    fn degenerate_variance() {
        let mut s = HaltonStream::default();
        assert_eq!(gaussian_qmc(5, 7.0, 0.0, &mut s).unwrap(), vec![7.0; 5]);
        assert!(gaussian_qmc(5, 7.0, -1.0, &mut s).is_err());
    }

    #[test]
    fn moments_converge() {
        let mut s = HaltonStream::default();
        let z = gaussian_qmc(4096, 0.0, 1.0, &mut s).unwrap();
        let mean = z.iter().sum::<f64>() / 4096.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4095.0;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((0.98..=1.02).contains(&var), "{var}");
    }

    #[test]
    fn base_two_discrepancy_proxy() {
        let mut u: Vec<f64> = (1..=4096).map(|i| halton(2, i)).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let sup = u
            .iter()
            .enumerate()
            .map(|(k, x)| ((k + 1) as f64 / n - x).abs().max((k as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 1e-3, "{sup}");
    }

    #[test]
    fn bases_must_be_distinct_primes() {
        assert!(HaltonStream::new((2, 2), 0).is_err());
        assert!(HaltonStream::new((2, 4), 0).is_err());
        assert!(HaltonStream::new((5, 7), 3).is_ok());
    }

    #[test]
    fn affine_contract_is_exact() {
        let base = gaussian_qmc(64, 0.0, 1.0, &mut HaltonStream::default()).unwrap();
        let (m, v) = (3.5, 2.25);
        let shifted = gaussian_qmc(64, m, v, &mut HaltonStream::default()).unwrap();
        for (z, y) in base.iter().zip(&shifted) {
            assert_eq!(*y, m + v.sqrt() * z);
        }
    }

    #[test]
    fn standardized_cloud_has_exact_moments() {
        let cfg = QmcConfig::with_points(128);
        let mut z = Vec::new();
        cfg.standard_cloud(17, 2, 1, &mut z);
        let mean = z.iter().sum::<f64>() / 128.0;
        let var = z.iter().map(|v| v * v).sum::<f64>() / 128.0 - mean * mean;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-13);
        let mut again = Vec::new();
        cfg.standard_cloud(17, 2, 1, &mut again);
        assert_eq!(z, again);
    }
}
