//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the numerical code under test.
#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Scalar linear-Gaussian model `x' = a + b·x + σ·η`, `y = x + ε`, `ε ~ N(0, r)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearGaussian {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub r: f64,
}

pub struct KalmanRun {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub loglik: Vec<f64>,
}

/// Textbook Kalman filter. Row 0 is the prior; observations start at row 1.
pub fn kalman(m: &LinearGaussian, y: &[f64], m0: f64, p0: f64) -> KalmanRun {
    let mut out = KalmanRun {
        mean: vec![m0],
        var: vec![p0],
        loglik: vec![0.0],
    };
    let (mut mean, mut var) = (m0, p0);
    for &obs in &y[1..] {
        let pred_mean = m.a + m.b * mean;
        let pred_var = m.b * m.b * var + m.sigma * m.sigma;
        let s = pred_var + m.r;
        let gain = pred_var / s;
        let innov = obs - pred_mean;
        mean = pred_mean + gain * innov;
        var = (1.0 - gain) * pred_var;
        out.mean.push(mean);
        out.var.push(var);
        out.loglik.push(-0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innov * innov / s));
    }
    out
}

/// Gaussian sampler independent of the crate's streams.
pub struct Normals(ChaCha8Rng);

impl Normals {
    pub fn new(seed: u64) -> Self {
        Normals(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Marsaglia polar method.
    pub fn next(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

/// Prices from the linear-Gaussian spread: `P_B` a random walk from 30,
/// `P_A = γ·P_B + x + ε`. The spread starts at its stationary mean.
pub fn linear_gaussian_prices(m: &LinearGaussian, gamma: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut z = Normals::new(seed);
    let mut x = m.a / (1.0 - m.b);
    let mut b = 30.0;
    let (mut pa, mut pb, mut xs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for t in 0..n {
        if t > 0 {
            x = m.a + m.b * x + m.sigma * z.next();
            b += 0.3 * z.next();
        }
        xs.push(x);
        pb.push(b);
        pa.push(gamma * b + x + m.r.sqrt() * z.next());
    }
    (pa, pb, xs)
}

/// Density of the first hitting time of zero for a standardised OU process
/// from `z0`, written in the `e^{2t}` form.
pub fn ou_hitting_density(z0: f64, t: f64) -> f64 {
    let e = (2.0 * t).exp();
    let d = e - 1.0;
    (2.0 / std::f64::consts::PI).sqrt() * z0.abs() * e * d.powf(-1.5) * (-z0 * z0 / (2.0 * d)).exp()
}

/// Maximiser of a unimodal `f` on `[lo, hi]`: a coarse scan, then golden
/// section on the bracketing cells.
pub fn argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 10_000;
    let h = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|k| lo + k as f64 * h)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-13 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Student-t density with `nu = 3`.
pub fn student_t3_pdf(x: f64) -> f64 {
    6.0 * 3f64.sqrt() / (std::f64::consts::PI * (3.0 + x * x).powi(2))
}

/// Sample mean and sample (n−1) standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Standard error of the mean.
pub fn std_error(v: &[f64]) -> f64 {
    mean_sd(v).1 / (v.len() as f64).sqrt()
}
