//! Derivative-free minimisation: Nelder-Mead on unconstrained coordinates,
//! plus the logistic map used to keep box-constrained parameters strictly
//! inside their bounds.

#[derive(Clone, Debug)]
pub struct NelderMead {
    pub max_iterations: usize,
    /// Stop when the simplex diameter (max vertex distance to the best vertex)
    /// falls below this.
    pub x_tolerance: f64,
    /// Stop when the spread of function values falls below this.
    pub f_tolerance: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            x_tolerance: 1e-6,
            f_tolerance: 0.0,
            initial_step: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimises `f` from `start`. Non-finite values are treated as +∞.
    pub fn minimize(&self, start: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Minimum {
        let n = start.len();
        let mut evaluations = 0;
        let mut eval = |x: &[f64]| {
            evaluations += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        if n == 0 {
            let value = eval(start);
            return Minimum {
                x: Vec::new(),
                value,
                iterations: 0,
                evaluations: 1,
                converged: true,
            };
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut v = start.to_vec();
            v[i] += self.initial_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

        let mut iterations = 0;
        let mut converged = false;
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        while iterations < self.max_iterations {
            // order vertices; ties keep the earlier vertex first
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let diameter = simplex[1..]
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            let spread = values[n] - values[0];
            if diameter < self.x_tolerance || (values[0].is_finite() && spread <= self.f_tolerance && self.f_tolerance > 0.0) {
                converged = true;
                break;
            }
            iterations += 1;

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let worst = simplex[n].clone();
            for j in 0..n {
                trial[j] = centroid[j] + alpha * (centroid[j] - worst[j]);
            }
            let fr = eval(&trial);
            if fr < values[0] {
                for j in 0..n {
                    trial2[j] = centroid[j] + gamma * (trial[j] - centroid[j]);
                }
                let fe = eval(&trial2);
                if fe < fr {
                    simplex[n].copy_from_slice(&trial2);
                    values[n] = fe;
                } else {
                    simplex[n].copy_from_slice(&trial);
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
                continue;
            }
            // contraction, outside if the reflection improved on the worst
            let outside = fr < values[n];
            for j in 0..n {
                trial2[j] = if outside {
                    centroid[j] + rho * (trial[j] - centroid[j])
                } else {
                    centroid[j] + rho * (worst[j] - centroid[j])
                };
            }
            let fc = eval(&trial2);
            if fc < values[n].min(fr) {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fc;
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].clone();
            for i in 1..=n {
                for j in 0..n {
                    simplex[i][j] = best[j] + sigma * (simplex[i][j] - best[j]);
                }
                values[i] = eval(&simplex[i]);
            }
        }

        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
            .unwrap();
        Minimum {
            x: simplex[best].clone(),
            value: values[best],
            iterations,
            evaluations,
            converged,
        }
    }
}

/// Open interval `(lower, upper)` mapped from the real line by a logistic.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(upper > lower, "empty bounds ({lower}, {upper})");
        Self { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }

    /// Real line → interior of the box.
    pub fn to_bounded(&self, z: f64) -> f64 {
        let s = 1.0 / (1.0 + (-z).exp());
        let v = self.lower + (self.upper - self.lower) * s;
        // keep strictly inside even when the logistic saturates
        let eps = (self.upper - self.lower) * 1e-15;
        v.clamp(self.lower + eps, self.upper - eps)
    }

    /// Interior of the box → real line; values on or outside the edge are
    /// pulled just inside first.
    pub fn to_unbounded(&self, v: f64) -> f64 {
        let width = self.upper - self.lower;
        let s = ((v - self.lower) / width).clamp(1e-12, 1.0 - 1e-12);
        (s / (1.0 - s)).ln()
    }
}
