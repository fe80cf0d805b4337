use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expansions::pmf::poisson_terms;
use crate::sampling;

/// Service-time law V with density k(x) and survival K̄(x) = P(V > x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Uniform { a: f64, b: f64 },
}

impl ServiceModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ServiceModel::Exponential { rate } | ServiceModel::Erlang { rate, .. }
                if !(rate > 0.0 && rate.is_finite()) =>
            {
                Err(invalid(
                    "rate",
                    format!("{rate} must be positive and finite"),
                ))
            }
            ServiceModel::Erlang { shape: 0, .. } => Err(invalid("shape", "must be at least 1")),
            ServiceModel::Uniform { a, b } if !(a >= 0.0 && b > a && b.is_finite()) => Err(
                invalid("uniform", format!("need 0 <= a < b, got a = {a}, b = {b}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match *self {
            ServiceModel::Exponential { rate } => rate * (-rate * x).exp(),
            ServiceModel::Erlang { shape, rate } => {
                let n = shape as usize;
                // rate · Poisson(rate·x) mass at n − 1
                rate * poisson_terms(rate * x, n - 1)[n - 1]
            }
            ServiceModel::Uniform { a, b } => {
                if (a..=b).contains(&x) {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        match *self {
            ServiceModel::Exponential { rate } => (-rate * x).exp(),
            ServiceModel::Erlang { shape, rate } => poisson_terms(rate * x, shape as usize - 1)
                .iter()
                .sum::<f64>(),
            ServiceModel::Uniform { a, b } => {
                if x < a {
                    1.0
                } else if x < b {
                    (b - x) / (b - a)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceModel::Exponential { rate } => 1.0 / rate,
            ServiceModel::Erlang { shape, rate } => shape as f64 / rate,
            ServiceModel::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    /// ∫₀ᵗ K̄(s) ds = E min(V, t), in closed form.
    pub fn integrated_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            ServiceModel::Exponential { rate } => -(-rate * t).exp_m1() / rate,
            ServiceModel::Erlang { shape, rate } => {
                // ∫₀ᵗ e^{−μs}(μs)^j/j! ds = P(Poisson(μt) > j)/μ
                let p = poisson_terms(rate * t, shape as usize - 1);
                let mut cdf = 0.0;
                let mut acc = 0.0;
                for pj in p {
                    cdf += pj;
                    acc += (1.0 - cdf).max(0.0);
                }
                acc / rate
            }
            ServiceModel::Uniform { a, b } => {
                let head = t.min(a);
                if t <= a {
                    head
                } else {
                    let u = t.min(b);
                    head + ((b - a) * (u - a) - 0.5 * (u - a).powi(2)) / (b - a)
                }
            }
        }
    }

    /// Points in (0, ∞) where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            ServiceModel::Uniform { a, b } => [a, b].into_iter().filter(|&x| x > 0.0).collect(),
            _ => Vec::new(),
        }
    }

    /// Exponential by inversion, Erlang as a sum of exponentials, uniform by
    /// an affine map of an open uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceModel::Exponential { rate } => sampling::exponential(rng, rate),
            ServiceModel::Erlang { shape, rate } => {
                (0..shape).map(|_| sampling::exponential(rng, rate)).sum()
            }
            ServiceModel::Uniform { a, b } => a + (b - a) * sampling::open_unit(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // composite two-point Gauss–Legendre; never evaluates the endpoints
    fn gauss2(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let off = 0.5 * h / 3f64.sqrt();
        (0..n)
            .map(|i| {
                let c = a + (i as f64 + 0.5) * h;
                0.5 * h * (f(c - off) + f(c + off))
            })
            .sum()
    }

    fn models() -> Vec<ServiceModel> {
        vec![
            ServiceModel::Exponential { rate: 1.3 },
            ServiceModel::Erlang {
                shape: 1,
                rate: 0.7,
            },
            ServiceModel::Erlang {
                shape: 3,
                rate: 2.0,
            },
            ServiceModel::Uniform { a: 0.0, b: 2.0 },
            ServiceModel::Uniform { a: 0.5, b: 1.5 },
        ]
    }

    #[test]
    fn survival_is_one_minus_integrated_density() {
        for m in models() {
            for &x in &[0.3, 1.0, 2.5] {
                let mut pts = vec![0.0];
                pts.extend(m.kinks().into_iter().filter(|&k| k < x));
                pts.push(x);
                let cdf: f64 = pts
                    .windows(2)
                    .map(|w| gauss2(|s| m.density(s), w[0], w[1], 4000))
                    .sum();
                assert_abs_diff_eq!(m.survival(x), 1.0 - cdf, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn integrated_survival_matches_quadrature() {
        for m in models() {
            for &t in &[0.2, 1.0, 3.0] {
                let mut pts = vec![0.0];
                pts.extend(m.kinks().into_iter().filter(|&k| k < t));
                pts.push(t);
                let q: f64 = pts
                    .windows(2)
                    .map(|w| gauss2(|s| m.survival(s), w[0], w[1], 4000))
                    .sum();
                assert_abs_diff_eq!(m.integrated_survival(t), q, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn survival_is_monotone_from_one_to_zero() {
        for m in models() {
            assert_eq!(m.survival(0.0), 1.0);
            let mut prev = 1.0;
            for i in 1..200 {
                let s = m.survival(i as f64 * 0.1);
                assert!(s <= prev + 1e-15);
                prev = s;
            }
            assert!(m.survival(100.0) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ServiceModel::Exponential { rate: 0.0 }.validate().is_err());
        assert!(ServiceModel::Erlang {
            shape: 0,
            rate: 1.0
        }
        .validate()
        .is_err());
        assert!(ServiceModel::Uniform { a: 1.0, b: 1.0 }.validate().is_err());
        assert!(ServiceModel::Uniform { a: -1.0, b: 1.0 }
            .validate()
            .is_err());
    }
}
