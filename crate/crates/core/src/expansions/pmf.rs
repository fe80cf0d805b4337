use serde::Serialize;
use statrs::function::gamma::ln_gamma;

/// Tail mass left out by the default truncation rule.
pub const DEFAULT_TAIL: f64 = 1e-12;

/// Probability masses for k = 0..=kmax plus a bound on the omitted tail.
///
/// First-order corrected pmfs are asymptotic objects and may carry small
/// negative entries; these are kept as-is and listed in `negative_indices`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfVector {
    pub probs: Vec<f64>,
    pub kmax: usize,
    pub truncation_mass: f64,
    pub negative_indices: Vec<usize>,
}

impl PmfVector {
    pub(crate) fn from_parts(probs: Vec<f64>, truncation_mass: f64) -> Self {
        let negative_indices = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < 0.0)
            .map(|(k, _)| k)
            .collect();
        PmfVector {
            kmax: probs.len() - 1,
            probs,
            truncation_mass,
            negative_indices,
        }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }
}

/// Poisson masses e^{−m} m^k / k! for k = 0..=kmax.
///
/// The recurrence starts at the mode (evaluated in log space) and runs
/// outwards, so large means do not underflow the k = 0 seed.
pub fn poisson_terms(mean: f64, kmax: usize) -> Vec<f64> {
    let mut p = vec![0.0; kmax + 1];
    if mean == 0.0 {
        p[0] = 1.0;
        return p;
    }
    let mode = (mean.floor() as usize).min(kmax);
    let k = mode as f64;
    p[mode] = (-mean + k * mean.ln() - ln_gamma(k + 1.0)).exp();
    for j in (0..mode).rev() {
        p[j] = p[j + 1] * (j + 1) as f64 / mean;
    }
    for j in mode + 1..=kmax {
        p[j] = p[j - 1] * mean / j as f64;
    }
    p
}

fn tail_search_bound(mean: f64) -> usize {
    (mean + 40.0 * mean.sqrt() + 60.0).ceil() as usize
}

/// Smallest K with P(Poisson(mean) ≤ K) ≥ 1 − tail.
pub fn kmax_for_tail(mean: f64, tail: f64) -> usize {
    if mean == 0.0 {
        return 0;
    }
    let terms = poisson_terms(mean, tail_search_bound(mean));
    let mut cdf = 0.0;
    for (k, p) in terms.iter().enumerate() {
        cdf += p;
        if cdf >= 1.0 - tail {
            return k;
        }
    }
    terms.len() - 1
}

/// Default truncation: Poisson CDF ≥ 1 − 1e−12.
pub fn default_kmax(mean: f64) -> usize {
    kmax_for_tail(mean, DEFAULT_TAIL)
}

/// Poisson(mean) pmf truncated at `kmax`; `truncation_mass` is 1 − Σ probs.
pub fn poisson_pmf(mean: f64, kmax: usize) -> PmfVector {
    assert!(
        mean >= 0.0 && mean.is_finite(),
        "Poisson mean must be finite and >= 0"
    );
    let probs = poisson_terms(mean, kmax);
    let mass = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    PmfVector::from_parts(probs, mass)
}

/// Multiplies a Poisson(mean) baseline by 1 + weight(k) and records the
/// absolute mass of the corrected terms beyond `kmax`.
pub(crate) fn reweighted_poisson(
    mean: f64,
    kmax: usize,
    weight: impl Fn(usize) -> f64,
) -> PmfVector {
    let horizon = kmax.max(tail_search_bound(mean));
    let terms = poisson_terms(mean, horizon);
    let mut probs = Vec::with_capacity(kmax + 1);
    let mut tail = 0.0;
    for (k, p) in terms.iter().enumerate() {
        let v = p * (1.0 + weight(k));
        if k <= kmax {
            probs.push(v);
        } else {
            tail += v.abs();
        }
    }
    PmfVector::from_parts(probs, tail)
}
