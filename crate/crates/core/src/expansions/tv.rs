//! Limiting path-level total-variation distance between the fast Cox process
//! and its constant-rate Poisson limit:
//! ½ E |∏_{j ≤ N₀(t)} f(X_j)/λ* − 1| with X_j iid ~ π and N₀(t) ~ Poisson(λ*t).

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::expansions::pmf::{kmax_for_tail, poisson_terms};
use crate::markov_env::{analyze, CtmcModel};
use crate::sampling;

/// Largest state count accepted by the exact enumeration.
pub const MAX_EXACT_STATES: usize = 6;
/// Largest Poisson truncation index accepted by the exact enumeration.
pub const MAX_EXACT_COUNT: usize = 80;

/// Distinct rate levels with their stationary probability and ratio f/λ*.
fn rate_levels(model: &CtmcModel, pi: &[f64], lambda_star: f64) -> Vec<(f64, f64)> {
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for (&f, &p) in model.rates().iter().zip(pi) {
        match levels.iter_mut().find(|(rate, _)| *rate == f) {
            Some(level) => level.1 += p,
            None => levels.push((f, p)),
        }
    }
    levels
        .into_iter()
        .map(|(f, p)| (p, f / lambda_star))
        .collect()
}

struct Enumeration<'a> {
    levels: &'a [(f64, f64)],
    ln_p: Vec<f64>,
    ln_r: Vec<f64>,
}

impl Enumeration<'_> {
    /// E|∏ r − 1| for a sample of size n, summing over all compositions of n
    /// across the rate levels with multinomial weights.
    fn expected_abs_deviation(&self, n: usize) -> f64 {
        let mut total = 0.0;
        self.recurse(0, n, ln_gamma(n as f64 + 1.0), 0.0, false, &mut total);
        total
    }

    fn recurse(
        &self,
        level: usize,
        left: usize,
        ln_w: f64,
        ln_prod: f64,
        zero: bool,
        total: &mut f64,
    ) {
        let last = level + 1 == self.levels.len();
        let range = if last { left..=left } else { 0..=left };
        for c in range {
            let cf = c as f64;
            let (p, r) = self.levels[level];
            if c > 0 && p == 0.0 {
                continue;
            }
            let w = ln_w - ln_gamma(cf + 1.0) + if c > 0 { cf * self.ln_p[level] } else { 0.0 };
            let z = zero || (c > 0 && r == 0.0);
            let lp = if c > 0 && r > 0.0 {
                ln_prod + cf * self.ln_r[level]
            } else {
                ln_prod
            };
            if last {
                let prod = if z { 0.0 } else { lp.exp() };
                *total += w.exp() * (prod - 1.0).abs();
            } else {
                self.recurse(level + 1, left - c, w, lp, z, total);
            }
        }
    }
}

/// Exact limit by enumeration, truncating the Poisson count once the omitted
/// mass is at most `truncation_mass`.
pub fn tv_limit_exact(model: &CtmcModel, t: f64, truncation_mass: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be finite and nonnegative"));
    }
    if !(truncation_mass > 0.0 && truncation_mass < 1.0) {
        return Err(invalid("truncation_mass", "must lie in (0, 1)"));
    }
    if model.n_states() > MAX_EXACT_STATES {
        return Err(Error::TooLarge(format!(
            "{} states exceed the limit of {MAX_EXACT_STATES}",
            model.n_states()
        )));
    }
    let analysis = analyze(model)?;
    let mean = analysis.lambda_star * t;
    let kmax = kmax_for_tail(mean, truncation_mass);
    if kmax > MAX_EXACT_COUNT {
        return Err(Error::TooLarge(format!(
            "Poisson truncation {kmax} exceeds {MAX_EXACT_COUNT}"
        )));
    }
    let levels = rate_levels(model, &analysis.pi, analysis.lambda_star);
    let en = Enumeration {
        ln_p: levels.iter().map(|&(p, _)| p.ln()).collect(),
        ln_r: levels.iter().map(|&(_, r)| r.ln()).collect(),
        levels: &levels,
    };
    let weights = poisson_terms(mean, kmax);
    let sum: f64 = weights
        .iter()
        .enumerate()
        .map(|(n, w)| w * en.expected_abs_deviation(n))
        .sum();
    Ok(0.5 * sum)
}

/// Monte Carlo estimate of the same limit with its standard error.
pub fn tv_limit_mc<R: Rng + ?Sized>(
    model: &CtmcModel,
    t: f64,
    reps: u64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if reps < 100 {
        return Err(invalid("reps", "at least 100 replications are required"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be finite and nonnegative"));
    }
    let analysis = analyze(model)?;
    let ratios: Vec<f64> = model
        .rates()
        .iter()
        .map(|f| f / analysis.lambda_star)
        .collect();
    let cumulative: Vec<f64> = analysis
        .pi
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mean_count = analysis.lambda_star * t;

    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..reps {
        let n = sampling::poisson_count(rng, mean_count);
        let mut prod = 1.0;
        for _ in 0..n {
            prod *= ratios[sampling::categorical(rng, &cumulative)];
            if prod == 0.0 {
                break;
            }
        }
        let x = (prod - 1.0).abs();
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (reps - 1) as f64;
    Ok((0.5 * mean, 0.5 * (var / reps as f64).sqrt()))
}
