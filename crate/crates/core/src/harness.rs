//! Monte Carlo estimation of count and queue pmfs with deterministic,
//! order-independent seeding, plus the validation experiments built on it.
//!
//! Replication `r` of experiment `e` under master seed `s` always draws from
//! the ChaCha8 stream keyed by `(s, e)` with stream id `r`, so estimates are
//! reproducible bit-for-bit regardless of how replications are scheduled.
//! Per-worker histograms are merged by exact integer addition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::arrivals::{
    cox_count, simulate_constant_poisson, simulate_periodic, thin_and_speed, BaseProcessSpec,
    PeriodicIntensity,
};
use crate::error::{invalid, Result};
use crate::expansions::{
    corrected_count_pmf, corrected_queue_pmf, default_kmax, eta_squared, mean_q0, poisson_pmf,
    ExpansionInputs, PmfVector, ServiceModel,
};
use crate::markov_env::{analyze, CtmcModel};
use crate::queue_sim::simulate_queue_at_t;

/// Two-sided 99% normal quantile used for the Wald intervals.
pub const Z_99: f64 = 2.575_829_303_548_900_4;
/// Bins whose baseline probability is below this are ignored by the residuals.
pub const RESIDUAL_MIN_PROB: f64 = 1e-4;
/// Minimum expected count per bin in the two-sample chi-square test.
pub const CHI_SQUARE_MIN_EXPECTED: f64 = 5.0;

/// Random stream for one replication.
pub fn replication_rng(master_seed: u64, experiment: u64, replication: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&experiment.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replication);
    rng
}

/// What a single replication simulates and which integer it reports.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentSpec {
    ConstantPoisson {
        rate: f64,
        t: f64,
    },
    /// N_ε(t) for the Markov-modulated process.
    Cox {
        model: CtmcModel,
        eps: f64,
        t: f64,
    },
    /// N_ε(t) for a periodic intensity.
    Periodic {
        intensity: PeriodicIntensity,
        eps: f64,
        t: f64,
    },
    /// N_ε(t) from speeding up and Bernoulli-thinning a base process.
    Thinned {
        base: BaseProcessSpec,
        eps: f64,
        t: f64,
    },
    /// Q_ε(t) for the infinite-server queue with Cox arrivals.
    Queue {
        model: CtmcModel,
        service: ServiceModel,
        eps: f64,
        t: f64,
    },
}

impl ExperimentSpec {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        Ok(match self {
            ExperimentSpec::ConstantPoisson { rate, t } => {
                simulate_constant_poisson(*rate, *t, rng)?.len()
            }
            ExperimentSpec::Cox { model, eps, t } => {
                cox_count(model, *eps, *t, rng)?.count as usize
            }
            ExperimentSpec::Periodic { intensity, eps, t } => {
                simulate_periodic(intensity, *eps, *t, rng)?.len()
            }
            ExperimentSpec::Thinned { base, eps, t } => thin_and_speed(base, *eps, *t, rng)?.len(),
            ExperimentSpec::Queue {
                model,
                service,
                eps,
                t,
            } => simulate_queue_at_t(model, service, *eps, *t, rng)?.count,
        })
    }
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    Ok(pool.install(job))
}

fn merge(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.len() < b.len() {
        return merge(b, a);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Full histogram of `reps` replications of experiment `experiment`.
pub fn histogram(
    spec: &ExperimentSpec,
    reps: u64,
    master_seed: u64,
    experiment: u64,
    workers: usize,
) -> Result<Vec<u64>> {
    if reps == 0 {
        return Err(invalid("reps", "at least one replication is required"));
    }
    // surface parameter errors before fanning out
    spec.sample(&mut replication_rng(master_seed, experiment, 0))?;
    run_in_pool(workers, || {
        (0..reps)
            .into_par_iter()
            .map(|r| spec.sample(&mut replication_rng(master_seed, experiment, r)))
            .try_fold(Vec::new, |mut hist, k| {
                let k = k?;
                if hist.len() <= k {
                    hist.resize(k + 1, 0);
                }
                hist[k] += 1;
                Ok(hist)
            })
            .try_reduce(Vec::new, |a, b| Ok(merge(a, b)))
    })?
}

/// Empirical pmf with 99% Wald intervals clipped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfEstimate {
    pub counts: Vec<u64>,
    /// Replications whose value exceeded `kmax`.
    pub overflow: u64,
    pub reps: u64,
    pub probs: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

impl PmfEstimate {
    /// Builds an estimate from a histogram, folding values above `kmax`
    /// (default: the largest observed value) into `overflow`.
    pub fn from_histogram(hist: &[u64], kmax: Option<usize>) -> Self {
        let reps: u64 = hist.iter().sum();
        let kmax = kmax.unwrap_or(hist.len().saturating_sub(1));
        let counts: Vec<u64> = (0..=kmax)
            .map(|k| hist.get(k).copied().unwrap_or(0))
            .collect();
        let overflow = reps - counts.iter().sum::<u64>();
        let n = reps as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let half: Vec<f64> = probs
            .iter()
            .map(|p| Z_99 * (p * (1.0 - p) / n).sqrt())
            .collect();
        PmfEstimate {
            ci_low: probs
                .iter()
                .zip(&half)
                .map(|(p, h)| (p - h).max(0.0))
                .collect(),
            ci_high: probs
                .iter()
                .zip(&half)
                .map(|(p, h)| (p + h).min(1.0))
                .collect(),
            counts,
            overflow,
            reps,
            probs,
        }
    }

    pub fn kmax(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    /// Binomial standard error of bin `k`.
    pub fn se(&self, k: usize) -> f64 {
        let p = self.prob(k);
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }
}

/// Estimates the pmf of `spec` from `reps` replications under `master_seed`.
pub fn estimate_pmf(
    spec: &ExperimentSpec,
    reps: u64,
    master_seed: u64,
    kmax: Option<usize>,
    workers: usize,
) -> Result<PmfEstimate> {
    estimate_pmf_for(spec, reps, master_seed, 0, kmax, workers)
}

/// As [`estimate_pmf`] on the independent stream family `experiment`.
pub fn estimate_pmf_for(
    spec: &ExperimentSpec,
    reps: u64,
    master_seed: u64,
    experiment: u64,
    kmax: Option<usize>,
    workers: usize,
) -> Result<PmfEstimate> {
    let hist = histogram(spec, reps, master_seed, experiment, workers)?;
    Ok(PmfEstimate::from_histogram(&hist, kmax))
}

/// ½ Σ_k |p̂(k) − ref(k)| over the union of both truncated supports.
pub fn marginal_tv_distance(est: &PmfEstimate, reference: &PmfVector) -> f64 {
    let kmax = est.kmax().max(reference.kmax);
    0.5 * (0..=kmax)
        .map(|k| (est.prob(k) - reference.get(k)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-square homogeneity test on count histograms. Adjacent bins
/// are pooled until both samples expect at least five observations.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> ChiSquareReport {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let (fa, fb) = (na as f64, nb as f64);
    let share_a = fa / (fa + fb);
    let share_b = fb / (fa + fb);
    let len = a.len().max(b.len());
    let at = |h: &[u64], k: usize| h.get(k).copied().unwrap_or(0);

    let mut bins: Vec<(u64, u64)> = Vec::new();
    let (mut ca, mut cb) = (0u64, 0u64);
    for k in 0..len {
        ca += at(a, k);
        cb += at(b, k);
        let total = (ca + cb) as f64;
        if total * share_a.min(share_b) >= CHI_SQUARE_MIN_EXPECTED {
            bins.push((ca, cb));
            ca = 0;
            cb = 0;
        }
    }
    if ca + cb > 0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => bins.push((ca, cb)),
        }
    }
    let ra = (fb / fa).sqrt();
    let rb = (fa / fb).sqrt();
    let statistic: f64 = bins
        .iter()
        .map(|&(x, y)| {
            let d = x as f64 * ra - y as f64 * rb;
            d * d / (x + y) as f64
        })
        .sum();
    let dof = bins.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .expect("positive degrees of freedom")
            .sf(statistic)
    };
    ChiSquareReport {
        statistic,
        dof,
        p_value,
    }
}

/// Compares the marginal law of N_ε(t) from speed-up-and-thin of the Cox base
/// against the direct Cox simulation, on independent stream families.
pub fn construction_equivalence_test(
    model: &CtmcModel,
    eps: f64,
    t: f64,
    reps: u64,
    master_seed: u64,
    workers: usize,
) -> Result<ChiSquareReport> {
    let thinned = ExperimentSpec::Thinned {
        base: BaseProcessSpec::Cox(model.clone()),
        eps,
        t,
    };
    let direct = ExperimentSpec::Cox {
        model: model.clone(),
        eps,
        t,
    };
    let a = histogram(&thinned, reps, master_seed, 1, workers)?;
    let b = histogram(&direct, reps, master_seed, 2, workers)?;
    Ok(two_sample_chi_square(&a, &b))
}

/// Residuals of one ε in a [`ResidualReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub eps: f64,
    /// max_k |p̂(k) − p₀(k)| over bins with p₀(k) ≥ 1e−4.
    pub zeroth: f64,
    pub zeroth_se: f64,
    pub zeroth_k: usize,
    /// Same against the first-order corrected pmf.
    pub first: f64,
    pub first_se: f64,
    pub first_k: usize,
    pub first_over_eps: f64,
    pub first_over_eps_se: f64,
    /// ½ Σ |p̂ − p₀|.
    pub marginal_tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// "count" or "queue".
    pub kind: String,
    pub t: f64,
    pub reps: u64,
    pub master_seed: u64,
    pub lambda_star: f64,
    pub g_x0: f64,
    pub sigma2: f64,
    pub mean_reference: f64,
    pub eta2: Option<f64>,
    pub rows: Vec<ResidualRow>,
}

impl ResidualReport {
    /// First-order residual ≤ zeroth-order residual at every ε, allowing `z`
    /// combined standard errors.
    pub fn first_order_dominates(&self, z: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.first <= r.zeroth + z * r.first_se.hypot(r.zeroth_se))
    }

    /// r₁(ε)/ε never increases along the grid by more than `z` combined
    /// standard errors.
    pub fn ratio_nonincreasing(&self, z: f64) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].first_over_eps
                <= w[0].first_over_eps + z * w[0].first_over_eps_se.hypot(w[1].first_over_eps_se)
        })
    }

    /// Marginal TV to the Poisson baseline strictly decreases along the grid.
    pub fn marginal_tv_decreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].marginal_tv < w[0].marginal_tv)
    }

    /// Both residuals within `z` standard errors of zero at every ε.
    pub fn residuals_within_noise(&self, z: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.zeroth <= z * r.zeroth_se && r.first <= z * r.first_se)
    }
}

fn max_residual(est: &PmfEstimate, baseline: &PmfVector, target: &PmfVector) -> (f64, f64, usize) {
    let mut best = (0.0, 0.0, 0);
    for k in 0..=baseline.kmax {
        if baseline.probs[k] < RESIDUAL_MIN_PROB {
            continue;
        }
        let r = (est.prob(k) - target.get(k)).abs();
        if r > best.0 || best == (0.0, 0.0, 0) {
            // SE from the estimate, or from the model when the bin is empty
            let p = if est.prob(k) > 0.0 {
                est.prob(k)
            } else {
                target.get(k).max(0.0)
            };
            best = (r, (p * (1.0 - p) / est.reps as f64).sqrt(), k);
        }
    }
    best
}

/// For each ε in a strictly decreasing grid, estimates the pmf of N_ε(t)
/// (or Q_ε(t) when `service` is given) and measures its distance to the
/// zeroth-order Poisson baseline and to the first-order corrected pmf.
pub fn convergence_study(
    model: &CtmcModel,
    service: Option<&ServiceModel>,
    eps_grid: &[f64],
    t: f64,
    reps: u64,
    master_seed: u64,
    workers: usize,
) -> Result<ResidualReport> {
    if eps_grid.is_empty() {
        return Err(invalid("eps_grid", "must not be empty"));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(invalid("eps_grid", "entries must lie in (0, 1]"));
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("eps_grid", "must be strictly decreasing"));
    }
    let analysis = analyze(model)?;
    let g_x0 = analysis.g_at(model.initial_state());
    let (mean_reference, eta2) = match service {
        Some(s) => (
            mean_q0(analysis.lambda_star, s, t),
            Some(eta_squared(analysis.sigma2, s, t)?),
        ),
        None => (analysis.lambda_star * t, None),
    };
    let kmax = default_kmax(mean_reference);
    let baseline = poisson_pmf(mean_reference, kmax);

    let mut rows = Vec::with_capacity(eps_grid.len());
    for (i, &eps) in eps_grid.iter().enumerate() {
        let (spec, corrected) = match service {
            Some(s) => (
                ExperimentSpec::Queue {
                    model: model.clone(),
                    service: *s,
                    eps,
                    t,
                },
                corrected_queue_pmf(
                    analysis.lambda_star,
                    g_x0,
                    analysis.sigma2,
                    s,
                    eps,
                    t,
                    Some(kmax),
                )?,
            ),
            None => (
                ExperimentSpec::Cox {
                    model: model.clone(),
                    eps,
                    t,
                },
                corrected_count_pmf(
                    &ExpansionInputs::from_analysis(&analysis, model, t, eps),
                    Some(kmax),
                )?,
            ),
        };
        let est = estimate_pmf_for(&spec, reps, master_seed, i as u64 + 1, Some(kmax), workers)?;
        let (zeroth, zeroth_se, zeroth_k) = max_residual(&est, &baseline, &baseline);
        let (first, first_se, first_k) = max_residual(&est, &baseline, &corrected);
        rows.push(ResidualRow {
            eps,
            zeroth,
            zeroth_se,
            zeroth_k,
            first,
            first_se,
            first_k,
            first_over_eps: first / eps,
            first_over_eps_se: first_se / eps,
            marginal_tv: marginal_tv_distance(&est, &baseline),
        });
    }
    Ok(ResidualReport {
        kind: if service.is_some() { "queue" } else { "count" }.to_string(),
        t,
        reps,
        master_seed,
        lambda_star: analysis.lambda_star,
        g_x0,
        sigma2: analysis.sigma2,
        mean_reference,
        eta2,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_keyed_and_distinct() {
        let mut a = replication_rng(7, 0, 3);
        let mut b = replication_rng(7, 0, 3);
        let mut c = replication_rng(7, 0, 4);
        let mut d = replication_rng(7, 1, 3);
        let x: u64 = a.random();
        assert_eq!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
        assert_ne!(x, d.random::<u64>());
    }

    #[test]
    fn single_replication_is_a_point_mass() {
        let spec = ExperimentSpec::ConstantPoisson { rate: 3.0, t: 1.0 };
        let est = estimate_pmf(&spec, 1, 5, None, 1).unwrap();
        assert_eq!(est.reps, 1);
        assert_eq!(est.probs.iter().filter(|&&p| p == 1.0).count(), 1);
        assert_eq!(est.probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn estimate_invariants() {
        let spec = ExperimentSpec::ConstantPoisson { rate: 2.0, t: 1.0 };
        let est = estimate_pmf(&spec, 5_000, 1, Some(3), 2).unwrap();
        assert_eq!(est.counts.iter().sum::<u64>() + est.overflow, 5_000);
        for k in 0..=3 {
            assert_eq!(est.probs[k], est.counts[k] as f64 / 5_000.0);
            assert!(est.ci_low[k] >= 0.0 && est.ci_high[k] <= 1.0);
            assert!(est.ci_low[k] <= est.probs[k] && est.probs[k] <= est.ci_high[k]);
        }
    }

    #[test]
    fn zero_reps_rejected() {
        let spec = ExperimentSpec::ConstantPoisson { rate: 2.0, t: 1.0 };
        assert!(estimate_pmf(&spec, 0, 1, None, 1).is_err());
        let bad = ExperimentSpec::ConstantPoisson { rate: -2.0, t: 1.0 };
        assert!(estimate_pmf(&bad, 10, 1, None, 1).is_err());
    }

    #[test]
    fn tv_distance_edge_cases() {
        let reference = poisson_pmf(1.0, 3);
        let est = PmfEstimate::from_histogram(&[0, 0, 0, 0, 0, 10], None);
        let tv = marginal_tv_distance(&est, &reference);
        assert!((tv - (1.0 - 0.5 * reference.truncation_mass)).abs() < 1e-12);
        let exact = PmfEstimate {
            counts: vec![1, 1],
            overflow: 0,
            reps: 2,
            probs: vec![0.5, 0.5],
            ci_low: vec![0.0; 2],
            ci_high: vec![1.0; 2],
        };
        let ref_half = PmfVector {
            probs: vec![0.5, 0.5],
            kmax: 1,
            truncation_mass: 0.0,
            negative_indices: vec![],
        };
        assert_eq!(marginal_tv_distance(&exact, &ref_half), 0.0);
    }

    #[test]
    fn chi_square_pools_sparse_bins() {
        let a = vec![500, 300, 150, 40, 8, 2];
        let r = two_sample_chi_square(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dof, 4);
        let tiny = two_sample_chi_square(&[1], &[2]);
        assert_eq!(tiny.dof, 0);
    }

    #[test]
    fn grid_validation() {
        let m = CtmcModel::constant(1.0).unwrap();
        assert!(convergence_study(&m, None, &[0.1, 0.2], 1.0, 10, 0, 1).is_err());
        assert!(convergence_study(&m, None, &[], 1.0, 10, 0, 1).is_err());
        assert!(convergence_study(&m, None, &[1.5], 1.0, 10, 0, 1).is_err());
    }
}
