mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rapid_poisson::arrivals::place_cox_arrivals;
use rapid_poisson::expansions::{poisson_pmf, ServiceModel};
use rapid_poisson::harness::replication_rng;
use rapid_poisson::markov_env::sample_path;
use rapid_poisson::queue_sim::queue_from_arrivals;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Goodness of fit of a histogram to a Poisson law, pooling adjacent bins
/// until each expects at least five observations.
fn poisson_gof_p_value(hist: &[u64], mean: f64) -> f64 {
    let n: u64 = hist.iter().sum();
    let kmax = hist.len().max(20) + 20;
    let pmf = poisson_pmf(mean, kmax);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for k in 0..=kmax {
        obs += hist.get(k).copied().unwrap_or(0) as f64;
        exp += pmf.probs[k] * n as f64;
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    let tail_exp = n as f64 - bins.iter().map(|b| b.1).sum::<f64>();
    let last = bins.last_mut().unwrap();
    last.0 += obs;
    last.1 += tail_exp.max(0.0);
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    ChiSquared::new((bins.len() - 1) as f64).unwrap().sf(stat)
}

#[test]
fn queue_is_poisson_given_the_environment() {
    let model = common::example_model();
    let service = ServiceModel::Erlang {
        shape: 2,
        rate: 3.0,
    };
    let (eps, t) = (0.25, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let path = sample_path(&model, t / eps, &mut rng).unwrap();
    // ∫₀ᵗ f(X(s/ε)) K̄(t − s) ds, one window per segment
    let mean: f64 = path
        .segments()
        .map(|seg| {
            let (a, b) = (eps * seg.start, (eps * seg.end).min(t));
            model.rates()[seg.state]
                * (service.integrated_survival(t - a) - service.integrated_survival(t - b))
        })
        .sum();
    assert!(
        mean > 0.5,
        "fixture path should carry some load, got {mean}"
    );

    let reps = 100_000;
    let mut hist = vec![0u64; 64];
    for r in 0..reps {
        let mut rng = replication_rng(9, 0, r);
        let arrivals = place_cox_arrivals(&model, &path, eps, t, &mut rng);
        let q = queue_from_arrivals(&arrivals, &service, t, &mut rng).unwrap();
        hist[q.count] += 1;
    }
    let p = poisson_gof_p_value(&hist, mean);
    assert!(p > 0.01, "p-value {p}");
}

#[test]
fn later_query_times_see_at_least_as_many_arrivals() {
    let model = common::example_model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (arrivals, _) = rapid_poisson::arrivals::simulate_cox(&model, 0.1, 3.0, &mut rng).unwrap();
    let counts: Vec<usize> = (0..=30)
        .map(|i| arrivals.count_until(i as f64 * 0.1))
        .collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*counts.last().unwrap(), arrivals.len());
}
