//! Exact simulation of the arrival processes: constant-rate Poisson, the
//! time-scaled Markov-modulated Cox process with intensity f(X(t/ε)), periodic
//! Poisson with rate λ(t/ε), and speed-up followed by Bernoulli(ε) thinning of
//! a base stream.
//!
//! Intensities are piecewise constant, so every generator draws a Poisson count
//! per constant piece and places that many sorted uniforms inside it.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Error, Result};
use crate::markov_env::{analyze, sample_path, CtmcModel, EnvironmentPath, EnvironmentWalk};
use crate::sampling::{self, place_uniform};

/// Minimum width of a piece of a periodic intensity.
pub const MIN_PIECE_WIDTH: f64 = 1e-3;

/// Sorted arrival epochs on `(0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalStream {
    pub horizon: f64,
    pub times: Vec<f64>,
}

impl ArrivalStream {
    /// Builds a stream, checking simplicity and the time window.
    pub fn new(horizon: f64, times: Vec<f64>) -> Result<Self> {
        let s = ArrivalStream { horizon, times };
        if !s.is_simple() {
            return Err(invalid("times", "must be strictly increasing"));
        }
        if s.times.first().is_some_and(|&t| t <= 0.0)
            || s.times.last().is_some_and(|&t| t > horizon)
        {
            return Err(invalid("times", "must lie in (0, horizon]"));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Strictly increasing epochs: no batch arrivals.
    pub fn is_simple(&self) -> bool {
        self.times.windows(2).all(|w| w[0] < w[1])
    }

    /// N(s): arrivals in `[0, s]`.
    pub fn count_until(&self, s: f64) -> usize {
        self.times.partition_point(|&u| u <= s)
    }

    fn finish(horizon: f64, times: Vec<f64>) -> Self {
        let s = ArrivalStream { horizon, times };
        debug_assert!(s.is_simple(), "generated stream must be simple");
        s
    }
}

fn check_eps_t(eps: f64, t: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid("eps", format!("{eps} is not in (0, 1]")));
    }
    check_positive("t", t)
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(name, format!("{v} must be positive and finite")));
    }
    Ok(())
}

/// Homogeneous Poisson process of `rate` on `[0, t]`.
pub fn simulate_constant_poisson<R: Rng + ?Sized>(
    rate: f64,
    t: f64,
    rng: &mut R,
) -> Result<ArrivalStream> {
    check_positive("rate", rate)?;
    check_positive("t", t)?;
    let n = sampling::poisson_count(rng, rate * t);
    let mut times = Vec::with_capacity(n as usize);
    place_uniform(rng, n, 0.0, t, &mut times);
    Ok(ArrivalStream::finish(t, times))
}

/// Places conditionally Poisson arrivals on a frozen environment path.
///
/// The path lives on the fast clock `[0, t/ε]`; a segment `[a, b)` in state i
/// becomes the real-time window `[εa, εb)` carrying rate f(i).
pub fn place_cox_arrivals<R: Rng + ?Sized>(
    model: &CtmcModel,
    path: &EnvironmentPath,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> ArrivalStream {
    let rates = model.rates();
    let mut times = Vec::new();
    for seg in path.segments() {
        let start = eps * seg.start;
        let end = (eps * seg.end).min(t);
        if end <= start {
            continue;
        }
        let n = sampling::poisson_count(rng, rates[seg.state] * (end - start));
        place_uniform(rng, n, start, end, &mut times);
    }
    ArrivalStream::finish(t, times)
}

/// Cox process with intensity f(X(s/ε)) on `[0, t]`.
///
/// The environment is simulated on `[0, t/ε]` first, then arrivals are placed
/// segment by segment. Returns the path for diagnostics.
pub fn simulate_cox<R: Rng + ?Sized>(
    model: &CtmcModel,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> Result<(ArrivalStream, EnvironmentPath)> {
    check_eps_t(eps, t)?;
    let path = sample_path(model, t / eps, rng)?;
    let stream = place_cox_arrivals(model, &path, eps, t, rng);
    Ok((stream, path))
}

/// Arrival count of one Cox replication together with its compensator
/// A_ε(t) = ∫₀ᵗ f(X(s/ε)) ds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxCount {
    pub count: u64,
    pub compensator: f64,
}

/// Streaming variant of [`simulate_cox`] that only keeps the count: one
/// environment segment is alive at a time, so memory is O(1) in t/ε.
pub fn cox_count<R: Rng + ?Sized>(
    model: &CtmcModel,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> Result<CoxCount> {
    check_eps_t(eps, t)?;
    let rates = model.rates();
    let mut count = 0;
    let mut compensator = 0.0;
    let mut walk = EnvironmentWalk::new(model, t / eps);
    while let Some(seg) = walk.next_segment(rng) {
        let len = (eps * seg.end).min(t) - eps * seg.start;
        if len <= 0.0 {
            continue;
        }
        let mean = rates[seg.state] * len;
        compensator += mean;
        count += sampling::poisson_count(rng, mean);
    }
    Ok(CoxCount { count, compensator })
}

/// Piecewise-constant intensity on `[0, 1)`, extended with period 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicIntensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PeriodicIntensity {
    /// `breakpoints` are either the piece boundaries `0 = b₀ < … < b_m = 1`
    /// (length m + 1) or the piece start points `0 = b₀ < … < b_{m−1}` (length m).
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let mut breakpoints = breakpoints;
        if values.is_empty() {
            return Err(invalid("values", "at least one piece is required"));
        }
        if breakpoints.len() == values.len() {
            breakpoints.push(1.0);
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(invalid(
                "breakpoints",
                format!(
                    "expected {} or {} entries for {} values",
                    values.len(),
                    values.len() + 1,
                    values.len()
                ),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(invalid("breakpoints", "must start at 0 and end at 1"));
        }
        if breakpoints
            .windows(2)
            .any(|w| !(w[1] - w[0] >= MIN_PIECE_WIDTH))
        {
            return Err(invalid(
                "breakpoints",
                format!("must be increasing with piece widths >= {MIN_PIECE_WIDTH}"),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("values", "rates must be finite and nonnegative"));
        }
        let p = PeriodicIntensity {
            breakpoints,
            values,
        };
        if !(p.lambda_star() > 0.0) {
            return Err(Error::ZeroMeanRate);
        }
        Ok(p)
    }

    /// Single piece of constant rate.
    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0.0, 1.0], vec![rate])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pieces as `(start, end, rate)` within one period.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, &v)| (w[0], w[1], v))
    }

    /// Period average λ* = ∫₀¹ λ(r) dr.
    pub fn lambda_star(&self) -> f64 {
        self.pieces().map(|(a, b, v)| v * (b - a)).sum()
    }

    /// λ(s) for any s ≥ 0.
    pub fn value_at(&self, s: f64) -> f64 {
        let frac = s - s.floor();
        let idx = self.breakpoints.partition_point(|&b| b <= frac) - 1;
        self.values[idx.min(self.values.len() - 1)]
    }

    /// ∫₀^x λ(r) dr for x in [0, 1].
    pub fn cumulative(&self, x: f64) -> f64 {
        self.pieces()
            .map(|(a, b, v)| v * (b.min(x) - a).max(0.0))
            .sum()
    }
}

/// Inhomogeneous Poisson process with rate λ(s/ε) on `[0, t]`.
pub fn simulate_periodic<R: Rng + ?Sized>(
    intensity: &PeriodicIntensity,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> Result<ArrivalStream> {
    check_eps_t(eps, t)?;
    let fast_horizon = t / eps;
    let periods = fast_horizon.ceil() as u64;
    let mut times = Vec::new();
    for p in 0..periods {
        let base = p as f64;
        for (a, b, v) in intensity.pieces() {
            if v == 0.0 {
                continue;
            }
            let start = eps * (base + a);
            let end = (eps * (base + b)).min(t);
            if end <= start {
                continue;
            }
            let n = sampling::poisson_count(rng, v * (end - start));
            place_uniform(rng, n, start, end, &mut times);
        }
    }
    Ok(ArrivalStream::finish(t, times))
}

/// Base counting process N fed to the speed-up-and-thin construction.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseProcessSpec {
    /// Markov-modulated Poisson process with intensity f(X(s)).
    Cox(CtmcModel),
    /// Ordinary renewal process with Gamma(shape, rate) interarrival times.
    RenewalGamma {
        shape: f64,
        rate: f64,
    },
    Poisson {
        rate: f64,
    },
}

impl BaseProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaseProcessSpec::Cox(_) => Ok(()),
            BaseProcessSpec::RenewalGamma { shape, rate } => {
                check_positive("shape", *shape)?;
                check_positive("rate", *rate)
            }
            BaseProcessSpec::Poisson { rate } => check_positive("rate", *rate),
        }
    }

    /// Long-run arrival rate λ* = lim A(t)/t.
    pub fn lambda_star(&self) -> Result<f64> {
        self.validate()?;
        match self {
            BaseProcessSpec::Cox(model) => Ok(analyze(model)?.lambda_star),
            BaseProcessSpec::RenewalGamma { shape, rate } => Ok(rate / shape),
            BaseProcessSpec::Poisson { rate } => Ok(*rate),
        }
    }
}

/// Simulates the base process on its own clock over `[0, horizon]`.
pub fn simulate_base<R: Rng + ?Sized>(
    base: &BaseProcessSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<ArrivalStream> {
    base.validate()?;
    check_positive("horizon", horizon)?;
    match base {
        BaseProcessSpec::Cox(model) => Ok(simulate_cox(model, 1.0, horizon, rng)?.0),
        BaseProcessSpec::Poisson { rate } => simulate_constant_poisson(*rate, horizon, rng),
        BaseProcessSpec::RenewalGamma { shape, rate } => {
            let gap = Gamma::new(*shape, 1.0 / rate)
                .map_err(|e| invalid("renewal_gamma", e.to_string()))?;
            let mut times = Vec::new();
            let mut clock = 0.0;
            loop {
                clock += gap.sample(rng);
                if clock > horizon {
                    break;
                }
                // a zero gap would create a batch arrival
                if times.last().is_some_and(|&last| clock <= last) || clock <= 0.0 {
                    continue;
                }
                times.push(clock);
            }
            Ok(ArrivalStream::finish(horizon, times))
        }
    }
}

/// N_ε(t) = Σ_{i ≤ N(t/ε)} β_i: simulate N on `[0, t/ε]`, keep each arrival
/// with probability ε (one uniform per arrival, in arrival order) and map the
/// survivors back to real time by multiplying with ε.
pub fn thin_and_speed<R: Rng + ?Sized>(
    base: &BaseProcessSpec,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> Result<ArrivalStream> {
    check_eps_t(eps, t)?;
    let fast = simulate_base(base, t / eps, rng)?;
    let mut times = Vec::with_capacity((fast.len() as f64 * eps) as usize + 1);
    for &s in &fast.times {
        if rng.random::<f64>() < eps {
            times.push((eps * s).min(t));
        }
    }
    times.dedup();
    Ok(ArrivalStream::finish(t, times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_env::occupation_integral;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> CtmcModel {
        CtmcModel::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.0, 2.0], 0).unwrap()
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn constant_poisson_mean_and_zero_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 1_000_000;
        let mut total = 0usize;
        let mut zeros = 0usize;
        for _ in 0..reps {
            let s = simulate_constant_poisson(1.0, 1.0, &mut rng).unwrap();
            assert!(s.is_simple());
            total += s.len();
            zeros += s.is_empty() as usize;
        }
        let mean = total as f64 / reps as f64;
        assert!((mean - 1.0).abs() < 3e-3, "mean {mean}");
        let p0 = zeros as f64 / reps as f64;
        let e = (-1.0f64).exp();
        let se = (e * (1.0 - e) / reps as f64).sqrt();
        assert!((p0 - e).abs() < 3.0 * se, "p0 {p0}");
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(simulate_constant_poisson(0.0, 1.0, &mut rng).is_err());
        assert!(simulate_cox(&two_state(), 0.0, 1.0, &mut rng).is_err());
        assert!(simulate_cox(&two_state(), 1.5, 1.0, &mut rng).is_err());
        assert!(PeriodicIntensity::new(vec![0.0, 0.5], vec![0.0, 0.0]).is_err());
        assert!(PeriodicIntensity::new(vec![0.0, 0.0005], vec![1.0, 1.0]).is_err());
        assert!(PeriodicIntensity::new(vec![0.1, 0.5], vec![1.0, 1.0]).is_err());
        assert!(ArrivalStream::new(1.0, vec![0.5, 0.5]).is_err());
        assert!(ArrivalStream::new(1.0, vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn cox_streams_are_simple_and_within_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for eps in [1.0, 0.3, 0.01] {
            let (s, path) = simulate_cox(&two_state(), eps, 2.0, &mut rng).unwrap();
            assert!(s.is_simple());
            assert!(s.times.iter().all(|&u| u > 0.0 && u <= 2.0));
            assert!((path.horizon - 2.0 / eps).abs() < 1e-12);
            // no arrivals while the environment sits in the zero-rate state
            for &u in &s.times {
                assert_eq!(path.state_at(u / eps), 1);
            }
        }
    }

    #[test]
    fn compensator_mean_identity_for_cox() {
        let model = two_state();
        for eps in [0.5, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let diffs: Vec<f64> = (0..40_000)
                .map(|_| {
                    let (s, path) = simulate_cox(&model, eps, 1.0, &mut rng).unwrap();
                    let comp = eps * occupation_integral(&path, model.rates());
                    s.len() as f64 - comp
                })
                .collect();
            let (m, se) = mean_se(&diffs);
            assert!(m.abs() < 3.0 * se, "eps {eps}: mean diff {m} se {se}");
        }
    }

    #[test]
    fn streaming_count_matches_compensator_mean() {
        let model = two_state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let diffs: Vec<f64> = (0..40_000)
            .map(|_| {
                let c = cox_count(&model, 0.05, 1.0, &mut rng).unwrap();
                c.count as f64 - c.compensator
            })
            .collect();
        let (m, se) = mean_se(&diffs);
        assert!(m.abs() < 3.0 * se);
    }

    #[test]
    fn periodic_dead_zone_is_respected() {
        let p = PeriodicIntensity::new(vec![0.0, 0.5], vec![2.0, 0.0]).unwrap();
        let eps = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2_000 {
            let s = simulate_periodic(&p, eps, 3.0, &mut rng).unwrap();
            assert!(s.is_simple());
            for &u in &s.times {
                let x = u / eps;
                assert!(x - x.floor() < 0.5, "arrival at {u} in dead zone");
            }
        }
    }

    #[test]
    fn periodic_mean_over_whole_periods() {
        let p = PeriodicIntensity::new(vec![0.0, 0.5], vec![2.0, 0.0]).unwrap();
        assert_eq!(p.lambda_star(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let counts: Vec<f64> = (0..100_000)
            .map(|_| simulate_periodic(&p, 0.25, 2.0, &mut rng).unwrap().len() as f64)
            .collect();
        let (m, se) = mean_se(&counts);
        assert!((m - 2.0).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn periodic_intensity_accessors() {
        let p = PeriodicIntensity::new(vec![0.0, 0.25, 1.0], vec![4.0, 0.0]).unwrap();
        assert_eq!(p.value_at(0.1), 4.0);
        assert_eq!(p.value_at(1.1), 4.0);
        assert_eq!(p.value_at(0.5), 0.0);
        assert_eq!(p.cumulative(0.5), 1.0);
        assert_eq!(p.cumulative(1.0), p.lambda_star());
    }

    #[test]
    fn thinning_with_unit_eps_is_identity() {
        let bases = [
            BaseProcessSpec::Cox(two_state()),
            BaseProcessSpec::RenewalGamma {
                shape: 2.0,
                rate: 2.0,
            },
            BaseProcessSpec::Poisson { rate: 3.0 },
        ];
        for base in &bases {
            for seed in 0..20 {
                let a =
                    thin_and_speed(base, 1.0, 5.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let b = simulate_base(base, 5.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn thinned_poisson_keeps_rate() {
        let base = BaseProcessSpec::Poisson { rate: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let counts: Vec<f64> = (0..100_000)
            .map(|_| thin_and_speed(&base, 0.1, 1.0, &mut rng).unwrap().len() as f64)
            .collect();
        let (m, se) = mean_se(&counts);
        assert!((m - 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn renewal_base_lambda_star() {
        let base = BaseProcessSpec::RenewalGamma {
            shape: 2.0,
            rate: 2.0,
        };
        assert_eq!(base.lambda_star().unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = simulate_base(&base, 1e4, &mut rng).unwrap();
        let rate = s.len() as f64 / 1e4;
        // renewal counts have variance ≈ t·cv²·λ* with cv² = 1/shape
        assert!((rate - 1.0).abs() < 3.0 * (0.5f64 / 1e4).sqrt());
    }

    #[test]
    fn count_until_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, _) = simulate_cox(&two_state(), 0.2, 3.0, &mut rng).unwrap();
        let mut prev = 0;
        for i in 0..=30 {
            let c = s.count_until(i as f64 * 0.1);
            assert!(c >= prev);
            prev = c;
        }
        assert_eq!(s.count_until(3.0), s.len());
    }
}
