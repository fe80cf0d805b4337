//! Small random-variate helpers shared by the simulators.

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::Poisson;

/// Exponential variate with the given rate, drawn by inversion of one open uniform.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = Open01.sample(rng);
    -u.ln() / rate
}

/// Uniform variate on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// Poisson count with the given mean; a zero mean consumes no randomness.
pub fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive Poisson mean");
    dist.sample(rng) as u64
}

/// Index drawn from a categorical law given by its cumulative weights.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("nonempty weights");
    let target = rng.random::<f64>() * total;
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Appends `count` sorted points drawn uniformly on the open interval (start, end).
pub(crate) fn place_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    count: u64,
    start: f64,
    end: f64,
    out: &mut Vec<f64>,
) {
    let first = out.len();
    let width = end - start;
    for _ in 0..count {
        out.push(start + width * open_unit(rng));
    }
    out[first..].sort_by(|a, b| a.partial_cmp(b).expect("finite arrival epoch"));
}
