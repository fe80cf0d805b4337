//! Closed-form approximations: the constant-rate Poisson baseline, its
//! first-order ε-corrections for arrival counts (Markov-modulated and periodic
//! intensities) and for infinite-server occupancy, and the limiting path-level
//! total-variation distance.

mod pmf;
mod quadrature;
mod service;
mod tv;

pub use pmf::{default_kmax, kmax_for_tail, poisson_pmf, poisson_terms, PmfVector, DEFAULT_TAIL};
pub use quadrature::{integrate, MAX_INTERVALS};
pub use service::ServiceModel;
pub use tv::{tv_limit_exact, tv_limit_mc, MAX_EXACT_COUNT, MAX_EXACT_STATES};

use statrs::function::gamma::ln_gamma;

use crate::arrivals::PeriodicIntensity;
use crate::error::{invalid, Error, Result};
use crate::markov_env::{CtmcModel, StationaryAnalysis};

/// Absolute tolerance for the η² quadrature.
pub const ETA_QUADRATURE_TOL: f64 = 1e-10;

/// Ingredients of the first-order count correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionInputs {
    pub lambda_star: f64,
    pub g_x0: f64,
    pub sigma2: f64,
    pub t: f64,
    pub eps: f64,
}

impl ExpansionInputs {
    pub fn from_analysis(
        analysis: &StationaryAnalysis,
        model: &CtmcModel,
        t: f64,
        eps: f64,
    ) -> Self {
        ExpansionInputs {
            lambda_star: analysis.lambda_star,
            g_x0: analysis.g_at(model.initial_state()),
            sigma2: analysis.sigma2,
            t,
            eps,
        }
    }

    pub fn mean(&self) -> f64 {
        self.lambda_star * self.t
    }
}

/// h_k(y) = e^{−y} y^k / k! and its first three derivatives in y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HkDerivatives {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

pub fn hk_derivatives(k: u32, y: f64) -> HkDerivatives {
    assert!(y > 0.0, "h_k derivatives need y > 0");
    let kf = k as f64;
    let h = (-y + kf * y.ln() - ln_gamma(kf + 1.0)).exp();
    let a = kf / y;
    let b = kf * (kf - 1.0) / (y * y);
    let c = kf * (kf - 1.0) * (kf - 2.0) / (y * y * y);
    HkDerivatives {
        h,
        h1: h * (a - 1.0),
        h2: h * (1.0 - 2.0 * a + b),
        h3: h * (c - 3.0 * b + 3.0 * a - 1.0),
    }
}

/// (k/m − 1)·first + ½(1 − 2k/m + k(k−1)/m²)·second.
///
/// Both brackets have zero mean under Poisson(m), which is what keeps the
/// corrected pmfs normalized.
pub fn correction_weight(k: usize, m: f64, first: f64, second: f64) -> f64 {
    let kf = k as f64;
    let linear = kf / m - 1.0;
    let quadratic = 1.0 - 2.0 * kf / m + kf * (kf - 1.0) / (m * m);
    linear * first + 0.5 * quadratic * second
}

fn resolve_kmax(mean: f64, kmax: Option<usize>) -> usize {
    kmax.unwrap_or_else(|| default_kmax(mean))
}

/// P(N_ε(t) = k) ≈ P₀(k)·(1 + ε[(k/(λ*t) − 1) g(x₀) + ½(1 − 2k/(λ*t) + k(k−1)/(λ*t)²) σ² t]).
pub fn corrected_count_pmf(inputs: &ExpansionInputs, kmax: Option<usize>) -> Result<PmfVector> {
    let m = inputs.mean();
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid("lambda_star * t", format!("{m} must be positive")));
    }
    let kmax = resolve_kmax(m, kmax);
    let (eps, g, s2t) = (inputs.eps, inputs.g_x0, inputs.sigma2 * inputs.t);
    Ok(pmf::reweighted_poisson(m, kmax, |k| {
        eps * correction_weight(k, m, g, s2t)
    }))
}

/// ∫_{⌊t/ε⌋}^{t/ε} (λ(s) − λ*) ds, i.e. the deviation accumulated over the
/// final partial period.
pub fn periodic_correction_integral(intensity: &PeriodicIntensity, eps: f64, t: f64) -> f64 {
    let x = t / eps;
    let frac = x - x.floor();
    intensity.cumulative(frac) - intensity.lambda_star() * frac
}

/// P(N_ε(t) = k) ≈ P₀(k)·(1 + ε (k/(λ*t) − 1) ∫_{⌊t/ε⌋}^{t/ε} (λ − λ*)).
pub fn corrected_count_pmf_periodic(
    intensity: &PeriodicIntensity,
    eps: f64,
    t: f64,
    kmax: Option<usize>,
) -> Result<PmfVector> {
    let m = intensity.lambda_star() * t;
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid("lambda_star * t", format!("{m} must be positive")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(invalid("eps", format!("{eps} is not in [0, 1]")));
    }
    let integral = if eps > 0.0 {
        periodic_correction_integral(intensity, eps, t)
    } else {
        0.0
    };
    let kmax = resolve_kmax(m, kmax);
    Ok(pmf::reweighted_poisson(m, kmax, |k| {
        eps * correction_weight(k, m, integral, 0.0)
    }))
}

/// E Q₀(t) = λ* ∫₀ᵗ K̄(s) ds for a system that starts empty.
pub fn mean_q0(lambda_star: f64, service: &ServiceModel, t: f64) -> f64 {
    lambda_star * service.integrated_survival(t)
}

/// η² = 2σ² ∫₀ᵗ K̄(s) k(s) s ds + σ² t K̄(t)², with the integral by adaptive
/// quadrature.
pub fn eta_squared(sigma2: f64, service: &ServiceModel, t: f64) -> Result<f64> {
    service.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be positive and finite"));
    }
    if !(sigma2 >= 0.0) {
        return Err(invalid("sigma2", "must be nonnegative"));
    }
    if sigma2 == 0.0 {
        return Ok(0.0);
    }
    let integral = integrate(
        |s| service.survival(s) * service.density(s) * s,
        0.0,
        t,
        &service.kinks(),
        ETA_QUADRATURE_TOL,
    )?;
    let tail = service.survival(t);
    Ok(2.0 * sigma2 * integral + sigma2 * t * tail * tail)
}

/// Closed form of η² for exponential(μ) services: σ²(1 − e^{−2μt})/(2μ).
pub fn eta_squared_exponential(sigma2: f64, rate: f64, t: f64) -> f64 {
    -sigma2 * (-2.0 * rate * t).exp_m1() / (2.0 * rate)
}

/// P(Q_ε(t) = k) ≈ P₀(k)·(1 + ε[(k/m − 1) g(x₀) K̄(t) + ½(1 − 2k/m + k(k−1)/m²) η²])
/// with m = E Q₀(t) and P₀ = Poisson(m).
#[allow(clippy::too_many_arguments)]
pub fn corrected_queue_pmf(
    lambda_star: f64,
    g_x0: f64,
    sigma2: f64,
    service: &ServiceModel,
    eps: f64,
    t: f64,
    kmax: Option<usize>,
) -> Result<PmfVector> {
    service.validate()?;
    let m = mean_q0(lambda_star, service, t);
    if !(m > 0.0) {
        return Err(Error::DegenerateMean);
    }
    let eta2 = eta_squared(sigma2, service, t)?;
    let first = g_x0 * service.survival(t);
    let kmax = resolve_kmax(m, kmax);
    Ok(pmf::reweighted_poisson(m, kmax, |k| {
        eps * correction_weight(k, m, first, eta2)
    }))
}
