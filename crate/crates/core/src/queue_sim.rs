//! Infinite-server queue fed by an arrival stream with iid service times,
//! observed at a single query time.

use rand::Rng;

use crate::arrivals::{simulate_cox, ArrivalStream};
use crate::error::{invalid, Error, Result};
use crate::expansions::ServiceModel;
use crate::markov_env::CtmcModel;

/// Number in system at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueObservation {
    pub t: f64,
    pub count: usize,
}

pub fn sample_service<R: Rng + ?Sized>(service: &ServiceModel, rng: &mut R) -> f64 {
    service.sample(rng)
}

/// #{i : Tᵢ ≤ t < Tᵢ + Vᵢ} for a system that starts empty.
pub fn number_in_system(
    arrivals: &ArrivalStream,
    services: &[f64],
    t: f64,
) -> Result<QueueObservation> {
    if services.len() != arrivals.len() {
        return Err(Error::LengthMismatch {
            left: arrivals.len(),
            right: services.len(),
        });
    }
    if t > arrivals.horizon {
        return Err(invalid("t", "query time beyond the stream horizon"));
    }
    let count = arrivals
        .times
        .iter()
        .zip(services)
        .filter(|(&a, &v)| a <= t && t < a + v)
        .count();
    Ok(QueueObservation { t, count })
}

/// Simulates Q_ε(t): Cox arrivals first, then one service draw per arrival in
/// arrival order.
pub fn simulate_queue_at_t<R: Rng + ?Sized>(
    model: &CtmcModel,
    service: &ServiceModel,
    eps: f64,
    t: f64,
    rng: &mut R,
) -> Result<QueueObservation> {
    service.validate()?;
    if t == 0.0 {
        return Ok(QueueObservation { t, count: 0 });
    }
    let (arrivals, _) = simulate_cox(model, eps, t, rng)?;
    queue_from_arrivals(&arrivals, service, t, rng)
}

/// Draws services for a given stream and counts the customers present at `t`.
pub fn queue_from_arrivals<R: Rng + ?Sized>(
    arrivals: &ArrivalStream,
    service: &ServiceModel,
    t: f64,
    rng: &mut R,
) -> Result<QueueObservation> {
    let services: Vec<f64> = (0..arrivals.len())
        .map(|_| sample_service(service, rng))
        .collect();
    number_in_system(arrivals, &services, t)
}
