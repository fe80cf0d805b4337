//! Finite-state Markov environment: generator validation, stationary analysis
//! (π, λ*, centered rates, Poisson-equation solution g, asymptotic variance σ²)
//! and exact path simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::sampling;

/// Absolute tolerance on generator row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Residual tolerance on the stationary and Poisson-equation solves.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Slack below zero tolerated on σ² before it is clamped.
pub const VARIANCE_CLAMP: f64 = 1e-12;

/// Validated, irreducible CTMC generator stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    n: usize,
    q: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.q[from * self.n + to]
    }

    /// Total rate of leaving `state`, i.e. −q[state][state].
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.rate(state, state)
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n..(state + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.q)
    }
}

/// Checks that `rows` is a square matrix of finite reals with nonnegative
/// off-diagonal entries, zero row sums and a strongly connected transition graph.
pub fn validate_generator(rows: &[Vec<f64>]) -> Result<GeneratorMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::NonSquare {
            rows: 0,
            bad_row: 0,
            bad_len: 0,
        });
    }
    if let Some((bad_row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::NonSquare {
            rows: n,
            bad_row,
            bad_len: r.len(),
        });
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            if i != j && v < 0.0 {
                return Err(Error::NegativeOffDiagonal {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > ROW_SUM_TOLERANCE {
            return Err(Error::RowSumNonzero { row: i, sum });
        }
    }
    check_strongly_connected(rows)?;
    Ok(GeneratorMatrix {
        n,
        q: rows.iter().flatten().copied().collect(),
    })
}

fn reachable(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn check_strongly_connected(rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    let forward = reachable(n, |i, j| i != j && rows[i][j] > 0.0);
    if let Some(to) = forward.iter().position(|&s| !s) {
        return Err(Error::Reducible { from: 0, to });
    }
    let backward = reachable(n, |i, j| i != j && rows[j][i] > 0.0);
    if let Some(from) = backward.iter().position(|&s| !s) {
        return Err(Error::Reducible { from, to: 0 });
    }
    Ok(())
}

/// Markov-modulated rate model: arrivals occur at rate `rates[X(t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcModel {
    generator: GeneratorMatrix,
    rates: Vec<f64>,
    initial_state: usize,
}

impl CtmcModel {
    pub fn new(generator: GeneratorMatrix, rates: Vec<f64>, initial_state: usize) -> Result<Self> {
        if rates.len() != generator.n() {
            return Err(invalid(
                "rates",
                format!("expected {} entries, got {}", generator.n(), rates.len()),
            ));
        }
        if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid(
                "rates",
                format!("entry {i} must be finite and nonnegative"),
            ));
        }
        if !rates.iter().any(|&r| r > 0.0) {
            return Err(invalid("rates", "at least one rate must be positive"));
        }
        if initial_state >= generator.n() {
            return Err(invalid(
                "initial_state",
                format!(
                    "{initial_state} is not below the state count {}",
                    generator.n()
                ),
            ));
        }
        Ok(CtmcModel {
            generator,
            rates,
            initial_state,
        })
    }

    /// Convenience constructor from raw generator rows.
    pub fn from_rows(rows: &[Vec<f64>], rates: Vec<f64>, initial_state: usize) -> Result<Self> {
        Self::new(validate_generator(rows)?, rates, initial_state)
    }

    /// Single-state environment: a homogeneous Poisson process of the given rate.
    pub fn constant(rate: f64) -> Result<Self> {
        Self::from_rows(&[vec![0.0]], vec![rate], 0)
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn n_states(&self) -> usize {
        self.generator.n()
    }

    /// Same environment with rates replaced.
    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self> {
        Self::new(self.generator.clone(), rates, self.initial_state)
    }

    pub fn with_initial_state(&self, initial_state: usize) -> Result<Self> {
        Self::new(self.generator.clone(), self.rates.clone(), initial_state)
    }

    /// True when every state carries the same rate.
    pub fn has_constant_rate(&self) -> bool {
        self.rates.iter().all(|&r| r == self.rates[0])
    }
}

/// Stationary quantities of a [`CtmcModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAnalysis {
    pub pi: Vec<f64>,
    pub lambda_star: f64,
    pub f_centered: Vec<f64>,
    pub g: Vec<f64>,
    pub sigma2: f64,
}

impl StationaryAnalysis {
    /// g evaluated at the model's initial state.
    pub fn g_at(&self, state: usize) -> f64 {
        self.g[state]
    }
}

fn solve_refined(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(Error::SingularSystem(what))?;
    // one step of iterative refinement keeps residuals near machine precision
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(what));
    }
    Ok(x)
}

/// Solves πQ = 0, Σπ = 1 by replacing the last equation of Qᵀπᵀ = 0 with the
/// normalization row.
pub fn stationary_distribution(generator: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = generator.n();
    let mut a = generator.as_matrix().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = solve_refined(&a, &b, "stationary distribution")?;
    Ok(pi.iter().copied().collect())
}

/// Computes π, λ* = π·f, f_c = f − λ*, the centered solution g of Qg = −f_c
/// (π·g = 0) and σ² = 2 Σ π f_c g.
pub fn analyze(model: &CtmcModel) -> Result<StationaryAnalysis> {
    let generator = model.generator();
    let n = generator.n();
    let pi = stationary_distribution(generator)?;
    let rates = model.rates();

    // Offsetting by the minimum makes λ* exact for constant rates.
    let base = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_star = base
        + pi.iter()
            .zip(rates)
            .map(|(p, r)| p * (r - base))
            .sum::<f64>();
    if !(lambda_star > 0.0) {
        return Err(Error::ZeroMeanRate);
    }
    let f_centered: Vec<f64> = rates.iter().map(|r| r - lambda_star).collect();

    // Poisson equation: the first row of Q is replaced by the centering row π.
    let mut a = generator.as_matrix();
    let mut b = DVector::from_iterator(n, f_centered.iter().map(|v| -v));
    for j in 0..n {
        a[(0, j)] = pi[j];
    }
    b[0] = 0.0;
    let g: Vec<f64> = solve_refined(&a, &b, "Poisson equation")?
        .iter()
        .copied()
        .collect();

    let raw = 2.0
        * pi.iter()
            .zip(&f_centered)
            .zip(&g)
            .map(|((p, fc), gi)| p * fc * gi)
            .sum::<f64>();
    let sigma2 = if raw >= 0.0 {
        raw
    } else if raw >= -VARIANCE_CLAMP {
        0.0
    } else {
        return Err(Error::SingularSystem("negative asymptotic variance"));
    };

    Ok(StationaryAnalysis {
        pi,
        lambda_star,
        f_centered,
        g,
        sigma2,
    })
}

/// One constant-state stretch of an environment trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub state: usize,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Piecewise-constant realization of the environment on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPath {
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
}

impl EnvironmentPath {
    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.states
            .iter()
            .enumerate()
            .map(move |(i, &state)| Segment {
                state,
                start: if i == 0 { 0.0 } else { self.jump_times[i - 1] },
                end: self.jump_times.get(i).copied().unwrap_or(self.horizon),
            })
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// State occupied at time `s` (right-continuous).
    pub fn state_at(&self, s: f64) -> usize {
        let idx = self.jump_times.partition_point(|&j| j <= s);
        self.states[idx]
    }
}

/// Segment-at-a-time generator of an exact CTMC trajectory.
///
/// Sojourns in state i are exponential with rate −q[i][i]; the next state is
/// chosen proportionally to the off-diagonal row entries. The random stream is
/// passed per call so callers can interleave their own draws.
#[derive(Debug, Clone)]
pub struct EnvironmentWalk<'a> {
    model: &'a CtmcModel,
    state: usize,
    clock: f64,
    horizon: f64,
    done: bool,
}

impl<'a> EnvironmentWalk<'a> {
    pub fn new(model: &'a CtmcModel, horizon: f64) -> Self {
        EnvironmentWalk {
            model,
            state: model.initial_state(),
            clock: 0.0,
            horizon,
            done: false,
        }
    }

    fn jump<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let gen = self.model.generator();
        let from = self.state;
        let target = rng.random::<f64>() * gen.exit_rate(from);
        let mut acc = 0.0;
        let mut last = from;
        for (to, &q) in gen.row(from).iter().enumerate() {
            if to == from || q <= 0.0 {
                continue;
            }
            acc += q;
            last = to;
            if target < acc {
                return to;
            }
        }
        last
    }

    /// Next constant-state segment, or `None` once the horizon is reached.
    pub fn next_segment<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Segment> {
        if self.done {
            return None;
        }
        let start = self.clock;
        let exit = self.model.generator().exit_rate(self.state);
        let end = if exit > 0.0 {
            start + sampling::exponential(rng, exit)
        } else {
            f64::INFINITY
        };
        let state = self.state;
        if end >= self.horizon {
            self.done = true;
            return Some(Segment {
                state,
                start,
                end: self.horizon,
            });
        }
        self.clock = end;
        self.state = self.jump(rng);
        Some(Segment { state, start, end })
    }
}

/// Exact simulation of the environment on `[0, horizon]`.
pub fn sample_path<R: Rng + ?Sized>(
    model: &CtmcModel,
    horizon: f64,
    rng: &mut R,
) -> Result<EnvironmentPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    let mut walk = EnvironmentWalk::new(model, horizon);
    while let Some(seg) = walk.next_segment(rng) {
        if !states.is_empty() {
            jump_times.push(seg.start);
        }
        states.push(seg.state);
    }
    Ok(EnvironmentPath {
        horizon,
        jump_times,
        states,
    })
}

/// Exact ∫₀^horizon weights[X(s)] ds over the piecewise-constant path.
pub fn occupation_integral(path: &EnvironmentPath, weights: &[f64]) -> f64 {
    path.segments().map(|s| weights[s.state] * s.len()).sum()
}
