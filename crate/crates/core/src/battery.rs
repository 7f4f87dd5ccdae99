//! Markov-chain model of the battery state of charge.
//!
//! The charge is quantized into `S` states of width `Δ`, so `C = (S−1)Δ`.
//! Over one period the state moves by `⌊ΔE/Δ⌋`, clipped to `[0, S−1]`,
//! which gives `p_{i,j} = F((j−i+1)Δ) − F((j−i)Δ)` in the interior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub const DEFAULT_VOLTAGE: f64 = 3.7;

const ROW_TOLERANCE: f64 = 1e-12;
const RESIDUAL_TOLERANCE: f64 = 1e-10;

pub fn mah_to_joules(mah: f64, voltage: f64) -> f64 {
    mah * 3.6 * voltage
}

pub fn joules_to_mah(joules: f64, voltage: f64) -> f64 {
    joules / (3.6 * voltage)
}

/// `S = C/Δ + 1`; the capacity must be a whole number of steps.
pub fn states_for_capacity(capacity: f64, delta: f64) -> Result<usize> {
    if !(capacity > 0.0 && delta > 0.0) {
        return Err(Error::invalid("capacity", "capacity and step must be positive"));
    }
    let ratio = capacity / delta;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(
            "capacity",
            format!("{capacity} is not a multiple of the step {delta}"),
        ));
    }
    Ok(steps as usize + 1)
}

/// `S_Γ = ⌊Γ(S−1)⌋`.
pub fn guard_state(n_states: usize, gamma: f64) -> usize {
    // absorb rounding noise such as 0.29·100 = 28.999…
    ((gamma * (n_states - 1) as f64) + 1e-9).floor() as usize
}

/// Gaussian per-period net energy `ΔE ~ N(μ_Δ, σ_Δ²)`, in Joules.
#[derive(Debug, Clone)]
pub struct NetEnergyDist {
    normal: Normal,
}

impl NetEnergyDist {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std > 0.0) || !std.is_finite() {
            return Err(Error::invalid("net energy", format!("need finite mean and std > 0, got ({mean}, {std})")));
        }
        let normal = Normal::new(mean, std).map_err(|e| Error::invalid("net energy", e.to_string()))?;
        Ok(Self { normal })
    }

    /// Sample mean and (unbiased) standard deviation of observed net energies.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("net energy", "at least two samples are needed"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self::new(mean, var.sqrt())
    }

    pub fn mean(&self) -> f64 {
        self.normal.mean_value()
    }

    pub fn std(&self) -> f64 {
        self.normal.std_dev_value()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.normal.cdf(x)
    }

    /// `P[lo ≤ ΔE < hi]`, evaluated on whichever tail keeps precision.
    pub fn interval(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if lo >= self.mean() {
            (self.normal.sf(lo) - self.normal.sf(hi)).max(0.0)
        } else {
            (self.normal.cdf(hi) - self.normal.cdf(lo)).max(0.0)
        }
    }
}

trait NormalExt {
    fn mean_value(&self) -> f64;
    fn std_dev_value(&self) -> f64;
}

impl NormalExt for Normal {
    fn mean_value(&self) -> f64 {
        statrs::statistics::Distribution::mean(self).unwrap_or(f64::NAN)
    }

    fn std_dev_value(&self) -> f64 {
        statrs::statistics::Distribution::std_dev(self).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct BatteryChain {
    psi: DMatrix<f64>,
    step: f64,
    guard: usize,
}

impl BatteryChain {
    /// Wraps an explicit transition matrix after checking it is stochastic.
    pub fn from_matrix(psi: DMatrix<f64>, step: f64, guard: usize) -> Result<Self> {
        let s = psi.nrows();
        if s < 2 || psi.ncols() != s {
            return Err(Error::invalid("transition matrix", format!("{}x{} is not square with S >= 2", s, psi.ncols())));
        }
        if !(step > 0.0) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if guard >= s {
            return Err(Error::invalid("guard state", format!("{guard} outside 0..{s}")));
        }
        for (row, r) in psi.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        Ok(Self { psi, step, guard })
    }

    pub fn n_states(&self) -> usize {
        self.psi.nrows()
    }

    /// `Δ` in Joules.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn capacity(&self) -> f64 {
        (self.n_states() - 1) as f64 * self.step
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn guard_state(&self) -> usize {
        self.guard
    }

    pub fn p_loc(&self) -> Result<f64> {
        let pi = stationary(self, StationaryMethod::LinearSolve)?;
        Ok(loss_of_charge(self, &pi))
    }
}

pub fn build_chain(dist: &NetEnergyDist, n_states: usize, delta: f64, gamma: f64) -> Result<BatteryChain> {
    if n_states < 2 {
        return Err(Error::invalid("S", format!("{n_states} < 2")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("{gamma} not in [0, 1)")));
    }
    let top = n_states - 1;
    let psi = DMatrix::from_fn(n_states, n_states, |i, j| {
        let k = j as f64 - i as f64;
        let lo = if j == 0 { f64::NEG_INFINITY } else { k * delta };
        let hi = if j == top { f64::INFINITY } else { (k + 1.0) * delta };
        dist.interval(lo, hi)
    });
    BatteryChain::from_matrix(psi, delta, guard_state(n_states, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryMethod {
    /// `(Ψ^T − I)π = 0` with one equation replaced by `Σπ = 1`.
    LinearSolve,
    /// Repeated squaring of the lazy chain `(I + Ψ)/2`.
    PowerIteration,
}

/// Closed communicating classes of the transition graph.
fn closed_classes(psi: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let s = psi.nrows();
    let mut reach = vec![vec![false; s]; s];
    for i in 0..s {
        let mut stack = vec![i];
        reach[i][i] = true;
        while let Some(u) = stack.pop() {
            for v in 0..s {
                if psi[(u, v)] > 0.0 && !reach[i][v] {
                    reach[i][v] = true;
                    stack.push(v);
                }
            }
        }
    }
    let mut seen = vec![false; s];
    let mut classes = Vec::new();
    for i in 0..s {
        if seen[i] {
            continue;
        }
        let class: Vec<usize> = (0..s).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &class {
            seen[j] = true;
        }
        let closed = (0..s).all(|j| !reach[i][j] || reach[j][i]);
        if closed {
            classes.push(class);
        }
    }
    classes
}

/// Stationary distribution `π = Ψ^T π`, `Σπ = 1`.
pub fn stationary(chain: &BatteryChain, method: StationaryMethod) -> Result<DVector<f64>> {
    let classes = closed_classes(&chain.psi);
    if classes.len() != 1 {
        return Err(Error::Reducible {
            states: classes.into_iter().next().unwrap_or_default(),
        });
    }
    let pi = match method {
        StationaryMethod::LinearSolve => solve_linear(&chain.psi)?,
        StationaryMethod::PowerIteration => solve_power(&chain.psi)?,
    };
    let residual = stationary_residual(chain, &pi);
    if residual >= RESIDUAL_TOLERANCE {
        return Err(Error::Solve(format!("stationary residual {residual:e} too large")));
    }
    Ok(pi)
}

fn normalized(mut pi: DVector<f64>) -> Result<DVector<f64>> {
    pi.iter_mut().for_each(|p| *p = p.max(0.0));
    let total = pi.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Solve("stationary vector has no mass".into()));
    }
    Ok(pi / total)
}

fn solve_linear(psi: &DMatrix<f64>) -> Result<DVector<f64>> {
    let s = psi.nrows();
    let mut a = psi.transpose() - DMatrix::identity(s, s);
    a.row_mut(s - 1).fill(1.0);
    let mut rhs = DVector::zeros(s);
    rhs[s - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solve("singular balance equations".into()))?;
    normalized(pi)
}

fn solve_power(psi: &DMatrix<f64>) -> Result<DVector<f64>> {
    let s = psi.nrows();
    let mut m = (psi + DMatrix::identity(s, s)) * 0.5;
    for _ in 0..64 {
        let mut next = &m * &m;
        // squaring also squares any rounding drift in the row sums
        for mut row in next.row_iter_mut() {
            let total = row.sum();
            row /= total;
        }
        let spread = (0..s)
            .map(|j| {
                let col = next.column(j);
                col.max() - col.min()
            })
            .fold(0.0, f64::max);
        m = next;
        if spread < 1e-14 {
            break;
        }
    }
    let mut pi = normalized(m.row_mean().transpose())?;
    let lazy = (psi.transpose() + DMatrix::identity(s, s)) * 0.5;
    for _ in 0..16 {
        pi = normalized(&lazy * &pi)?;
    }
    Ok(pi)
}

/// `‖Ψ^T π − π‖_∞`.
pub fn stationary_residual(chain: &BatteryChain, pi: &DVector<f64>) -> f64 {
    (chain.psi.tr_mul(pi) - pi).amax()
}

/// `p_LoC = Σ_{j ≤ S_Γ} π_j`.
pub fn loss_of_charge(chain: &BatteryChain, pi: &DVector<f64>) -> f64 {
    pi.iter().take(chain.guard + 1).sum::<f64>().min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sizing {
    Feasible {
        n_states: usize,
        delta: f64,
        capacity: f64,
        p_loc: f64,
    },
    Infeasible,
}

impl Sizing {
    pub fn capacity(&self) -> Option<f64> {
        match self {
            Sizing::Feasible { capacity, .. } => Some(*capacity),
            Sizing::Infeasible => None,
        }
    }
}

/// Linear search over `S ∈ [2, max_states]` for every `Δ` in the grid;
/// returns the smallest capacity with `p_LoC ≤ target`.
///
/// Grid points whose chain is reducible are skipped.
pub fn size_battery(
    dist: &NetEnergyDist,
    delta_grid: &[f64],
    target_ploc: f64,
    gamma: f64,
    max_states: usize,
) -> Result<Sizing> {
    if delta_grid.is_empty() {
        return Err(Error::invalid("delta grid", "is empty"));
    }
    if !(target_ploc > 0.0 && target_ploc < 1.0) {
        return Err(Error::invalid("target p_LoC", format!("{target_ploc} not in (0, 1)")));
    }
    let mut best = Sizing::Infeasible;
    for &delta in delta_grid {
        for s in 2..=max_states {
            let capacity = (s - 1) as f64 * delta;
            if best.capacity().is_some_and(|c| capacity >= c) {
                break;
            }
            let chain = build_chain(dist, s, delta, gamma)?;
            let p_loc = match chain.p_loc() {
                Ok(p) => p,
                Err(Error::Reducible { .. }) => continue,
                Err(e) => return Err(e),
            };
            if p_loc <= target_ploc {
                best = Sizing::Feasible {
                    n_states: s,
                    delta,
                    capacity,
                    p_loc,
                };
                break;
            }
        }
    }
    Ok(best)
}

/// Per-period net energy, possibly depending on whether the HRIS is idle.
pub trait NetEnergySource {
    fn sample<R: Rng + ?Sized>(&mut self, idle: bool, rng: &mut R) -> f64;
}

impl NetEnergySource for NetEnergyDist {
    fn sample<R: Rng + ?Sized>(&mut self, _idle: bool, rng: &mut R) -> f64 {
        let sampler = NormalSampler::new(self.mean(), self.std()).expect("validated at construction");
        sampler.sample(rng)
    }
}

/// The same net energy every period.
#[derive(Debug, Clone, Copy)]
pub struct ConstantEnergy(pub f64);

impl NetEnergySource for ConstantEnergy {
    fn sample<R: Rng + ?Sized>(&mut self, _idle: bool, _rng: &mut R) -> f64 {
        self.0
    }
}

/// Bootstrap resampling of observed per-period energies.
#[derive(Debug, Clone)]
pub struct EmpiricalEnergy {
    samples: Vec<f64>,
}

impl EmpiricalEnergy {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("empirical energy", "needs finite samples"));
        }
        Ok(Self { samples })
    }
}

impl NetEnergySource for EmpiricalEnergy {
    fn sample<R: Rng + ?Sized>(&mut self, _idle: bool, rng: &mut R) -> f64 {
        self.samples[rng.random_range(0..self.samples.len())]
    }
}

/// Separate sources for operating and idle periods.
#[derive(Debug, Clone)]
pub struct ModalEnergy<A, I> {
    pub active: A,
    pub idle: I,
}

impl<A: NetEnergySource, I: NetEnergySource> NetEnergySource for ModalEnergy<A, I> {
    fn sample<R: Rng + ?Sized>(&mut self, idle: bool, rng: &mut R) -> f64 {
        if idle {
            self.idle.sample(true, rng)
        } else {
            self.active.sample(false, rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocModel {
    /// The state index moves by `⌊ΔE/Δ⌋`, exactly as in the chain.
    Quantized,
    /// The charge in Joules is integrated and clamped to `[0, C]`.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub n_states: usize,
    pub delta: f64,
    pub guard_state: usize,
    pub n_periods: u64,
    pub initial_state: usize,
    pub model: SocModel,
    /// Periods simulated before statistics are collected.
    pub burn_in: u64,
    /// Keep every `record_every`-th SoC sample; 0 keeps none.
    pub record_every: u64,
    /// Number of batches for the batch-means standard error.
    pub batches: u64,
}

impl TraceParams {
    pub fn new(n_states: usize, delta: f64, guard_state: usize, n_periods: u64) -> Self {
        Self {
            n_states,
            delta,
            guard_state,
            n_periods,
            initial_state: n_states - 1,
            model: SocModel::Quantized,
            burn_in: 0,
            record_every: 0,
            batches: 50,
        }
    }

    pub fn capacity(&self) -> f64 {
        (self.n_states.saturating_sub(1)) as f64 * self.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Fraction of periods ending at or below the guard state.
    pub empirical_ploc: f64,
    pub std_error: f64,
    /// Fraction of periods spent in idle mode.
    pub idle_fraction: f64,
    /// Recorded state of charge in Joules.
    pub soc: Vec<f64>,
    pub final_soc: f64,
}

/// Simulates the charge and discharge process period by period.
///
/// The HRIS goes idle once the state reaches the guard and resumes two
/// states above it.
pub fn simulate_trace<S: NetEnergySource, R: Rng + ?Sized>(
    source: &mut S,
    params: &TraceParams,
    rng: &mut R,
) -> Result<Trace> {
    let s = params.n_states;
    if s < 2 || !(params.delta > 0.0) {
        return Err(Error::invalid("trace", "need S >= 2 and delta > 0"));
    }
    if params.n_periods == 0 {
        return Err(Error::invalid("n_periods", "must be at least 1"));
    }
    if params.guard_state >= s || params.initial_state >= s {
        return Err(Error::invalid("trace", "guard and initial state must lie in 0..S"));
    }
    let top = s - 1;
    let capacity = params.capacity();
    let mut state = params.initial_state;
    let mut charge = state as f64 * params.delta;
    let mut idle = state <= params.guard_state;

    let batches = params.batches.clamp(1, params.n_periods);
    let batch_len = params.n_periods / batches;
    let mut batch_hits = vec![0u64; batches as usize];
    let mut hits = 0u64;
    let mut idle_periods = 0u64;
    let mut soc = Vec::new();
    if params.record_every > 0 {
        soc.push(charge);
    }

    for t in 0..params.burn_in + params.n_periods {
        if idle && state >= params.guard_state + 2 {
            idle = false;
        } else if state <= params.guard_state {
            idle = true;
        }
        let x = source.sample(idle, rng);
        match params.model {
            SocModel::Quantized => {
                let jump = (x / params.delta).floor().clamp(-(s as f64), s as f64) as i64;
                state = (state as i64 + jump).clamp(0, top as i64) as usize;
                charge = state as f64 * params.delta;
            }
            SocModel::Continuous => {
                charge = (charge + x).clamp(0.0, capacity);
                state = ((charge / params.delta).floor() as usize).min(top);
            }
        }
        if t < params.burn_in {
            continue;
        }
        let n = t - params.burn_in;
        if idle {
            idle_periods += 1;
        }
        if state <= params.guard_state {
            hits += 1;
            let b = (n / batch_len).min(batches - 1);
            batch_hits[b as usize] += 1;
        }
        if params.record_every > 0 && (n + 1) % params.record_every == 0 {
            soc.push(charge);
        }
    }

    let n = params.n_periods as f64;
    let p = hits as f64 / n;
    let std_error = batch_means_error(&batch_hits, batch_len, params.n_periods, hits);
    Ok(Trace {
        empirical_ploc: p,
        std_error,
        idle_fraction: idle_periods as f64 / n,
        soc,
        final_soc: charge,
    })
}

/// Batch-means standard error, floored by the binomial error of a
/// continuity-corrected proportion so that rare events never report zero.
fn batch_means_error(batch_hits: &[u64], batch_len: u64, n_periods: u64, hits: u64) -> f64 {
    let b = batch_hits.len();
    let last_len = n_periods - batch_len * (b as u64 - 1);
    let means: Vec<f64> = batch_hits
        .iter()
        .enumerate()
        .map(|(i, &h)| h as f64 / if i + 1 == b { last_len } else { batch_len } as f64)
        .collect();
    let batch_se = if b > 1 {
        let m = means.iter().sum::<f64>() / b as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
        (var / b as f64).sqrt()
    } else {
        0.0
    };
    let n = n_periods as f64;
    let p = (hits as f64 + 0.5) / (n + 1.0);
    batch_se.max((p * (1.0 - p) / n).sqrt())
}
