//! Gibbs variable sweeps with parallel tempering over a temperature ladder.
//!
//! A replica at inverse temperature `beta` holds a control sequence plus two
//! vector caches: forward lifted states (anchored at the initial state) and
//! backward cost rows (anchored at the cost row). The conditional energy of
//! swapping the action at step `t` is then a single matrix-vector product and
//! a dot product, so one full variable sweep costs `T * (|U| + 2)`
//! matrix-vector products instead of `T * |U|` cost evaluations from scratch.
//!
//! Determinism contract:
//! - replica slot `j` owns the random stream `(seed, j + 1)`; the tempering
//!   sweep uses stream `(seed, M + 1)`;
//! - streams are attached to ladder slots, not to payloads: a tempering flip
//!   exchanges sequence, caches and cost but never `beta` or the rng;
//! - one uniform variate is consumed per step and per adjacent pair, whether
//!   or not the flip is accepted;
//! - all floating-point reductions run in a fixed order, so results are
//!   bit-identical for a fixed seed regardless of the worker count.
//!
//! `solve` drives all replicas through a batched engine that processes the
//! whole ladder per matrix pass (see `engine`); its per-replica arithmetic is
//! the same, bit for bit, as calling [`Replica::gibbs_sweep`] in a loop.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::linalg::dot;
use crate::model::{ControlSequence, KoopmanModel, ModelError};
use crate::{scalar, Scalar};

mod engine;

pub use engine::BatchEngine;

#[derive(Debug, Error)]
pub enum SamplerError<S: Scalar> {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite energy for action {action}")]
    NonFiniteEnergy { action: usize },
    #[error("non-finite replica cost")]
    NonFiniteCost,
    #[error("non-finite input to flip probability")]
    NonFiniteFlip,
    #[error("numeric abort during sweep {sweep}: {cause}")]
    Aborted { sweep: u64, cause: Box<SamplerError<S>>, partial: Box<SolveResult<S>> },
}

/// Ordered inverse temperatures `beta_min = betas[0] < ... = beta_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureLadder<S> {
    betas: Vec<S>,
}

impl<S: Scalar> TemperatureLadder<S> {
    pub fn from_betas(betas: Vec<S>) -> Result<Self, SamplerError<S>> {
        if betas.is_empty() {
            return Err(SamplerError::Config("ladder needs at least one temperature".into()));
        }
        if betas.iter().any(|b| !b.is_finite()) {
            return Err(SamplerError::Config("ladder temperatures must be finite".into()));
        }
        if betas.len() == 1 {
            if betas[0] < S::zero() {
                return Err(SamplerError::Config("inverse temperature must be >= 0".into()));
            }
        } else {
            if betas.iter().any(|&b| b <= S::zero()) {
                return Err(SamplerError::Config(
                    "ladders with more than one temperature need beta > 0".into(),
                ));
            }
            if betas.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SamplerError::Config("ladder must be strictly increasing".into()));
            }
        }
        Ok(Self { betas })
    }

    pub fn betas(&self) -> &[S] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Geometrically spaced ladder with `m >= 2` rungs.
pub fn make_log_ladder<S: Scalar>(
    beta_min: S,
    beta_max: S,
    m: usize,
) -> Result<TemperatureLadder<S>, SamplerError<S>> {
    if m < 2 {
        return Err(SamplerError::Config("log ladder needs at least 2 temperatures".into()));
    }
    if !(beta_min > S::zero()) || !(beta_max > S::zero()) || !beta_min.is_finite() || !beta_max.is_finite() {
        return Err(SamplerError::Config("log ladder needs finite positive bounds".into()));
    }
    if beta_min >= beta_max {
        return Err(SamplerError::Config("log ladder needs beta_min < beta_max".into()));
    }
    let ratio = beta_max / beta_min;
    let denom = scalar::<S>((m - 1) as f64);
    let mut betas: Vec<S> = (0..m)
        .map(|j| beta_min * ratio.powf(scalar::<S>(j as f64) / denom))
        .collect();
    betas[m - 1] = beta_max;
    TemperatureLadder::from_betas(betas)
}

/// One temperature's chain state plus its private random stream.
#[derive(Debug, Clone)]
pub struct Replica<S> {
    beta: S,
    sequence: Vec<usize>,
    /// `forward_states[i]` is the lifted state after applying the first `i`
    /// actions; entry 0 is the model's initial state.
    forward_states: Vec<Vec<S>>,
    /// `backward_rows[i]` is the cost row propagated backwards through the
    /// actions after step `i`; entry `T` is the model's cost row and entry 0
    /// the fully propagated row.
    backward_rows: Vec<Vec<S>>,
    cost: S,
    rng: ChaCha12Rng,
    matvec_count: u64,
    scratch: Vec<S>,
    pmf: Vec<S>,
    energies: Vec<S>,
}

impl<S: Scalar> Replica<S> {
    /// New replica with a sequence drawn uniformly from the feasible set.
    pub fn new(model: &KoopmanModel<S>, beta: S, mut rng: ChaCha12Rng) -> Result<Self, SamplerError<S>> {
        let sequence: Vec<usize> = (0..model.horizon())
            .map(|t| {
                let allowed = model.allowed(t);
                allowed[rng.random_range(0..allowed.len())]
            })
            .collect();
        Self::from_sequence(model, beta, sequence, rng)
    }

    pub fn from_sequence(
        model: &KoopmanModel<S>,
        beta: S,
        sequence: Vec<usize>,
        rng: ChaCha12Rng,
    ) -> Result<Self, SamplerError<S>> {
        model.validate_sequence(&ControlSequence(sequence.clone()))?;
        let n = model.lifted_dim();
        let t_len = model.horizon();
        let mut replica = Self {
            beta,
            sequence,
            forward_states: vec![vec![S::zero(); n]; t_len + 1],
            backward_rows: vec![vec![S::zero(); n]; t_len + 1],
            cost: S::zero(),
            rng,
            matvec_count: 0,
            scratch: vec![S::zero(); n],
            pmf: Vec::new(),
            energies: Vec::new(),
        };
        replica.rebuild_caches(model)?;
        Ok(replica)
    }

    pub fn beta(&self) -> S {
        self.beta
    }

    pub fn sequence(&self) -> &[usize] {
        &self.sequence
    }

    pub fn current_cost(&self) -> S {
        self.cost
    }

    pub fn forward_states(&self) -> &[Vec<S>] {
        &self.forward_states
    }

    pub fn backward_rows(&self) -> &[Vec<S>] {
        &self.backward_rows
    }

    /// Matrix-vector products performed so far (cache rebuilds included).
    pub fn matvec_count(&self) -> u64 {
        self.matvec_count
    }

    /// Replaces the sequence and rebuilds both caches.
    pub fn set_sequence(&mut self, model: &KoopmanModel<S>, sequence: Vec<usize>) -> Result<(), SamplerError<S>> {
        model.validate_sequence(&ControlSequence(sequence.clone()))?;
        self.sequence = sequence;
        self.rebuild_caches(model)
    }

    /// Rebuilds forward states, backward rows and the cached cost from the
    /// current sequence.
    pub fn rebuild_caches(&mut self, model: &KoopmanModel<S>) -> Result<(), SamplerError<S>> {
        let t_len = model.horizon();
        self.forward_states[0].copy_from_slice(model.initial_state());
        for i in 0..t_len {
            let (head, tail) = self.forward_states.split_at_mut(i + 1);
            model.dynamics(self.sequence[i]).matvec_into(&head[i], &mut tail[0]);
            self.matvec_count += 1;
        }
        self.refresh_backward(model);
        self.cost = dot(model.cost_row(), &self.forward_states[t_len]);
        if !self.cost.is_finite() {
            return Err(SamplerError::NonFiniteCost);
        }
        Ok(())
    }

    fn refresh_backward(&mut self, model: &KoopmanModel<S>) {
        let t_len = model.horizon();
        self.backward_rows[t_len].copy_from_slice(model.cost_row());
        for i in (0..t_len).rev() {
            let (head, tail) = self.backward_rows.split_at_mut(i + 1);
            model.dynamics_t(self.sequence[i]).matvec_into(&tail[0], &mut head[i]);
            self.matvec_count += 1;
        }
    }

    /// One full Gibbs variable sweep: resamples every coordinate from its
    /// exact conditional, updates the forward states on the way, then
    /// refreshes the cost and the backward rows for the new sequence.
    pub fn gibbs_sweep(&mut self, model: &KoopmanModel<S>) -> Result<(), SamplerError<S>> {
        self.gibbs_sweep_observed(model, |_, _, _| {})
    }

    /// Sweep variant that reports `(step, current sequence, conditional pmf)`
    /// right before each coordinate is resampled.
    pub fn gibbs_sweep_observed<F>(&mut self, model: &KoopmanModel<S>, mut observe: F) -> Result<(), SamplerError<S>>
    where
        F: FnMut(usize, &[usize], &[S]),
    {
        let t_len = model.horizon();
        for i in 0..t_len {
            let allowed = model.allowed(i);
            self.energies.clear();
            for &action in allowed {
                model.dynamics(action).matvec_into(&self.forward_states[i], &mut self.scratch);
                self.matvec_count += 1;
                let e = dot(&self.backward_rows[i + 1], &self.scratch);
                if !e.is_finite() {
                    return Err(SamplerError::NonFiniteEnergy { action });
                }
                self.energies.push(e);
            }
            boltzmann_weights(&self.energies, self.beta, &mut self.pmf)
                .map_err(|idx| SamplerError::NonFiniteEnergy { action: allowed[idx] })?;
            observe(i, &self.sequence, &self.pmf);
            let draw = scalar::<S>(self.rng.random::<f64>());
            self.sequence[i] = allowed[sample_index(&self.pmf, draw)];
            let (head, tail) = self.forward_states.split_at_mut(i + 1);
            model.dynamics(self.sequence[i]).matvec_into(&head[i], &mut tail[0]);
            self.matvec_count += 1;
        }
        self.cost = dot(model.cost_row(), &self.forward_states[t_len]);
        if !self.cost.is_finite() {
            return Err(SamplerError::NonFiniteCost);
        }
        self.refresh_backward(model);
        Ok(())
    }

    fn swap_payload(a: &mut Replica<S>, b: &mut Replica<S>) {
        std::mem::swap(&mut a.sequence, &mut b.sequence);
        std::mem::swap(&mut a.forward_states, &mut b.forward_states);
        std::mem::swap(&mut a.backward_rows, &mut b.backward_rows);
        std::mem::swap(&mut a.cost, &mut b.cost);
    }
}

/// Boltzmann conditional over the allowed actions given the cached backward
/// row and forward state at a step: `p(a) ~ exp(-beta * row * A(a) * state)`,
/// normalized with max-subtraction so every exponent is non-positive.
pub fn conditional_pmf<S: Scalar>(
    backward_row: &[S],
    forward_state: &[S],
    beta: S,
    allowed: &[usize],
    model: &KoopmanModel<S>,
) -> Result<Vec<S>, SamplerError<S>> {
    let n = model.lifted_dim();
    if backward_row.len() != n || forward_state.len() != n {
        return Err(SamplerError::Config(format!(
            "conditional pmf needs vectors of length {n}, got {} and {}",
            backward_row.len(),
            forward_state.len()
        )));
    }
    if allowed.is_empty() {
        return Err(SamplerError::Config("conditional pmf needs a non-empty action set".into()));
    }
    let mut scratch = vec![S::zero(); n];
    let mut energies = Vec::with_capacity(allowed.len());
    for &action in allowed {
        model.dynamics(action).matvec_into(forward_state, &mut scratch);
        let e = dot(backward_row, &scratch);
        if !e.is_finite() {
            return Err(SamplerError::NonFiniteEnergy { action });
        }
        energies.push(e);
    }
    let mut pmf = Vec::with_capacity(allowed.len());
    boltzmann_weights(&energies, beta, &mut pmf)
        .map_err(|idx| SamplerError::NonFiniteEnergy { action: allowed[idx] })?;
    Ok(pmf)
}

/// Normalized `exp(-beta * e)` weights with max-subtraction. On a non-finite
/// exponent the offending index is returned.
pub(crate) fn boltzmann_weights<S: Scalar>(energies: &[S], beta: S, out: &mut Vec<S>) -> Result<(), usize> {
    out.clear();
    let mut g_max = S::neg_infinity();
    for (idx, &e) in energies.iter().enumerate() {
        let g = -(beta * e);
        if !g.is_finite() {
            return Err(idx);
        }
        if g > g_max {
            g_max = g;
        }
        out.push(g);
    }
    let floor = scalar::<S>(-700.0);
    let mut sum = S::zero();
    for w in out.iter_mut() {
        let e = (*w - g_max).max(floor).exp();
        *w = e;
        sum += e;
    }
    for w in out.iter_mut() {
        *w = *w / sum;
    }
    Ok(())
}

/// Inverse-cdf draw; `draw` must lie in `[0, 1)`.
pub(crate) fn sample_index<S: Scalar>(pmf: &[S], draw: S) -> usize {
    let mut acc = S::zero();
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    pmf.len() - 1
}

/// Metropolis acceptance for exchanging the hotter replica (`beta_lo`) with
/// the colder one (`beta_hi`): `min(exp((beta_hi - beta_lo)(J_hi - J_lo)), 1)`.
/// Equals one exactly whenever the hotter replica holds the lower cost.
pub fn flip_probability<S: Scalar>(
    beta_lo: S,
    beta_hi: S,
    cost_lo: S,
    cost_hi: S,
) -> Result<S, SamplerError<S>> {
    if !beta_lo.is_finite() || !beta_hi.is_finite() || !cost_lo.is_finite() || !cost_hi.is_finite() {
        return Err(SamplerError::NonFiniteFlip);
    }
    if beta_lo >= beta_hi {
        return Err(SamplerError::Config("flip pair needs beta_lo < beta_hi".into()));
    }
    if cost_lo <= cost_hi {
        return Ok(S::one());
    }
    let exponent = (beta_hi - beta_lo) * (cost_hi - cost_lo);
    Ok(exponent.max(scalar::<S>(-700.0)).exp())
}

/// Sequential exchange sweep over adjacent ladder pairs, coldward. Each pair
/// `(j, j+1)` is evaluated on the post-swap state of the previous pair. Swaps
/// exchange the replica payloads but not `beta` or the random streams.
pub fn tempering_sweep<S: Scalar>(
    replicas: &mut [Replica<S>],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<bool>, SamplerError<S>> {
    if replicas.windows(2).any(|w| w[0].beta >= w[1].beta) {
        return Err(SamplerError::Config("replicas must be sorted by ascending beta".into()));
    }
    let mut flips = Vec::with_capacity(replicas.len().saturating_sub(1));
    for j in 0..replicas.len().saturating_sub(1) {
        let p = flip_probability(
            replicas[j].beta,
            replicas[j + 1].beta,
            replicas[j].cost,
            replicas[j + 1].cost,
        )?;
        let draw = scalar::<S>(rng.random::<f64>());
        let flip = draw < p;
        if flip {
            let (a, b) = replicas.split_at_mut(j + 1);
            Replica::swap_payload(&mut a[j], &mut b[0]);
        }
        flips.push(flip);
    }
    Ok(flips)
}

/// Sweep budget, seeding and worker count for [`solve`].
#[derive(Debug, Clone)]
pub struct SamplerConfig<S> {
    pub ladder: TemperatureLadder<S>,
    pub sweeps: u64,
    pub seed: u64,
    pub threads: usize,
    pub trace_every: u64,
}

impl<S: Scalar> SamplerConfig<S> {
    pub fn new(ladder: TemperatureLadder<S>, sweeps: u64, seed: u64) -> Self {
        Self { ladder, sweeps, seed, threads: 1, trace_every: 1 }
    }

    pub fn validate(&self) -> Result<(), SamplerError<S>> {
        if self.sweeps == 0 {
            return Err(SamplerError::Config("sweep budget must be at least 1".into()));
        }
        if self.trace_every == 0 {
            return Err(SamplerError::Config("trace cadence must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(SamplerError::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sweep snapshot: costs and running minima per ladder slot, plus which
/// adjacent pairs flipped during the tempering sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<S> {
    pub sweep_index: u64,
    pub per_replica_cost: Vec<S>,
    pub per_replica_best: Vec<S>,
    pub flips_this_sweep: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<S> {
    pub best_cost: S,
    pub best_sequence: ControlSequence,
    pub trace: Vec<TraceRecord<S>>,
    pub flip_counts: Vec<u64>,
    pub sweep_count: u64,
    pub wall_time: f64,
}

/// Runs Gibbs sweeps over the whole ladder alternated with tempering sweeps
/// for the configured budget, tracking the lowest cost seen by any replica.
/// Ties keep the earliest sweep, then the lowest ladder slot. The result is
/// bit-reproducible for a fixed seed at any thread count.
pub fn solve<S: Scalar>(
    model: &KoopmanModel<S>,
    config: &SamplerConfig<S>,
) -> Result<SolveResult<S>, SamplerError<S>> {
    config.validate()?;
    let start = Instant::now();
    let m = config.ladder.len();

    let mut replicas = Vec::with_capacity(m);
    for (slot, &beta) in config.ladder.betas().iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(slot as u64 + 1);
        replicas.push(Replica::new(model, beta, rng)?);
    }
    let mut temper_rng = ChaCha12Rng::seed_from_u64(config.seed);
    temper_rng.set_stream(m as u64 + 1);

    let mut engine = BatchEngine::new(model, m, config.threads);

    let mut best_cost = replicas[0].cost;
    let mut best_sequence = replicas[0].sequence.clone();
    for replica in replicas.iter().skip(1) {
        if replica.cost < best_cost {
            best_cost = replica.cost;
            best_sequence = replica.sequence.clone();
        }
    }
    let mut slot_best: Vec<S> = replicas.iter().map(|r| r.cost).collect();
    let mut flip_counts = vec![0u64; m.saturating_sub(1)];
    let mut trace = Vec::new();

    let partial = |trace: &Vec<TraceRecord<S>>,
                   flip_counts: &Vec<u64>,
                   best_cost: S,
                   best_sequence: &Vec<usize>,
                   sweep: u64,
                   start: Instant| SolveResult {
        best_cost,
        best_sequence: ControlSequence(best_sequence.clone()),
        trace: trace.clone(),
        flip_counts: flip_counts.clone(),
        sweep_count: sweep,
        wall_time: start.elapsed().as_secs_f64(),
    };

    for sweep in 1..=config.sweeps {
        if let Err(cause) = engine.sweep_all(model, &mut replicas) {
            return Err(SamplerError::Aborted {
                sweep,
                cause: Box::new(cause),
                partial: Box::new(partial(&trace, &flip_counts, best_cost, &best_sequence, sweep - 1, start)),
            });
        }
        for replica in replicas.iter() {
            if replica.cost < best_cost {
                best_cost = replica.cost;
                best_sequence = replica.sequence.clone();
            }
        }
        let flips = match tempering_sweep(&mut replicas, &mut temper_rng) {
            Ok(flips) => flips,
            Err(cause) => {
                return Err(SamplerError::Aborted {
                    sweep,
                    cause: Box::new(cause),
                    partial: Box::new(partial(&trace, &flip_counts, best_cost, &best_sequence, sweep - 1, start)),
                });
            }
        };
        for (count, &flipped) in flip_counts.iter_mut().zip(flips.iter()) {
            if flipped {
                *count += 1;
            }
        }
        for (slot, replica) in replicas.iter().enumerate() {
            if replica.cost < slot_best[slot] {
                slot_best[slot] = replica.cost;
            }
        }
        if sweep % config.trace_every == 0 || sweep == config.sweeps {
            trace.push(TraceRecord {
                sweep_index: sweep,
                per_replica_cost: replicas.iter().map(|r| r.cost).collect(),
                per_replica_best: slot_best.clone(),
                flips_this_sweep: flips,
            });
        }
    }

    Ok(SolveResult {
        best_cost,
        best_sequence: ControlSequence(best_sequence),
        trace,
        flip_counts,
        sweep_count: config.sweeps,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
