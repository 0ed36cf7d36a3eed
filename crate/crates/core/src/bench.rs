//! Sweep timing harness shared by the CLI bench command and the scaling
//! tests.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::model::KoopmanModel;
use crate::sampler::{BatchEngine, Replica, SamplerError, TemperatureLadder};
use crate::Scalar;

/// One measurement point of the benchmark grid.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n_psi: usize,
    pub horizon: usize,
    pub num_actions: usize,
    pub replicas: usize,
    pub threads: usize,
    pub sweeps: u64,
    pub secs_per_sweep: f64,
    /// Matrix-vector products performed per sweep, summed over replicas.
    pub products_per_sweep: u64,
    /// Analytic estimate of the resident working set in bytes: dynamics
    /// matrices plus the per-replica vector caches and sequences.
    pub mem_estimate_bytes: u64,
}

/// Times full Gibbs sweeps of `model` across the ladder slots.
pub fn measure_sweeps<S: Scalar>(
    model: &KoopmanModel<S>,
    ladder: &TemperatureLadder<S>,
    threads: usize,
    warmup: u64,
    sweeps: u64,
    seed: u64,
) -> Result<BenchRow, SamplerError<S>> {
    let m = ladder.len();
    let mut replicas: Vec<Replica<S>> = Vec::with_capacity(m);
    for (slot, &beta) in ladder.betas().iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(slot as u64 + 1);
        replicas.push(Replica::new(model, beta, rng)?);
    }
    let mut engine = BatchEngine::new(model, m, threads);
    for _ in 0..warmup {
        engine.sweep_all(model, &mut replicas)?;
    }
    let before: u64 = replicas.iter().map(Replica::matvec_count).sum();
    let start = Instant::now();
    for _ in 0..sweeps {
        engine.sweep_all(model, &mut replicas)?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let after: u64 = replicas.iter().map(Replica::matvec_count).sum();

    let n = model.lifted_dim() as u64;
    let t = model.horizon() as u64;
    let scalar_bytes = std::mem::size_of::<S>() as u64;
    let mem = model.num_actions() as u64 * n * n * scalar_bytes
        + m as u64 * 2 * (t + 1) * n * scalar_bytes
        + m as u64 * t * std::mem::size_of::<usize>() as u64;

    Ok(BenchRow {
        n_psi: model.lifted_dim(),
        horizon: model.horizon(),
        num_actions: model.num_actions(),
        replicas: m,
        threads,
        sweeps,
        secs_per_sweep: elapsed / sweeps as f64,
        products_per_sweep: (after - before) / sweeps,
        mem_estimate_bytes: mem,
    })
}
