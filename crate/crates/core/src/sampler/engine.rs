//! Replica-batched sweep engine.
//!
//! All replicas advance through the variable sweep in lockstep over the time
//! index, so each pass over a dynamics matrix serves the whole ladder at once
//! (the matrices dominate memory traffic; the per-replica vectors are small).
//! Worker threads split matrix passes into independent output-row blocks.
//! Every output element is accumulated in the same order as the per-replica
//! reference path in the parent module, so a batched sweep is bit-identical
//! to calling `Replica::gibbs_sweep` on each replica.

use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::linalg::{col_dots, dot, gemm_into, gemm_rows, Mat};
use crate::model::KoopmanModel;
use crate::{scalar, Scalar};

use super::{boltzmann_weights, sample_index, Replica, SamplerError};

pub struct BatchEngine<S> {
    n: usize,
    m: usize,
    pool: Option<ThreadPool>,
    x_cols: Vec<S>,
    next_cols: Vec<S>,
    c_cols: Vec<S>,
    e_panels: Vec<Vec<S>>,
    e_dots: Vec<Vec<S>>,
    gather: Vec<S>,
    group_out: Vec<S>,
    members: Vec<Vec<usize>>,
    pmf: Vec<S>,
    energies: Vec<S>,
}

impl<S: Scalar> BatchEngine<S> {
    pub fn new(model: &KoopmanModel<S>, replica_count: usize, threads: usize) -> Self {
        let n = model.lifted_dim();
        let m = replica_count;
        let k = model.num_actions();
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("failed to build worker pool"),
            )
        } else {
            None
        };
        let _ = k;
        Self {
            n,
            m,
            pool,
            x_cols: vec![S::zero(); n * m],
            next_cols: vec![S::zero(); n * m],
            c_cols: vec![S::zero(); n * m],
            e_panels: vec![vec![S::zero(); n * m]; k],
            e_dots: vec![vec![S::zero(); m]; k],
            gather: vec![S::zero(); n * m],
            group_out: vec![S::zero(); n * m],
            members: vec![Vec::with_capacity(m); k],
            pmf: Vec::new(),
            energies: Vec::new(),
        }
    }

    /// One Gibbs sweep for every replica, equivalent to sweeping each replica
    /// individually with its own random stream.
    pub fn sweep_all(
        &mut self,
        model: &KoopmanModel<S>,
        replicas: &mut [Replica<S>],
    ) -> Result<(), SamplerError<S>> {
        assert_eq!(replicas.len(), self.m, "engine was sized for a different ladder");
        assert_eq!(model.lifted_dim(), self.n, "engine was sized for a different model");
        let (n, m) = (self.n, self.m);
        let t_len = model.horizon();

        for (j, replica) in replicas.iter().enumerate() {
            let src = &replica.forward_states[0];
            for k in 0..n {
                self.x_cols[k * m + j] = src[k];
            }
        }

        for t in 0..t_len {
            let allowed = model.allowed(t);
            for (j, replica) in replicas.iter().enumerate() {
                let row = &replica.backward_rows[t + 1];
                for k in 0..n {
                    self.c_cols[k * m + j] = row[k];
                }
            }
            for &action in allowed {
                let panel = &mut self.e_panels[action];
                run_gemm(&self.pool, model.dynamics(action), &self.x_cols, m, panel);
                col_dots(&self.c_cols, panel, m, &mut self.e_dots[action]);
            }

            for group in self.members.iter_mut() {
                group.clear();
            }
            for (j, replica) in replicas.iter_mut().enumerate() {
                self.energies.clear();
                for &action in allowed {
                    let e = self.e_dots[action][j];
                    if !e.is_finite() {
                        return Err(SamplerError::NonFiniteEnergy { action });
                    }
                    self.energies.push(e);
                }
                boltzmann_weights(&self.energies, replica.beta, &mut self.pmf)
                    .map_err(|idx| SamplerError::NonFiniteEnergy { action: allowed[idx] })?;
                let draw = scalar::<S>(replica.rng.random::<f64>());
                let action = allowed[sample_index(&self.pmf, draw)];
                replica.sequence[t] = action;
                self.members[action].push(j);
            }

            for &action in allowed {
                let group = &self.members[action];
                if group.is_empty() {
                    continue;
                }
                let g = group.len();
                for (gi, &j) in group.iter().enumerate() {
                    for k in 0..n {
                        self.gather[k * g + gi] = self.x_cols[k * m + j];
                    }
                }
                run_gemm(
                    &self.pool,
                    model.dynamics(action),
                    &self.gather[..n * g],
                    g,
                    &mut self.group_out[..n * g],
                );
                for (gi, &j) in group.iter().enumerate() {
                    let dst = &mut replicas[j].forward_states[t + 1];
                    for k in 0..n {
                        let v = self.group_out[k * g + gi];
                        self.next_cols[k * m + j] = v;
                        dst[k] = v;
                    }
                    replicas[j].matvec_count += allowed.len() as u64 + 1;
                }
            }
            std::mem::swap(&mut self.x_cols, &mut self.next_cols);
        }

        for replica in replicas.iter_mut() {
            replica.cost = dot(model.cost_row(), &replica.forward_states[t_len]);
            if !replica.cost.is_finite() {
                return Err(SamplerError::NonFiniteCost);
            }
        }

        // Backward refresh against the freshly sampled sequences.
        for (j, replica) in replicas.iter_mut().enumerate() {
            replica.backward_rows[t_len].copy_from_slice(model.cost_row());
            for k in 0..n {
                self.c_cols[k * m + j] = model.cost_row()[k];
            }
        }
        for i in (0..t_len).rev() {
            for group in self.members.iter_mut() {
                group.clear();
            }
            for (j, replica) in replicas.iter().enumerate() {
                self.members[replica.sequence[i]].push(j);
            }
            for action in 0..model.num_actions() {
                let group = &self.members[action];
                if group.is_empty() {
                    continue;
                }
                let g = group.len();
                for (gi, &j) in group.iter().enumerate() {
                    for k in 0..n {
                        self.gather[k * g + gi] = self.c_cols[k * m + j];
                    }
                }
                run_gemm(
                    &self.pool,
                    model.dynamics_t(action),
                    &self.gather[..n * g],
                    g,
                    &mut self.group_out[..n * g],
                );
                for (gi, &j) in group.iter().enumerate() {
                    let dst = &mut replicas[j].backward_rows[i];
                    for k in 0..n {
                        let v = self.group_out[k * g + gi];
                        self.c_cols[k * m + j] = v;
                        dst[k] = v;
                    }
                    replicas[j].matvec_count += 1;
                }
            }
        }
        Ok(())
    }
}

fn run_gemm<S: Scalar>(pool: &Option<ThreadPool>, a: &Mat<S>, x: &[S], ncols: usize, out: &mut [S]) {
    match pool {
        Some(pool) if a.rows() >= 128 => pool.install(|| {
            let threads = rayon::current_num_threads().max(1);
            let rows_per = a.rows().div_ceil(threads).max(16);
            out.par_chunks_mut(rows_per * ncols)
                .zip(a.data().par_chunks(rows_per * a.cols()))
                .for_each(|(ochunk, achunk)| gemm_rows(achunk, a.cols(), x, ncols, ochunk));
        }),
        _ => gemm_into(a, x, ncols, out),
    }
}
