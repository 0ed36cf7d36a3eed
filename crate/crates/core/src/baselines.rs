//! Comparison optimizers: projected gradient descent on the continuous
//! relaxation of the control problem, and a genetic algorithm over discrete
//! sequences.
//!
//! The relaxation replaces the per-step action choice by simplex weights
//! mixing the dynamics matrices. It is multilinear in the per-step weight
//! rows, so its global minimum over the product of simplices is attained at
//! a one-hot vertex and coincides with the discrete optimum; gradient
//! descent still only finds local minima of it, which is the point of the
//! comparison.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{axpy, dot, Mat};
use crate::model::{cost, ControlSequence, KoopmanModel, ModelError};
use crate::{scalar, Scalar};

#[derive(Debug, Error)]
pub enum BaselineError<S: Scalar> {
    #[error("invalid relaxed controls: {0}")]
    InvalidControls(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("gradient descent diverged at iteration {iteration}")]
    Diverged { iteration: u64, history: Vec<S> },
}

/// Per-step mixture weights over actions; each row lives on the probability
/// simplex of the actions allowed at that step, with zero weight elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControls<S> {
    weights: Mat<S>,
}

impl<S: Scalar> RelaxedControls<S> {
    pub fn from_weights(weights: Mat<S>) -> Self {
        Self { weights }
    }

    /// Centroid of each step's allowed simplex.
    pub fn uniform(model: &KoopmanModel<S>) -> Self {
        let mut weights = Mat::zeros(model.horizon(), model.num_actions());
        for t in 0..model.horizon() {
            let allowed = model.allowed(t);
            let w = S::one() / scalar::<S>(allowed.len() as f64);
            for &a in allowed {
                weights.set(t, a, w);
            }
        }
        Self { weights }
    }

    /// Vertex encoding of a discrete sequence.
    pub fn one_hot(model: &KoopmanModel<S>, seq: &ControlSequence) -> Result<Self, BaselineError<S>> {
        model.validate_sequence(seq)?;
        let mut weights = Mat::zeros(model.horizon(), model.num_actions());
        for (t, &a) in seq.iter().enumerate() {
            weights.set(t, a, S::one());
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Mat<S> {
        &self.weights
    }

    pub fn validate(&self, model: &KoopmanModel<S>) -> Result<(), BaselineError<S>> {
        let tol = scalar::<S>(1e-9);
        if self.weights.rows() != model.horizon() || self.weights.cols() != model.num_actions() {
            return Err(BaselineError::InvalidControls(format!(
                "weights are {}x{}, expected {}x{}",
                self.weights.rows(),
                self.weights.cols(),
                model.horizon(),
                model.num_actions()
            )));
        }
        for t in 0..model.horizon() {
            let row = self.weights.row(t);
            let mut sum = S::zero();
            for (a, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    return Err(BaselineError::InvalidControls(format!(
                        "non-finite weight at step {t}"
                    )));
                }
                if !model.allowed(t).contains(&a) && w.abs() > tol {
                    return Err(BaselineError::InvalidControls(format!(
                        "step {t} puts weight on masked-out action {a}"
                    )));
                }
                if w < -tol || w > S::one() + tol {
                    return Err(BaselineError::InvalidControls(format!(
                        "weight {w} at step {t} is outside [0, 1]"
                    )));
                }
                sum += w;
            }
            if (sum - S::one()).abs() > tol {
                return Err(BaselineError::InvalidControls(format!(
                    "step {t} weights sum to {sum}"
                )));
            }
        }
        Ok(())
    }

    /// Per-row argmax over the allowed actions; ties go to the lowest index.
    pub fn round(&self, model: &KoopmanModel<S>) -> ControlSequence {
        let seq = (0..model.horizon())
            .map(|t| {
                let row = self.weights.row(t);
                let mut best = model.allowed(t)[0];
                for &a in model.allowed(t) {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect();
        ControlSequence(seq)
    }
}

/// Relaxed final-state cost under mixed dynamics, applied as per-action
/// matrix-vector products (never a mixed matrix-matrix product).
pub fn relaxed_cost<S: Scalar>(
    model: &KoopmanModel<S>,
    controls: &RelaxedControls<S>,
) -> Result<S, BaselineError<S>> {
    controls.validate(model)?;
    Ok(relaxed_cost_raw(model, controls))
}

/// Forward evaluation without feasibility validation; the finite-difference
/// gradient checks call this on perturbed weights.
pub fn relaxed_cost_raw<S: Scalar>(model: &KoopmanModel<S>, controls: &RelaxedControls<S>) -> S {
    let n = model.lifted_dim();
    let mut state = model.initial_state().to_vec();
    let mut mixed = vec![S::zero(); n];
    let mut step = vec![S::zero(); n];
    for t in 0..model.horizon() {
        mixed.fill(S::zero());
        for &a in model.allowed(t) {
            let w = controls.weights.get(t, a);
            if w == S::zero() {
                continue;
            }
            model.dynamics(a).matvec_into(&state, &mut step);
            axpy(w, &step, &mut mixed);
        }
        std::mem::swap(&mut state, &mut mixed);
    }
    dot(model.cost_row(), &state)
}

/// Analytic gradient of the relaxed cost with respect to every weight:
/// `grad[t][a] = cbar(t+1) * A(a) * psi(t)` with the forward states and
/// backward rows propagated under the mixed dynamics.
pub fn relaxed_gradient<S: Scalar>(
    model: &KoopmanModel<S>,
    controls: &RelaxedControls<S>,
) -> Result<Mat<S>, BaselineError<S>> {
    controls.validate(model)?;
    Ok(relaxed_gradient_raw(model, controls))
}

fn relaxed_gradient_raw<S: Scalar>(model: &KoopmanModel<S>, controls: &RelaxedControls<S>) -> Mat<S> {
    let n = model.lifted_dim();
    let t_len = model.horizon();
    let k = model.num_actions();

    // Forward pass; keep each A(a) psi(t) since the gradient reuses them.
    let mut states: Vec<Vec<S>> = Vec::with_capacity(t_len + 1);
    states.push(model.initial_state().to_vec());
    let mut action_states: Vec<Vec<Vec<S>>> = vec![vec![Vec::new(); k]; t_len];
    let mut step = vec![S::zero(); n];
    for t in 0..t_len {
        let mut mixed = vec![S::zero(); n];
        for &a in model.allowed(t) {
            model.dynamics(a).matvec_into(&states[t], &mut step);
            action_states[t][a] = step.clone();
            axpy(controls.weights.get(t, a), &step, &mut mixed);
        }
        states.push(mixed);
    }

    // Backward rows under the mixed dynamics.
    let mut grad = Mat::zeros(t_len, k);
    let mut cbar = model.cost_row().to_vec();
    let mut row_step = vec![S::zero(); n];
    for t in (0..t_len).rev() {
        for &a in model.allowed(t) {
            grad.set(t, a, dot(&cbar, &action_states[t][a]));
        }
        let mut next = vec![S::zero(); n];
        for &a in model.allowed(t) {
            let w = controls.weights.get(t, a);
            if w == S::zero() {
                continue;
            }
            model.dynamics(a).vecmat_into(&cbar, &mut row_step);
            axpy(w, &row_step, &mut next);
        }
        cbar = next;
    }
    grad
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
pub fn project_simplex<S: Scalar>(v: &[S]) -> Vec<S> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumulative = S::zero();
    let mut threshold = S::zero();
    let mut support = 0usize;
    for (j, &value) in sorted.iter().enumerate() {
        cumulative += value;
        let count = scalar::<S>((j + 1) as f64);
        let candidate = (cumulative - S::one()) / count;
        if value - candidate > S::zero() {
            threshold = candidate;
            support = j + 1;
        }
    }
    debug_assert!(support > 0, "projection support must be non-empty");
    let mut out: Vec<S> = v.iter().map(|&x| (x - threshold).max(S::zero())).collect();
    let sum: S = out.iter().copied().sum();
    if (sum - S::one()).abs() > scalar::<S>(1e-15) && sum > S::zero() {
        for value in out.iter_mut() {
            *value = *value / sum;
        }
    }
    out
}

/// Projects the allowed coordinates of a weight row onto their simplex,
/// leaving masked-out coordinates at zero.
fn project_row_masked<S: Scalar>(row: &mut [S], allowed: &[usize]) {
    let sub: Vec<S> = allowed.iter().map(|&a| row[a]).collect();
    let projected = project_simplex(&sub);
    row.fill(S::zero());
    for (&a, &w) in allowed.iter().zip(projected.iter()) {
        row[a] = w;
    }
}

/// Settings for [`gradient_solve`]: learning rate, budget, and the adaptive
/// moment constants (bias-corrected, with the look-ahead momentum term).
#[derive(Debug, Clone)]
pub struct GradientConfig<S> {
    pub eta: S,
    pub iterations: u64,
    pub seed: u64,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

impl<S: Scalar> GradientConfig<S> {
    pub fn new(eta: S, iterations: u64, seed: u64) -> Self {
        Self {
            eta,
            iterations,
            seed,
            beta1: scalar::<S>(0.9),
            beta2: scalar::<S>(0.999),
            epsilon: scalar::<S>(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientSolve<S> {
    pub controls: RelaxedControls<S>,
    pub relaxed_cost: S,
    pub rounded: ControlSequence,
    pub rounded_cost: S,
    /// Relaxed cost at initialization and after every iteration.
    pub history: Vec<S>,
}

/// Nesterov-accelerated adaptive-moment descent on the relaxed cost with a
/// per-row simplex projection after every update. Starts from the simplex
/// centroid; the seed is recorded for provenance but the algorithm itself is
/// deterministic.
pub fn gradient_solve<S: Scalar>(
    model: &KoopmanModel<S>,
    config: &GradientConfig<S>,
) -> Result<GradientSolve<S>, BaselineError<S>> {
    if !(config.eta > S::zero()) || !config.eta.is_finite() {
        return Err(BaselineError::Config("step size must be positive".into()));
    }
    let t_len = model.horizon();
    let k = model.num_actions();
    let mut controls = RelaxedControls::uniform(model);
    let mut m = Mat::zeros(t_len, k);
    let mut v = Mat::zeros(t_len, k);
    let mut history = Vec::with_capacity(config.iterations as usize + 1);
    history.push(relaxed_cost_raw(model, &controls));

    let one = S::one();
    let mut beta1_pow = one;
    let mut beta2_pow = one;
    for iteration in 1..=config.iterations {
        let grad = relaxed_gradient_raw(model, &controls);
        beta1_pow = beta1_pow * config.beta1;
        beta2_pow = beta2_pow * config.beta2;
        let beta1_pow_next = beta1_pow * config.beta1;
        for t in 0..t_len {
            for &a in model.allowed(t) {
                let g = grad.get(t, a);
                let m_new = config.beta1 * m.get(t, a) + (one - config.beta1) * g;
                let v_new = config.beta2 * v.get(t, a) + (one - config.beta2) * g * g;
                m.set(t, a, m_new);
                v.set(t, a, v_new);
                let m_hat = m_new / (one - beta1_pow_next);
                let g_hat = g / (one - beta1_pow);
                let lookahead = config.beta1 * m_hat + (one - config.beta1) * g_hat;
                let denom = (v_new / (one - beta2_pow)).sqrt() + config.epsilon;
                let updated = controls.weights.get(t, a) - config.eta * lookahead / denom;
                controls.weights.set(t, a, updated);
            }
            project_row_masked(controls.weights.row_mut(t), model.allowed(t));
        }
        let objective = relaxed_cost_raw(model, &controls);
        if !objective.is_finite() {
            return Err(BaselineError::Diverged { iteration, history });
        }
        history.push(objective);
    }

    let relaxed = *history.last().expect("history is non-empty");
    let rounded = controls.round(model);
    let rounded_cost = cost(model, &rounded)?;
    Ok(GradientSolve { controls, relaxed_cost: relaxed, rounded, rounded_cost, history })
}

/// Genetic-algorithm settings. Defaults follow the usual comparison setup:
/// population 50, uniform ranking over the best 2, single-point crossover,
/// 10% per-individual mutation with 5% per-gene resampling.
#[derive(Debug, Clone)]
pub struct GaConfig {
    pub population: usize,
    pub selection_mu: usize,
    pub crossover: bool,
    pub mutation_rate: f64,
    pub gene_mutation_prob: f64,
    pub generations: u64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            selection_mu: 2,
            crossover: true,
            mutation_rate: 0.10,
            gene_mutation_prob: 0.05,
            generations: 100,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate<S: Scalar>(&self) -> Result<(), BaselineError<S>> {
        if self.population < 2 {
            return Err(BaselineError::Config("population must be at least 2".into()));
        }
        if self.selection_mu == 0 || self.selection_mu > self.population {
            return Err(BaselineError::Config(
                "selection must keep between 1 and population individuals".into(),
            ));
        }
        for (name, rate) in [
            ("mutation_rate", self.mutation_rate),
            ("gene_mutation_prob", self.gene_mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(BaselineError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaSolve<S> {
    pub best: ControlSequence,
    pub best_cost: S,
    /// Best-ever cost after the initial population and each generation.
    pub history: Vec<S>,
}

/// Generational genetic algorithm: parents drawn uniformly from the best
/// `selection_mu` individuals, single-point crossover, per-individual then
/// per-gene mutation, elitism of one. Fitness evaluations run in parallel;
/// selection and variation consume a single sequential random stream, so a
/// seed fixes the whole history.
pub fn genetic_solve<S: Scalar>(
    model: &KoopmanModel<S>,
    config: &GaConfig,
) -> Result<GaSolve<S>, BaselineError<S>> {
    config.validate::<S>()?;
    let t_len = model.horizon();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    let random_sequence = |rng: &mut ChaCha12Rng| -> Vec<usize> {
        (0..t_len)
            .map(|t| {
                let allowed = model.allowed(t);
                allowed[rng.random_range(0..allowed.len())]
            })
            .collect()
    };

    let evaluate = |population: &[Vec<usize>]| -> Result<Vec<S>, BaselineError<S>> {
        population
            .par_iter()
            .map(|seq| cost(model, &ControlSequence(seq.clone())).map_err(BaselineError::from))
            .collect()
    };

    let mut population: Vec<Vec<usize>> =
        (0..config.population).map(|_| random_sequence(&mut rng)).collect();
    let mut costs = evaluate(&population)?;

    let mut best_idx = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best_idx] {
            best_idx = i;
        }
    }
    let mut best = population[best_idx].clone();
    let mut best_cost = costs[best_idx];
    let mut history = vec![best_cost];

    for _ in 0..config.generations {
        let mut order: Vec<usize> = (0..config.population).collect();
        order.sort_by(|&a, &b| {
            costs[a].partial_cmp(&costs[b]).expect("finite costs").then(a.cmp(&b))
        });
        let pool: Vec<&Vec<usize>> =
            order[..config.selection_mu].iter().map(|&i| &population[i]).collect();

        let mut offspring: Vec<Vec<usize>> = Vec::with_capacity(config.population);
        offspring.push(best.clone()); // elitism of one
        while offspring.len() < config.population {
            let parent_a = pool[rng.random_range(0..pool.len())];
            let parent_b = pool[rng.random_range(0..pool.len())];
            let mut child = if config.crossover && t_len >= 2 {
                let point = rng.random_range(1..t_len);
                let mut c = parent_a[..point].to_vec();
                c.extend_from_slice(&parent_b[point..]);
                c
            } else {
                parent_a.clone()
            };
            if rng.random::<f64>() < config.mutation_rate {
                for (t, gene) in child.iter_mut().enumerate() {
                    if rng.random::<f64>() < config.gene_mutation_prob {
                        let allowed = model.allowed(t);
                        *gene = allowed[rng.random_range(0..allowed.len())];
                    }
                }
            }
            offspring.push(child);
        }
        population = offspring;
        costs = evaluate(&population)?;
        for (i, &c) in costs.iter().enumerate() {
            if c < best_cost {
                best_cost = c;
                best = population[i].clone();
            }
        }
        history.push(best_cost);
    }

    Ok(GaSolve { best: ControlSequence(best), best_cost, history })
}

#[cfg(test)]
mod tests;
