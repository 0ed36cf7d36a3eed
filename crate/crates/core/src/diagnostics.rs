//! Desk-scale verification machinery: exact enumeration of the sequence
//! space, explicit transition kernels for balance and convergence checks, the
//! Hoffman mixing-time bound, and the Boltzmann sample-complexity calculator.
//!
//! Everything here evaluates costs from scratch via [`crate::model::cost`] or
//! full cost tables, deliberately independent of the sampler's cache
//! recursions, so these functions can serve as oracles for the sampler.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::linalg::{dot, Mat};
use crate::model::{sequence_count, ControlSequence, KoopmanModel, ModelError};
use crate::{scalar, Scalar};

/// Default number of states above which enumeration is refused.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("enumeration refused: {count} feasible sequences exceed the cap of {cap}")]
    EnumerationRefused { count: BigUint, cap: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("transition matrix is not row-stochastic: {0}")]
    NotRowStochastic(String),
    #[error("no unique stationary distribution: chain is not regular up to the checked power")]
    NotRegular,
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Lexicographic enumeration of the feasible sequence space. State `i`
/// decodes to the sequence whose per-step digits index into the allowed
/// action list of that step; the first step is the most significant digit.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    allowed: Vec<Vec<usize>>,
    strides: Vec<usize>,
    total: usize,
}

impl StateSpace {
    pub fn enumerate<S: Scalar>(model: &KoopmanModel<S>, cap: u64) -> Result<Self, DiagnosticsError> {
        let count = sequence_count(model);
        if count > BigUint::from(cap) {
            return Err(DiagnosticsError::EnumerationRefused { count, cap });
        }
        let allowed: Vec<Vec<usize>> = (0..model.horizon()).map(|t| model.allowed(t).to_vec()).collect();
        Ok(Self::from_allowed(allowed))
    }

    fn from_allowed(allowed: Vec<Vec<usize>>) -> Self {
        let t_len = allowed.len();
        let mut strides = vec![1usize; t_len];
        for t in (0..t_len.saturating_sub(1)).rev() {
            strides[t] = strides[t + 1] * allowed[t + 1].len();
        }
        let total = allowed.iter().map(Vec::len).product();
        Self { allowed, strides, total }
    }

    /// Abstract space with `n` states: a single step with actions `0..n`.
    pub fn synthetic(n: usize) -> Self {
        Self::from_allowed(vec![(0..n).collect()])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn horizon(&self) -> usize {
        self.allowed.len()
    }

    pub fn allowed_at(&self, t: usize) -> &[usize] {
        &self.allowed[t]
    }

    pub fn stride(&self, t: usize) -> usize {
        self.strides[t]
    }

    pub fn digit(&self, index: usize, t: usize) -> usize {
        (index / self.strides[t]) % self.allowed[t].len()
    }

    pub fn decode(&self, index: usize) -> ControlSequence {
        ControlSequence(
            (0..self.allowed.len())
                .map(|t| self.allowed[t][self.digit(index, t)])
                .collect(),
        )
    }

    pub fn index_of(&self, seq: &[usize]) -> Option<usize> {
        if seq.len() != self.allowed.len() {
            return None;
        }
        let mut index = 0;
        for (t, &action) in seq.iter().enumerate() {
            let digit = self.allowed[t].iter().position(|&a| a == action)?;
            index += digit * self.strides[t];
        }
        Some(index)
    }
}

/// Runs `visit(index, cost)` over all feasible sequences in lexicographic
/// order, reusing partial forward states across the enumeration.
fn for_each_cost<S: Scalar>(
    model: &KoopmanModel<S>,
    space: &StateSpace,
    mut visit: impl FnMut(usize, S),
) {
    let t_len = space.horizon();
    let n = model.lifted_dim();
    let mut digits = vec![0usize; t_len];
    let mut states: Vec<Vec<S>> = vec![vec![S::zero(); n]; t_len + 1];
    states[0].copy_from_slice(model.initial_state());
    let mut dirty = 0usize;
    let mut index = 0usize;
    loop {
        for level in dirty..t_len {
            let action = space.allowed[level][digits[level]];
            let (head, tail) = states.split_at_mut(level + 1);
            model.dynamics(action).matvec_into(&head[level], &mut tail[0]);
        }
        visit(index, dot(model.cost_row(), &states[t_len]));
        // Odometer increment: last step is the fastest digit.
        let mut level = t_len;
        loop {
            if level == 0 {
                return;
            }
            level -= 1;
            if digits[level] + 1 < space.allowed[level].len() {
                digits[level] += 1;
                for digit in digits.iter_mut().skip(level + 1) {
                    *digit = 0;
                }
                dirty = level;
                break;
            }
        }
        index += 1;
    }
}

/// Exact cost of every feasible sequence, indexed like [`StateSpace`].
pub fn cost_table<S: Scalar>(model: &KoopmanModel<S>, cap: u64) -> Result<Vec<S>, DiagnosticsError> {
    let space = StateSpace::enumerate(model, cap)?;
    let mut table = vec![S::zero(); space.total()];
    for_each_cost(model, &space, |index, cost| table[index] = cost);
    Ok(table)
}

/// Exhaustive minimum: the optimal cost and every sequence whose cost lies
/// within `1e-12` of it.
pub fn brute_force_min<S: Scalar>(
    model: &KoopmanModel<S>,
    cap: u64,
) -> Result<(S, Vec<ControlSequence>), DiagnosticsError> {
    let space = StateSpace::enumerate(model, cap)?;
    let mut best = S::infinity();
    for_each_cost(model, &space, |_, cost| {
        if cost < best {
            best = cost;
        }
    });
    if !best.is_finite() {
        return Err(DiagnosticsError::Numeric("non-finite minimum cost".into()));
    }
    let tol = scalar::<S>(1e-12);
    let mut minimizers = Vec::new();
    for_each_cost(model, &space, |index, cost| {
        if cost <= best + tol {
            minimizers.push(space.decode(index));
        }
    });
    Ok((best, minimizers))
}

/// Exact Boltzmann distribution over all feasible sequences.
#[derive(Debug, Clone)]
pub struct BoltzmannDistribution<S> {
    pub space: StateSpace,
    pub probs: Vec<S>,
    pub beta: S,
    pub partition: S,
}

pub fn boltzmann<S: Scalar>(
    model: &KoopmanModel<S>,
    beta: S,
    cap: u64,
) -> Result<BoltzmannDistribution<S>, DiagnosticsError> {
    if !(beta >= S::zero()) {
        return Err(DiagnosticsError::Parameter("beta must be >= 0".into()));
    }
    let space = StateSpace::enumerate(model, cap)?;
    let table = cost_table(model, cap)?;
    let (probs, log_norm) = softmax_neg_beta(&table, beta);
    // Q(beta) = sum exp(-beta J); re-expand the max-subtracted normalizer.
    let partition = log_norm.exp();
    Ok(BoltzmannDistribution { space, probs, beta, partition })
}

/// Max-subtracted softmax of `-beta * costs`; also returns
/// `log(sum exp(-beta * costs))`.
fn softmax_neg_beta<S: Scalar>(costs: &[S], beta: S) -> (Vec<S>, S) {
    let mut g_max = S::neg_infinity();
    let mut weights: Vec<S> = costs
        .iter()
        .map(|&j| {
            let g = -(beta * j);
            if g > g_max {
                g_max = g;
            }
            g
        })
        .collect();
    let mut sum = S::zero();
    for w in weights.iter_mut() {
        let e = (*w - g_max).exp();
        *w = e;
        sum += e;
    }
    for w in weights.iter_mut() {
        *w = *w / sum;
    }
    (weights, sum.ln() + g_max)
}

/// Dense row-stochastic transition matrix over an enumerated state space.
#[derive(Debug, Clone)]
pub struct TransitionMatrix<S> {
    pub space: StateSpace,
    pub matrix: Mat<S>,
}

impl<S: Scalar> TransitionMatrix<S> {
    pub fn from_matrix(space: StateSpace, matrix: Mat<S>) -> Result<Self, DiagnosticsError> {
        if matrix.rows() != space.total() || matrix.cols() != space.total() {
            return Err(DiagnosticsError::NotRowStochastic(format!(
                "matrix is {}x{}, space has {} states",
                matrix.rows(),
                matrix.cols(),
                space.total()
            )));
        }
        let tol = scalar::<S>(1e-12);
        for i in 0..matrix.rows() {
            let row = matrix.row(i);
            if row.iter().any(|&p| p < S::zero() || !p.is_finite()) {
                return Err(DiagnosticsError::NotRowStochastic(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > tol {
                return Err(DiagnosticsError::NotRowStochastic(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { space, matrix })
    }

    pub fn states(&self) -> usize {
        self.space.total()
    }
}

/// The exact single-variable Gibbs kernel for coordinate `t`: transitions
/// from a state lead only to states that differ in coordinate `t` at most,
/// with the Boltzmann conditional as probabilities.
pub fn gibbs_kernel<S: Scalar>(
    model: &KoopmanModel<S>,
    beta: S,
    t: usize,
    cap: u64,
) -> Result<TransitionMatrix<S>, DiagnosticsError> {
    if t >= model.horizon() {
        return Err(DiagnosticsError::Parameter(format!(
            "time index {t} out of range for horizon {}",
            model.horizon()
        )));
    }
    if !(beta >= S::zero()) {
        return Err(DiagnosticsError::Parameter("beta must be >= 0".into()));
    }
    let space = StateSpace::enumerate(model, cap)?;
    let table = cost_table(model, cap)?;
    let conditionals = coordinate_conditionals(&space, &table, beta, t);
    let total = space.total();
    let stride = space.stride(t);
    let radix = space.allowed_at(t).len();
    let mut matrix = Mat::zeros(total, total);
    for state in 0..total {
        let digit = space.digit(state, t);
        let base = state - digit * stride;
        let pmf = &conditionals[group_index(state, stride, radix)];
        for (cand, &p) in pmf.iter().enumerate() {
            matrix.set(state, base + cand * stride, p);
        }
    }
    TransitionMatrix::from_matrix(space, matrix)
}

/// Compressed group id for states sharing all coordinates except the one
/// with the given stride and radix.
fn group_index(state: usize, stride: usize, radix: usize) -> usize {
    (state / (stride * radix)) * stride + state % stride
}

/// Conditional pmfs over coordinate `t`, one per group of states agreeing on
/// the other coordinates.
fn coordinate_conditionals<S: Scalar>(
    space: &StateSpace,
    table: &[S],
    beta: S,
    t: usize,
) -> Vec<Vec<S>> {
    let radix = space.allowed_at(t).len();
    let stride = space.stride(t);
    let groups = space.total() / radix;
    let mut conditionals = Vec::with_capacity(groups);
    for g in 0..groups {
        let base = (g / stride) * stride * radix + g % stride;
        let costs: Vec<S> = (0..radix).map(|cand| table[base + cand * stride]).collect();
        let (pmf, _) = softmax_neg_beta(&costs, beta);
        conditionals.push(pmf);
    }
    conditionals
}

/// Transition matrix of one full variable sweep: the product of the
/// per-coordinate kernels in sweep order.
pub fn sweep_kernel<S: Scalar>(
    model: &KoopmanModel<S>,
    beta: S,
    cap: u64,
) -> Result<TransitionMatrix<S>, DiagnosticsError> {
    if !(beta >= S::zero()) {
        return Err(DiagnosticsError::Parameter("beta must be >= 0".into()));
    }
    let space = StateSpace::enumerate(model, cap)?;
    let table = cost_table(model, cap)?;
    let total = space.total();
    // Start from the identity and fold in one coordinate kernel at a time,
    // exploiting that each kernel row has a single nonzero block.
    let mut cur = Mat::identity(total);
    let mut next = Mat::zeros(total, total);
    for t in 0..space.horizon() {
        let radix = space.allowed_at(t).len();
        let stride = space.stride(t);
        let conditionals = coordinate_conditionals(&space, &table, beta, t);
        for row in 0..total {
            let out = next.row_mut(row);
            out.fill(S::zero());
            let src = cur.row(row);
            for (k, &v) in src.iter().enumerate() {
                if v == S::zero() {
                    continue;
                }
                let digit = (k / stride) % radix;
                let base = k - digit * stride;
                let pmf = &conditionals[group_index(k, stride, radix)];
                for (cand, &p) in pmf.iter().enumerate() {
                    out[base + cand * stride] = out[base + cand * stride] + v * p;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    TransitionMatrix::from_matrix(space, cur)
}

/// Unique stationary distribution of a regular chain. Regularity is checked
/// by boolean reachability (some power of the positivity pattern must be
/// strictly positive); the solve is direct for at most 4096 states and power
/// iteration beyond that.
pub fn stationary_distribution<S: Scalar>(p: &TransitionMatrix<S>) -> Result<Vec<S>, DiagnosticsError> {
    let n = p.states();
    if n == 0 {
        return Err(DiagnosticsError::Parameter("empty state space".into()));
    }
    if !is_regular(&p.matrix) {
        return Err(DiagnosticsError::NotRegular);
    }
    let mut pi = if n <= 4096 { stationary_direct(&p.matrix)? } else { stationary_power(&p.matrix)? };
    for value in pi.iter_mut() {
        if *value < S::zero() {
            *value = S::zero();
        }
    }
    let total: S = pi.iter().copied().sum();
    for value in pi.iter_mut() {
        *value = *value / total;
    }
    Ok(pi)
}

/// Some power of the positivity pattern is all-ones. Uses repeated squaring
/// of a bitset adjacency; the exponent bound covers the worst-case index of
/// primitivity.
fn is_regular<S: Scalar>(p: &Mat<S>) -> bool {
    let n = p.rows();
    let words = n.div_ceil(64);
    let mut pattern: Vec<u64> = vec![0; n * words];
    for i in 0..n {
        for (j, &v) in p.row(i).iter().enumerate() {
            if v > S::zero() {
                pattern[i * words + j / 64] |= 1u64 << (j % 64);
            }
        }
    }
    let all_ones = |pat: &[u64]| -> bool {
        for i in 0..n {
            let row = &pat[i * words..(i + 1) * words];
            for (w, &bits) in row.iter().enumerate() {
                let expect = if (w + 1) * 64 <= n { u64::MAX } else { (1u64 << (n - w * 64)) - 1 };
                if bits & expect != expect {
                    return false;
                }
            }
        }
        true
    };
    let square = |pat: &[u64]| -> Vec<u64> {
        let mut out = vec![0u64; n * words];
        for i in 0..n {
            let row = &pat[i * words..(i + 1) * words];
            let out_start = i * words;
            for (w, &bits) in row.iter().enumerate() {
                let mut b = bits;
                while b != 0 {
                    let j = w * 64 + b.trailing_zeros() as usize;
                    b &= b - 1;
                    let src = &pat[j * words..(j + 1) * words];
                    for (o, &s) in out[out_start..out_start + words].iter_mut().zip(src) {
                        *o |= s;
                    }
                }
            }
        }
        out
    };
    let bound = (n as u128) * (n as u128);
    let mut exponent: u128 = 1;
    let mut current = pattern;
    loop {
        if all_ones(&current) {
            return true;
        }
        if exponent > bound {
            return false;
        }
        let squared = square(&current);
        if squared == current {
            // Fixed point short of all-ones: no further power gains entries.
            return false;
        }
        current = squared;
        exponent *= 2;
    }
}

fn stationary_direct<S: Scalar>(p: &Mat<S>) -> Result<Vec<S>, DiagnosticsError> {
    let n = p.rows();
    // (P' - I) pi' = 0 with the last balance equation replaced by sum = 1.
    let mut system = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = p.get(j, i) - if i == j { S::one() } else { S::zero() };
            system.set(i, j, v);
        }
    }
    for j in 0..n {
        system.set(n - 1, j, S::one());
    }
    let mut rhs = vec![S::zero(); n];
    rhs[n - 1] = S::one();
    crate::linalg::solve_dense(&system, &rhs)
        .map_err(|e| DiagnosticsError::Numeric(format!("stationary solve failed: {e}")))
}

fn stationary_power<S: Scalar>(p: &Mat<S>) -> Result<Vec<S>, DiagnosticsError> {
    let n = p.rows();
    let mut pi = vec![S::one() / scalar::<S>(n as f64); n];
    let mut next = vec![S::zero(); n];
    let tol = scalar::<S>(1e-12);
    for _ in 0..1_000_000u32 {
        p.vecmat_into(&pi, &mut next);
        let residual: S = pi.iter().zip(next.iter()).map(|(&a, &b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            return Ok(pi);
        }
    }
    Err(DiagnosticsError::Numeric("power iteration did not reach the residual target".into()))
}

/// Hoffman's bounds from the column extrema of a row-stochastic matrix:
/// returns the contraction-factor bound and the mixing-time bound (infinite
/// when the column minima vanish).
pub fn hoffman_bound<S: Scalar>(p: &TransitionMatrix<S>) -> (S, S) {
    let n = p.states();
    let mut p_max = S::zero();
    let mut p_min = S::zero();
    for j in 0..n {
        let mut col_max = S::neg_infinity();
        let mut col_min = S::infinity();
        for i in 0..n {
            let v = p.matrix.get(i, j);
            if v > col_max {
                col_max = v;
            }
            if v < col_min {
                col_min = v;
            }
        }
        p_max += col_max;
        p_min += col_min;
    }
    let lambda = (p_max - p_min) / (p_max + p_min);
    let two = S::one() + S::one();
    let mixing = if p_min > S::zero() { (p_max + p_min) / (two * p_min) } else { S::infinity() };
    (lambda, mixing)
}

/// Output of the Boltzmann sample-complexity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleComplexity {
    /// Smallest inverse temperature at which the bound becomes feasible.
    pub beta_required: f64,
    /// Samples needed at the queried beta; `None` when that beta is too low.
    pub n_required: Option<u64>,
}

/// Number of independent Boltzmann samples needed so that, with probability
/// at least `1 - delta`, some sample lands within `epsilon` of the optimum.
pub fn sample_complexity(
    u_size: &BigUint,
    ustar_size: &BigUint,
    epsilon: f64,
    delta: f64,
    beta: f64,
) -> Result<SampleComplexity, DiagnosticsError> {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(DiagnosticsError::Parameter("epsilon must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DiagnosticsError::Parameter("delta must lie in (0, 1)".into()));
    }
    if ustar_size < &BigUint::from(1u32) || ustar_size > u_size {
        return Err(DiagnosticsError::Parameter(
            "need 1 <= |minimizer set| <= |sequence space|".into(),
        ));
    }
    let log_ratio = ln_big(u_size) - ln_big(ustar_size);
    let beta_required = log_ratio / epsilon;
    let denom = beta * epsilon - log_ratio;
    let n_required = if denom > 0.0 {
        let ratio = (1.0 / delta).ln() / denom;
        // Guarded ceil: a ratio that is an integer up to round-off must not
        // be pushed to the next integer.
        Some((ratio - 1e-9).ceil().max(1.0) as u64)
    } else {
        None
    };
    Ok(SampleComplexity { beta_required, n_required })
}

/// Natural log of a big integer via its top bits.
fn ln_big(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 53 {
        return n.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 53;
    let top = (n >> shift).to_f64().expect("53 bits fit in f64");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests;
