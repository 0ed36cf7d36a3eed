//! The switched linear control problem: per-action lifted dynamics, a
//! terminal cost row, an initial lifted state and a horizon.

use std::ops::Deref;

use num_bigint::BigUint;
use thiserror::Error;

use crate::linalg::{dot, Mat};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one action")]
    NoActions,
    #[error("dynamics matrix for action {action} is {rows}x{cols}, expected {dim}x{dim}")]
    BadDynamicsShape { action: usize, rows: usize, cols: usize, dim: usize },
    #[error("{vector} has length {got}, expected the lifted dimension {expected}")]
    BadVectorLength { vector: &'static str, got: usize, expected: usize },
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("model contains a non-finite entry in {place}")]
    NonFinite { place: String },
    #[error("action mask has {got} entries, expected one per time step ({expected})")]
    BadMaskLength { got: usize, expected: usize },
    #[error("action mask at step {step} is invalid: {reason}")]
    BadMask { step: usize, reason: String },
    #[error("control sequence has length {got}, expected the horizon {expected}")]
    BadSequenceLength { got: usize, expected: usize },
    #[error("control sequence uses action {action} at step {step}, not allowed there")]
    DisallowedAction { step: usize, action: usize },
}

/// A length-`T` tuple of action indices; the optimization variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControlSequence(pub Vec<usize>);

impl Deref for ControlSequence {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for ControlSequence {
    fn from(v: Vec<usize>) -> Self {
        ControlSequence(v)
    }
}

/// Switched linear model in the lifted space.
#[derive(Debug, Clone)]
pub struct KoopmanModel<S> {
    actions: Vec<String>,
    dynamics: Vec<Mat<S>>,
    dynamics_t: Vec<Mat<S>>,
    cost_row: Vec<S>,
    initial_state: Vec<S>,
    horizon: usize,
    action_mask: Option<Vec<Vec<usize>>>,
    all_actions: Vec<usize>,
}

impl<S: Scalar> KoopmanModel<S> {
    pub fn new(
        actions: Vec<String>,
        dynamics: Vec<Mat<S>>,
        cost_row: Vec<S>,
        initial_state: Vec<S>,
        horizon: usize,
        action_mask: Option<Vec<Vec<usize>>>,
    ) -> Result<Self, ModelError> {
        if actions.is_empty() || dynamics.is_empty() {
            return Err(ModelError::NoActions);
        }
        if dynamics.len() != actions.len() {
            return Err(ModelError::BadMask {
                step: 0,
                reason: format!("{} dynamics matrices for {} actions", dynamics.len(), actions.len()),
            });
        }
        let dim = cost_row.len();
        for (action, mat) in dynamics.iter().enumerate() {
            if mat.rows() != dim || mat.cols() != dim {
                return Err(ModelError::BadDynamicsShape {
                    action,
                    rows: mat.rows(),
                    cols: mat.cols(),
                    dim,
                });
            }
            if !mat.is_finite() {
                return Err(ModelError::NonFinite { place: format!("A({action})") });
            }
        }
        if initial_state.len() != dim {
            return Err(ModelError::BadVectorLength {
                vector: "initial lifted state",
                got: initial_state.len(),
                expected: dim,
            });
        }
        if !cost_row.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite { place: "cost row".into() });
        }
        if !initial_state.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite { place: "initial lifted state".into() });
        }
        if horizon == 0 {
            return Err(ModelError::BadHorizon);
        }
        if let Some(mask) = &action_mask {
            if mask.len() != horizon {
                return Err(ModelError::BadMaskLength { got: mask.len(), expected: horizon });
            }
            for (step, allowed) in mask.iter().enumerate() {
                if allowed.is_empty() {
                    return Err(ModelError::BadMask { step, reason: "empty action set".into() });
                }
                if allowed.iter().any(|&a| a >= actions.len()) {
                    return Err(ModelError::BadMask { step, reason: "action index out of range".into() });
                }
                if allowed.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ModelError::BadMask {
                        step,
                        reason: "action indices must be strictly increasing".into(),
                    });
                }
            }
        }
        let all_actions = (0..actions.len()).collect();
        let dynamics_t = dynamics.iter().map(Mat::transpose).collect();
        Ok(Self { actions, dynamics, dynamics_t, cost_row, initial_state, horizon, action_mask, all_actions })
    }

    pub fn lifted_dim(&self) -> usize {
        self.cost_row.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_labels(&self) -> &[String] {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dynamics(&self, action: usize) -> &Mat<S> {
        &self.dynamics[action]
    }

    /// Transpose of `dynamics(action)`, kept alongside so backward passes can
    /// run as plain matrix-vector products.
    pub fn dynamics_t(&self, action: usize) -> &Mat<S> {
        &self.dynamics_t[action]
    }

    pub fn cost_row(&self) -> &[S] {
        &self.cost_row
    }

    pub fn initial_state(&self) -> &[S] {
        &self.initial_state
    }

    pub fn action_mask(&self) -> Option<&[Vec<usize>]> {
        self.action_mask.as_deref()
    }

    /// Actions allowed at time step `t` (0-based).
    pub fn allowed(&self, t: usize) -> &[usize] {
        match &self.action_mask {
            Some(mask) => &mask[t],
            None => &self.all_actions,
        }
    }

    pub fn validate_sequence(&self, seq: &ControlSequence) -> Result<(), ModelError> {
        if seq.len() != self.horizon {
            return Err(ModelError::BadSequenceLength { got: seq.len(), expected: self.horizon });
        }
        for (step, &action) in seq.iter().enumerate() {
            if !self.allowed(step).contains(&action) {
                return Err(ModelError::DisallowedAction { step, action });
            }
        }
        Ok(())
    }
}

/// Exact final-state cost of a control sequence: the cost row applied to the
/// state reached by chaining the per-step dynamics. Uses `T` matrix-vector
/// products and one dot product; no matrix-matrix product is ever formed.
pub fn cost<S: Scalar>(model: &KoopmanModel<S>, seq: &ControlSequence) -> Result<S, ModelError> {
    model.validate_sequence(seq)?;
    let mut state = model.initial_state.to_vec();
    let mut next = vec![S::zero(); state.len()];
    for &action in seq.iter() {
        model.dynamics[action].matvec_into(&state, &mut next);
        std::mem::swap(&mut state, &mut next);
    }
    Ok(dot(&model.cost_row, &state))
}

/// Number of feasible control sequences, as an exact big integer.
pub fn sequence_count<S: Scalar>(model: &KoopmanModel<S>) -> BigUint {
    let mut total = BigUint::from(1u32);
    for t in 0..model.horizon() {
        total *= BigUint::from(model.allowed(t).len());
    }
    total
}
