//! Model fitting from trajectory data: radial-basis observable lifting and
//! per-action least-squares estimation of the lifted dynamics matrices.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{lstsq, LinalgError, Mat};
use crate::model::{KoopmanModel, ModelError};
use crate::{scalar, Scalar};

#[derive(Debug, Error)]
pub enum EdmdError {
    #[error("invalid observable basis: {0}")]
    Basis(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("underdetermined fit for action {action}: {have} transitions, need at least {need}")]
    Underdetermined { action: usize, have: usize, need: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Radial-basis observables over a set of points: entry `j` of the lifted
/// vector sums `exp(-lambda * ||p - c_j||^2)` over the input points, with an
/// optional trailing affine coordinate fixed at one.
#[derive(Debug, Clone)]
pub struct ObservableBasis<S> {
    centers: Vec<Vec<S>>,
    lambda: S,
    extra_affine: bool,
}

impl<S: Scalar> ObservableBasis<S> {
    pub fn new(centers: Vec<Vec<S>>, lambda: S, extra_affine: bool) -> Result<Self, EdmdError> {
        if centers.is_empty() {
            return Err(EdmdError::Basis("needs at least one center".into()));
        }
        let dim = centers[0].len();
        if dim == 0 {
            return Err(EdmdError::Basis("centers must have positive dimension".into()));
        }
        if centers.iter().any(|c| c.len() != dim) {
            return Err(EdmdError::Basis("centers have inconsistent dimensions".into()));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EdmdError::Basis("centers must be finite".into()));
        }
        if !(lambda > S::zero()) || !lambda.is_finite() {
            return Err(EdmdError::Basis("lambda must be a positive real".into()));
        }
        Ok(Self { centers, lambda, extra_affine })
    }

    pub fn raw_dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.centers.len() + usize::from(self.extra_affine)
    }

    /// Lifts a set of raw points. The sum over points runs in lexicographic
    /// point order, so the result is bitwise permutation-invariant.
    pub fn lift(&self, raw_points: &[Vec<S>]) -> Result<Vec<S>, EdmdError> {
        let dim = self.raw_dim();
        if raw_points.iter().any(|p| p.len() != dim) {
            return Err(EdmdError::Basis(format!(
                "points must match the center dimension {dim}"
            )));
        }
        if raw_points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EdmdError::Basis("points must be finite".into()));
        }
        let mut ordered: Vec<&Vec<S>> = raw_points.iter().collect();
        ordered.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut lifted = Vec::with_capacity(self.lifted_dim());
        for center in &self.centers {
            let mut value = S::zero();
            for point in &ordered {
                let mut dist2 = S::zero();
                for (p, c) in point.iter().zip(center.iter()) {
                    let d = *p - *c;
                    dist2 += d * d;
                }
                value += (-(self.lambda * dist2)).exp();
            }
            lifted.push(value);
        }
        if self.extra_affine {
            lifted.push(S::one());
        }
        Ok(lifted)
    }

    /// Lifts a single raw state vector.
    pub fn lift_state(&self, raw: &[S]) -> Result<Vec<S>, EdmdError> {
        self.lift(std::slice::from_ref(&raw.to_vec()))
    }
}

/// One rollout: `states.len() == actions.len() + 1`.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub states: Vec<Vec<S>>,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryDataset<S> {
    pub trajectories: Vec<Trajectory<S>>,
}

impl<S: Scalar> TrajectoryDataset<S> {
    pub fn new(trajectories: Vec<Trajectory<S>>) -> Result<Self, EdmdError> {
        for (i, trajectory) in trajectories.iter().enumerate() {
            if trajectory.states.len() < 2 {
                return Err(EdmdError::Dataset(format!(
                    "trajectory {i} has fewer than 2 states"
                )));
            }
            if trajectory.states.len() != trajectory.actions.len() + 1 {
                return Err(EdmdError::Dataset(format!(
                    "trajectory {i} has {} states but {} actions",
                    trajectory.states.len(),
                    trajectory.actions.len()
                )));
            }
        }
        Ok(Self { trajectories })
    }

    /// Dataset of one-step trajectories, one per `(state, action, next)` row.
    pub fn from_transitions(rows: Vec<(Vec<S>, usize, Vec<S>)>) -> Result<Self, EdmdError> {
        let trajectories = rows
            .into_iter()
            .map(|(state, action, next)| Trajectory { states: vec![state, next], actions: vec![action] })
            .collect();
        Self::new(trajectories)
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&[S], usize, &[S])> {
        self.trajectories.iter().flat_map(|trajectory| {
            trajectory.actions.iter().enumerate().map(move |(i, &action)| {
                (
                    trajectory.states[i].as_slice(),
                    action,
                    trajectory.states[i + 1].as_slice(),
                )
            })
        })
    }

    pub fn max_action(&self) -> Option<usize> {
        self.transitions().map(|(_, action, _)| action).max()
    }
}

/// What to fit and how to assemble the resulting model.
#[derive(Debug, Clone)]
pub struct FitSpec<S> {
    /// Lifting applied to raw states; `None` means the dataset is already
    /// lifted.
    pub basis: Option<ObservableBasis<S>>,
    pub cost_row: Vec<S>,
    /// Raw initial state (lifted through the basis when one is present).
    pub initial_state: Vec<S>,
    pub horizon: usize,
    /// Number of actions; inferred from the dataset when absent.
    pub num_actions: Option<usize>,
    pub action_labels: Option<Vec<String>>,
}

/// Per-action fit report.
#[derive(Debug, Clone)]
pub struct ActionFit<S> {
    pub action: usize,
    pub transitions: usize,
    pub rank: usize,
    pub full_rank: bool,
    /// Sum of squared residuals over the action's transitions.
    pub residual: S,
}

#[derive(Debug)]
pub struct KoopmanFit<S> {
    pub model: KoopmanModel<S>,
    pub action_fits: Vec<ActionFit<S>>,
}

/// Rank tolerance relative to the regressor's largest singular value.
const RANK_RTOL: f64 = 1e-10;

/// Fits one dynamics matrix per action by least squares over the lifted
/// transition pairs. Requires at least `n_psi` transitions per action; a
/// rank-deficient regressor is reported in the per-action fit, not an error.
pub fn fit_koopman<S: Scalar>(
    dataset: &TrajectoryDataset<S>,
    spec: &FitSpec<S>,
) -> Result<KoopmanFit<S>, EdmdError> {
    if dataset.trajectories.is_empty() {
        return Err(EdmdError::Dataset("dataset is empty".into()));
    }
    let num_actions = match spec.num_actions {
        Some(k) => k,
        None => dataset.max_action().map_or(0, |a| a + 1),
    };
    if num_actions == 0 {
        return Err(EdmdError::Dataset("no actions in dataset".into()));
    }
    if let Some(max) = dataset.max_action() {
        if max >= num_actions {
            return Err(EdmdError::Dataset(format!(
                "dataset uses action {max} but only {num_actions} actions were declared"
            )));
        }
    }

    let lift = |raw: &[S]| -> Result<Vec<S>, EdmdError> {
        match &spec.basis {
            Some(basis) => basis.lift_state(raw),
            None => Ok(raw.to_vec()),
        }
    };

    // Lift every transition once, bucketed by action.
    let mut pairs: Vec<Vec<(Vec<S>, Vec<S>)>> = vec![Vec::new(); num_actions];
    let mut n_psi = None;
    for (state, action, next) in dataset.transitions() {
        let lifted_state = lift(state)?;
        let lifted_next = lift(next)?;
        match n_psi {
            None => n_psi = Some(lifted_state.len()),
            Some(n) => {
                if lifted_state.len() != n || lifted_next.len() != n {
                    return Err(EdmdError::Dataset(
                        "inconsistent state dimensions across transitions".into(),
                    ));
                }
            }
        }
        pairs[action].push((lifted_state, lifted_next));
    }
    let n = n_psi.ok_or_else(|| EdmdError::Dataset("dataset has no transitions".into()))?;
    for (action, bucket) in pairs.iter().enumerate() {
        if bucket.len() < n {
            return Err(EdmdError::Underdetermined { action, have: bucket.len(), need: n });
        }
    }

    let fits: Vec<Result<(Mat<S>, ActionFit<S>), EdmdError>> = pairs
        .par_iter()
        .enumerate()
        .map(|(action, bucket)| {
            let rows = bucket.len();
            let mut regressor = Mat::zeros(rows, n);
            let mut target = Mat::zeros(rows, n);
            for (i, (state, next)) in bucket.iter().enumerate() {
                regressor.row_mut(i).copy_from_slice(state);
                target.row_mut(i).copy_from_slice(next);
            }
            let solved = lstsq(&regressor, &target, scalar::<S>(RANK_RTOL))?;
            let dynamics = solved.solution.transpose();
            let mut residual = S::zero();
            let mut predicted = vec![S::zero(); n];
            for (state, next) in bucket {
                dynamics.matvec_into(state, &mut predicted);
                for (p, y) in predicted.iter().zip(next.iter()) {
                    let d = *p - *y;
                    residual += d * d;
                }
            }
            Ok((
                dynamics,
                ActionFit {
                    action,
                    transitions: rows,
                    rank: solved.rank,
                    full_rank: solved.rank == n,
                    residual,
                },
            ))
        })
        .collect();

    let mut dynamics = Vec::with_capacity(num_actions);
    let mut action_fits = Vec::with_capacity(num_actions);
    for fit in fits {
        let (matrix, report) = fit?;
        dynamics.push(matrix);
        action_fits.push(report);
    }

    if spec.cost_row.len() != n {
        return Err(EdmdError::Dataset(format!(
            "cost row has length {}, lifted dimension is {n}",
            spec.cost_row.len()
        )));
    }
    let initial = lift(&spec.initial_state)?;
    if initial.len() != n {
        return Err(EdmdError::Dataset(format!(
            "initial state lifts to length {}, lifted dimension is {n}",
            initial.len()
        )));
    }
    let labels = match &spec.action_labels {
        Some(labels) => {
            if labels.len() != num_actions {
                return Err(EdmdError::Dataset(format!(
                    "{} labels for {num_actions} actions",
                    labels.len()
                )));
            }
            labels.clone()
        }
        None => (0..num_actions).map(|a| format!("u{a}")).collect(),
    };
    let model = KoopmanModel::new(labels, dynamics, spec.cost_row.clone(), initial, spec.horizon, None)?;
    Ok(KoopmanFit { model, action_fits })
}
