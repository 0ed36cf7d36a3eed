//! Seeded synthetic model generators for tests and benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::linalg::Mat;
use crate::model::KoopmanModel;
use crate::{scalar, Scalar};

fn gaussian_matrix<S: Scalar>(n: usize, rng: &mut ChaCha12Rng) -> Mat<S> {
    let data: Vec<S> = (0..n * n)
        .map(|_| scalar::<S>(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Mat::from_vec(n, n, data).unwrap()
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt).
fn orthonormalize<S: Scalar>(m: &mut Mat<S>) {
    let n = m.rows();
    for j in 0..n {
        for k in 0..j {
            let mut proj = S::zero();
            for i in 0..n {
                proj += m.get(i, k) * m.get(i, j);
            }
            for i in 0..n {
                let v = m.get(i, j) - proj * m.get(i, k);
                m.set(i, j, v);
            }
        }
        let mut norm2 = S::zero();
        for i in 0..n {
            norm2 += m.get(i, j) * m.get(i, j);
        }
        let norm = norm2.sqrt();
        let inv = if norm > S::zero() { S::one() / norm } else { S::zero() };
        for i in 0..n {
            let v = m.get(i, j) * inv;
            m.set(i, j, v);
        }
    }
}

/// Random model whose dynamics are scaled orthogonal matrices. With
/// `scale = 1` the dynamics are norm-preserving, which keeps the cost
/// landscape spread out over long horizons instead of collapsing to zero;
/// `scale < 1` gives a strictly stable model.
pub fn random_orthogonal_model<S: Scalar>(
    n_psi: usize,
    horizon: usize,
    num_actions: usize,
    seed: u64,
    scale: f64,
) -> KoopmanModel<S> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut dynamics = Vec::with_capacity(num_actions);
    for _ in 0..num_actions {
        let mut q = gaussian_matrix::<S>(n_psi, &mut rng);
        orthonormalize(&mut q);
        if scale != 1.0 {
            let s = scalar::<S>(scale);
            for i in 0..n_psi {
                for j in 0..n_psi {
                    let v = q.get(i, j) * s;
                    q.set(i, j, v);
                }
            }
        }
        dynamics.push(q);
    }
    let cost_row = unit_gaussian_vector::<S>(n_psi, &mut rng);
    let initial = unit_gaussian_vector::<S>(n_psi, &mut rng);
    KoopmanModel::new(
        (0..num_actions).map(|a| format!("u{a}")).collect(),
        dynamics,
        cost_row,
        initial,
        horizon,
        None,
    )
    .expect("generated model is valid")
}

fn unit_gaussian_vector<S: Scalar>(n: usize, rng: &mut ChaCha12Rng) -> Vec<S> {
    let mut v: Vec<S> = (0..n)
        .map(|_| scalar::<S>(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let norm = v.iter().map(|&x| x * x).sum::<S>().sqrt();
    if norm > S::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
    v
}

/// Random dense stable model: Gaussian entries rescaled so the largest
/// singular value of each dynamics matrix equals `sigma`.
pub fn random_stable_model<S: Scalar>(
    n_psi: usize,
    horizon: usize,
    num_actions: usize,
    seed: u64,
    sigma: f64,
) -> KoopmanModel<S> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut dynamics = Vec::with_capacity(num_actions);
    for _ in 0..num_actions {
        let mut a = gaussian_matrix::<S>(n_psi, &mut rng);
        let smax = crate::linalg::sigma_max_estimate(&a);
        let factor = scalar::<S>(sigma) / smax;
        for i in 0..n_psi {
            for j in 0..n_psi {
                let v = a.get(i, j) * factor;
                a.set(i, j, v);
            }
        }
        dynamics.push(a);
    }
    let cost_row = unit_gaussian_vector::<S>(n_psi, &mut rng);
    let initial = unit_gaussian_vector::<S>(n_psi, &mut rng);
    KoopmanModel::new(
        (0..num_actions).map(|a| format!("u{a}")).collect(),
        dynamics,
        cost_row,
        initial,
        horizon,
        None,
    )
    .expect("generated model is valid")
}
