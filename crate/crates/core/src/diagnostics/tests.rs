use num_bigint::BigUint;

use super::*;
use crate::linalg::Mat;
use crate::sampler::flip_probability;
use crate::synth::random_orthogonal_model;

fn identity_model(dim: usize, horizon: usize, actions: usize) -> KoopmanModel<f64> {
    let mut cost_row = vec![0.0; dim];
    cost_row[0] = 1.0;
    let mut initial = vec![0.0; dim];
    initial[0] = 2.0;
    KoopmanModel::new(
        (0..actions).map(|a| format!("a{a}")).collect(),
        (0..actions).map(|_| Mat::identity(dim)).collect(),
        cost_row,
        initial,
        horizon,
        None,
    )
    .unwrap()
}

/// One-step model whose sequence costs are exactly `values`.
fn valued_model(values: &[f64]) -> KoopmanModel<f64> {
    KoopmanModel::new(
        (0..values.len()).map(|a| format!("a{a}")).collect(),
        values.iter().map(|&v| Mat::from_vec(1, 1, vec![v]).unwrap()).collect(),
        vec![1.0],
        vec![1.0],
        1,
        None,
    )
    .unwrap()
}

#[test]
fn state_space_round_trips_indices() {
    let model = KoopmanModel::<f64>::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![Mat::identity(1), Mat::identity(1), Mat::identity(1)],
        vec![1.0],
        vec![1.0],
        3,
        Some(vec![vec![0, 1, 2], vec![0, 2], vec![1, 2]]),
    )
    .unwrap();
    let space = StateSpace::enumerate(&model, 100).unwrap();
    assert_eq!(space.total(), 12);
    for index in 0..space.total() {
        let seq = space.decode(index);
        assert_eq!(space.index_of(&seq), Some(index));
        model.validate_sequence(&seq).unwrap();
    }
    // Lexicographic: first step most significant.
    assert_eq!(space.decode(0).0, vec![0, 0, 1]);
    assert_eq!(space.decode(1).0, vec![0, 0, 2]);
    assert_eq!(space.decode(11).0, vec![2, 2, 2]);
}

#[test]
fn brute_force_on_identity_dynamics_returns_everything() {
    let model = identity_model(2, 3, 2);
    let (best, minimizers) = brute_force_min(&model, 1000).unwrap();
    assert_eq!(best, 2.0);
    assert_eq!(minimizers.len(), 8);
}

#[test]
fn brute_force_two_point() {
    let model = valued_model(&[2.0, 3.0]);
    let (best, minimizers) = brute_force_min(&model, 10).unwrap();
    assert_eq!(best, 2.0);
    assert_eq!(minimizers.len(), 1);
    assert_eq!(minimizers[0].0, vec![0]);
}

#[test]
fn brute_force_matches_full_matrix_product_oracle() {
    let model = random_orthogonal_model::<f64>(4, 8, 3, 101, 1.0);
    let (best, minimizers) = brute_force_min(&model, 10_000).unwrap();
    // Independent oracle: explicit matrix products over every sequence.
    let space = StateSpace::enumerate(&model, 10_000).unwrap();
    let mut oracle_best = f64::INFINITY;
    let mut oracle_arg = None;
    for index in 0..space.total() {
        let seq = space.decode(index);
        let mut product = Mat::identity(4);
        for &a in seq.iter() {
            product = model.dynamics(a).matmul(&product).unwrap();
        }
        let c = crate::linalg::dot(model.cost_row(), &product.matvec(model.initial_state()));
        if c < oracle_best {
            oracle_best = c;
            oracle_arg = Some(seq);
        }
    }
    assert!((best - oracle_best).abs() <= 1e-10 * (1.0 + best.abs()));
    assert_eq!(minimizers[0].0, oracle_arg.unwrap().0);
}

#[test]
fn enumeration_cap_is_enforced() {
    let model = identity_model(2, 40, 4);
    match brute_force_min(&model, DEFAULT_ENUMERATION_CAP) {
        Err(DiagnosticsError::EnumerationRefused { count, cap }) => {
            assert_eq!(count.to_string(), "1208925819614629174706176");
            assert_eq!(cap, DEFAULT_ENUMERATION_CAP);
        }
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn boltzmann_uniform_at_beta_zero() {
    let model = identity_model(2, 4, 2);
    let dist = boltzmann(&model, 0.0, 1000).unwrap();
    assert_eq!(dist.probs.len(), 16);
    for p in &dist.probs {
        assert!((p - 1.0 / 16.0).abs() < 1e-15);
    }
    assert!((dist.partition - 16.0 * (-0.0f64 * 2.0).exp()).abs() < 1e-9);
}

#[test]
fn boltzmann_two_point_closed_form() {
    let model = valued_model(&[0.0, 1.0]);
    let beta = 2f64.ln();
    let dist = boltzmann(&model, beta, 10).unwrap();
    assert!((dist.probs[0] - 2.0 / 3.0).abs() < 1e-14);
    assert!((dist.probs[1] - 1.0 / 3.0).abs() < 1e-14);
    // probs[i] = exp(-beta J_i) / partition.
    for (p, j) in dist.probs.iter().zip([0.0, 1.0]) {
        assert!((p - (-beta * j).exp() / dist.partition).abs() < 1e-12);
    }
}

#[test]
fn boltzmann_concentrates_on_minimizers_at_low_temperature() {
    // Seeded instance with the cost row scaled so the optimality gap is wide
    // enough for beta = 50 to push all but 1e-6 of the mass onto the optimum.
    let base = random_orthogonal_model::<f64>(3, 6, 2, 8, 1.0);
    let model = KoopmanModel::new(
        base.action_labels().to_vec(),
        (0..2).map(|a| base.dynamics(a).clone()).collect(),
        base.cost_row().iter().map(|&c| 4.0 * c).collect(),
        base.initial_state().to_vec(),
        base.horizon(),
        None,
    )
    .unwrap();
    let (_, minimizers) = brute_force_min(&model, 10_000).unwrap();
    let dist = boltzmann(&model, 50.0, 10_000).unwrap();
    let mass: f64 = minimizers
        .iter()
        .map(|seq| dist.probs[dist.space.index_of(seq).unwrap()])
        .sum();
    assert!(mass >= 1.0 - 1e-6, "minimizer mass {mass}");
}

#[test]
fn gibbs_kernel_is_identity_for_forced_coordinate() {
    let model = KoopmanModel::<f64>::new(
        vec!["a".into(), "b".into()],
        vec![Mat::identity(1), Mat::from_vec(1, 1, vec![2.0]).unwrap()],
        vec![1.0],
        vec![1.0],
        2,
        Some(vec![vec![0, 1], vec![1]]),
    )
    .unwrap();
    let kernel = gibbs_kernel(&model, 1.5, 1, 100).unwrap();
    for i in 0..kernel.states() {
        for j in 0..kernel.states() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert_eq!(kernel.matrix.get(i, j), expected);
        }
    }
}

#[test]
fn gibbs_kernel_uniform_rows_at_beta_zero() {
    let model = identity_model(1, 2, 2);
    let kernel = gibbs_kernel(&model, 0.0, 0, 100).unwrap();
    for i in 0..4 {
        let row = kernel.matrix.row(i);
        assert_eq!(row.iter().filter(|&&p| (p - 0.5).abs() < 1e-15).count(), 2);
        assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 2);
    }
}

#[test]
fn gibbs_kernel_satisfies_detailed_balance() {
    let model = random_orthogonal_model::<f64>(3, 4, 2, 3, 1.0);
    let beta = 2.0;
    let dist = boltzmann(&model, beta, 1000).unwrap();
    for t in 0..4 {
        let kernel = gibbs_kernel(&model, beta, t, 1000).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..kernel.states() {
            for j in 0..kernel.states() {
                let lhs = kernel.matrix.get(i, j) * dist.probs[i];
                let rhs = kernel.matrix.get(j, i) * dist.probs[j];
                worst = worst.max((lhs - rhs).abs());
            }
        }
        assert!(worst <= 1e-12, "detailed balance residual {worst} at t={t}");
    }
}

#[test]
fn sweep_kernel_equals_dense_product_of_coordinate_kernels() {
    let model = random_orthogonal_model::<f64>(2, 3, 2, 5, 1.0);
    let beta = 1.3;
    let sweep = sweep_kernel(&model, beta, 100).unwrap();
    let mut product = Mat::identity(8);
    for t in 0..3 {
        let kernel = gibbs_kernel(&model, beta, t, 100).unwrap();
        product = product.matmul(&kernel.matrix).unwrap();
    }
    for i in 0..8 {
        for j in 0..8 {
            assert!((sweep.matrix.get(i, j) - product.get(i, j)).abs() <= 1e-14);
        }
    }
}

#[test]
fn sweep_kernel_globally_balances_boltzmann() {
    let model = random_orthogonal_model::<f64>(3, 4, 2, 11, 1.0);
    let beta = 2.0;
    let sweep = sweep_kernel(&model, beta, 1000).unwrap();
    let dist = boltzmann(&model, beta, 1000).unwrap();
    let mut propagated = vec![0.0; sweep.states()];
    sweep.matrix.vecmat_into(&dist.probs, &mut propagated);
    let residual: f64 = propagated
        .iter()
        .zip(dist.probs.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(residual <= 1e-10, "global balance residual {residual}");
}

#[test]
fn sweep_kernel_strictly_positive_for_positive_beta() {
    let model = random_orthogonal_model::<f64>(2, 3, 2, 19, 1.0);
    let sweep = sweep_kernel(&model, 1.0, 100).unwrap();
    for i in 0..sweep.states() {
        for j in 0..sweep.states() {
            assert!(sweep.matrix.get(i, j) > 0.0);
        }
    }
}

#[test]
fn sweep_kernel_uniform_at_beta_zero() {
    let model = identity_model(1, 3, 2);
    let sweep = sweep_kernel(&model, 0.0, 100).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            assert!((sweep.matrix.get(i, j) - 0.125).abs() < 1e-15);
        }
    }
}

#[test]
fn stationary_of_symmetric_two_state_chain() {
    let space = StateSpace::synthetic(2);
    let p = TransitionMatrix::<f64>::from_matrix(
        space,
        Mat::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap(),
    )
    .unwrap();
    let pi = stationary_distribution(&p).unwrap();
    assert!((pi[0] - 0.5).abs() < 1e-14);
    assert!((pi[1] - 0.5).abs() < 1e-14);
}

#[test]
fn stationary_two_state_closed_form() {
    let space = StateSpace::synthetic(2);
    let p = TransitionMatrix::<f64>::from_matrix(
        space,
        Mat::from_vec(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap(),
    )
    .unwrap();
    let pi = stationary_distribution(&p).unwrap();
    assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn stationary_rejects_periodic_chain() {
    let space = StateSpace::synthetic(2);
    let p = TransitionMatrix::<f64>::from_matrix(
        space,
        Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
    )
    .unwrap();
    assert!(matches!(stationary_distribution(&p), Err(DiagnosticsError::NotRegular)));
}

#[test]
fn sweep_kernel_stationary_matches_boltzmann() {
    let model = random_orthogonal_model::<f64>(3, 5, 2, 23, 1.0);
    let beta = 1.7;
    let sweep = sweep_kernel(&model, beta, 1000).unwrap();
    let pi = stationary_distribution(&sweep).unwrap();
    let dist = boltzmann(&model, beta, 1000).unwrap();
    let l1: f64 = pi.iter().zip(dist.probs.iter()).map(|(a, b)| (a - b).abs()).sum();
    assert!(l1 <= 1e-8, "stationary vs Boltzmann L1 distance {l1}");
}

#[test]
fn transition_matrix_rejects_non_stochastic_rows() {
    let space = StateSpace::synthetic(2);
    assert!(matches!(
        TransitionMatrix::<f64>::from_matrix(
            space.clone(),
            Mat::from_vec(2, 2, vec![0.7, 0.2, 0.5, 0.5]).unwrap()
        ),
        Err(DiagnosticsError::NotRowStochastic(_))
    ));
    assert!(matches!(
        TransitionMatrix::from_matrix(
            space,
            Mat::from_vec(2, 2, vec![1.1, -0.1, 0.5, 0.5]).unwrap()
        ),
        Err(DiagnosticsError::NotRowStochastic(_))
    ));
}

#[test]
fn hoffman_bound_hand_values() {
    let space = StateSpace::synthetic(2);
    let flat = TransitionMatrix::<f64>::from_matrix(
        space.clone(),
        Mat::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap(),
    )
    .unwrap();
    let (lambda, mixing) = hoffman_bound(&flat);
    assert_eq!(lambda, 0.0);
    assert_eq!(mixing, 1.0);

    let skew = TransitionMatrix::<f64>::from_matrix(
        space.clone(),
        Mat::from_vec(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap(),
    )
    .unwrap();
    let (lambda, mixing) = hoffman_bound(&skew);
    assert!((lambda - 0.7).abs() < 1e-15);
    assert!((mixing - 10.0 / 3.0).abs() < 1e-14);

    // Every column minimum vanishes for a permutation matrix.
    let permuted = TransitionMatrix::<f64>::from_matrix(
        space,
        Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
    )
    .unwrap();
    let (_, mixing) = hoffman_bound(&permuted);
    assert!(mixing.is_infinite());
}

#[test]
fn sample_complexity_trivial_when_everything_is_optimal() {
    let out = sample_complexity(
        &BigUint::from(64u32),
        &BigUint::from(64u32),
        1.0,
        (-2.0f64).exp(),
        1.0,
    )
    .unwrap();
    assert_eq!(out.beta_required, 0.0);
    assert_eq!(out.n_required, Some(2));
}

#[test]
fn sample_complexity_hand_example() {
    let out = sample_complexity(&BigUint::from(16u32), &BigUint::from(2u32), 1.0, 0.01, 3.0).unwrap();
    assert!((out.beta_required - 8f64.ln()).abs() < 1e-12);
    assert_eq!(out.n_required, Some(6));
}

#[test]
fn sample_complexity_flags_infeasible_beta() {
    let out = sample_complexity(&BigUint::from(16u32), &BigUint::from(2u32), 1.0, 0.01, 2.0).unwrap();
    assert_eq!(out.n_required, None);
    assert!(out.beta_required > 2.0);
}

#[test]
fn sample_complexity_rejects_bad_parameters() {
    let u = BigUint::from(8u32);
    let s = BigUint::from(2u32);
    assert!(matches!(
        sample_complexity(&u, &s, 0.0, 0.1, 1.0),
        Err(DiagnosticsError::Parameter(_))
    ));
    assert!(matches!(
        sample_complexity(&u, &s, 1.0, 1.0, 1.0),
        Err(DiagnosticsError::Parameter(_))
    ));
    assert!(matches!(
        sample_complexity(&s, &u, 1.0, 0.1, 1.0),
        Err(DiagnosticsError::Parameter(_))
    ));
}

#[test]
fn ln_big_handles_huge_counts() {
    let count = BigUint::from(4u32).pow(40);
    let expected = 40.0 * 4f64.ln();
    assert!((ln_big(&count) - expected).abs() < 1e-9);
}

#[test]
fn tempering_preserves_joint_invariant_distribution() {
    // Two temperatures over a T=2, |U|=2 instance: the joint kernel is one
    // sweep of each replica followed by the flip kernel; the product of the
    // two Boltzmann distributions must be invariant under it.
    let model = random_orthogonal_model::<f64>(2, 2, 2, 29, 1.0);
    let (beta_lo, beta_hi) = (0.7, 2.1);
    let sweep_lo = sweep_kernel(&model, beta_lo, 100).unwrap();
    let sweep_hi = sweep_kernel(&model, beta_hi, 100).unwrap();
    let table = cost_table(&model, 100).unwrap();
    let n = table.len();
    let joint_dim = n * n;

    let mut step = Mat::zeros(joint_dim, joint_dim);
    for s1 in 0..n {
        for s2 in 0..n {
            for d1 in 0..n {
                for d2 in 0..n {
                    step.set(
                        s1 * n + s2,
                        d1 * n + d2,
                        sweep_lo.matrix.get(s1, d1) * sweep_hi.matrix.get(s2, d2),
                    );
                }
            }
        }
    }
    let mut flip = Mat::zeros(joint_dim, joint_dim);
    for s1 in 0..n {
        for s2 in 0..n {
            let p = flip_probability(beta_lo, beta_hi, table[s1], table[s2]).unwrap();
            let from = s1 * n + s2;
            let to = s2 * n + s1;
            flip.set(from, to, flip.get(from, to) + p);
            flip.set(from, from, flip.get(from, from) + 1.0 - p);
        }
    }
    let joint_kernel = step.matmul(&flip).unwrap();

    let dist_lo = boltzmann(&model, beta_lo, 100).unwrap();
    let dist_hi = boltzmann(&model, beta_hi, 100).unwrap();
    let joint: Vec<f64> = (0..joint_dim)
        .map(|idx| dist_lo.probs[idx / n] * dist_hi.probs[idx % n])
        .collect();
    let mut propagated = vec![0.0; joint_dim];
    joint_kernel.vecmat_into(&joint, &mut propagated);
    let residual: f64 = joint.iter().zip(propagated.iter()).map(|(a, b)| (a - b).abs()).sum();
    assert!(residual <= 1e-10, "joint invariance residual {residual}");
}
