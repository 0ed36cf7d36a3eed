use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::diagnostics::brute_force_min;
use crate::linalg::Mat;
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

/// Random point on each row's allowed simplex.
fn random_controls(model: &KoopmanModel<f64>, seed: u64) -> RelaxedControls<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut weights = Mat::zeros(model.horizon(), model.num_actions());
    for t in 0..model.horizon() {
        let allowed = model.allowed(t);
        let raw: Vec<f64> = allowed.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        for (&a, &w) in allowed.iter().zip(raw.iter()) {
            weights.set(t, a, w / sum);
        }
    }
    RelaxedControls::from_weights(weights)
}

#[test]
fn relaxed_cost_tight_at_vertices() {
    let model = random_orthogonal_model::<f64>(3, 4, 2, 31, 1.0);
    for idx in 0..16u32 {
        let seq: Vec<usize> = (0..4).map(|t| ((idx >> t) & 1) as usize).collect();
        let seq = ControlSequence(seq);
        let discrete = cost(&model, &seq).unwrap();
        let vertex = RelaxedControls::one_hot(&model, &seq).unwrap();
        let relaxed = relaxed_cost(&model, &vertex).unwrap();
        let rel = (relaxed - discrete).abs() / discrete.abs().max(1e-300);
        assert!(rel <= 1e-12, "vertex {idx}: {relaxed} vs {discrete}");
    }
}

#[test]
fn relaxed_cost_constant_for_identical_dynamics() {
    let model = identity_model(2, 5, 3);
    let reference = relaxed_cost(&model, &RelaxedControls::uniform(&model)).unwrap();
    for seed in 0..5 {
        let mu = random_controls(&model, seed);
        let value = relaxed_cost(&model, &mu).unwrap();
        assert!((value - reference).abs() < 1e-12);
    }
}

#[test]
fn relaxed_cost_rejects_simplex_violations() {
    let model = identity_model(2, 3, 2);
    let mut weights = Mat::zeros(3, 2);
    for t in 0..3 {
        weights.set(t, 0, 0.7);
        weights.set(t, 1, 0.7);
    }
    let bad = RelaxedControls::from_weights(weights);
    assert!(matches!(
        relaxed_cost(&model, &bad),
        Err(BaselineError::InvalidControls(_))
    ));
}

#[test]
fn relaxed_minimum_is_attained_at_a_vertex() {
    // Multilinearity: every feasible point costs at least the best vertex.
    let model = random_orthogonal_model::<f64>(3, 4, 3, 77, 1.0);
    let (vertex_min, _) = brute_force_min(&model, 10_000).unwrap();
    for seed in 0..200 {
        let mu = random_controls(&model, seed);
        let value = relaxed_cost(&model, &mu).unwrap();
        assert!(
            value >= vertex_min - 1e-9,
            "relaxed cost {value} beats the vertex minimum {vertex_min}"
        );
    }
}

#[test]
fn gradient_matches_central_differences() {
    let model = random_orthogonal_model::<f64>(5, 6, 3, 13, 1.0);
    let mu = random_controls(&model, 4);
    let grad = relaxed_gradient(&model, &mu).unwrap();
    let h = 1e-6;
    for t in 0..6 {
        for a in 0..3 {
            let mut plus = mu.clone();
            plus.weights.set(t, a, plus.weights.get(t, a) + h);
            let mut minus = mu.clone();
            minus.weights.set(t, a, minus.weights.get(t, a) - h);
            let fd = (relaxed_cost_raw(&model, &plus) - relaxed_cost_raw(&model, &minus)) / (2.0 * h);
            let g = grad.get(t, a);
            let rel = (fd - g).abs() / g.abs().max(1e-8);
            assert!(rel <= 1e-5, "grad[{t}][{a}] analytic {g} vs fd {fd}");
        }
    }
}

#[test]
fn gradient_rows_constant_for_identical_dynamics() {
    let model = identity_model(3, 4, 3);
    let mu = random_controls(&model, 2);
    let grad = relaxed_gradient(&model, &mu).unwrap();
    for t in 0..4 {
        let row = grad.row(t);
        assert!((row[0] - row[1]).abs() < 1e-13);
        assert!((row[1] - row[2]).abs() < 1e-13);
    }
}

#[test]
fn gradient_single_step_closed_form() {
    let model = random_orthogonal_model::<f64>(4, 1, 3, 5, 1.0);
    let mu = RelaxedControls::uniform(&model);
    let grad = relaxed_gradient(&model, &mu).unwrap();
    for a in 0..3 {
        let expected = crate::linalg::dot(
            model.cost_row(),
            &model.dynamics(a).matvec(model.initial_state()),
        );
        assert!((grad.get(0, a) - expected).abs() <= 1e-14);
    }
}

#[test]
fn project_simplex_examples() {
    let on_simplex = [0.2f64, 0.5, 0.3];
    let projected = project_simplex(&on_simplex);
    for (p, v) in projected.iter().zip(on_simplex.iter()) {
        assert!((p - v).abs() < 1e-15);
    }

    let projected = project_simplex(&[0.8f64, 0.6]);
    assert!((projected[0] - 0.6).abs() < 1e-15);
    assert!((projected[1] - 0.4).abs() < 1e-15);

    let projected = project_simplex(&[3.7f64, 3.7, 3.7, 3.7]);
    for p in &projected {
        assert!((p - 0.25).abs() < 1e-15);
    }

    let projected = project_simplex(&[-5.0f64, 0.1, 0.2]);
    assert!(projected[0] == 0.0);
    let sum: f64 = projected.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

/// Independent oracle: bisection on the threshold of `max(v - tau, 0)`.
fn project_simplex_bisection(v: &[f64]) -> Vec<f64> {
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let sum: f64 = v.iter().map(|&x| (x - mid).max(0.0)).sum();
        if sum > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[test]
fn project_simplex_matches_bisection_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    for _ in 0..500 {
        let n = rng.random_range(2..9);
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let fast = project_simplex(&v);
        let oracle = project_simplex_bisection(&v);
        for (a, b) in fast.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b} for input {v:?}");
        }
    }
}

#[test]
fn project_simplex_idempotent_and_nonexpansive() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    for _ in 0..200 {
        let n = rng.random_range(2..7);
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let pv = project_simplex(&v);
        let pw = project_simplex(&w);
        let ppv = project_simplex(&pv);
        for (a, b) in pv.iter().zip(ppv.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let d_in: f64 = v.iter().zip(w.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let d_out: f64 = pv.iter().zip(pw.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(d_out <= d_in + 1e-12, "projection expanded {d_in} to {d_out}");
    }
}

#[test]
fn gradient_solve_single_action_is_degenerate() {
    let model = identity_model(2, 4, 1);
    let out = gradient_solve(&model, &GradientConfig::new(0.5, 10, 0)).unwrap();
    assert_eq!(out.rounded.0, vec![0; 4]);
    assert_eq!(out.rounded_cost, 2.0);
    for t in 0..4 {
        assert!((out.controls.weights().get(t, 0) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn gradient_solve_improves_over_initialization() {
    let model = random_orthogonal_model::<f64>(4, 6, 3, 41, 1.0);
    let out = gradient_solve(&model, &GradientConfig::new(0.5, 200, 0)).unwrap();
    assert!(out.history.len() == 201);
    assert!(
        out.relaxed_cost <= out.history[0],
        "final {} vs initial {}",
        out.relaxed_cost,
        out.history[0]
    );
    out.controls.validate(&model).unwrap();
}

#[test]
fn gradient_solve_rounded_cost_bounded_by_oracle() {
    let model = random_orthogonal_model::<f64>(3, 4, 2, 59, 1.0);
    let (best, _) = brute_force_min(&model, 10_000).unwrap();
    let out = gradient_solve(&model, &GradientConfig::new(0.5, 150, 0)).unwrap();
    assert!(out.rounded_cost >= best - 1e-9);
}

#[test]
fn gradient_solve_respects_masks() {
    let model = KoopmanModel::<f64>::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![Mat::identity(2), Mat::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap(), Mat::identity(2)],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
        3,
        Some(vec![vec![0, 1], vec![1], vec![0, 2]]),
    )
    .unwrap();
    let out = gradient_solve(&model, &GradientConfig::new(0.5, 50, 0)).unwrap();
    model.validate_sequence(&out.rounded).unwrap();
    for t in 0..3 {
        for a in 0..3 {
            if !model.allowed(t).contains(&a) {
                assert_eq!(out.controls.weights().get(t, a), 0.0);
            }
        }
    }
}

#[test]
fn ga_single_action_returns_only_sequence() {
    let model = identity_model(2, 3, 1);
    let config = GaConfig { generations: 5, seed: 1, ..GaConfig::default() };
    let out = genetic_solve(&model, &config).unwrap();
    assert_eq!(out.best.0, vec![0; 3]);
    assert_eq!(out.best_cost, 2.0);
}

#[test]
fn ga_best_ever_is_monotone() {
    let model = random_orthogonal_model::<f64>(4, 8, 3, 3, 1.0);
    let config = GaConfig { generations: 40, seed: 9, ..GaConfig::default() };
    let out = genetic_solve(&model, &config).unwrap();
    assert_eq!(out.history.len(), 41);
    for w in out.history.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let recomputed = cost(&model, &out.best).unwrap();
    assert!((recomputed - out.best_cost).abs() <= 1e-12 * (1.0 + recomputed.abs()));
}

#[test]
fn ga_zero_generations_returns_initial_best() {
    let model = random_orthogonal_model::<f64>(3, 5, 2, 21, 1.0);
    let config = GaConfig { generations: 0, seed: 5, ..GaConfig::default() };
    let out = genetic_solve(&model, &config).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0], out.best_cost);
}

#[test]
fn ga_is_seed_reproducible() {
    let model = random_orthogonal_model::<f64>(3, 6, 3, 37, 1.0);
    let config = GaConfig { generations: 25, seed: 123, ..GaConfig::default() };
    let a = genetic_solve(&model, &config).unwrap();
    let b = genetic_solve(&model, &config).unwrap();
    assert_eq!(a.best.0, b.best.0);
    assert_eq!(a.history, b.history);
}

#[test]
fn ga_respects_masks() {
    let model = KoopmanModel::<f64>::new(
        vec!["a".into(), "b".into()],
        vec![Mat::identity(1), Mat::from_vec(1, 1, vec![0.5]).unwrap()],
        vec![1.0],
        vec![1.0],
        4,
        Some(vec![vec![0], vec![0, 1], vec![1], vec![0, 1]]),
    )
    .unwrap();
    let config = GaConfig { generations: 30, seed: 2, ..GaConfig::default() };
    let out = genetic_solve(&model, &config).unwrap();
    model.validate_sequence(&out.best).unwrap();
    // Optimum uses the contracting action wherever allowed.
    assert_eq!(out.best.0, vec![0, 1, 1, 1]);
}

#[test]
fn ga_config_validation() {
    let model = identity_model(1, 2, 2);
    let bad_pop = GaConfig { population: 1, ..GaConfig::default() };
    assert!(matches!(genetic_solve(&model, &bad_pop), Err(BaselineError::Config(_))));
    let bad_mu = GaConfig { selection_mu: 100, ..GaConfig::default() };
    assert!(matches!(genetic_solve(&model, &bad_mu), Err(BaselineError::Config(_))));
    let bad_rate = GaConfig { mutation_rate: 1.5, ..GaConfig::default() };
    assert!(matches!(genetic_solve(&model, &bad_rate), Err(BaselineError::Config(_))));
}
