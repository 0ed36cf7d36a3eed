use koopman_mcmc::bench::measure_sweeps;
use koopman_mcmc::sampler::make_log_ladder;
use koopman_mcmc::synth::random_orthogonal_model;

fn main() {
    // Paper-scale probe: n=667, T=40, |U|=4, M=12.
    let model = random_orthogonal_model::<f64>(667, 40, 4, 1, 1.0);
    let ladder = make_log_ladder(0.5, 50.0, 12).unwrap();
    let row = measure_sweeps(&model, &ladder, 1, 2, 10, 3).unwrap();
    println!(
        "f64: {:.4} s/sweep -> {:.1} s per 1000 sweeps ({} products/sweep)",
        row.secs_per_sweep,
        row.secs_per_sweep * 1000.0,
        row.products_per_sweep
    );
    let model32 = random_orthogonal_model::<f32>(667, 40, 4, 1, 1.0);
    let ladder32 = make_log_ladder(0.5f32, 50.0, 12).unwrap();
    let row32 = measure_sweeps(&model32, &ladder32, 1, 2, 10, 3).unwrap();
    println!(
        "f32: {:.4} s/sweep -> {:.1} s per 1000 sweeps",
        row32.secs_per_sweep,
        row32.secs_per_sweep * 1000.0
    );
}
