// Scratch harness for optimizer hyperparameters (deleted before release).
use diffintersort::distance::DistanceMatrix;
use diffintersort::optim::{optimize_potential, OptimizerConfig, ScoreMode};
use diffintersort::rng::rng_from_seed;
use diffintersort::score::brute_force_best_order;
use diffintersort::sinkhorn::SinkhornConfig;
use ndarray::Array2;
use rand::Rng as _;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let restarts: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10);
    let init_scale: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let n_inst: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(20);

    for d in [4usize, 5, 6] {
        let mut hits = 0;
        let t0 = Instant::now();
        for seed in 0..n_inst {
            let mut rng = rng_from_seed(10_000 + seed * 13 + d as u64);
            let values = Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..4.0));
            let dm = DistanceMatrix::from_raw_values(values, (0..d).collect(), 0.3, 0.5).unwrap();
            let (_, best) = brute_force_best_order(&dm).unwrap();
            let opt = OptimizerConfig {
                learning_rate: lr,
                steps,
                restarts,
                init_scale,
                sinkhorn: SinkhornConfig::new(0.3, 500).unwrap().with_early_stop(1e-13),
                mode: ScoreMode::StraightThrough,
            };
            let out = optimize_potential(&dm, &opt, 77_000 + seed).unwrap();
            if (out.score - best).abs() < 1e-9 {
                hits += 1;
            } else {
                println!("  miss d={d} seed={seed}: {} vs {}", out.score, best);
            }
        }
        println!(
            "d={d}: {hits}/{n_inst} ({:.1}s)  lr={lr} steps={steps} restarts={restarts} init={init_scale}",
            t0.elapsed().as_secs_f64()
        );
    }
}
