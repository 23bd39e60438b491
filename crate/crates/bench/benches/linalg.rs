//! Solving with Ω: one dense Cholesky per region against the factored
//! space-time systems.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use stix_core::simulation::SimSpec;
use stix_core::{simulate_panel, BlockCovariance, CovarianceParams, Interaction, Strategy};

fn block_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("block_solve");
    group.sample_size(10);
    for &(n, t) in &[(10, 52), (20, 104)] {
        let sim = simulate_panel(&SimSpec::new(n, t, Interaction::None), 1).expect("simulated panel");
        let st = sim.space_time();
        let params = CovarianceParams::unit(12, 0.1, 0.75);
        let y: DVector<f64> = sim.response();
        for strategy in [Strategy::Dense, Strategy::Spectral] {
            let label = format!("{strategy:?}").to_lowercase();
            group.bench_with_input(BenchmarkId::new(label, format!("n{n}_t{t}")), &strategy, |b, &s| {
                b.iter(|| {
                    let cov = BlockCovariance::build(&st, &params, s).expect("factorization");
                    cov.solve_vec(&y).expect("solve")
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, block_solve);
criterion_main!(benches);
