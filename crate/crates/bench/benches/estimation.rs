use criterion::{criterion_group, criterion_main, Criterion};
use stix_core::simulation::SimSpec;
use stix_core::{fit, lm_test, simulate_panel, FitOptions, Interaction, WeightScheme};

fn estimation(c: &mut Criterion) {
    let sim = simulate_panel(&SimSpec::new(10, 52, Interaction::Linear), 3).expect("simulated panel");
    let st = sim.space_time();
    let y = sim.response();
    let options = FitOptions::default();
    let mut group = c.benchmark_group("estimation");
    group.sample_size(10);
    group.bench_function("fit_identity_n10_t52", |b| {
        b.iter(|| fit(&st, &sim.design, &y, 0.1, 0.75, &WeightScheme::identity(y.len()), &options).expect("fit"))
    });
    group.bench_function("lm_test_n10_t52", |b| {
        b.iter(|| lm_test(&st, &sim.design, &y, 0.1, 0.75, &options).expect("test"))
    });
    group.finish();
}

criterion_group!(benches, estimation);
criterion_main!(benches);
