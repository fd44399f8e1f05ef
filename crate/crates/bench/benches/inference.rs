use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phaseseg_core::inference::{filter_init, filter_step, forward_backward};
use phaseseg_core::simulate::fixtures::{regime_wrenches, three_phase_model, DT};
use phaseseg_core::simulate::sample_from_model;
use phaseseg_core::DVector;

fn smoothing(c: &mut Criterion) {
    let model = three_phase_model();
    let mut group = c.benchmark_group("forward_backward");
    for len in [100usize, 1000] {
        let wrenches = regime_wrenches(&[len / 3, len / 3, len - 2 * (len / 3)], 1);
        let demo = sample_from_model(&model, &DVector::zeros(2), &wrenches, DT, 1).unwrap().demo;
        group.bench_with_input(BenchmarkId::from_parameter(len), &demo, |b, demo| {
            b.iter(|| forward_backward(&model, demo).unwrap())
        });
    }
    group.finish();
}

fn filtering(c: &mut Criterion) {
    let model = three_phase_model();
    let demo = sample_from_model(&model, &DVector::zeros(2), &regime_wrenches(&[300; 3], 2), DT, 2)
        .unwrap()
        .demo;
    c.bench_function("online_filter_900", |b| {
        b.iter(|| {
            let mut state = filter_init(&model, demo.state(0), &demo.interaction(0), demo.state(1)).unwrap();
            for k in 1..demo.len() - 1 {
                state = filter_step(&state, &model, demo.state(k), &demo.interaction(k), demo.state(k + 1)).unwrap();
            }
            state
        })
    });
}

criterion_group!(benches, smoothing, filtering);
criterion_main!(benches);
