use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pem_core::ensemble::{pio_kss, LayerShape};
use pem_core::harness::{make_synthetic_dataset, ConvNet};
use pem_core::{Batch, Execution, GsgdConfig, ManifoldKind, Objective, OptimizerState, ProductManifold};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::SEQUENTIAL), ("parallel", Execution::parallel(true))]
}

fn pem_step(c: &mut Criterion) {
    let shape = LayerShape::new(1, 8, 4, 16, 16).unwrap();
    let kinds = [ManifoldKind::Stiefel.into(), ManifoldKind::Sphere.into()];
    let plan = pio_kss(&shape, 32, &kinds).unwrap();
    let products = pem_core::ensemble::plan_to_products(&plan, &shape).unwrap();
    let points: Vec<Vec<f64>> = products.iter().enumerate().map(|(i, m)| m.random_point(i as u64)).collect();
    let grads: Vec<Vec<f64>> = products
        .iter()
        .map(|m: &ProductManifold| (0..m.total_ambient_dim()).map(|i| ((i % 13) as f64 - 6.0) * 0.01).collect())
        .collect();
    let mut group = c.benchmark_group("pem_step");
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut state = OptimizerState::new(GsgdConfig::default(), products.clone(), points.clone(), 0).unwrap();
            b.iter(|| state.step(&grads, exec).unwrap())
        });
    }
    group.finish();
}

fn conv_batch(c: &mut Criterion) {
    let data = make_synthetic_dataset(4, 64, 0).unwrap();
    let mut group = c.benchmark_group("conv_loss_and_grad");
    for (name, exec) in modes() {
        let net = ConvNet::new(data.clone(), 3, 6).unwrap().with_execution(exec);
        let params = vec![vec![0.05; 2 * 6 * 9], vec![0.1; 6 * 4]];
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| net.loss_and_grad(&params, Batch::Full).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, pem_step, conv_batch);
criterion_main!(benches);
