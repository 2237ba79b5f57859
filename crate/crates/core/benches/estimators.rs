//! Estimator throughput. With the default `parallel` feature the same work
//! runs on a one-thread and on a full rayon pool; build with
//! `--no-default-features` for the plain sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use regradius::moduli::{rg_estimate, rg_plus_estimate};
use regradius::{GraphPoint, MappingModel, Matrix, ScaleSchedule};

fn workload() -> (MappingModel, GraphPoint, ScaleSchedule) {
    let a = Matrix::from_rows(&[vec![1.0, 0.3, -0.2], vec![0.1, 0.8, 0.4], vec![-0.5, 0.2, 1.1]]).unwrap();
    (
        MappingModel::linear(a),
        GraphPoint::new(vec![0.0; 3], vec![0.0; 3]),
        ScaleSchedule::geometric(0.25, 6, 80, 1),
    )
}

fn bench(c: &mut Criterion) {
    let (f, base, sch) = workload();
    let mut g = c.benchmark_group("estimators");
    g.sample_size(10);

    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let all = rayon::ThreadPoolBuilder::new().build().unwrap();
        for (name, pool) in [("rayon-1-thread", &one), ("rayon-all-threads", &all)] {
            g.bench_function(format!("rg/{name}"), |b| {
                b.iter(|| pool.install(|| black_box(rg_estimate(&f, &base, &sch).unwrap())))
            });
            g.bench_function(format!("rg_plus/{name}"), |b| {
                b.iter(|| pool.install(|| black_box(rg_plus_estimate(&f, &base, &sch).unwrap())))
            });
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        g.bench_function("rg/sequential", |b| b.iter(|| black_box(rg_estimate(&f, &base, &sch).unwrap())));
        g.bench_function("rg_plus/sequential", |b| {
            b.iter(|| black_box(rg_plus_estimate(&f, &base, &sch).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
