use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use latepool::Graph;
use latepool_bench::{random, BertFixture};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let store = latepool::ParamStore::<f32>::new();
    for n in [32usize, 128, 256] {
        let (a, b) = (random(&[n, n], 1), random(&[n, n], 2));
        group.throughput(Throughput::Elements((2 * n * n * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new(&store);
                let (x, y) = (g.input(a.clone()), g.input(b.clone()));
                g.matmul(x, y).unwrap()
            })
        });
    }
    group.finish();
}

fn conv3d(c: &mut Criterion) {
    let store = latepool::ParamStore::<f32>::new();
    let x = random(&[16, 8, 28, 28], 3);
    let w = random(&[32, 16, 3, 3, 3], 4);
    c.bench_function("conv3d/16x8x28x28->32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
            g.conv3d(xv, wv, None, [1, 1, 1], [1, 1, 1]).unwrap()
        })
    });
}

fn bert(c: &mut Criterion) {
    let mut group = c.benchmark_group("bert_pool");
    group.sample_size(20);
    for (d, heads) in [(128usize, 8usize), (512, 8)] {
        let fx = BertFixture::new(d, heads, 8);
        group.bench_function(BenchmarkId::new("forward", d), |bench| {
            bench.iter(|| {
                let mut g = Graph::new(&fx.store);
                let x = g.input(fx.features.clone());
                fx.pooler.forward(&mut g, x).unwrap().y_cls
            })
        });
        group.bench_function(BenchmarkId::new("forward_backward", d), |bench| {
            bench.iter(|| {
                let mut g = Graph::new(&fx.store);
                let x = g.input(fx.features.clone());
                let y = fx.pooler.forward(&mut g, x).unwrap().y_cls;
                let loss = g.sum(y);
                g.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, conv3d, bert);
criterion_main!(benches);
