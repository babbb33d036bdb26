use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dlm_core::autodiff::ParamStore;
use dlm_core::grounding::{ground_all, DEFAULT_CAPACITY};
use dlm_core::network::predict_fnn;
use dlm_core::{map_infer, parse_kb, AtomIndex, KnowledgeBase, MapConfig, Network, TNorm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world(size: usize) -> KnowledgeBase {
    let constants: Vec<String> = (0..size).map(|i| format!("c{i}")).collect();
    parse_kb(&format!(
        "domain e {{{}}}.\n\
         predicate R(e, e).\npredicate S(e, e).\n\
         rule forall x in e forall y in e forall z in e: R(x, y) and R(y, z) -> R(x, z).\n\
         rule forall x in e forall y in e forall z in e: S(x, y) and R(y, z) -> R(x, z).\n\
         rule forall x in e forall y in e: S(x, y) -> S(y, x).\n\
         rule forall x in e: exists y in e: R(x, y).\n",
        constants.join(", ")
    ))
    .unwrap()
}

fn random_state(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

fn potentials(c: &mut Criterion) {
    let mut group = c.benchmark_group("transitivity");
    for size in [20, 40, 80] {
        let kb = world(size);
        let index = AtomIndex::with_capacity(&kb, DEFAULT_CAPACITY).unwrap();
        let y = random_state(index.n(), 1);
        for t in [TNorm::Product, TNorm::Minimum, TNorm::Lukasiewicz] {
            let pots = ground_all(&kb, t, &index, DEFAULT_CAPACITY).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("eval/{t}"), size), &size, |b, _| {
                b.iter(|| black_box(pots[0].eval(black_box(&y))))
            });
            let mut grad = vec![0.0; index.n()];
            group.bench_with_input(BenchmarkId::new(format!("eval_grad/{t}"), size), &size, |b, _| {
                b.iter(|| {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    black_box(pots[0].eval_grad(black_box(&y), 1.0, &mut grad))
                })
            });
        }
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let kb = world(30);
    let index = AtomIndex::with_capacity(&kb, DEFAULT_CAPACITY).unwrap();
    let pots = ground_all(&kb, TNorm::Product, &index, DEFAULT_CAPACITY).unwrap();
    let f_nn = random_state(index.n(), 2);
    let lambda = vec![2.0; pots.len()];
    let cfg = MapConfig { max_iters: 50, ..MapConfig::default() };
    c.bench_function("map/30 constants", |b| b.iter(|| map_infer(black_box(&f_nn), &lambda, &pots, &cfg).unwrap()));

    let net = Network::relational(&index, 10, 10);
    let mut params = ParamStore::new(pots.len());
    net.init_params(&index, &mut params, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    c.bench_function("relational forward/30 constants", |b| b.iter(|| predict_fnn(&params, &net, &index, None).unwrap()));
}

criterion_group!(benches, potentials, inference);
criterion_main!(benches);
