use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use pns_core::featurize::featurize;
use pns_core::gnn::{Dims, GnnModel};
use pns_core::instgen::{gen_combinatorial_auction, gen_independent_set};
use pns_core::search::{select_partial, solve_restricted, SearchConfig};
use pns_core::solver::{brute_force, solve_lp, solve_milp, SolveParams};

fn solver(c: &mut Criterion) {
    let is = gen_independent_set(60, 4, 1).unwrap();
    let ca = gen_combinatorial_auction(15, 40, 1).unwrap();
    let tiny = gen_independent_set(18, 2, 1).unwrap();
    let large = gen_independent_set(150, 4, 1).unwrap();

    c.bench_function("lp_relaxation_is150", |b| b.iter(|| solve_lp(black_box(&large), None).unwrap()));
    c.bench_function("bnb_is60", |b| b.iter(|| solve_milp(black_box(&is), &SolveParams::default())));
    c.bench_function("bnb_ca15x40", |b| b.iter(|| solve_milp(black_box(&ca), &SolveParams::default())));
    c.bench_function("brute_force_is18", |b| b.iter(|| brute_force(black_box(&tiny)).unwrap()));
}

fn network(c: &mut Criterion) {
    let inst = gen_independent_set(150, 4, 2).unwrap();
    let g = featurize(&inst);
    let model = GnnModel::new(Dims::default(), 0);
    let target = vec![0.5; g.q];

    c.bench_function("featurize_is150", |b| b.iter(|| featurize(black_box(&inst))));
    c.bench_function("gnn_forward_is150", |b| b.iter(|| model.predict(black_box(&g)).unwrap()));
    c.bench_function("gnn_backward_is150", |b| b.iter(|| model.loss_and_gradient(black_box(&g), &target).unwrap()));
}

fn search(c: &mut Criterion) {
    let inst = gen_independent_set(150, 4, 3).unwrap();
    let probs = GnnModel::new(Dims::default(), 0).predict(&featurize(&inst)).unwrap();
    let cfg = SearchConfig::for_family("independent_set", inst.num_binary()).unwrap();
    let ps = select_partial(&probs, cfg.k0, cfg.k1).unwrap();
    c.bench_function("trust_region_is150", |b| {
        b.iter_batched(|| ps.clone(), |ps| solve_restricted(&inst, &ps, &cfg), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = solver, network, search
}
criterion_main!(benches);
