use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use lipembed::flow::{Orbit, State};
use lipembed::funcspace::{cr_dist, LineFn};
use lipembed::genvec::{rank_check, sample_generic_u, DEFAULT_RANK_TOL};
use lipembed_bench::{logistic, logistic_bebutov, wiggle};

fn cr_distance(c: &mut Criterion) {
    let n = 4001;
    let a = LineFn::new_unchecked(20.0, 0.01, wiggle(n, 1));
    let b = LineFn::new_unchecked(20.0, 0.01, wiggle(n, 2));
    c.bench_function("cr_dist n_max=20 step=0.01", |bch| bch.iter(|| cr_dist(black_box(&a), black_box(&b), 20).unwrap()));
}

fn ranks(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank_check");
    for rows in [4usize, 8, 16] {
        let m: Vec<Vec<f64>> = (0..rows).map(|i| wiggle(40, i as u64)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(rows), &m, |bch, m| bch.iter(|| rank_check(black_box(m), DEFAULT_RANK_TOL)));
    }
    g.finish();
    let targets = vec![vec![0.5; 40], vec![0.4; 40]];
    c.bench_function("sample_generic_u M=2 N=40 L=8", |bch| {
        bch.iter(|| sample_generic_u(black_box(&targets), 0.05, 0.02, 8, 42, 1000).unwrap())
    });
}

fn flows(c: &mut Criterion) {
    let l = logistic(0.05);
    c.bench_function("logistic orbit [-40, 40]", |bch| {
        bch.iter(|| Orbit::compute(&l.sys, black_box(&State::scalar(0.3)), -40.0, 40.0).unwrap())
    });
    let f = logistic_bebutov(&l);
    let x = State::scalar(0.35);
    f.line(&x, 20.0, 0.01).unwrap();
    c.bench_function("bebutov line (cached orbit)", |bch| bch.iter(|| f.line(black_box(&x), 20.0, 0.01).unwrap()));
}

criterion_group!(benches, cr_distance, ranks, flows);
criterion_main!(benches);
