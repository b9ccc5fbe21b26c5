use criterion::{black_box, criterion_group, criterion_main, Criterion};
use prioseq::runtime::{explore, run, RunOptions, Scheduler};
use prioseq::{check_program, parse_program};
use prioseq_bench::{program, source};

fn parse(c: &mut Criterion) {
    let src = source("scheduler3.dfst");
    c.bench_function("parse scheduler3", |b| b.iter(|| parse_program(black_box(&src)).unwrap()));
}

fn check(c: &mut Criterion) {
    for name in ["tree.dfst", "scheduler3.dfst", "stream.dfst"] {
        let p = program(name);
        c.bench_function(&format!("check {name}"), |b| b.iter(|| check_program(black_box(&p))));
    }
}

fn execute(c: &mut Criterion) {
    let tree = program("tree.dfst");
    let opts = RunOptions { scheduler: Scheduler::Seeded(0), ..RunOptions::default() };
    c.bench_function("run tree", |b| b.iter(|| run(black_box(&tree), &opts)));
    let stream = program("stream.dfst");
    let checked = RunOptions { max_steps: 200, check_preservation: true, ..opts.clone() };
    c.bench_function("run stream 200 steps with preservation", |b| b.iter(|| run(black_box(&stream), &checked)));
    c.bench_function("explore tree", |b| b.iter(|| explore(black_box(&tree), 50_000)));
}

criterion_group!(benches, parse, check, execute);
criterion_main!(benches);
