use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use lgocv::simulate::Scenario;
use lgocv::sparse::SymbolicLdl;
use lgocv::{build_groups, compute_lgocv, find_mode, fit, EngineConfig, GridConfig, GroupConfig, ModeConfig};
use lgocv_bench::{ar1, ar1_rows, fitted, test_window};

fn factorization(c: &mut Criterion) {
    let (model, f) = ar1();
    let point = f.grid.mode().clone();
    let q = model.assemble_prior_precision(&point).unwrap();
    c.bench_function("ldl_analyze_ar1_prior", |b| b.iter(|| SymbolicLdl::analyze(black_box(&q))));
    let symbolic = SymbolicLdl::analyze(&q);
    c.bench_function("ldl_factorize_ar1_prior", |b| b.iter(|| symbolic.factorize(black_box(&q)).unwrap()));
    c.bench_function("mode_ar1", |b| b.iter(|| find_mode(&model, black_box(&point), &ModeConfig::default()).unwrap()));
}

fn grid(c: &mut Criterion) {
    let (model, _) = fitted(Scenario::MultilevelBinomial);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("multilevel_binomial", |b| b.iter(|| fit(black_box(&model), &GridConfig::default()).unwrap()));
    g.finish();
}

fn groups(c: &mut Criterion) {
    let (model, f) = ar1();
    let rows = ar1_rows(&model, &f);
    let test = test_window();
    for m in [1, 5] {
        let cfg = GroupConfig { m, ..GroupConfig::default() };
        c.bench_function(&format!("groups_ar1_m{m}"), |b| {
            b.iter(|| build_groups(&rows, black_box(&test), &cfg, "prior(u)".into()).unwrap())
        });
    }
}

fn lgocv(c: &mut Criterion) {
    let (model, f) = ar1();
    let rows = ar1_rows(&model, &f);
    let test = test_window();
    let mut g = c.benchmark_group("lgocv_ar1");
    g.sample_size(10);
    for m in [1, 3, 10] {
        let groups =
            build_groups(&rows, &test, &GroupConfig { m, ..GroupConfig::default() }, "prior(u)".into()).unwrap();
        g.bench_function(format!("m{m}"), |b| {
            b.iter(|| compute_lgocv(&model, &f, black_box(&groups), Some(&test), &EngineConfig::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, factorization, grid, groups, lgocv);
criterion_main!(benches);
