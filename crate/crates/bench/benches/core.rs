use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use rcd_core::data::JunctionProbe;
use rcd_core::junctions::build_sets;
use rcd_core::mixed_model::fit_set;
use rcd_core::rank_change::rank_change_probability;
use rcd_core::rng::stream;
use rcd_core::simulate::{generate_dataset, Scenario, NORMAL, TUMOR};

fn fixture(j: usize) -> rcd_core::simulate::SimulatedSet {
    let mut rng = stream(1, &["bench", &j.to_string()]);
    generate_dataset(&Scenario::null(j, true), &mut rng).unwrap()
}

fn bench_fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_set");
    for j in [2, 4, 8] {
        let sim = fixture(j);
        g.bench_function(format!("{j}_junctions"), |b| {
            b.iter(|| fit_set(black_box(&sim.dataset), &sim.set, (NORMAL, TUMOR)).unwrap())
        });
    }
    g.finish();
}

fn bench_rank_change(c: &mut Criterion) {
    let sim = fixture(4);
    let fit = fit_set(&sim.dataset, &sim.set, (NORMAL, TUMOR)).unwrap();
    let mut g = c.benchmark_group("rank_change_probability");
    for draws in [1_000, 10_000] {
        g.bench_function(format!("{draws}_draws"), |b| {
            b.iter(|| rank_change_probability(black_box(&fit), draws, 7, 0.9).unwrap())
        });
    }
    g.finish();
}

fn bench_sets(c: &mut Criterion) {
    // 500 genes with 12 staggered junctions each
    let probes: Vec<JunctionProbe> = (0..500)
        .flat_map(|g| {
            (0..12).map(move |k| {
                let start = 100 * k as i64;
                JunctionProbe::new(format!("g{g}_{k}"), format!("G{g}"), start, start + 250).unwrap()
            })
        })
        .collect();
    c.bench_function("build_sets/6000_probes", |b| {
        b.iter_batched(|| probes.clone(), |p| build_sets(&p, 10), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_fit, bench_rank_change, bench_sets);
criterion_main!(benches);
