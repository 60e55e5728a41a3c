use std::collections::BTreeMap;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ftlnet::bridge::PiecewiseDensity;
use ftlnet::config::ExperimentConfig;
use ftlnet::exec::map_jobs;
use ftlnet::experiment::{Experiment, MicroRun};
use ftlnet::macroscopic::TurningCoefficients;
use ftlnet::micro::{seed_vehicles, MicroState, SeedOptions};
use ftlnet::network::{Junction, Road, RoadNetwork};
use ftlnet::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn cross_state(ell: f64) -> MicroState {
    let roads = (1..=4).map(|id| Road { id, length: 4000.0 }).collect();
    let net = RoadNetwork::with_terminals(roads, vec![Junction::new(0, vec![1, 2], vec![3, 4])]).unwrap();
    let paths = net.enumerate_paths().unwrap();
    let mut turning = TurningCoefficients::default();
    turning.set(1, 3, 0.7).set(1, 4, 0.3).set(2, 3, 0.6).set(2, 4, 0.4);
    let initial = BTreeMap::from([
        (1, PiecewiseDensity::constant(0.0, 4000.0, 0.4)),
        (2, PiecewiseDensity::constant(0.0, 4000.0, 0.5)),
    ]);
    let opts = SeedOptions { ell, v_max: 1.0, dt: 0.1, seed: 1, adaptive_cfl: false, strict_mass: false };
    seed_vehicles(Arc::new(net), Arc::new(paths), &initial, &turning, &opts).unwrap().0
}

fn micro_step(c: &mut Criterion) {
    let base = cross_state(0.25);
    let mut group = c.benchmark_group("micro_step_14400");
    for (name, exec) in MODES {
        let state = base.clone().with_execution(exec);
        group.bench_function(name, |b| {
            b.iter_batched_ref(|| state.clone(), |s| black_box(s.step()), BatchSize::LargeInput)
        });
    }
    group.finish();
}

fn macro_step(c: &mut Criterion) {
    let text = include_str!("../../../configs/cross2x2.toml").replace("cells_per_road = 100", "cells_per_road = 2000");
    let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
    cfg.macro_.dt = 1.0;
    let exp = Experiment::from_config(cfg).unwrap();
    let mut group = c.benchmark_group("macro_step_8000_cells");
    for (name, exec) in MODES {
        let state = exp.macro_state().unwrap().with_execution(exec);
        group.bench_function(name, |b| b.iter_batched_ref(|| state.clone(), |s| s.step(), BatchSize::LargeInput));
    }
    group.finish();
}

fn replicas(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::from_toml(include_str!("../../../configs/diverge.toml")).unwrap();
    cfg.t_final = 200.0;
    let exp = Experiment::from_config(cfg).unwrap().with_execution(Execution::Sequential);
    let mut group = c.benchmark_group("diverge_replicas_8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                map_jobs(exec, (0..8u64).collect(), |seed| {
                    let run = MicroRun { ell: Some(2.0), dt: Some(4.0), seed: Some(seed) };
                    exp.run_micro(run, None).unwrap().summary.arrived
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, micro_step, macro_step, replicas);
criterion_main!(benches);
