use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vtube::par::Parallelism;
use vtube::partition::{partition, PartitionConfig};
use vtube::scenario::{desk_world, plan_scenario, swarm_world};
use vtube::sim::{simulate, SimConfig};
use vtube::temporal::ParametricTimeLp;
use vtube::tube::sample_theta;

const MODES: [Parallelism; 2] = [Parallelism::Sequential, Parallelism::Parallel];

fn generation(c: &mut Criterion) {
    let sc = desk_world(0);
    let (tube, _) = plan_scenario(&sc, Parallelism::Parallel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let thetas: Vec<Vec<f64>> = (0..10_000).map(|_| sample_theta(&mut rng, 3)).collect();
    let mut group = c.benchmark_group("generate_10k");
    for mode in MODES {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| b.iter(|| tube.trajectories(&thetas, mode).unwrap()),
        );
    }
    group.finish();
}

fn partitioning(c: &mut Criterion) {
    let sc = desk_world(0);
    let (tube, _) = plan_scenario(&sc, Parallelism::Parallel).unwrap();
    let plp =
        ParametricTimeLp::from_spatial(&tube.spatial, sc.planner.v_max, sc.planner.t_min).unwrap();
    let mut group = c.benchmark_group("partition_eps_0.1");
    for mode in MODES {
        let cfg = PartitionConfig {
            parallelism: mode,
            ..PartitionConfig::default()
        };
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &cfg,
            |b, cfg| b.iter(|| partition(&plp, 0.1, cfg).unwrap()),
        );
    }
    group.finish();
}

fn planning(c: &mut Criterion) {
    let sc = desk_world(0);
    let mut group = c.benchmark_group("plan_desk");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| b.iter(|| plan_scenario(&sc, mode).unwrap()),
        );
    }
    group.finish();
}

fn swarm_simulation(c: &mut Criterion) {
    let sc = swarm_world(0);
    let (tube, _) = plan_scenario(&sc, Parallelism::Parallel).unwrap();
    let starts = sc.robot_starts().unwrap();
    let mut group = c.benchmark_group("simulate_swarm_36");
    group.sample_size(10);
    for mode in MODES {
        let mut cfg = SimConfig::from_params(&sc.sim, &sc.planner);
        cfg.parallelism = mode;
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &cfg,
            |b, cfg| b.iter(|| simulate(&tube, &starts, cfg, &sc.map).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    generation,
    partitioning,
    planning,
    swarm_simulation
);
criterion_main!(benches);
