//! `vtube`: plan tubes, generate trajectory batches, simulate swarms and
//! benchmark trajectory generation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vtube::bench::{run_bench, BenchConfig};
use vtube::par::Parallelism;
use vtube::scenario::{plan_scenario, Allocation, Scenario, StageTimings};
use vtube::sim::{replan_loop, simulate, Replanner, SimConfig};
use vtube::tube::{sample_theta, TubeInfo, VirtualTube};
use vtube::Error;

#[derive(Parser)]
#[command(
    name = "vtube",
    version,
    about = "Virtual tube planning and swarm simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocationArg {
    Initial,
    Approx,
}

impl From<AllocationArg> for Allocation {
    fn from(a: AllocationArg) -> Self {
        match a {
            AllocationArg::Initial => Allocation::Initial,
            AllocationArg::Approx => Allocation::Approx,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plan a tube for a scenario and write the artifact and a summary.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Sample trajectories from a tube artifact into a CSV batch.
    Generate {
        #[arg(long)]
        tube: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use this parameter for every trajectory instead of sampling,
        /// e.g. `--theta 1,0,0`.
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<f64>>,
    },
    /// Simulate the scenario's robots, writing a CSV log and a summary.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Previously planned tube; planned from the scenario when absent.
        #[arg(long)]
        tube: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        allocation: Option<AllocationArg>,
        /// Fly with committed-tube replanning against unknown obstacles.
        #[arg(long)]
        replan: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Time affine generation against per-trajectory LP solves.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 250, 500, 750, 1000])]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 1.8])]
        epsilon: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Print tube metadata.
    Inspect {
        #[arg(long)]
        tube: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) | Error::Config(_) | Error::Domain(_) => 2,
        Error::PlanningFailure { .. }
        | Error::SpatialInfeasible { .. }
        | Error::LpInfeasible { .. }
        | Error::FeasibilityHole { .. }
        | Error::Assignment { .. }
        | Error::DegenerateSegment { .. } => 3,
        Error::Integrity(_) => 4,
        _ => 1,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_scenario(
    path: &Path,
    seed: Option<u64>,
    epsilon: Option<f64>,
) -> Result<Scenario, Failure> {
    let mut sc = Scenario::from_json(&read(path, "scenario")?).map_err(|e| Failure {
        code: exit_code(&e),
        message: format!("{}: {e}", path.display()),
    })?;
    if let Some(s) = seed {
        sc.planner.seed = s;
        sc.sim.seed = s;
    }
    if let Some(eps) = epsilon {
        sc.planner.epsilon = eps;
    }
    sc.validate().map_err(|e| Failure {
        code: exit_code(&e),
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(sc)
}

fn load_tube(path: &Path) -> Result<VirtualTube, Failure> {
    let text = read(path, "tube artifact")?;
    VirtualTube::from_json(&text).map_err(|e| Failure {
        code: exit_code(&e),
        message: format!("{}: {e}", path.display()),
    })
}

fn plan(sc: &Scenario, path: &Path) -> Result<(VirtualTube, StageTimings), Failure> {
    plan_scenario(sc, Parallelism::default()).map_err(|e| Failure {
        code: exit_code(&e.error),
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[derive(Serialize)]
struct PlanSummary {
    scenario: String,
    tube_hash: String,
    #[serde(flatten)]
    info: TubeInfo,
}

fn cmd_plan(
    scenario: &Path,
    out: &Path,
    seed: Option<u64>,
    epsilon: Option<f64>,
) -> Result<(), Failure> {
    let sc = load_scenario(scenario, seed, epsilon)?;
    let (tube, timings) = plan(&sc, scenario)?;
    create_dir(out)?;
    write_file(&out.join("tube.json"), &tube.to_json())?;
    let summary = PlanSummary {
        scenario: sc.name.clone(),
        tube_hash: tube.content_hash(),
        info: tube.info(),
    };
    write_file(&out.join("plan_summary.json"), &pretty(&summary))?;
    let info = &summary.info;
    println!(
        "planned {}: {} segments, {} critical regions (eps {}), optimal time {:.3}..{:.3} s (initial {:.3} s)",
        sc.name,
        info.segments,
        info.leaf_count,
        info.epsilon,
        info.vertex_time_range.0,
        info.vertex_time_range.1,
        info.initial_total_time
    );
    println!(
        "stages: corridor {:.3} s, spatial {:.3} s, temporal {:.3} s, partition {:.3} s",
        timings.corridor, timings.spatial, timings.temporal, timings.partition
    );
    Ok(())
}

fn cmd_generate(
    tube_path: &Path,
    out: &Path,
    k: usize,
    seed: u64,
    theta: Option<Vec<f64>>,
) -> Result<(), Failure> {
    let tube = load_tube(tube_path)?;
    let kc = tube.k_c();
    let thetas: Vec<Vec<f64>> = match theta {
        Some(t) => vec![t; k],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..k).map(|_| sample_theta(&mut rng, kc)).collect()
        }
    };
    let clock = Instant::now();
    let trajectories = tube.trajectories(&thetas, Parallelism::default())?;
    let elapsed = clock.elapsed().as_secs_f64();

    let file = fs::File::create(out)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", out.display())))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", out.display()),
    };
    let theta_cols: Vec<String> = (0..kc).map(|i| format!("theta_{i}")).collect();
    writeln!(
        w,
        "traj,{},total_time,segment,duration,cp,x,y,z",
        theta_cols.join(",")
    )
    .map_err(io)?;
    for (i, (th, tr)) in thetas.iter().zip(&trajectories).enumerate() {
        let th: Vec<String> = th.iter().map(|v| format!("{v:.12}")).collect();
        let th = th.join(",");
        for (m, seg) in tr.segments().iter().enumerate() {
            for (j, p) in seg.control_points().iter().enumerate() {
                writeln!(
                    w,
                    "{i},{th},{:.9},{m},{:.9},{j},{:.9},{:.9},{:.9}",
                    tr.total_time(),
                    seg.duration(),
                    p.x,
                    p.y,
                    p.z
                )
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    eprintln!(
        "generated {k} trajectories in {:.3} ms ({:.3} us each)",
        elapsed * 1e3,
        elapsed * 1e6 / k.max(1) as f64
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    scenario: &Path,
    tube_path: Option<&Path>,
    out: &Path,
    allocation: Option<AllocationArg>,
    replan: bool,
    seed: Option<u64>,
    epsilon: Option<f64>,
) -> Result<(), Failure> {
    let sc = load_scenario(scenario, seed, epsilon)?;
    let tube = match tube_path {
        Some(p) => load_tube(p)?,
        None => plan(&sc, scenario)?.0,
    };
    let mut cfg = SimConfig::from_params(&sc.sim, &sc.planner);
    if let Some(a) = allocation {
        cfg.allocation = a.into();
    }
    let starts = sc.robot_starts()?;
    let log = if replan {
        let rp = Replanner {
            planner: &sc.planner,
            mode: Parallelism::default(),
        };
        replan_loop(&tube, &starts, &cfg, &sc.map, &rp)?.0
    } else {
        simulate(&tube, &starts, &cfg, &sc.map)?
    };
    create_dir(out)?;
    let csv = out.join("log.csv");
    let file = fs::File::create(&csv).map_err(|e| Failure {
        code: 1,
        message: format!("cannot create {}: {e}", csv.display()),
    })?;
    log.write_csv(BufWriter::new(file))?;
    let summary = log.summary(cfg.allocation);
    write_file(&out.join("summary.json"), &pretty(&summary))?;
    println!(
        "{} robots, {:?} allocation: flight time {}, mean speed {:.3} m/s, min inter-robot {} m, min obstacle {} m, {} replan(s)",
        summary.robots,
        summary.allocation,
        summary.flight_time.map_or("n/a".into(), |t| format!("{t:.2} s")),
        summary.mean_speed,
        summary.min_inter_robot_distance.map_or("n/a".into(), |d| format!("{d:.3}")),
        summary.min_obstacle_distance.map_or("n/a".into(), |d| format!("{d:.3}")),
        summary.replan_count
    );
    if let Some(why) = &summary.halted {
        return Err(Failure {
            code: 3,
            message: why.clone(),
        });
    }
    if summary.timed_out {
        eprintln!("warning: step cap reached before every robot arrived");
    }
    Ok(())
}

fn cmd_bench(scenario: &Path, out: &Path, cfg: BenchConfig) -> Result<(), Failure> {
    let sc = load_scenario(scenario, None, None)?;
    let report = run_bench(&sc, &cfg)?;
    create_dir(out)?;
    write_file(&out.join("bench.json"), &pretty(&report))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(
        &out.join("bench.csv"),
        &String::from_utf8(csv).expect("ascii csv"),
    )?;
    for f in &report.fits {
        println!(
            "eps {}: {} regions, partition {:.3} ms, generation {:.3} us/traj (R^2 {:.3}), LP {:.1} us/traj, crossover predicted {:.1}, measured {}",
            f.epsilon,
            f.leaf_count,
            f.partition_time * 1e3,
            f.generation_slope * 1e6,
            f.generation_r2,
            f.direct_slope * 1e6,
            f.predicted_crossover,
            f.empirical_crossover.map_or("none".into(), |k| format!("{k:.1}"))
        );
    }
    Ok(())
}

fn cmd_inspect(tube_path: &Path) -> Result<(), Failure> {
    let tube = load_tube(tube_path)?;
    #[derive(Serialize)]
    struct Inspect {
        content_hash: String,
        #[serde(flatten)]
        info: TubeInfo,
        spheres: usize,
        v_max: [f64; 3],
    }
    let v = tube.v_max;
    print!(
        "{}",
        pretty(&Inspect {
            content_hash: tube.content_hash(),
            info: tube.info(),
            spheres: tube.corridor.spheres.len(),
            v_max: [v.x, v.y, v.z]
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Plan {
            scenario,
            out,
            seed,
            epsilon,
        } => cmd_plan(&scenario, &out, seed, epsilon),
        Command::Generate {
            tube,
            out,
            k,
            seed,
            theta,
        } => cmd_generate(&tube, &out, k, seed, theta),
        Command::Simulate {
            scenario,
            tube,
            out,
            allocation,
            replan,
            seed,
            epsilon,
        } => cmd_simulate(
            &scenario,
            tube.as_deref(),
            &out,
            allocation,
            replan,
            seed,
            epsilon,
        ),
        Command::Bench {
            scenario,
            out,
            k,
            epsilon,
            seed,
            repetitions,
        } => cmd_bench(
            &scenario,
            &out,
            BenchConfig {
                ks: k,
                epsilons: epsilon,
                repetitions,
                seed,
                ..BenchConfig::default()
            },
        ),
        Command::Inspect { tube } => cmd_inspect(&tube),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
