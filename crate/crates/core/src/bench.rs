//! Timing harness: affine trajectory generation against one LP per trajectory.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::partition::{partition, PartitionConfig};
use crate::scenario::{plan_scenario, Scenario};
use crate::temporal::{direct_lp, solve_lp, ParametricTimeLp};
use crate::tube::{build_tube, sample_theta, VirtualTube};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// Timed repetitions per measurement; at least 3.
    pub repetitions: usize,
    /// Shortest batch the clock is trusted to resolve, s. Shorter batches
    /// are repeated in an inner loop until they take this long.
    pub min_batch_time: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![100, 250, 500, 750, 1000],
            epsilons: vec![0.8, 1.8],
            repetitions: 5,
            min_batch_time: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub epsilon: f64,
    pub k: usize,
    pub n_t: usize,
    pub k_c: usize,
    pub leaf_count: usize,
    /// Median over repetitions, s.
    pub partition_time: f64,
    /// Median total time to produce `k` trajectories, s.
    pub generation_time: f64,
    pub direct_time: f64,
    /// Median single-trajectory time over all timed calls, s.
    pub generation_per_trajectory: f64,
    pub direct_per_trajectory: f64,
    pub inner_loops: usize,
}

/// Linear fits of total time against `k` for one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFit {
    pub epsilon: f64,
    pub leaf_count: usize,
    pub partition_time: f64,
    pub generation_slope: f64,
    pub generation_r2: f64,
    pub direct_slope: f64,
    pub direct_r2: f64,
    /// `λ(ε)(n_t + k_c)³ / (n_t³ − n_t)`.
    pub predicted_crossover: f64,
    /// `k` at which partition plus generation matches the direct solves.
    pub empirical_crossover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub repetitions: usize,
    pub runs: Vec<BenchRun>,
    pub fits: Vec<BenchFit>,
}

/// Least-squares line `y = a + b x`: returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (my - slope * mx, slope, r2)
}

pub fn predicted_crossover(leaf_count: usize, n_t: usize, k_c: usize) -> f64 {
    let n = n_t as f64;
    leaf_count as f64 * (n + k_c as f64).powi(3) / (n.powi(3) - n)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median single-call time over one pass, median batch time over `reps`
/// batches, and the inner loop count needed to reach `min_batch` seconds.
fn time_batch<F: FnMut(usize) -> Result<()>>(
    k: usize,
    reps: usize,
    min_batch: f64,
    mut f: F,
) -> Result<(f64, f64, usize)> {
    let mut calls = Vec::with_capacity(k);
    let clock = Instant::now();
    for i in 0..k {
        let c = Instant::now();
        f(i)?;
        calls.push(c.elapsed().as_secs_f64());
    }
    let once = clock.elapsed().as_secs_f64();
    let inner = ((min_batch / once.max(1e-9)).ceil() as usize).clamp(1, 1 << 20);
    let mut batches = Vec::with_capacity(reps);
    for _ in 0..reps {
        let batch = Instant::now();
        for _ in 0..inner {
            for i in 0..k {
                f(i)?;
            }
        }
        batches.push(batch.elapsed().as_secs_f64() / inner as f64);
    }
    Ok((median(&mut calls), median(&mut batches), inner))
}

pub fn run_bench(sc: &Scenario, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repetitions < 3 {
        return Err(Error::Config(
            "benchmark needs at least 3 repetitions".into(),
        ));
    }
    if cfg.ks.is_empty() || cfg.epsilons.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one k and one epsilon".into(),
        ));
    }
    let (base, _) = plan_scenario(sc, Parallelism::Sequential).map_err(|e| e.error)?;
    let plp = ParametricTimeLp::from_spatial(&base.spatial, sc.planner.v_max, sc.planner.t_min)?;
    let pcfg = PartitionConfig {
        parallelism: Parallelism::Sequential,
        ..sc.planner.partition.clone()
    };
    let k_max = cfg.ks.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thetas: Vec<Vec<f64>> = (0..k_max)
        .map(|_| sample_theta(&mut rng, base.k_c()))
        .collect();

    let mut runs = Vec::new();
    let mut fits = Vec::new();
    for &eps in &cfg.epsilons {
        let mut times = Vec::with_capacity(cfg.repetitions);
        let mut tree = None;
        for _ in 0..cfg.repetitions {
            let clock = Instant::now();
            let t = partition(&plp, eps, &pcfg)?;
            times.push(clock.elapsed().as_secs_f64());
            tree = Some(t);
        }
        let partition_time = median(&mut times);
        let tree = tree.expect("at least one repetition");
        let leaf_count = tree.leaf_count();
        let tube: VirtualTube = build_tube(
            base.terminals.clone(),
            base.corridor.clone(),
            base.spatial.clone(),
            tree,
            base.v_max,
        )?;

        for &k in &cfg.ks {
            let (gen_call, gen_batch, gen_inner) =
                time_batch(k, cfg.repetitions, cfg.min_batch_time, |i| {
                    std::hint::black_box(tube.trajectory(&thetas[i])?);
                    Ok(())
                })?;
            let (lp_call, lp_batch, lp_inner) =
                time_batch(k, cfg.repetitions, cfg.min_batch_time, |i| {
                    let lp = direct_lp(&tube.spatial, &thetas[i], tube.v_max, sc.planner.t_min)?;
                    let sol = solve_lp(&lp)?;
                    std::hint::black_box(tube.spatial.trajectory(&thetas[i], &sol.durations)?);
                    Ok(())
                })?;
            runs.push(BenchRun {
                epsilon: eps,
                k,
                n_t: plp.segment_count(),
                k_c: plp.k_c(),
                leaf_count,
                partition_time,
                generation_time: gen_batch,
                direct_time: lp_batch,
                generation_per_trajectory: gen_call,
                direct_per_trajectory: lp_call,
                inner_loops: gen_inner.max(lp_inner),
            });
        }

        let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.epsilon == eps).collect();
        let ks: Vec<f64> = mine.iter().map(|r| r.k as f64).collect();
        let gen: Vec<f64> = mine.iter().map(|r| r.generation_time).collect();
        let direct: Vec<f64> = mine.iter().map(|r| r.direct_time).collect();
        let (_, g_slope, g_r2) = linear_fit(&ks, &gen);
        let (d_icpt, d_slope, d_r2) = linear_fit(&ks, &direct);
        let gap = d_slope - g_slope;
        fits.push(BenchFit {
            epsilon: eps,
            leaf_count,
            partition_time,
            generation_slope: g_slope,
            generation_r2: g_r2,
            direct_slope: d_slope,
            direct_r2: d_r2,
            predicted_crossover: predicted_crossover(leaf_count, plp.segment_count(), plp.k_c()),
            empirical_crossover: (gap > 0.0).then(|| ((partition_time - d_icpt) / gap).max(0.0)),
        });
    }
    Ok(BenchReport {
        scenario: sc.name.clone(),
        repetitions: cfg.repetitions,
        runs,
        fits,
    })
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epsilon,k,n_t,k_c,leaf_count,partition_s,generation_total_s,direct_total_s,generation_per_traj_s,direct_per_traj_s"
        )?;
        for r in &self.runs {
            writeln!(
                w,
                "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.epsilon,
                r.k,
                r.n_t,
                r.k_c,
                r.leaf_count,
                r.partition_time,
                r.generation_time,
                r.direct_time,
                r.generation_per_trajectory,
                r.direct_per_trajectory
            )?;
        }
        Ok(())
    }
}
