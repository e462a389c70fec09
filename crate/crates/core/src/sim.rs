//! Fixed-step simulation of point-mass robots tracking tube trajectories.
//!
//! Each robot integrates `ṗ = v_c` with forward Euler, where the command is
//! feedforward along its trajectory, saturated proportional tracking and
//! linear repulsion from close neighbors, capped at `v_sat`. All commands of
//! one step are computed from the same snapshot.
//!
//! With replanning enabled, only the part of the tube inside the committed
//! range around the leader is flown. When a robot reaches the committed
//! front the tube is replanned from that cross-section if new obstacles were
//! sensed, and the commitment is extended along the same tube otherwise.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bezier::PiecewiseBezier;
use crate::error::{Error, Result};
use crate::geometry::{ObstacleMap, Terminals, Vec3};
use crate::par::{map_range, Parallelism};
use crate::scenario::{plan_tube, Allocation, PlannerParams, SimParams};
use crate::tube::VirtualTube;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec3,
    pub theta: Vec<f64>,
    /// Time along the robot's current trajectory, s.
    pub clock: f64,
    pub role: Role,
    pub r_s: f64,
    pub r_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub k_b: f64,
    pub k_a: f64,
    pub v_sat: f64,
    pub tracking_saturation: f64,
    pub r_s: f64,
    pub r_a: f64,
    pub sensing_radius: f64,
    pub commit_fraction: f64,
    pub handover_threshold: f64,
    pub goal_tolerance: f64,
    pub max_time: f64,
    pub allocation: Allocation,
    pub seed: u64,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl SimConfig {
    /// Unless set explicitly, `v_sat` is the larger of `2·v_nominal` and
    /// `‖v_max‖`; the latter bounds every feedforward speed of either allocation.
    pub fn from_params(sim: &SimParams, planner: &PlannerParams) -> Self {
        Self {
            dt: sim.dt,
            k_b: sim.k_b,
            k_a: sim.k_a,
            v_sat: sim
                .v_sat
                .unwrap_or_else(|| (2.0 * planner.v_nominal).max(planner.v_max.norm())),
            tracking_saturation: sim.tracking_saturation,
            r_s: sim.r_s,
            r_a: sim.r_a,
            sensing_radius: sim.sensing_radius,
            commit_fraction: sim.commit_fraction,
            handover_threshold: sim.handover_threshold,
            goal_tolerance: sim.goal_tolerance,
            max_time: sim.max_time,
            allocation: sim.allocation,
            seed: sim.seed,
            parallelism: Parallelism::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.02) {
            return Err(Error::Config(format!(
                "dt must lie in (0, 0.02] s, got {}",
                self.dt
            )));
        }
        if !(self.r_a > self.r_s && self.r_s > 0.0) {
            return Err(Error::Config("need r_a > r_s > 0".into()));
        }
        let positive = [
            ("k_b", self.k_b),
            ("k_a", self.k_a),
            ("v_sat", self.v_sat),
            ("tracking_saturation", self.tracking_saturation),
            ("sensing_radius", self.sensing_radius),
            ("goal_tolerance", self.goal_tolerance),
            ("max_time", self.max_time),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.commit_fraction > 0.0 && self.commit_fraction < 1.0) {
            return Err(Error::Config("commit_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Velocity command and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub velocity: Vec3,
    pub feedforward: Vec3,
    pub tracking: Vec3,
    pub repulsion: Vec3,
    /// Number of neighbors at exactly the robot's position.
    pub coincident: usize,
}

fn saturate(v: Vec3, limit: f64) -> Vec3 {
    let n = v.norm();
    if n > limit {
        v * (limit / n)
    } else {
        v
    }
}

/// Unit vector for the coincident pair `{i, j}`, opposite for the two robots.
fn coincident_direction(seed: u64, i: usize, j: usize) -> Vec3 {
    let (lo, hi) = (i.min(j) as u64, i.max(j) as u64);
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (lo << 32 | hi).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let u = Vec3::new(r * phi.cos(), r * phi.sin(), z);
    if i < j {
        u
    } else {
        -u
    }
}

/// Composite command for robot `index` given neighbor positions.
pub fn control_step(
    index: usize,
    state: &RobotState,
    reference: &PiecewiseBezier<3>,
    neighbors: &[(usize, Vec3)],
    cfg: &SimConfig,
) -> Command {
    let total = reference.total_time();
    let t = state.clock.clamp(0.0, total);
    let target = reference.eval(t, 0).expect("clock clamped to the domain");
    let feedforward = if state.clock >= total {
        Vec3::zeros()
    } else {
        reference.eval(t, 1).expect("clock clamped to the domain")
    };
    let tracking = saturate(target - state.position, cfg.tracking_saturation) * cfg.k_b;
    let reach = state.r_a + state.r_s;
    let mut repulsion = Vec3::zeros();
    let mut coincident = 0;
    for &(j, p) in neighbors {
        if j == index {
            continue;
        }
        let diff = state.position - p;
        let d = diff.norm();
        if d >= reach {
            continue;
        }
        let dir = if d > 0.0 {
            diff / d
        } else {
            coincident += 1;
            coincident_direction(cfg.seed, index, j)
        };
        repulsion += dir * (cfg.k_a * (reach - d));
    }
    Command {
        velocity: saturate(feedforward + tracking + repulsion, cfg.v_sat),
        feedforward,
        tracking,
        repulsion,
        coincident,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub time: f64,
    /// Tube fraction of the committed front the new tube starts from.
    pub fraction: f64,
    pub tube: usize,
    /// Obstacles sensed since the previous plan.
    pub sensed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub time: f64,
    pub tube: usize,
    pub from: f64,
    pub to: f64,
    /// Digest of the committed cross-sections at the time of commitment.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedEvent {
    pub time: f64,
    pub obstacle: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub dt: f64,
    pub robots: usize,
    /// Step start times.
    pub times: Vec<f64>,
    /// Positions at the start of each step.
    pub positions: Vec<Vec<Vec3>>,
    /// Commands applied during each step.
    pub commands: Vec<Vec<Vec3>>,
    /// Per step, per robot: distance to the nearest other robot.
    pub nearest: Vec<Vec<f64>>,
    pub min_inter_robot: Vec<f64>,
    /// Per step: smallest robot distance to any obstacle of the true map.
    pub min_obstacle: Vec<f64>,
    pub max_tracking_error: f64,
    pub completion_times: Vec<Option<f64>>,
    pub path_lengths: Vec<f64>,
    /// Fraction of the current trajectory each robot had flown at the end.
    pub progress: Vec<f64>,
    pub replans: Vec<ReplanEvent>,
    pub commits: Vec<CommitEvent>,
    pub handovers: Vec<HandoverEvent>,
    pub sensed: Vec<SensedEvent>,
    pub coincidences: usize,
    pub timed_out: bool,
    /// Why replanning stopped the run, if it did.
    pub halted: Option<String>,
    /// Commit hashes recomputed after the run all match.
    pub committed_prefixes_intact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub robots: usize,
    pub allocation: Allocation,
    pub steps: usize,
    pub completed: bool,
    pub timed_out: bool,
    pub halted: Option<String>,
    /// Time until the last robot reached its goal.
    pub flight_time: Option<f64>,
    /// Mean over robots of path length over completion time.
    pub mean_speed: f64,
    pub min_inter_robot_distance: Option<f64>,
    pub min_obstacle_distance: Option<f64>,
    pub max_tracking_error: f64,
    pub replan_count: usize,
    pub handover_count: usize,
    pub coincidences: usize,
    pub committed_prefixes_intact: bool,
}

fn finite_min(v: &[f64]) -> Option<f64> {
    let m = v.iter().copied().fold(f64::INFINITY, f64::min);
    m.is_finite().then_some(m)
}

impl SimLog {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn completed(&self) -> bool {
        self.completion_times.iter().all(Option::is_some)
    }

    pub fn summary(&self, allocation: Allocation) -> SimSummary {
        let elapsed = self.steps() as f64 * self.dt;
        let speeds: Vec<f64> = self
            .path_lengths
            .iter()
            .zip(&self.completion_times)
            .map(|(l, c)| l / c.unwrap_or(elapsed).max(self.dt))
            .collect();
        SimSummary {
            robots: self.robots,
            allocation,
            steps: self.steps(),
            completed: self.completed(),
            timed_out: self.timed_out,
            halted: self.halted.clone(),
            flight_time: if self.completed() {
                self.completion_times
                    .iter()
                    .flatten()
                    .copied()
                    .reduce(f64::max)
            } else {
                None
            },
            mean_speed: speeds.iter().sum::<f64>() / speeds.len().max(1) as f64,
            min_inter_robot_distance: finite_min(&self.min_inter_robot),
            min_obstacle_distance: finite_min(&self.min_obstacle),
            max_tracking_error: self.max_tracking_error,
            replan_count: self.replans.len(),
            handover_count: self.handovers.len(),
            coincidences: self.coincidences,
            committed_prefixes_intact: self.committed_prefixes_intact,
        }
    }

    /// One row per step per robot: `t, robot, x, y, z, vx, vy, vz, min_dist`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,robot,x,y,z,vx,vy,vz,min_dist")?;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..self.robots {
                let p = self.positions[k][i];
                let v = self.commands[k][i];
                writeln!(
                    w,
                    "{t:.4},{i},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    p.x, p.y, p.z, v.x, v.y, v.z, self.nearest[k][i]
                )?;
            }
        }
        Ok(())
    }
}

/// A planned tube with the robots' trajectories and its committed fraction.
struct Record {
    tube: VirtualTube,
    trajectories: Vec<PiecewiseBezier<3>>,
    horizon: f64,
}

impl Record {
    fn new(tube: VirtualTube, thetas: &[Vec<f64>], cfg: &SimConfig) -> Result<Self> {
        let trajectories = thetas
            .iter()
            .map(|th| match cfg.allocation {
                Allocation::Approx => tube.trajectory(th),
                Allocation::Initial => tube.initial_trajectory(th),
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, tr) in trajectories.iter().enumerate() {
            let peak = peak_speed(tr);
            if peak > cfg.v_sat * (1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "robot {i} feedforward reaches {peak:.3} m/s, above v_sat = {}",
                    cfg.v_sat
                )));
            }
        }
        Ok(Self {
            tube,
            trajectories,
            horizon: 0.0,
        })
    }

    /// Robot `i`'s own time at tube fraction `s`.
    fn time_at(&self, i: usize, s: f64) -> f64 {
        let tr = &self.trajectories[i];
        if s >= 1.0 {
            return tr.total_time();
        }
        let (m, u) = self.tube.matched_parameter(s).expect("fraction in [0, 1]");
        tr.segment_starts()[m] + u * tr.segments()[m].duration()
    }

    fn horizon_time(&self, i: usize) -> f64 {
        self.time_at(i, self.horizon)
    }

    fn commit_hash(&self, from: f64, to: f64) -> Result<String> {
        let mut h = Sha256::new();
        for q in 0..=32 {
            let s = from + (to - from) * q as f64 / 32.0;
            for p in self.tube.cross_section(s)?.samples {
                for c in p.iter() {
                    h.update(c.to_le_bytes());
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

fn peak_speed(tr: &PiecewiseBezier<3>) -> f64 {
    let mut peak: f64 = 0.0;
    for seg in tr.segments() {
        let d = seg.derivative();
        for q in 0..=200 {
            peak = peak.max(d.eval_normalized(q as f64 / 200.0).norm());
        }
    }
    peak
}

/// Largest fraction `s ≥ from` such that every cross-section in `[from, s]`
/// lies within `range` of `center`; 1 if the rest of the tube does.
fn commit_horizon(tube: &VirtualTube, center: &Vec3, range: f64, from: f64) -> Result<f64> {
    let steps = 64 * tube.spatial.segment_count();
    let mut last = from;
    for q in 1..=steps {
        let s = q as f64 / steps as f64;
        if s <= from {
            continue;
        }
        if tube
            .cross_section(s)?
            .samples
            .iter()
            .any(|p| (p - center).norm() > range)
        {
            return Ok(last);
        }
        last = s;
    }
    Ok(1.0)
}

/// Planner settings used when the tube has to be replanned.
#[derive(Debug, Clone)]
pub struct Replanner<'a> {
    pub planner: &'a PlannerParams,
    pub mode: Parallelism,
}

fn replan(
    ctx: &Replanner<'_>,
    world: &ObstacleMap,
    sensed: &[bool],
    rec: &Record,
) -> Result<VirtualTube> {
    let s_c = rec.horizon;
    let front = rec.tube.cross_section(s_c)?;
    let (m, u) = rec.tube.matched_parameter(s_c)?;
    let order = ctx.planner.derivative_order;
    let derivatives: Vec<Vec<Vec3>> = rec
        .tube
        .spatial
        .boundaries
        .iter()
        .map(|b| {
            let seg = &b.trajectory.segments()[m];
            (1..order)
                .map(|o| seg.nth_derivative(o).eval_normalized(u))
                .collect()
        })
        .collect();
    let goals: Vec<Vec3> = rec
        .tube
        .spatial
        .boundaries
        .iter()
        .map(|b| b.trajectory.end())
        .collect();
    let mut known = world.clone();
    for (o, &s) in known.obstacles.iter_mut().zip(sensed) {
        o.known = s;
    }
    let terminals = Terminals::new(front.samples, goals)?;
    plan_tube(&known, &terminals, ctx.planner, Some(derivatives), ctx.mode)
        .map(|(tube, _)| tube)
        .map_err(|e| Error::Internal(e.to_string()))
}

/// Flies the robots along `tube` to the end, without replanning.
pub fn simulate(
    tube: &VirtualTube,
    starts: &[Vec3],
    cfg: &SimConfig,
    world: &ObstacleMap,
) -> Result<SimLog> {
    run(tube.clone(), starts, cfg, world, None).map(|(log, _)| log)
}

/// Flies the robots with committed-tube replanning. `tube` must have been
/// planned on the known part of `world`. Returns the log and every tube planned.
pub fn replan_loop(
    tube: &VirtualTube,
    starts: &[Vec3],
    cfg: &SimConfig,
    world: &ObstacleMap,
    replanner: &Replanner<'_>,
) -> Result<(SimLog, Vec<VirtualTube>)> {
    if cfg.sensing_radius * cfg.commit_fraction >= cfg.sensing_radius {
        return Err(Error::Config(
            "committed range must be inside the sensing range".into(),
        ));
    }
    run(tube.clone(), starts, cfg, world, Some(replanner))
}

fn run(
    first: VirtualTube,
    starts: &[Vec3],
    cfg: &SimConfig,
    world: &ObstacleMap,
    replanner: Option<&Replanner<'_>>,
) -> Result<(SimLog, Vec<VirtualTube>)> {
    cfg.validate()?;
    let n = starts.len();
    if n == 0 {
        return Err(Error::Config("no robots".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (starts[i] - starts[j]).norm() < 2.0 * cfg.r_s {
                return Err(Error::Config(format!(
                    "robots {i} and {j} start closer than 2 r_s"
                )));
            }
        }
    }
    let thetas = first.assign_parameters(starts)?;
    let mut records = vec![Record::new(first, &thetas, cfg)?];
    let mut robots: Vec<RobotState> = starts
        .iter()
        .zip(&thetas)
        .enumerate()
        .map(|(i, (p, th))| RobotState {
            position: *p,
            theta: th.clone(),
            clock: 0.0,
            role: if i == 0 { Role::Leader } else { Role::Follower },
            r_s: cfg.r_s,
            r_a: cfg.r_a,
        })
        .collect();
    let mut on_record = vec![0usize; n];
    let mut leader = 0;
    let commit_range = cfg.commit_fraction * cfg.sensing_radius;
    let mut sensed: Vec<bool> = world.obstacles.iter().map(|o| o.known).collect();
    let mut sensed_at_plan = sensed.clone();

    let mut log = SimLog {
        dt: cfg.dt,
        robots: n,
        completion_times: vec![None; n],
        path_lengths: vec![0.0; n],
        committed_prefixes_intact: true,
        ..SimLog::default()
    };

    let sense = |pos: &Vec3, sensed: &mut Vec<bool>, log: &mut SimLog, t: f64| {
        for (k, o) in world.obstacles.iter().enumerate() {
            if !sensed[k] && o.shape.distance(pos) <= cfg.sensing_radius {
                sensed[k] = true;
                log.sensed.push(SensedEvent {
                    time: t,
                    obstacle: k,
                });
            }
        }
    };

    if replanner.is_some() {
        sense(&robots[leader].position, &mut sensed, &mut log, 0.0);
        sensed_at_plan.clone_from(&sensed);
        let h = commit_horizon(
            &records[0].tube,
            &robots[leader].position,
            commit_range,
            0.0,
        )?;
        records[0].horizon = h;
    } else {
        records[0].horizon = 1.0;
    }
    log.commits.push(CommitEvent {
        time: 0.0,
        tube: 0,
        from: 0.0,
        to: records[0].horizon,
        hash: records[0].commit_hash(0.0, records[0].horizon)?,
    });

    let max_steps = (cfg.max_time / cfg.dt).ceil() as usize;
    for step in 0..max_steps {
        let t = step as f64 * cfg.dt;
        let latest = records.len() - 1;

        if replanner.is_some() {
            sense(&robots[leader].position, &mut sensed, &mut log, t);
            // Hand the leader role to the foremost robot once it nears the committed front.
            let progress = |i: usize| {
                (
                    on_record[i],
                    robots[i].clock / records[on_record[i]].trajectories[i].total_time(),
                )
            };
            let foremost = (0..n)
                .max_by(|&a, &b| {
                    progress(a)
                        .partial_cmp(&progress(b))
                        .expect("finite progress")
                })
                .expect("at least one robot");
            if foremost != leader {
                let rec = &records[on_record[foremost]];
                let front = rec.trajectories[foremost].eval(rec.horizon_time(foremost), 0)?;
                if (robots[foremost].position - front).norm() < cfg.handover_threshold {
                    log.handovers.push(HandoverEvent {
                        time: t,
                        from: leader,
                        to: foremost,
                    });
                    robots[leader].role = Role::Follower;
                    robots[foremost].role = Role::Leader;
                    leader = foremost;
                }
            }
        }

        let snapshot: Vec<(usize, Vec3)> = robots
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.position))
            .collect();
        let commands = map_range(cfg.parallelism, n, |i| {
            control_step(
                i,
                &robots[i],
                &records[on_record[i]].trajectories[i],
                &snapshot,
                cfg,
            )
        });

        let mut nearest = vec![f64::INFINITY; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = (robots[i].position - robots[j].position).norm();
                nearest[i] = nearest[i].min(d);
                nearest[j] = nearest[j].min(d);
            }
        }
        let obstacle = robots
            .iter()
            .map(|r| world.obstacle_distance(&r.position))
            .fold(f64::INFINITY, f64::min);
        for (i, r) in robots.iter().enumerate() {
            let tr = &records[on_record[i]].trajectories[i];
            let target = tr.eval(r.clock.clamp(0.0, tr.total_time()), 0)?;
            log.max_tracking_error = log.max_tracking_error.max((target - r.position).norm());
        }
        log.times.push(t);
        log.positions
            .push(robots.iter().map(|r| r.position).collect());
        log.commands
            .push(commands.iter().map(|c| c.velocity).collect());
        log.min_inter_robot
            .push(nearest.iter().copied().fold(f64::INFINITY, f64::min));
        log.nearest.push(nearest);
        log.min_obstacle.push(obstacle);
        log.coincidences += commands.iter().map(|c| c.coincident).sum::<usize>();

        for (i, (r, c)) in robots.iter_mut().zip(&commands).enumerate() {
            r.position += c.velocity * cfg.dt;
            r.clock += cfg.dt;
            log.path_lengths[i] += c.velocity.norm() * cfg.dt;
        }

        // Advance robots through finished committed prefixes; hold the rest at the front.
        let mut triggered = false;
        for i in 0..n {
            while on_record[i] < latest && robots[i].clock >= records[on_record[i]].horizon_time(i)
            {
                robots[i].clock -= records[on_record[i]].horizon_time(i);
                on_record[i] += 1;
            }
            let rec = &records[on_record[i]];
            if on_record[i] == latest && rec.horizon < 1.0 && robots[i].clock >= rec.horizon_time(i)
            {
                robots[i].clock = rec.horizon_time(i);
                triggered = true;
            }
        }

        if triggered {
            let ctx = replanner.expect("horizons below 1 only with replanning");
            let from = records[latest].horizon;
            if sensed != sensed_at_plan {
                let tube = match replan(ctx, world, &sensed, &records[latest]) {
                    Ok(tube) => tube,
                    Err(e) => {
                        log.halted = Some(format!("replanning at t = {t:.2} s failed: {e}"));
                        break;
                    }
                };
                let new_ids: Vec<usize> = (0..sensed.len())
                    .filter(|&k| sensed[k] && !sensed_at_plan[k])
                    .collect();
                sensed_at_plan.clone_from(&sensed);
                let mut rec = Record::new(tube, &thetas, cfg)?;
                rec.horizon =
                    commit_horizon(&rec.tube, &robots[leader].position, commit_range, 0.0)?;
                log.replans.push(ReplanEvent {
                    time: t,
                    fraction: from,
                    tube: records.len(),
                    sensed: new_ids,
                });
                log.commits.push(CommitEvent {
                    time: t,
                    tube: records.len(),
                    from: 0.0,
                    to: rec.horizon,
                    hash: rec.commit_hash(0.0, rec.horizon)?,
                });
                records.push(rec);
                let latest = records.len() - 1;
                for i in 0..n {
                    if on_record[i] == latest - 1
                        && robots[i].clock >= records[latest - 1].horizon_time(i)
                    {
                        robots[i].clock -= records[latest - 1].horizon_time(i);
                        on_record[i] = latest;
                    }
                }
            } else {
                let rec = &mut records[latest];
                let to = commit_horizon(&rec.tube, &robots[leader].position, commit_range, from)?;
                if to > from {
                    rec.horizon = to;
                    log.commits.push(CommitEvent {
                        time: t,
                        tube: latest,
                        from,
                        to,
                        hash: rec.commit_hash(from, to)?,
                    });
                }
            }
        }

        let latest = records.len() - 1;
        let t_next = t + cfg.dt;
        for i in 0..n {
            let rec = &records[on_record[i]];
            let tr = &rec.trajectories[i];
            if log.completion_times[i].is_none()
                && on_record[i] == latest
                && rec.horizon >= 1.0
                && robots[i].clock >= tr.total_time()
                && (robots[i].position - tr.end()).norm() <= cfg.goal_tolerance
            {
                log.completion_times[i] = Some(t_next);
            }
        }
        if log.completed() {
            break;
        }
        if step + 1 == max_steps {
            log.timed_out = true;
        }
    }

    log.progress = (0..n)
        .map(|i| (robots[i].clock / records[on_record[i]].trajectories[i].total_time()).min(1.0))
        .collect();
    for c in &log.commits {
        if records[c.tube].commit_hash(c.from, c.to)? != c.hash {
            log.committed_prefixes_intact = false;
        }
    }
    Ok((log, records.into_iter().map(|r| r.tube).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bezier::BezierSegment;

    fn cfg() -> SimConfig {
        SimConfig::from_params(&SimParams::default(), &PlannerParams::default())
    }

    fn state(p: Vec3, clock: f64) -> RobotState {
        RobotState {
            position: p,
            theta: vec![1.0],
            clock,
            role: Role::Leader,
            r_s: 0.4,
            r_a: 0.6,
        }
    }

    fn line() -> PiecewiseBezier<3> {
        let cps = (0..6).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        PiecewiseBezier::new(vec![BezierSegment::new(cps, 5.0).unwrap()]).unwrap()
    }

    #[test]
    fn on_trajectory_command_is_feedforward() {
        let tr = line();
        let c = control_step(0, &state(tr.eval(2.0, 0).unwrap(), 2.0), &tr, &[], &cfg());
        assert_eq!(c.velocity, tr.eval(2.0, 1).unwrap());
        assert_eq!(c.tracking, Vec3::zeros());
    }

    #[test]
    fn at_goal_command_vanishes() {
        let tr = line();
        let c = control_step(0, &state(tr.end(), 7.0), &tr, &[], &cfg());
        assert_eq!(c.velocity, Vec3::zeros());
    }

    #[test]
    fn head_on_repulsion_is_antisymmetric() {
        let tr = line();
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(1.7, 0.1, 0.0);
        let nb = [(0, a), (1, b)];
        let ca = control_step(0, &state(a, 1.0), &tr, &nb, &cfg());
        let cb = control_step(1, &state(b, 1.0), &tr, &nb, &cfg());
        assert_eq!(ca.repulsion, -cb.repulsion);
        // k_a (r_a + r_s − d) along the separation
        let d = (a - b).norm();
        let expect = (a - b) / d * (2.0 * (1.0 - d));
        assert!((ca.repulsion - expect).norm() < 1e-15);
    }

    #[test]
    fn coincident_robots_split_deterministically() {
        let tr = line();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let nb = [(0, p), (1, p)];
        let ca = control_step(0, &state(p, 1.0), &tr, &nb, &cfg());
        let cb = control_step(1, &state(p, 1.0), &tr, &nb, &cfg());
        assert_eq!(ca.coincident, 1);
        assert!(ca.repulsion.iter().all(|v| v.is_finite()));
        assert!((ca.repulsion.norm() - 2.0).abs() < 1e-12);
        assert_eq!(ca.repulsion, -cb.repulsion);
        assert_eq!(ca, control_step(0, &state(p, 1.0), &tr, &nb, &cfg()));
    }

    #[test]
    fn command_is_saturated() {
        let tr = line();
        let mut c = cfg();
        c.v_sat = 0.5;
        let cmd = control_step(0, &state(Vec3::new(0.0, 5.0, 0.0), 2.0), &tr, &[], &c);
        assert!((cmd.velocity.norm() - 0.5).abs() < 1e-12);
    }
}
