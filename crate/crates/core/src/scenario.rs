//! Scenario files and the planning pipeline.
//!
//! A scenario is a JSON document with four sections: `map`, `terminals`,
//! `planner` and `sim`. Only `map` and `terminals` are required. Vectors are
//! `[x, y, z]` arrays; an explicit terminal map matrix is a flat column-major
//! array of nine numbers.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corridor::{
    init_time_allocation, plan_corridor, select_boundary_terminals, CorridorConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, AffineMap, Obstacle, ObstacleMap, Shape, Terminals, Vec3};
use crate::par::Parallelism;
use crate::partition::{partition, PartitionConfig};
use crate::spatial::{solve_all, SpatialConfig, SpatialProblem};
use crate::temporal::{ParametricTimeLp, DEFAULT_T_MIN};
use crate::tube::{build_tube, VirtualTube};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub map: ObstacleMap,
    pub terminals: TerminalSpec,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub sim: SimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub start: Vec<Vec3>,
    pub goal: Vec<Vec3>,
    /// Derived from the vertex pairing when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<AffineMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Number of boundary trajectories.
    pub k_c: usize,
    pub degree: usize,
    pub derivative_order: usize,
    /// Componentwise velocity limit for time allocation, m/s.
    pub v_max: Vec3,
    /// Speed used for the chord-length initial allocation, m/s.
    pub v_nominal: f64,
    /// Partition error bound in seconds; `null` keeps a single region.
    #[serde(with = "crate::partition::infinite_as_null")]
    pub epsilon: f64,
    /// Boundary points sit at this fraction of each intersection disk radius.
    pub rho: f64,
    pub t_min: f64,
    /// Hodograph bounds for the spatial problem. The default bounds velocity by
    /// the smallest `v_max` component, so the initial allocation already
    /// satisfies the time allocation constraints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derivative_bounds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    pub corridor: CorridorConfig,
    pub partition: PartitionConfig,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            k_c: 3,
            degree: 5,
            derivative_order: 3,
            v_max: Vec3::repeat(3.0),
            v_nominal: 1.0,
            epsilon: 0.8,
            rho: 0.8,
            t_min: DEFAULT_T_MIN,
            derivative_bounds: None,
            phases: None,
            corridor: CorridorConfig {
                lambda_min: 1.0,
                inflation: 0.6,
                ..CorridorConfig::default()
            },
            partition: PartitionConfig::default(),
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn spatial_config(&self) -> SpatialConfig {
        SpatialConfig {
            degree: self.degree,
            derivative_order: self.derivative_order,
            derivative_bounds: self
                .derivative_bounds
                .clone()
                .unwrap_or_else(|| vec![self.v_max.min()]),
            ..SpatialConfig::default()
        }
    }
}

/// Which time allocation robots fly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Chord-length durations at the nominal speed.
    Initial,
    /// Durations from the critical-region tree.
    #[default]
    Approx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub robots: usize,
    /// Explicit start positions; a barycentric lattice over the start region otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Vec3>>,
    pub r_s: f64,
    pub r_a: f64,
    pub k_b: f64,
    pub k_a: f64,
    /// Command speed cap; derived from the feedforward peak when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_sat: Option<f64>,
    /// Largest tracking error fed to the proportional term, m.
    pub tracking_saturation: f64,
    pub dt: f64,
    pub sensing_radius: f64,
    /// Committed range as a fraction of the sensing radius.
    pub commit_fraction: f64,
    pub handover_threshold: f64,
    pub goal_tolerance: f64,
    pub max_time: f64,
    pub allocation: Allocation,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            robots: 3,
            starts: None,
            r_s: 0.4,
            r_a: 0.6,
            k_b: 1.5,
            k_a: 2.0,
            v_sat: None,
            tracking_saturation: 1.0,
            dt: 0.01,
            sensing_radius: 8.0,
            commit_fraction: 0.8,
            handover_threshold: 1.0,
            goal_tolerance: 1e-2,
            max_time: 300.0,
            allocation: Allocation::Approx,
            seed: 0,
        }
    }
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(format!("{name} must be positive, got {v}")))
    }
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(format!("at `{path}`: {}", e.into_inner()))
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.map.bounds;
        if (0..3).any(|i| !(b.max[i] > b.min[i])) {
            return Err(schema("map.bounds: max must exceed min on every axis"));
        }
        for (i, o) in self.map.obstacles.iter().enumerate() {
            match o.shape {
                Shape::Sphere { radius, .. } => {
                    positive(&format!("map.obstacles[{i}].radius"), radius)?
                }
                Shape::Box { min, max } => {
                    if (0..3).any(|a| !(max[a] > min[a])) {
                        return Err(schema(format!(
                            "map.obstacles[{i}]: box max must exceed min"
                        )));
                    }
                }
            }
        }
        let t = &self.terminals;
        if t.start.is_empty() || t.start.len() != t.goal.len() {
            return Err(schema(format!(
                "terminals: start and goal need equal nonzero vertex counts ({} vs {})",
                t.start.len(),
                t.goal.len()
            )));
        }
        let p = &self.planner;
        if p.k_c < 2 || p.k_c > t.start.len() {
            return Err(schema(format!(
                "planner.k_c must lie in [2, {}], got {}",
                t.start.len(),
                p.k_c
            )));
        }
        for a in 0..3 {
            positive("planner.v_max", p.v_max[a])?;
        }
        positive("planner.v_nominal", p.v_nominal)?;
        positive("planner.t_min", p.t_min)?;
        if !(p.epsilon > 0.0) {
            return Err(schema("planner.epsilon must be positive or null"));
        }
        if !(p.rho > 0.0 && p.rho < 1.0) {
            return Err(schema("planner.rho must lie in (0, 1)"));
        }
        p.corridor
            .validate()
            .map_err(|e| schema(format!("planner.corridor: {e}")))?;
        p.spatial_config()
            .validate()
            .map_err(|e| schema(format!("planner: {e}")))?;

        let s = &self.sim;
        if s.robots == 0 {
            return Err(schema("sim.robots must be at least 1"));
        }
        positive("sim.r_s", s.r_s)?;
        positive("sim.r_a", s.r_a)?;
        if s.r_a <= s.r_s {
            return Err(schema("sim.r_a must exceed sim.r_s"));
        }
        positive("sim.k_b", s.k_b)?;
        positive("sim.k_a", s.k_a)?;
        positive("sim.tracking_saturation", s.tracking_saturation)?;
        positive("sim.dt", s.dt)?;
        if s.dt > 0.02 {
            return Err(schema("sim.dt must not exceed 0.02 s"));
        }
        if let Some(v) = s.v_sat {
            positive("sim.v_sat", v)?;
        }
        positive("sim.sensing_radius", s.sensing_radius)?;
        if !(s.commit_fraction > 0.0 && s.commit_fraction < 1.0) {
            return Err(schema("sim.commit_fraction must lie in (0, 1)"));
        }
        positive("sim.handover_threshold", s.handover_threshold)?;
        positive("sim.goal_tolerance", s.goal_tolerance)?;
        positive("sim.max_time", s.max_time)?;
        if let Some(st) = &s.starts {
            if st.len() != s.robots {
                return Err(schema(format!(
                    "sim.starts has {} entries for {} robots",
                    st.len(),
                    s.robots
                )));
            }
        }
        Ok(())
    }

    pub fn build_terminals(&self) -> Result<Terminals> {
        let t = &self.terminals;
        match t.map {
            Some(m) => Terminals::with_map(t.start.clone(), t.goal.clone(), m),
            None => Terminals::new(t.start.clone(), t.goal.clone()),
        }
    }

    /// Robot start positions: explicit, or the coarsest barycentric lattice
    /// over the first `k_c` start vertices that holds every robot.
    pub fn robot_starts(&self) -> Result<Vec<Vec3>> {
        let starts = match &self.sim.starts {
            Some(s) => s.clone(),
            None => lattice_points(&self.terminals.start[..self.planner.k_c], self.sim.robots),
        };
        let min_gap = 2.0 * self.sim.r_s;
        for i in 0..starts.len() {
            for j in i + 1..starts.len() {
                let d = (starts[i] - starts[j]).norm();
                if d < min_gap {
                    return Err(Error::Config(format!(
                        "robots {i} and {j} start {d:.3} m apart, closer than 2 r_s = {min_gap}"
                    )));
                }
            }
        }
        Ok(starts)
    }
}

fn lattice_points(corners: &[Vec3], n: usize) -> Vec<Vec3> {
    let k = corners.len();
    if n <= k {
        return corners[..n].to_vec();
    }
    let mut level = 1;
    loop {
        let comps = compositions(k, level);
        if comps.len() >= n {
            // Corners first, then the rest in lexicographic order.
            let mut ordered: Vec<&Vec<usize>> =
                comps.iter().filter(|c| c.contains(&level)).collect();
            ordered.sort_by_key(|c| c.iter().position(|&v| v == level));
            ordered.extend(comps.iter().filter(|c| !c.contains(&level)));
            return ordered
                .into_iter()
                .take(n)
                .map(|c| {
                    c.iter().zip(corners).fold(Vec3::zeros(), |a, (&w, p)| {
                        a + p * (w as f64 / level as f64)
                    })
                })
                .collect();
        }
        level += 1;
    }
}

fn compositions(k: usize, n: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(k - 1, n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Corridor,
    Boundaries,
    Spatial,
    Temporal,
    Partition,
    Assembly,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

/// A pipeline error tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} stage failed: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub corridor: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub partition: f64,
}

/// Runs corridor, spatial, temporal and partition stages and assembles the tube.
///
/// `start_derivatives` holds, per boundary, derivatives of orders
/// `1..derivative_order` at the start; `None` starts at rest.
pub fn plan_tube(
    map: &ObstacleMap,
    terminals: &Terminals,
    params: &PlannerParams,
    start_derivatives: Option<Vec<Vec<Vec3>>>,
    mode: Parallelism,
) -> std::result::Result<(VirtualTube, StageTimings), PipelineError> {
    let mut timings = StageTimings::default();
    let clock = Instant::now();
    let corridor =
        plan_corridor(map, terminals, &params.corridor, params.seed).at(Stage::Corridor)?;
    timings.corridor = clock.elapsed().as_secs_f64();

    let paths = select_boundary_terminals(
        &corridor,
        terminals,
        params.k_c,
        params.rho,
        params.phases.as_deref(),
    )
    .at(Stage::Boundaries)?;
    let durations = init_time_allocation(&paths, params.v_nominal).at(Stage::Boundaries)?;

    let clock = Instant::now();
    let mut problem = SpatialProblem::new(&corridor, paths, durations, params.spatial_config())
        .at(Stage::Spatial)?;
    if let Some(d) = start_derivatives {
        problem = problem.with_start_derivatives(d).at(Stage::Spatial)?;
    }
    let spatial = solve_all(&problem, mode).at(Stage::Spatial)?;
    timings.spatial = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let plp =
        ParametricTimeLp::from_spatial(&spatial, params.v_max, params.t_min).at(Stage::Temporal)?;
    timings.temporal = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let cfg = PartitionConfig {
        parallelism: mode,
        ..params.partition.clone()
    };
    let tree = partition(&plp, params.epsilon, &cfg).at(Stage::Partition)?;
    timings.partition = clock.elapsed().as_secs_f64();

    let tube =
        build_tube(terminals.clone(), corridor, spatial, tree, params.v_max).at(Stage::Assembly)?;
    Ok((tube, timings))
}

/// Validates a scenario and plans its tube on the known part of the map.
pub fn plan_scenario(
    sc: &Scenario,
    mode: Parallelism,
) -> std::result::Result<(VirtualTube, StageTimings), PipelineError> {
    sc.validate().at(Stage::Validate)?;
    let terminals = sc.build_terminals().at(Stage::Validate)?;
    plan_tube(&sc.map, &terminals, &sc.planner, None, mode)
}

fn triangle(center: Vec3, size: f64) -> Vec<Vec3> {
    let h = size * 3f64.sqrt() / 2.0;
    vec![
        center + Vec3::new(0.0, -size / 2.0, -h / 3.0),
        center + Vec3::new(0.0, size / 2.0, -h / 3.0),
        center + Vec3::new(0.0, 0.0, 2.0 * h / 3.0),
    ]
}

fn translated(points: &[Vec3], by: Vec3) -> Vec<Vec3> {
    points.iter().map(|p| p + by).collect()
}

/// Random desk-scale world: a 30 × 14 × 8 m room with box columns between
/// a triangular start region and its translated goal region.
pub fn desk_world(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::new(Vec3::zeros(), Vec3::new(30.0, 14.0, 8.0));
    let start = triangle(Vec3::new(3.0, 7.0, 4.0), 1.5);
    let goal = translated(&start, Vec3::new(24.0, 0.0, 0.0));
    // Six columns on staggered, jittered slots: the straight line is always
    // blocked, and the lanes between columns stay wide enough to plan through.
    let slots = [
        (8.0, 3.5),
        (8.0, 10.5),
        (13.0, 7.0),
        (18.0, 3.5),
        (18.0, 10.5),
        (23.0, 7.0),
    ];
    let obstacles = slots
        .iter()
        .map(|&(x, y)| {
            let w = rng.random_range(0.6..1.4);
            let c = Vec3::new(
                x + rng.random_range(-0.7..0.7),
                y + rng.random_range(-0.7..0.7),
                0.0,
            );
            Obstacle::known(Shape::Box {
                min: c - Vec3::new(w / 2.0, w / 2.0, 0.0),
                max: c + Vec3::new(w / 2.0, w / 2.0, 8.0),
            })
        })
        .collect();
    Scenario {
        name: format!("desk-{seed}"),
        map: ObstacleMap::new(bounds, obstacles),
        terminals: TerminalSpec {
            start,
            goal,
            map: None,
        },
        planner: PlannerParams {
            seed,
            ..PlannerParams::default()
        },
        sim: SimParams {
            seed,
            ..SimParams::default()
        },
    }
}

/// Larger room for a 36-robot swarm starting on a lattice with 1.14 m
/// spacing: four tall columns along the walls and a low block in the middle
/// that the tube has to climb over.
pub fn swarm_world(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::new(Vec3::zeros(), Vec3::new(60.0, 32.0, 18.0));
    let start = triangle(Vec3::new(9.0, 16.0, 9.0), 8.0);
    let goal = translated(&start, Vec3::new(42.0, 0.0, 0.0));
    let slots = [
        (20.0, 5.0, 18.0),
        (20.0, 27.0, 18.0),
        (30.0, 16.0, 5.0),
        (40.0, 5.0, 18.0),
        (40.0, 27.0, 18.0),
    ];
    let obstacles = slots
        .iter()
        .map(|&(x, y, h)| {
            let w = rng.random_range(1.0..2.0);
            let c = Vec3::new(
                x + rng.random_range(-1.0..1.0),
                y + rng.random_range(-1.0..1.0),
                0.0,
            );
            Obstacle::known(Shape::Box {
                min: c - Vec3::new(w / 2.0, w / 2.0, 0.0),
                max: c + Vec3::new(w / 2.0, w / 2.0, h),
            })
        })
        .collect();
    Scenario {
        name: format!("swarm-{seed}"),
        map: ObstacleMap::new(bounds, obstacles),
        terminals: TerminalSpec {
            start,
            goal,
            map: None,
        },
        planner: PlannerParams {
            seed,
            corridor: CorridorConfig {
                r_max: 8.0,
                lambda_min: 5.5,
                grid_step: 1.5,
                ..PlannerParams::default().corridor
            },
            ..PlannerParams::default()
        },
        sim: SimParams {
            robots: 36,
            seed,
            max_time: 600.0,
            ..SimParams::default()
        },
    }
}

/// Open room whose straight line from start to goal is blocked by a wall
/// that only becomes known once sensed. The gap is on the `+y` side.
pub fn unknown_wall_world() -> Scenario {
    let bounds = Aabb::new(Vec3::zeros(), Vec3::new(40.0, 14.0, 8.0));
    let start = triangle(Vec3::new(3.0, 7.0, 4.0), 1.5);
    let goal = translated(&start, Vec3::new(34.0, 0.0, 0.0));
    let wall = Obstacle::unknown(Shape::Box {
        min: Vec3::new(22.0, 0.0, 0.0),
        max: Vec3::new(22.6, 9.5, 8.0),
    });
    Scenario {
        name: "unknown-wall".into(),
        map: ObstacleMap::new(bounds, vec![wall]),
        terminals: TerminalSpec {
            start,
            goal,
            map: None,
        },
        planner: PlannerParams::default(),
        sim: SimParams::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_covers_corners_first() {
        let c = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        ];
        assert_eq!(lattice_points(&c, 2), c[..2].to_vec());
        let pts = lattice_points(&c, 6);
        assert_eq!(pts.len(), 6);
        assert_eq!(&pts[..3], &c[..]);
        assert!(pts.contains(&Vec3::new(1.0, 1.0, 0.0)));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let sc = desk_world(1);
        let mut v: serde_json::Value = serde_json::from_str(&sc.to_json()).unwrap();
        v["sim"]["r_s"] = serde_json::json!("wide");
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("sim.r_s")),
            "{err}"
        );

        v["sim"]["r_s"] = serde_json::json!(-1.0);
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("sim.r_s")),
            "{err}"
        );

        let err = Scenario::from_json(r#"{"map": {"bounds": {"min": [0,0,0], "max": [1,1,1]}}}"#)
            .unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("terminals")),
            "{err}"
        );
    }

    #[test]
    fn scenario_round_trips() {
        let sc = unknown_wall_world();
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }

    #[test]
    fn close_starts_are_rejected() {
        let mut sc = desk_world(0);
        sc.sim.robots = 2;
        sc.sim.starts = Some(vec![Vec3::new(2.5, 7.0, 3.0), Vec3::new(2.5, 7.5, 3.0)]);
        assert!(matches!(sc.robot_starts(), Err(Error::Config(_))));
    }
}
