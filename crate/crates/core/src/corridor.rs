//! Sphere corridors through free space and boundary terminal selection.
//!
//! The planner samples sphere centers on a jittered grid, sizes each sphere
//! by its clearance to known obstacles, connects spheres whose intersection
//! disk is wide enough, and runs A* between the start and goal spheres.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, ObstacleMap, Sphere, Terminals, Vec3};

/// Disk where two consecutive spheres meet, with an orthonormal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionPlane {
    pub center: Vec3,
    /// Disk radius λ.
    pub radius: f64,
    /// Unit vector from the first sphere center toward the second.
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

impl IntersectionPlane {
    /// `p_o + ρλ (n cos φ + b sin φ)`.
    pub fn point(&self, rho: f64, phi: f64) -> Vec3 {
        self.center + rho * self.radius * (self.normal * phi.cos() + self.binormal * phi.sin())
    }
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    for hint in [Vec3::z(), Vec3::x(), Vec3::y()] {
        let n = hint - v * v.dot(&hint);
        if n.norm() > 1e-3 {
            return n.normalize();
        }
    }
    unreachable!("three axes cannot all be parallel to one unit vector")
}

/// Plane of the circle where two spheres intersect.
pub fn intersection_plane(s1: &Sphere, s2: &Sphere) -> Result<IntersectionPlane> {
    let delta = s2.center - s1.center;
    let dist = delta.norm();
    if dist < 1e-12 {
        return Err(Error::Geometry(
            "concentric spheres have no intersection plane".into(),
        ));
    }
    if dist >= s1.radius + s2.radius {
        return Err(Error::Geometry(format!(
            "spheres do not overlap (distance {dist}, radii {} and {})",
            s1.radius, s2.radius
        )));
    }
    if dist <= (s1.radius - s2.radius).abs() {
        return Err(Error::Geometry(
            "one sphere is nested inside the other".into(),
        ));
    }
    let offset = (dist * dist + s1.radius * s1.radius - s2.radius * s2.radius) / (2.0 * dist);
    let lambda_sq = s1.radius * s1.radius - offset * offset;
    if lambda_sq <= 0.0 {
        return Err(Error::Geometry("intersection disk is empty".into()));
    }
    let tangent = delta / dist;
    let normal = any_perpendicular(&tangent);
    Ok(IntersectionPlane {
        center: s1.center + offset * tangent,
        radius: lambda_sq.sqrt(),
        tangent,
        normal,
        binormal: tangent.cross(&normal),
    })
}

/// Ordered overlapping spheres; segment `m` of every tube trajectory lives in sphere `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereCorridor {
    pub spheres: Vec<Sphere>,
    pub planes: Vec<IntersectionPlane>,
}

impl SphereCorridor {
    /// Computes intersection planes and parallel-transports the plane frames
    /// from the first plane so that consecutive frames do not twist.
    pub fn new(spheres: Vec<Sphere>) -> Result<Self> {
        if spheres.is_empty() {
            return Err(Error::Config("corridor needs at least one sphere".into()));
        }
        let mut planes: Vec<IntersectionPlane> = Vec::with_capacity(spheres.len() - 1);
        for w in spheres.windows(2) {
            let mut plane = intersection_plane(&w[0], &w[1])?;
            if let Some(prev) = planes.last() {
                let v = plane.tangent;
                let mut n = prev.normal - v * v.dot(&prev.normal);
                if n.norm() < 1e-6 {
                    n = prev.binormal - v * v.dot(&prev.binormal);
                }
                plane.normal = n.normalize();
                plane.binormal = v.cross(&plane.normal);
            }
            planes.push(plane);
        }
        Ok(Self { spheres, planes })
    }

    pub fn segment_count(&self) -> usize {
        self.spheres.len()
    }

    /// True if `p` is inside at least one sphere.
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        self.spheres.iter().any(|s| s.contains(p, tol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    /// Spacing of candidate sphere centers, meters.
    pub grid_step: f64,
    /// Uniform jitter applied to each grid coordinate, as a fraction of `grid_step`.
    pub jitter: f64,
    pub r_max: f64,
    /// Candidates with smaller free radius are discarded.
    pub r_min: f64,
    /// Minimum intersection disk radius for two spheres to be adjacent.
    pub lambda_min: f64,
    /// Clearance subtracted from every sphere radius (robot body margin).
    pub inflation: f64,
    pub max_candidates: usize,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            grid_step: 1.0,
            jitter: 0.25,
            r_max: 3.0,
            r_min: 0.5,
            lambda_min: 0.5,
            inflation: 0.0,
            max_candidates: 200_000,
        }
    }
}

impl CorridorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_step", self.grid_step),
            ("r_max", self.r_max),
            ("r_min", self.r_min),
            ("lambda_min", self.lambda_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("corridor.{name} must be positive")));
            }
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("corridor.jitter must lie in [0, 0.5)".into()));
        }
        if self.inflation < 0.0 {
            return Err(Error::Config(
                "corridor.inflation must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    f: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then on node index
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn terminal_sphere(
    map: &ObstacleMap,
    region: &[Vec3],
    cfg: &CorridorConfig,
    what: &str,
) -> Result<Sphere> {
    let center = centroid(region);
    let needed = region
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    let free = map.clearance(&center) - cfg.inflation;
    let radius = free.min(cfg.r_max.max(needed * 1.05));
    if radius <= needed {
        return Err(Error::Config(format!(
            "{what} region is not inside free space (needs radius {needed:.3}, free {free:.3})"
        )));
    }
    Ok(Sphere::new(center, radius))
}

/// Wide enough overlap, and an intersection plane that separates the two
/// centers. Without the second condition a nearly nested pair puts the plane
/// behind the next center and boundaries have to double back.
fn adjacent(a: &Sphere, b: &Sphere, lambda_min: f64) -> bool {
    match intersection_plane(a, b) {
        Ok(p) => {
            let along = (p.center - a.center).dot(&p.tangent);
            p.radius >= lambda_min && along > 0.0 && along < (b.center - a.center).norm()
        }
        Err(_) => false,
    }
}

/// Plans a sphere corridor from the start region to the goal region.
/// Only obstacles flagged `known` are considered.
pub fn plan_corridor(
    map: &ObstacleMap,
    terminals: &Terminals,
    cfg: &CorridorConfig,
    seed: u64,
) -> Result<SphereCorridor> {
    cfg.validate()?;
    let start = terminal_sphere(map, &terminals.start, cfg, "start")?;
    let goal = terminal_sphere(map, &terminals.goal, cfg, "goal")?;
    let mut nodes = vec![start, goal];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = map.bounds.max - map.bounds.min;
    let counts: Vec<usize> = (0..3)
        .map(|i| ((extent[i] / cfg.grid_step).floor() as usize).max(1))
        .collect();
    'grid: for ix in 0..counts[0] {
        for iy in 0..counts[1] {
            for iz in 0..counts[2] {
                let idx = [ix, iy, iz];
                let mut c = Vec3::zeros();
                for a in 0..3 {
                    let base =
                        map.bounds.min[a] + (idx[a] as f64 + 0.5) * extent[a] / counts[a] as f64;
                    let j = rng.random_range(-cfg.jitter..=cfg.jitter) * cfg.grid_step;
                    c[a] = base + j;
                }
                let r = (map.clearance(&c) - cfg.inflation).min(cfg.r_max);
                if r >= cfg.r_min {
                    nodes.push(Sphere::new(c, r));
                    if nodes.len() >= cfg.max_candidates {
                        break 'grid;
                    }
                }
            }
        }
    }

    let path = astar(&nodes, cfg.lambda_min, cfg.r_max).ok_or(Error::PlanningFailure {
        explored: nodes.len(),
    })?;

    // Greedy shortcut: jump to the farthest later sphere that is still adjacent.
    let mut chosen = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !adjacent(&nodes[path[i]], &nodes[path[j]], cfg.lambda_min) {
            j -= 1;
        }
        chosen.push(path[j]);
        i = j;
    }
    SphereCorridor::new(chosen.into_iter().map(|k| nodes[k]).collect())
}

/// Shortest path over the sphere graph. An edge costs its center distance
/// times `1 + r_max / r`, with `r` the smaller radius, so wide lanes win
/// over tight ones of similar length. Twice the straight-line distance is
/// then an admissible heuristic.
fn astar(nodes: &[Sphere], lambda_min: f64, r_max: f64) -> Option<Vec<usize>> {
    let (start, goal) = (0, 1);
    let h = |k: usize| 2.0 * (nodes[k].center - nodes[goal].center).norm();
    let mut g = vec![f64::INFINITY; nodes.len()];
    let mut parent = vec![usize::MAX; nodes.len()];
    let mut closed = vec![false; nodes.len()];
    let mut open = BinaryHeap::new();
    g[start] = 0.0;
    open.push(Frontier {
        f: h(start),
        node: start,
    });
    while let Some(Frontier { node, .. }) = open.pop() {
        if closed[node] {
            continue;
        }
        if node == goal {
            let mut path = vec![goal];
            let mut k = goal;
            while k != start {
                k = parent[k];
                path.push(k);
            }
            path.reverse();
            return Some(path);
        }
        closed[node] = true;
        for next in 0..nodes.len() {
            if closed[next] || next == node || !adjacent(&nodes[node], &nodes[next], lambda_min) {
                continue;
            }
            let narrow = nodes[next].radius.min(nodes[node].radius);
            let cand =
                g[node] + (nodes[next].center - nodes[node].center).norm() * (1.0 + r_max / narrow);
            if cand < g[next] {
                g[next] = cand;
                parent[next] = node;
                open.push(Frontier {
                    f: cand + h(next),
                    node: next,
                });
            }
        }
    }
    None
}

/// Boundary paths: per boundary index, the start point, one point per
/// intersection plane, and the goal point.
pub type BoundaryPaths = Vec<Vec<Vec3>>;

/// Picks `k_c` boundary point sequences through the corridor.
///
/// Boundary `k` starts at start vertex `k`, crosses plane `m` at
/// `I_m(ρ, φ_k)` and ends at the image of its start under the terminal map.
/// Without explicit `phases`, the angles are spread evenly, rotated so that
/// boundary 0 faces start vertex 0, and ordered with the start polygon's
/// orientation around the corridor axis.
pub fn select_boundary_terminals(
    corridor: &SphereCorridor,
    terminals: &Terminals,
    k_c: usize,
    rho: f64,
    phases: Option<&[f64]>,
) -> Result<BoundaryPaths> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    if k_c < 2 {
        return Err(Error::Config("k_c must be at least 2".into()));
    }
    if k_c > terminals.start.len() {
        return Err(Error::Config(format!(
            "k_c = {k_c} exceeds the {} available start vertices",
            terminals.start.len()
        )));
    }
    let starts = &terminals.start[..k_c];
    let phases: Vec<f64> = match phases {
        Some(p) if p.len() != k_c => {
            return Err(Error::Config(format!(
                "{} phases given for k_c = {k_c}",
                p.len()
            )));
        }
        Some(p) => p.to_vec(),
        None => default_phases(corridor, starts),
    };
    for a in 0..k_c {
        for b in a + 1..k_c {
            let d = (phases[a] - phases[b]).rem_euclid(TAU);
            if d < 1e-9 || TAU - d < 1e-9 {
                return Err(Error::Config(format!(
                    "boundaries {a} and {b} share one phase"
                )));
            }
        }
    }
    Ok(starts
        .iter()
        .zip(&phases)
        .map(|(s, &phi)| {
            let mut path = Vec::with_capacity(corridor.planes.len() + 2);
            path.push(*s);
            path.extend(corridor.planes.iter().map(|pl| pl.point(rho, phi)));
            path.push(terminals.map.apply(s));
            path
        })
        .collect())
}

fn default_phases(corridor: &SphereCorridor, starts: &[Vec3]) -> Vec<f64> {
    let k_c = starts.len();
    let Some(first) = corridor.planes.first() else {
        return (0..k_c).map(|k| TAU * k as f64 / k_c as f64).collect();
    };
    let c = centroid(starts);
    let r0 = starts[0] - c;
    let (x, y) = (r0.dot(&first.normal), r0.dot(&first.binormal));
    let offset = if x.hypot(y) > 1e-9 { y.atan2(x) } else { 0.0 };
    let orientation = if k_c >= 3 {
        let n = (starts[1] - starts[0]).cross(&(starts[2] - starts[0]));
        if n.dot(&first.tangent) < 0.0 {
            -1.0
        } else {
            1.0
        }
    } else {
        1.0
    };
    (0..k_c)
        .map(|k| offset + orientation * TAU * k as f64 / k_c as f64)
        .collect()
}

/// Chord-length time allocation shared by all boundary paths.
pub fn init_time_allocation(paths: &[Vec<Vec3>], v_nominal: f64) -> Result<Vec<f64>> {
    if !(v_nominal > 0.0 && v_nominal.is_finite()) {
        return Err(Error::Config("v_nominal must be positive".into()));
    }
    let first = paths
        .first()
        .ok_or_else(|| Error::Config("no boundary paths".into()))?;
    let segments = first.len().saturating_sub(1);
    if segments == 0 || paths.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Config(
            "boundary paths must share a segment count >= 1".into(),
        ));
    }
    (0..segments)
        .map(|m| {
            let mut sum = 0.0;
            for p in paths {
                let chord = (p[m + 1] - p[m]).norm();
                if chord == 0.0 {
                    return Err(Error::DegenerateSegment { segment: m });
                }
                sum += chord;
            }
            Ok(sum / paths.len() as f64 / v_nominal)
        })
        .collect()
}
