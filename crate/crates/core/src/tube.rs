//! The virtual tube: boundary trajectories plus a critical-region tree.
//!
//! A parameter `θ` on the simplex selects both the spatial weights of the
//! boundary control points and the time allocation, so every tube
//! trajectory costs one tree descent and a few vector combinations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bezier::PiecewiseBezier;
use crate::corridor::SphereCorridor;
use crate::error::{Error, Result};
use crate::geometry::{Terminals, Vec3};
use crate::par::{map_slice, Parallelism};
use crate::partition::{check_theta, CriticalRegionTree};
use crate::spatial::SpatialSolution;

pub const TUBE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTube {
    pub terminals: Terminals,
    pub corridor: SphereCorridor,
    pub spatial: SpatialSolution,
    pub tree: CriticalRegionTree,
    pub v_max: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeInfo {
    pub k_c: usize,
    pub segments: usize,
    pub degree: usize,
    pub leaf_count: usize,
    pub depth: usize,
    #[serde(with = "crate::partition::infinite_as_null")]
    pub epsilon: f64,
    /// Smallest and largest optimal total time over the boundary trajectories.
    pub vertex_time_range: (f64, f64),
    pub initial_total_time: f64,
}

/// Boundary samples of the tube at one time fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub fraction: f64,
    pub samples: Vec<Vec3>,
}

impl CrossSection {
    /// Distance from `p` to the convex hull of the samples.
    pub fn hull_distance(&self, p: &Vec3) -> f64 {
        simplex_least_squares(&self.samples, p).1
    }
}

#[derive(Serialize, Deserialize)]
struct TubeFile {
    version: u32,
    content_hash: String,
    tube: VirtualTube,
}

/// Assembles a tube, checking that the tree was built from `spatial`.
pub fn build_tube(
    terminals: Terminals,
    corridor: SphereCorridor,
    spatial: SpatialSolution,
    tree: CriticalRegionTree,
    v_max: Vec3,
) -> Result<VirtualTube> {
    let hash = spatial.content_hash();
    match &tree.source_hash {
        Some(h) if *h == hash => {}
        Some(h) => {
            return Err(Error::Assembly(format!(
                "tree was built from spatial solution {h}, not {hash}"
            )))
        }
        None => {
            return Err(Error::Assembly(
                "tree carries no spatial provenance hash".into(),
            ))
        }
    }
    if tree.k_c != spatial.boundary_count() || tree.n_t != spatial.segment_count() {
        return Err(Error::Assembly(format!(
            "tree dimensions (k_c {}, n_t {}) do not match spatial solution ({}, {})",
            tree.k_c,
            tree.n_t,
            spatial.boundary_count(),
            spatial.segment_count()
        )));
    }
    if corridor.spheres != spatial.spheres {
        return Err(Error::Assembly(
            "corridor spheres differ from the spatial solution's".into(),
        ));
    }
    Ok(VirtualTube {
        terminals,
        corridor,
        spatial,
        tree,
        v_max,
    })
}

impl VirtualTube {
    pub fn k_c(&self) -> usize {
        self.tree.k_c
    }

    pub fn info(&self) -> TubeInfo {
        let vals = &self.tree.root.values;
        TubeInfo {
            k_c: self.k_c(),
            segments: self.spatial.segment_count(),
            degree: self.spatial.degree,
            leaf_count: self.tree.leaf_count(),
            depth: self.tree.depth(),
            epsilon: self.tree.epsilon,
            vertex_time_range: (
                vals.iter().copied().fold(f64::INFINITY, f64::min),
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            initial_total_time: self.spatial.durations.iter().sum(),
        }
    }

    /// Optimal-within-ε trajectory for `θ`.
    pub fn trajectory(&self, theta: &[f64]) -> Result<PiecewiseBezier<3>> {
        check_theta(theta, self.k_c())?;
        let durations = self.tree.eval(theta)?;
        self.spatial.trajectory(theta, &durations)
    }

    /// Same path with the initial chord-length time allocation.
    pub fn initial_trajectory(&self, theta: &[f64]) -> Result<PiecewiseBezier<3>> {
        check_theta(theta, self.k_c())?;
        self.spatial.trajectory(theta, &self.spatial.durations)
    }

    pub fn trajectories(
        &self,
        thetas: &[Vec<f64>],
        mode: Parallelism,
    ) -> Result<Vec<PiecewiseBezier<3>>> {
        map_slice(mode, thetas, |t| self.trajectory(t))
            .into_iter()
            .collect()
    }

    /// Matched-parameter point `h_θ` at time fraction `s`: the same segment
    /// and local parameter for every `θ`.
    pub fn sample(&self, theta: &[f64], s: f64) -> Result<Vec3> {
        check_theta(theta, self.k_c())?;
        let (m, u) = self.matched_parameter(s)?;
        let cps = self.spatial.combine(theta)?;
        let seg = crate::bezier::BezierSegment::new(cps[m].clone(), 1.0)?;
        Ok(seg.eval_normalized(u))
    }

    /// Segment and local parameter in `[0, 1]` for time fraction `s` of the
    /// initial allocation.
    pub fn matched_parameter(&self, s: f64) -> Result<(usize, f64)> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("time fraction {s} outside [0, 1]")));
        }
        let durations = &self.spatial.durations;
        let total: f64 = durations.iter().sum();
        let mut t = s * total;
        for (m, &d) in durations.iter().enumerate() {
            if t < d || m + 1 == durations.len() {
                return Ok((m, (t / d).clamp(0.0, 1.0)));
            }
            t -= d;
        }
        unreachable!("durations are nonempty")
    }

    pub fn cross_section(&self, s: f64) -> Result<CrossSection> {
        let k = self.k_c();
        let samples = (0..k)
            .map(|i| {
                let mut e = vec![0.0; k];
                e[i] = 1.0;
                self.sample(&e, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CrossSection {
            fraction: s,
            samples,
        })
    }

    /// Boundary start points.
    pub fn boundary_starts(&self) -> Vec<Vec3> {
        self.spatial
            .boundaries
            .iter()
            .map(|b| b.trajectory.start())
            .collect()
    }

    /// Expresses each start as a convex combination of the boundary starts.
    pub fn assign_parameters(&self, starts: &[Vec3]) -> Result<Vec<Vec<f64>>> {
        let corners = self.boundary_starts();
        let scale = corners.iter().map(|c| c.norm()).fold(1.0, f64::max);
        starts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (theta, dist) = simplex_least_squares(&corners, s);
                if dist > 1e-7 * scale {
                    return Err(Error::Assignment {
                        index: i,
                        distance: dist,
                    });
                }
                Ok(theta)
            })
            .collect()
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("tube serializes"),
        ))
    }

    pub fn to_json(&self) -> String {
        let file = TubeFile {
            version: TUBE_FORMAT_VERSION,
            content_hash: self.content_hash(),
            tube: self.clone(),
        };
        serde_json::to_string(&file).expect("tube serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TubeFile = serde_json::from_str(s)
            .map_err(|e| Error::Integrity(format!("tube artifact does not parse: {e}")))?;
        if file.version != TUBE_FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported tube version {}",
                file.version
            )));
        }
        let actual = file.tube.content_hash();
        if actual != file.content_hash {
            return Err(Error::Integrity(format!(
                "content hash mismatch: recorded {}, computed {actual}",
                file.content_hash
            )));
        }
        Ok(file.tube)
    }
}

/// Uniform sample from the probability simplex.
pub fn sample_theta<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Closest point of `conv(points)` to `target`: weights and distance.
/// Enumerates supports, which is exact and cheap for the few boundary points used here.
pub fn simplex_least_squares(points: &[Vec3], target: &Vec3) -> (Vec<f64>, f64) {
    let k = points.len();
    let mut best: (Vec<f64>, f64) = (Vec::new(), f64::INFINITY);
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let n = support.len();
        // KKT of min ‖Σ w_j p_j − t‖² s.t. Σ w_j = 1
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = points[i].dot(&points[j]);
            }
            kkt[(a, n)] = 1.0;
            kkt[(n, a)] = 1.0;
            rhs[a] = points[i].dot(target);
        }
        rhs[n] = 1.0;
        let Some(sol) = kkt
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|s| (&kkt * s - &rhs).amax() < 1e-9 * (1.0 + rhs.amax()))
        else {
            continue;
        };
        if (0..n).any(|a| sol[a] < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; k];
        let mut p = Vec3::zeros();
        for (a, &i) in support.iter().enumerate() {
            w[i] = sol[a].max(0.0);
            p += points[i] * w[i];
        }
        let d = (p - target).norm();
        if d < best.1 - 1e-15 {
            best = (w, d);
        }
    }
    let s: f64 = best.0.iter().sum();
    if s > 0.0 {
        best.0.iter_mut().for_each(|w| *w /= s);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn least_squares_on_triangle() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let (w, d) = simplex_least_squares(&pts, &Vec3::new(0.25, 0.25, 0.0));
        assert!(d < 1e-12);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        let (w, d) = simplex_least_squares(&pts, &Vec3::new(1.0, 1.0, 0.0));
        assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12 && (w[2] - 0.5).abs() < 1e-12);
        let (w, _) = simplex_least_squares(&pts, &pts[1]);
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        let (_, d) = simplex_least_squares(&pts, &Vec3::new(0.2, 0.2, 0.3));
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn theta_samples_lie_on_simplex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = sample_theta(&mut rng, 3);
            assert!(t.iter().all(|&v| v >= 0.0));
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
