//! Time allocation as a linear program over segment durations.
//!
//! For fixed control points, velocity bounds on the hodograph control points
//! and first-order joint continuity are both linear in the durations once
//! cross-multiplied. Because control points combine linearly in the boundary
//! weights `θ`, the right-hand side and, with joint directions shared by all boundaries,
//! the equality matrix are affine in `θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bezier::PiecewiseBezier;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::lp::{self, LinearProgram};
use crate::spatial::{check_weights, SpatialSolution};

pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Rows: `2·3·p` velocity rows per segment, then one `-Δt_m ≤ -t_min` row
/// per segment. Equalities: one row per interior joint.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeLp {
    pub lp: LinearProgram,
    pub degree: usize,
    pub t_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSolution {
    pub durations: Vec<f64>,
    pub total: f64,
}

impl TimeLp {
    pub fn segment_count(&self) -> usize {
        self.lp.num_vars()
    }
}

/// Builds the LP for per-segment control points.
pub fn build_lp(control_points: &[Vec<Vec3>], v_max: Vec3, t_min: f64) -> Result<TimeLp> {
    build_lp_along(control_points, v_max, t_min, None)
}

/// [`build_lp`] with continuity projected on fixed joint directions, which
/// keeps the equality rows linear in the control points.
pub fn build_lp_along(
    control_points: &[Vec<Vec3>],
    v_max: Vec3,
    t_min: f64,
    directions: Option<&[Vec3]>,
) -> Result<TimeLp> {
    if v_max.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Config(format!(
            "v_max components must be positive, got {v_max:?}"
        )));
    }
    if !(t_min > 0.0) {
        return Err(Error::Config("t_min must be positive".into()));
    }
    let m_count = control_points.len();
    let first = control_points
        .first()
        .ok_or_else(|| Error::Config("no segments".into()))?;
    let p = first
        .len()
        .checked_sub(1)
        .filter(|&p| p >= 1)
        .ok_or_else(|| Error::Config("degree must be at least 1".into()))?;
    if control_points.iter().any(|c| c.len() != p + 1) {
        return Err(Error::Assembly("segments disagree on degree".into()));
    }
    let pf = p as f64;
    let vel_rows = 6 * p * m_count;
    let rows = vel_rows + m_count;
    let mut a1 = DMatrix::zeros(rows, m_count);
    let mut b1 = DVector::zeros(rows);
    let mut r = 0;
    for (m, cps) in control_points.iter().enumerate() {
        for i in 0..p {
            let dp = (cps[i + 1] - cps[i]) * pf;
            for a in 0..3 {
                for side in [1.0, -1.0] {
                    a1[(r, m)] = -v_max[a];
                    b1[r] = -side * dp[a];
                    r += 1;
                }
            }
        }
    }
    for m in 0..m_count {
        a1[(vel_rows + m, m)] = -1.0;
        b1[vel_rows + m] = -t_min;
    }
    let a2 = continuity_rows(control_points, p, directions)?;
    let b2 = DVector::zeros(a2.nrows());
    let lp = LinearProgram::new(DVector::from_element(m_count, 1.0), a1, b1, a2, b2)?;
    Ok(TimeLp {
        lp,
        degree: p,
        t_min,
    })
}

/// One row per interior joint: velocity continuity `e/Δt_m = s/Δt_{m+1}`
/// projected on the joint direction `u_m`. For a continuous spatial solution
/// `s` is parallel to `e`, so the projection loses nothing, and a single row
/// cannot turn inconsistent when the data is only continuous to solver
/// tolerance. Without directions, each joint uses its own incoming velocity.
fn continuity_rows(
    control_points: &[Vec<Vec3>],
    p: usize,
    directions: Option<&[Vec3]>,
) -> Result<DMatrix<f64>> {
    let m_count = control_points.len();
    let joints = m_count.saturating_sub(1);
    if let Some(d) = directions {
        if d.len() != joints {
            return Err(Error::Assembly(format!(
                "{} joint directions for {joints} joints",
                d.len()
            )));
        }
    }
    let pf = p as f64;
    let mut a2 = DMatrix::zeros(joints, m_count);
    for m in 0..joints {
        let end = (control_points[m][p] - control_points[m][p - 1]) * pf;
        let start = (control_points[m + 1][1] - control_points[m + 1][0]) * pf;
        let u = match directions {
            Some(d) => d[m],
            None => end
                .try_normalize(0.0)
                .or_else(|| start.try_normalize(0.0))
                .unwrap_or_else(Vec3::zeros),
        };
        a2[(m, m + 1)] = u.dot(&end);
        a2[(m, m)] = -u.dot(&start);
    }
    Ok(a2)
}

/// LP for the control points of a trajectory; its durations are ignored.
pub fn build_lp_for(
    traj: &PiecewiseBezier<3>,
    v_max: Vec3,
    t_min: f64,
    directions: Option<&[Vec3]>,
) -> Result<TimeLp> {
    let cps: Vec<Vec<Vec3>> = traj
        .segments()
        .iter()
        .map(|s| s.control_points().to_vec())
        .collect();
    build_lp_along(&cps, v_max, t_min, directions)
}

/// Axis between consecutive sphere centers: the normal of the plane every
/// boundary crosses at that joint.
pub fn joint_directions(spatial: &SpatialSolution) -> Vec<Vec3> {
    spatial
        .spheres
        .windows(2)
        .map(|w| (w[1].center - w[0].center).normalize())
        .collect()
}

/// LP built from scratch for the combined control points at `θ`, without
/// the parametric family. Used as the per-trajectory baseline.
pub fn direct_lp(
    spatial: &SpatialSolution,
    theta: &[f64],
    v_max: Vec3,
    t_min: f64,
) -> Result<TimeLp> {
    let cps = spatial.combine(theta)?;
    build_lp_along(&cps, v_max, t_min, Some(&joint_directions(spatial)))
}

pub fn solve_lp(lp: &TimeLp) -> Result<TimeSolution> {
    let s = lp::solve(&lp.lp)?;
    Ok(TimeSolution {
        durations: s.x.iter().copied().collect(),
        total: s.objective,
    })
}

/// `A₁ x ≤ b₁(θ)`, `A₂(θ) x = 0` with `b₁(θ) = Σ θ_k b₁ₖ` and `A₂(θ) = Σ θ_k A₂ₖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricTimeLp {
    pub a1: DMatrix<f64>,
    pub b1: Vec<DVector<f64>>,
    pub a2: Vec<DMatrix<f64>>,
    pub degree: usize,
    pub t_min: f64,
    /// Content hash of the spatial solution the family was built from.
    pub source_hash: Option<String>,
}

/// Stacks boundary LPs into one θ-affine family.
pub fn assemble_parametric(boundary_lps: &[TimeLp]) -> Result<ParametricTimeLp> {
    let first = boundary_lps
        .first()
        .ok_or_else(|| Error::Assembly("no boundary LPs".into()))?;
    for (k, lp) in boundary_lps.iter().enumerate() {
        let l = &lp.lp;
        if l.a_ub.shape() != first.lp.a_ub.shape()
            || l.a_eq.shape() != first.lp.a_eq.shape()
            || lp.degree != first.degree
        {
            return Err(Error::Assembly(format!(
                "boundary LP {k} has different dimensions"
            )));
        }
        if l.a_ub != first.lp.a_ub || lp.t_min != first.t_min {
            return Err(Error::Assembly(format!(
                "boundary LP {k} has a different velocity bound or t_min"
            )));
        }
    }
    Ok(ParametricTimeLp {
        a1: first.lp.a_ub.clone(),
        b1: boundary_lps.iter().map(|l| l.lp.b_ub.clone()).collect(),
        a2: boundary_lps.iter().map(|l| l.lp.a_eq.clone()).collect(),
        degree: first.degree,
        t_min: first.t_min,
        source_hash: None,
    })
}

impl ParametricTimeLp {
    /// Builds the family directly from boundary spatial solutions.
    pub fn from_spatial(spatial: &SpatialSolution, v_max: Vec3, t_min: f64) -> Result<Self> {
        let dirs = joint_directions(spatial);
        let lps = spatial
            .boundaries
            .iter()
            .map(|b| build_lp_for(&b.trajectory, v_max, t_min, Some(&dirs)))
            .collect::<Result<Vec<_>>>()?;
        let mut plp = assemble_parametric(&lps)?;
        plp.source_hash = Some(spatial.content_hash());
        Ok(plp)
    }

    pub fn k_c(&self) -> usize {
        self.b1.len()
    }

    pub fn segment_count(&self) -> usize {
        self.a1.ncols()
    }

    pub fn b1_at(&self, theta: &[f64]) -> DVector<f64> {
        self.b1
            .iter()
            .zip(theta)
            .fold(DVector::zeros(self.a1.nrows()), |acc, (b, &w)| acc + b * w)
    }

    pub fn a2_at(&self, theta: &[f64]) -> DMatrix<f64> {
        let shape = self.a2[0].shape();
        self.a2
            .iter()
            .zip(theta)
            .fold(DMatrix::zeros(shape.0, shape.1), |acc, (a, &w)| acc + a * w)
    }

    /// The LP at parameter `θ`. At a vertex `e_k` the data is boundary `k`'s, bit for bit.
    pub fn at(&self, theta: &[f64]) -> Result<TimeLp> {
        check_weights(theta, self.k_c())?;
        let (b1, a2) = match vertex_index(theta) {
            Some(k) => (self.b1[k].clone(), self.a2[k].clone()),
            None => (self.b1_at(theta), self.a2_at(theta)),
        };
        let n = self.segment_count();
        let lp = LinearProgram::new(
            DVector::from_element(n, 1.0),
            self.a1.clone(),
            b1,
            a2.clone(),
            DVector::zeros(a2.nrows()),
        )?;
        Ok(TimeLp {
            lp,
            degree: self.degree,
            t_min: self.t_min,
        })
    }

    pub fn solve_at(&self, theta: &[f64]) -> Result<TimeSolution> {
        solve_lp(&self.at(theta)?)
    }
}

fn vertex_index(theta: &[f64]) -> Option<usize> {
    let k = theta.iter().position(|&w| w == 1.0)?;
    theta
        .iter()
        .enumerate()
        .all(|(i, &w)| i == k || w == 0.0)
        .then_some(k)
}

/// Exact `V*(θ)`.
pub fn value_function(plp: &ParametricTimeLp, theta: &[f64]) -> Result<f64> {
    Ok(plp.solve_at(theta)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetimeCheck {
    pub max_velocity_excess: f64,
    pub velocity_jump: f64,
}

/// Largest sampled componentwise speed above `v_max` and the largest
/// velocity jump across joints.
pub fn check_retimed(traj: &PiecewiseBezier<3>, v_max: Vec3, samples: usize) -> RetimeCheck {
    let vel = traj.derivative();
    let total = traj.total_time();
    let mut excess = f64::NEG_INFINITY;
    for i in 0..=samples {
        let t = total * i as f64 / samples as f64;
        let v = vel.eval(t, 0).expect("t in domain");
        for a in 0..3 {
            excess = excess.max(v[a].abs() - v_max[a]);
        }
    }
    RetimeCheck {
        max_velocity_excess: excess,
        velocity_jump: traj.continuity_defect(1),
    }
}
