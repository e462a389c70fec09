//! Minimum-derivative-energy boundary trajectories inside a sphere corridor.
//!
//! Each boundary trajectory is a piecewise Bézier curve whose joint positions
//! are fixed at the boundary terminal points. The free control points
//! minimize `∫‖h^(d)‖² dt` subject to rest-to-rest end states, `C^(d-1)`
//! joint continuity, sphere containment of every control point and optional
//! componentwise bounds on hodograph control points.
//!
//! Equalities are removed with a null-space basis, which leaves a strictly
//! convex QP with ball and box constraints. That QP is solved by ADMM with
//! closed-form projections.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bezier::{binomial, BezierSegment, PiecewiseBezier};
use crate::corridor::{BoundaryPaths, SphereCorridor};
use crate::error::{Error, Result};
use crate::geometry::{Sphere, Vec3};
use crate::par::{map_range, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub degree: usize,
    /// Order `d` of the minimized derivative; joints are `C^(d-1)`.
    pub derivative_order: usize,
    /// Entry `i` bounds every component of the order `i + 1` hodograph control points.
    pub derivative_bounds: Vec<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Sphere radii are shrunk by this much inside the solver so that
    /// returned control points are strictly contained.
    pub ball_margin: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            degree: 5,
            derivative_order: 3,
            derivative_bounds: Vec::new(),
            max_iterations: 10_000,
            tolerance: 1e-8,
            ball_margin: 1e-6,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.derivative_order == 0 {
            return Err(Error::Config("derivative_order must be at least 1".into()));
        }
        if self.degree + 1 < 2 * self.derivative_order {
            return Err(Error::Config(format!(
                "degree {} cannot meet C^{} joints with fixed positions; need degree >= {}",
                self.degree,
                self.derivative_order - 1,
                2 * self.derivative_order - 1
            )));
        }
        if self.derivative_bounds.len() > self.degree {
            return Err(Error::Config(
                "more derivative bounds than the degree allows".into(),
            ));
        }
        if self.derivative_bounds.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("derivative bounds must be positive".into()));
        }
        if !(self.tolerance > 0.0) || self.ball_margin < 0.0 || self.max_iterations == 0 {
            return Err(Error::Config("invalid spatial solver tolerances".into()));
        }
        Ok(())
    }
}

/// Everything shared by the `k_c` boundary problems.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialProblem {
    pub spheres: Vec<Sphere>,
    /// Per boundary: start, one point per intersection plane, goal.
    pub paths: BoundaryPaths,
    pub durations: Vec<f64>,
    /// Per boundary: derivatives of orders `1..d` at the start. Empty means rest.
    pub start_derivatives: Vec<Vec<Vec3>>,
    pub config: SpatialConfig,
}

impl SpatialProblem {
    pub fn new(
        corridor: &SphereCorridor,
        paths: BoundaryPaths,
        durations: Vec<f64>,
        config: SpatialConfig,
    ) -> Result<Self> {
        config.validate()?;
        let m = corridor.spheres.len();
        if durations.len() != m {
            return Err(Error::Assembly(format!(
                "{} durations for {m} segments",
                durations.len()
            )));
        }
        if durations.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("segment durations must be positive".into()));
        }
        if paths.is_empty() || paths.iter().any(|p| p.len() != m + 1) {
            return Err(Error::Assembly(format!(
                "boundary paths must have {} points each",
                m + 1
            )));
        }
        Ok(Self {
            spheres: corridor.spheres.clone(),
            paths,
            durations,
            start_derivatives: Vec::new(),
            config,
        })
    }

    /// Sets nonzero start derivatives (orders `1..d`) for each boundary.
    pub fn with_start_derivatives(mut self, derivatives: Vec<Vec<Vec3>>) -> Result<Self> {
        let need = self.config.derivative_order - 1;
        if derivatives.len() != self.paths.len() || derivatives.iter().any(|d| d.len() != need) {
            return Err(Error::Assembly(format!(
                "start derivatives need {need} orders per boundary"
            )));
        }
        self.start_derivatives = derivatives;
        Ok(self)
    }

    pub fn boundary_count(&self) -> usize {
        self.paths.len()
    }

    pub fn segment_count(&self) -> usize {
        self.spheres.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySolution {
    pub trajectory: PiecewiseBezier<3>,
    /// `∫‖h^(d)‖² dt`.
    pub objective: f64,
    pub iterations: usize,
    /// Smallest `r_m − ‖P − o_m‖` over all control points.
    pub min_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSolution {
    pub boundaries: Vec<BoundarySolution>,
    pub spheres: Vec<Sphere>,
    pub durations: Vec<f64>,
    pub degree: usize,
    pub derivative_order: usize,
}

/// Checks that `w` is a point of the probability simplex with `k` entries.
pub fn check_weights(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k {
        return Err(Error::Domain(format!(
            "expected {k} weights, got {}",
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(Error::Domain(format!(
            "weights {w:?} have a negative entry"
        )));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

impl SpatialSolution {
    pub fn boundary_count(&self) -> usize {
        self.boundaries.len()
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    /// `Σ η_k P^k_m` for every segment `m`.
    pub fn combine(&self, eta: &[f64]) -> Result<Vec<Vec<Vec3>>> {
        check_weights(eta, self.boundary_count())?;
        let mut out: Vec<Vec<Vec3>> =
            vec![vec![Vec3::zeros(); self.degree + 1]; self.segment_count()];
        for (b, &w) in self.boundaries.iter().zip(eta) {
            if w == 0.0 {
                continue;
            }
            for (m, seg) in b.trajectory.segments().iter().enumerate() {
                for (acc, p) in out[m].iter_mut().zip(seg.control_points()) {
                    *acc += w * p;
                }
            }
        }
        Ok(out)
    }

    /// Combined control points with the given segment durations.
    pub fn trajectory(&self, eta: &[f64], durations: &[f64]) -> Result<PiecewiseBezier<3>> {
        if durations.len() != self.segment_count() {
            return Err(Error::Assembly(format!(
                "{} durations for {} segments",
                durations.len(),
                self.segment_count()
            )));
        }
        let segs = self
            .combine(eta)?
            .into_iter()
            .zip(durations)
            .map(|(cp, &dt)| BezierSegment::new(cp, dt))
            .collect::<Result<Vec<_>>>()?;
        PiecewiseBezier::new(segs)
    }

    /// SHA-256 of the control points, durations and degree.
    pub fn content_hash(&self) -> String {
        let controls: Vec<Vec<Vec<[f64; 3]>>> = self
            .boundaries
            .iter()
            .map(|b| {
                b.trajectory
                    .segments()
                    .iter()
                    .map(|s| s.control_points().iter().map(|p| [p.x, p.y, p.z]).collect())
                    .collect()
            })
            .collect();
        let payload = serde_json::to_vec(&(self.degree, &self.durations, controls))
            .expect("plain data serializes");
        hex::encode(Sha256::digest(payload))
    }
}

/// Gram matrix `∫₀¹ B_{q,i} B_{q,j} ds` of the degree-`q` Bernstein basis.
pub fn bernstein_gram(q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(q + 1, q + 1, |i, j| {
        binomial(q, i) * binomial(q, j) / ((2 * q + 1) as f64 * binomial(2 * q, i + j))
    })
}

/// `∫‖h^(order)‖² dt`, exact.
pub fn derivative_energy(traj: &PiecewiseBezier<3>, order: usize) -> f64 {
    traj.segments()
        .iter()
        .map(|seg| {
            let d = seg.nth_derivative(order);
            let g = bernstein_gram(d.degree());
            let cp = d.control_points();
            let mut acc = 0.0;
            for i in 0..cp.len() {
                for j in 0..cp.len() {
                    acc += g[(i, j)] * cp[i].dot(&cp[j]);
                }
            }
            acc * seg.duration()
        })
        .sum()
}

/// Coefficients of `Δ^j c_0` (forward difference) on `c_0..c_j`.
fn forward_difference(j: usize) -> Vec<f64> {
    (0..=j)
        .map(|i| {
            if (j - i) % 2 == 0 {
                binomial(j, i)
            } else {
                -binomial(j, i)
            }
        })
        .collect()
}

/// `p! / (p - j)!`.
fn falling(p: usize, j: usize) -> f64 {
    (0..j).map(|i| (p - i) as f64).product()
}

#[derive(Debug, Clone, Copy)]
enum Rhs {
    Joint(usize),
    StartDerivative(usize),
    Zero,
}

/// Problem structure shared by all boundaries: it depends on the durations
/// but not on the boundary points.
struct Structure {
    p: usize,
    segments: usize,
    rhs: Vec<(Rhs, f64)>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    equality: DMatrix<f64>,
    null: DMatrix<f64>,
    q: DMatrix<f64>,
    /// Rows of the derivative-bound operator, with bound and segment.
    deriv_rows: Vec<(DVector<f64>, f64, usize)>,
}

impl Structure {
    fn new(prob: &SpatialProblem) -> Result<Self> {
        let cfg = &prob.config;
        let p = cfg.degree;
        let d = cfg.derivative_order;
        let segments = prob.segment_count();
        let n = segments * (p + 1);
        let idx = |m: usize, i: usize| m * (p + 1) + i;
        let dt = &prob.durations;

        let mut rows: Vec<(Vec<(usize, f64)>, Rhs)> = Vec::new();
        for m in 0..segments {
            rows.push((vec![(idx(m, 0), 1.0)], Rhs::Joint(m)));
            rows.push((vec![(idx(m, p), 1.0)], Rhs::Joint(m + 1)));
        }
        for j in 1..d {
            let fd = forward_difference(j);
            let k0 = falling(p, j) / dt[0].powi(j as i32);
            rows.push((
                fd.iter()
                    .enumerate()
                    .map(|(i, &c)| (idx(0, i), k0 * c))
                    .collect(),
                Rhs::StartDerivative(j),
            ));
            let last = segments - 1;
            rows.push((
                fd.iter()
                    .enumerate()
                    .map(|(i, &c)| (idx(last, p - j + i), c))
                    .collect(),
                Rhs::Zero,
            ));
            for m in 0..segments - 1 {
                let a = 1.0 / dt[m].powi(j as i32);
                let b = 1.0 / dt[m + 1].powi(j as i32);
                let mut coeffs: Vec<(usize, f64)> = fd
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (idx(m, p - j + i), a * c))
                    .collect();
                coeffs.extend(fd.iter().enumerate().map(|(i, &c)| (idx(m + 1, i), -b * c)));
                rows.push((coeffs, Rhs::Zero));
            }
        }

        let size = rows.len().max(n);
        let mut equality = DMatrix::zeros(size, n);
        let mut rhs = Vec::with_capacity(rows.len());
        for (r, (coeffs, kind)) in rows.iter().enumerate() {
            let norm = coeffs.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
            for &(j, c) in coeffs {
                equality[(r, j)] += c / norm;
            }
            rhs.push((*kind, 1.0 / norm));
        }
        let svd = equality.clone().svd(true, true);
        let v_t = svd.v_t.as_ref().expect("requested V");
        let smax = svd.singular_values.max();
        let null_rows: Vec<usize> = (0..n)
            .filter(|&i| svd.singular_values[i] <= 1e-10 * smax)
            .collect();
        let null = DMatrix::from_fn(n, null_rows.len(), |i, k| v_t[(null_rows[k], i)]);

        let q_deg = p - d;
        let gram = bernstein_gram(q_deg);
        let mut diff = DMatrix::zeros(q_deg + 1, p + 1);
        let fd = forward_difference(d);
        for i in 0..=q_deg {
            for (k, &c) in fd.iter().enumerate() {
                diff[(i, i + k)] = c;
            }
        }
        let block = diff.transpose() * gram * diff;
        let mut q = DMatrix::zeros(n, n);
        for m in 0..segments {
            let scale = falling(p, d).powi(2) * dt[m].powi(1 - 2 * d as i32);
            q.view_mut((idx(m, 0), idx(m, 0)), (p + 1, p + 1))
                .copy_from(&(&block * scale));
        }

        let mut deriv_rows = Vec::new();
        for (order0, &bound) in cfg.derivative_bounds.iter().enumerate() {
            let j = order0 + 1;
            let fd = forward_difference(j);
            for m in 0..segments {
                let k = falling(p, j) / dt[m].powi(j as i32);
                for i in 0..=p - j {
                    let mut row = DVector::zeros(n);
                    for (l, &c) in fd.iter().enumerate() {
                        row[idx(m, i + l)] = k * c;
                    }
                    deriv_rows.push((row, bound, m));
                }
            }
        }

        Ok(Self {
            p,
            segments,
            rhs,
            svd,
            equality,
            null,
            q,
            deriv_rows,
        })
    }

    fn rhs_matrix(&self, prob: &SpatialProblem, k: usize) -> DMatrix<f64> {
        let size = self.equality.nrows();
        let mut b = DMatrix::zeros(size, 3);
        for (r, &(kind, scale)) in self.rhs.iter().enumerate() {
            let v = match kind {
                Rhs::Joint(i) => prob.paths[k][i],
                Rhs::StartDerivative(j) => prob
                    .start_derivatives
                    .get(k)
                    .map_or(Vec3::zeros(), |d| d[j - 1]),
                Rhs::Zero => Vec3::zeros(),
            };
            for a in 0..3 {
                b[(r, a)] = v[a] * scale;
            }
        }
        b
    }
}

/// Constraint rows of the reduced problem `A z + a0 ∈ C`.
struct Constraints {
    a: DMatrix<f64>,
    a0: DMatrix<f64>,
    /// Row index and sphere for each ball-constrained control point.
    balls: Vec<(usize, Sphere)>,
    /// Row index and bound for each box-constrained row.
    boxes: Vec<(usize, f64)>,
}

fn project(c: &Constraints, v: &mut DMatrix<f64>, margin: f64) {
    for &(r, s) in &c.balls {
        let radius = (s.radius - margin).max(0.0);
        let p = Vec3::new(v[(r, 0)], v[(r, 1)], v[(r, 2)]);
        let off = p - s.center;
        let n = off.norm();
        if n > radius {
            let q = s.center + off * (radius / n);
            for a in 0..3 {
                v[(r, a)] = q[a];
            }
        }
    }
    for &(r, b) in &c.boxes {
        for a in 0..3 {
            v[(r, a)] = v[(r, a)].clamp(-b, b);
        }
    }
}

fn amax(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.amax()
    }
}

/// Solves boundary problem `k`.
pub fn solve_boundary(prob: &SpatialProblem, k: usize) -> Result<BoundarySolution> {
    let st = Structure::new(prob)?;
    solve_with(prob, &st, k)
}

/// Solves all boundary problems; they share one factorized structure.
pub fn solve_all(prob: &SpatialProblem, mode: Parallelism) -> Result<SpatialSolution> {
    let st = Structure::new(prob)?;
    let boundaries = map_range(mode, prob.boundary_count(), |k| solve_with(prob, &st, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialSolution {
        boundaries,
        spheres: prob.spheres.clone(),
        durations: prob.durations.clone(),
        degree: prob.config.degree,
        derivative_order: prob.config.derivative_order,
    })
}

fn solve_with(prob: &SpatialProblem, st: &Structure, k: usize) -> Result<BoundarySolution> {
    let cfg = &prob.config;
    let p = st.p;
    let n = st.segments * (p + 1);
    let b = st.rhs_matrix(prob, k);
    let c0 = st
        .svd
        .solve(&b, 1e-10 * st.svd.singular_values.max())
        .map_err(|e| Error::Internal(format!("equality solve: {e}")))?;
    let resid = amax(&(&st.equality * &c0 - &b));
    if resid > 1e-8 * (1.0 + amax(&b)) {
        return Err(Error::SpatialInfeasible {
            segment: 0,
            reason: format!("boundary conditions are inconsistent (residual {resid:e})"),
        });
    }
    let nz = st.null.ncols();

    // Constant rows are checked now; the rest become ADMM constraints.
    let mut a_rows: Vec<DVector<f64>> = Vec::new();
    let mut a0_rows: Vec<[f64; 3]> = Vec::new();
    let mut balls = Vec::new();
    let mut boxes = Vec::new();
    let sphere_of = |i: usize| i / (p + 1);
    for i in 0..n {
        let m = sphere_of(i);
        let s = prob.spheres[m];
        let row = st.null.row(i).transpose();
        let base = Vec3::new(c0[(i, 0)], c0[(i, 1)], c0[(i, 2)]);
        if row.amax() < 1e-12 {
            let excess = (base - s.center).norm() - s.radius;
            if excess > 0.0 {
                return Err(Error::SpatialInfeasible {
                    segment: m,
                    reason: format!(
                        "fixed control point {} lies {excess:.3e} m outside sphere {m}",
                        i % (p + 1)
                    ),
                });
            }
            continue;
        }
        balls.push((a_rows.len(), s));
        a_rows.push(row);
        a0_rows.push([base.x, base.y, base.z]);
    }
    for (row, bound, m) in &st.deriv_rows {
        let red = st.null.transpose() * row;
        let off = c0.transpose() * row;
        if red.amax() < 1e-12 {
            if off.amax() > bound + 1e-9 {
                return Err(Error::SpatialInfeasible {
                    segment: *m,
                    reason: format!("fixed derivative control point exceeds bound {bound}"),
                });
            }
            continue;
        }
        boxes.push((a_rows.len(), *bound));
        a_rows.push(red);
        a0_rows.push([off[0], off[1], off[2]]);
    }
    let rows = a_rows.len();
    let cons = Constraints {
        a: DMatrix::from_fn(rows, nz, |r, j| a_rows[r][j]),
        a0: DMatrix::from_fn(rows, 3, |r, a| a0_rows[r][a]),
        balls,
        boxes,
    };

    let h = (st.null.transpose() * &st.q * &st.null) * 2.0;
    let f = (st.null.transpose() * &st.q * &c0) * 2.0;
    let (z, iterations) = if nz == 0 || rows == 0 {
        let z = if nz == 0 {
            DMatrix::zeros(0, 3)
        } else {
            h.clone()
                .cholesky()
                .ok_or_else(|| Error::Internal("spatial Hessian is not positive definite".into()))?
                .solve(&(-&f))
        };
        (z, 0)
    } else {
        admm(&h, &f, &cons, cfg)?
    };

    let c = &c0 + &st.null * &z;
    let mut segs = Vec::with_capacity(st.segments);
    let mut min_slack = f64::INFINITY;
    for m in 0..st.segments {
        let s = prob.spheres[m];
        let cps: Vec<Vec3> = (0..=p)
            .map(|i| {
                let r = m * (p + 1) + i;
                Vec3::new(c[(r, 0)], c[(r, 1)], c[(r, 2)])
            })
            .collect();
        for cp in &cps {
            min_slack = min_slack.min(s.radius - (cp - s.center).norm());
        }
        segs.push(BezierSegment::new(cps, prob.durations[m])?);
    }
    if min_slack < 0.0 {
        let worst = (0..st.segments)
            .min_by(|&a, &b| {
                let slack = |m: usize| {
                    let s = prob.spheres[m];
                    segs[m]
                        .control_points()
                        .iter()
                        .map(|cp| s.radius - (cp - s.center).norm())
                        .fold(f64::INFINITY, f64::min)
                };
                slack(a).total_cmp(&slack(b))
            })
            .unwrap_or(0);
        return Err(Error::SpatialInfeasible {
            segment: worst,
            reason: format!(
                "no solution keeps the control points inside the sphere (violation {:.3e} m)",
                -min_slack
            ),
        });
    }
    let trajectory = PiecewiseBezier::new(segs)?;
    let objective = (0..3)
        .map(|a| c.column(a).dot(&(&st.q * c.column(a))))
        .sum();
    Ok(BoundarySolution {
        trajectory,
        objective,
        iterations,
        min_slack,
    })
}

fn admm(
    h: &DMatrix<f64>,
    f: &DMatrix<f64>,
    cons: &Constraints,
    cfg: &SpatialConfig,
) -> Result<(DMatrix<f64>, usize)> {
    let a = &cons.a;
    let ata = a.transpose() * a;
    let mut rho = (h.trace() / ata.trace()).max(1e-8);
    let factor = |rho: f64| {
        (h + &ata * rho)
            .cholesky()
            .ok_or_else(|| Error::Internal("ADMM system is not positive definite".into()))
    };
    let mut chol = factor(rho)?;
    let mut w = cons.a0.clone();
    project(cons, &mut w, cfg.ball_margin);
    let mut u = DMatrix::zeros(a.nrows(), 3);
    let mut z = DMatrix::zeros(a.ncols(), 3);
    let tol = cfg.tolerance;
    for it in 1..=cfg.max_iterations {
        let rhs = -f + (a.transpose() * (&w - &u - &cons.a0)) * rho;
        z = chol.solve(&rhs);
        let az = a * &z + &cons.a0;
        let mut w_new = &az + &u;
        project(cons, &mut w_new, cfg.ball_margin);
        let primal = &az - &w_new;
        u += &primal;
        let dual = (a.transpose() * (&w_new - &w)) * rho;
        w = w_new;
        let r_p = amax(&primal);
        let r_d = amax(&dual);
        let scale_p = 1.0 + amax(&az).max(amax(&w));
        let scale_d = 1.0
            + amax(&(h * &z))
                .max(amax(f))
                .max(rho * amax(&(a.transpose() * &u)));
        if r_p <= tol * scale_p && r_d <= tol * scale_d {
            return Ok((z, it));
        }
        if it % 25 == 0 {
            let ratio = ((r_p / scale_p) / (r_d / scale_d).max(1e-300)).sqrt();
            if !(0.2..=5.0).contains(&ratio) && ratio.is_finite() {
                let new_rho = (rho * ratio).clamp(1e-8, 1e8);
                u *= rho / new_rho;
                rho = new_rho;
                chol = factor(rho)?;
            }
        }
    }
    Ok((z, cfg.max_iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::SphereCorridor;

    fn line_problem(waypoints: &[f64], durations: &[f64], radius: f64) -> SpatialProblem {
        let m = durations.len();
        let centers: Vec<f64> = (0..m)
            .map(|i| 0.5 * (waypoints[i] + waypoints[i + 1]))
            .collect();
        let spheres = centers
            .iter()
            .map(|&x| Sphere::new(Vec3::new(x, 0.0, 0.0), radius))
            .collect();
        let corridor = SphereCorridor::new(spheres).unwrap();
        let path: Vec<Vec3> = waypoints.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect();
        SpatialProblem::new(
            &corridor,
            vec![path],
            durations.to_vec(),
            SpatialConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn collinear_problem_stays_on_line() {
        let prob = line_problem(&[0.0, 1.5, 3.2, 5.0], &[1.0, 1.2, 1.1], 1.2);
        let s = solve_boundary(&prob, 0).unwrap();
        for seg in s.trajectory.segments() {
            for cp in seg.control_points() {
                assert!(cp.y.abs() < 1e-9 && cp.z.abs() < 1e-9);
            }
        }
        for (m, seg) in s.trajectory.segments().iter().enumerate() {
            assert!(seg.hull_membership(&prob.spheres[m].center, prob.spheres[m].radius));
        }
    }

    #[test]
    fn active_spheres_are_respected() {
        // shrink the middle sphere below the reach of the unconstrained optimum
        let centers: Vec<Vec3> = (0..3)
            .map(|i| Vec3::new(2.0 * i as f64, 0.0, 0.0))
            .collect();
        let path = vec![
            Vec3::new(-0.8, 0.0, 0.0),
            Vec3::new(1.0, 0.9, 0.0),
            Vec3::new(3.0, -0.9, 0.0),
            Vec3::new(4.8, 0.0, 0.0),
        ];
        let problem = |r1: f64| {
            let spheres = vec![
                Sphere::new(centers[0], 3.0),
                Sphere::new(centers[1], r1),
                Sphere::new(centers[2], 3.0),
            ];
            let corridor = SphereCorridor::new(spheres).unwrap();
            SpatialProblem::new(
                &corridor,
                vec![path.clone()],
                vec![0.5, 2.0, 0.5],
                SpatialConfig::default(),
            )
            .unwrap()
        };
        let free = solve_boundary(&problem(3.0), 0).unwrap();
        let reach = free.trajectory.segments()[1]
            .control_points()
            .iter()
            .map(|p| (p - centers[1]).norm())
            .fold(0.0, f64::max);
        let fixed = (path[1] - centers[1]).norm();
        assert!(
            reach > fixed + 0.05,
            "unconstrained optimum does not overshoot"
        );
        let r1 = 0.5 * (reach + fixed);
        let prob = problem(r1);
        let s = solve_boundary(&prob, 0).unwrap();
        assert!(s.min_slack >= 0.0);
        assert!(
            s.min_slack < 1e-5,
            "expected an active sphere, slack {}",
            s.min_slack
        );
        for (m, seg) in s.trajectory.segments().iter().enumerate() {
            assert!(seg.hull_membership(&prob.spheres[m].center, prob.spheres[m].radius));
        }
        assert!(s.trajectory.continuity_defect(1) < 1e-6);
        assert!(s.trajectory.continuity_defect(2) < 1e-6);
        assert!(free.objective < s.objective);
    }

    #[test]
    fn terminal_outside_sphere_is_infeasible() {
        let spheres = vec![
            Sphere::new(Vec3::zeros(), 1.0),
            Sphere::new(Vec3::new(1.5, 0.0, 0.0), 1.0),
        ];
        let corridor = SphereCorridor::new(spheres).unwrap();
        let path = vec![
            Vec3::new(-0.5, 0.0, 0.0),
            Vec3::new(0.75, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ];
        let prob = SpatialProblem::new(
            &corridor,
            vec![path],
            vec![1.0, 1.0],
            SpatialConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            solve_boundary(&prob, 0),
            Err(Error::SpatialInfeasible { segment: 1, .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prob = line_problem(&[0.0, 1.0, 2.5, 3.0], &[0.8, 1.1, 0.9], 5.0);
        let st = Structure::new(&prob).unwrap();
        let b = st.rhs_matrix(&prob, 0);
        let c0 = st.svd.solve(&b, 1e-12).unwrap();
        let h = (st.null.transpose() * &st.q * &st.null) * 2.0;
        let f = (st.null.transpose() * &st.q * &c0) * 2.0;
        let energy = |z: &DMatrix<f64>| {
            let c = &c0 + &st.null * z;
            (0..3)
                .map(|a| c.column(a).dot(&(&st.q * c.column(a))))
                .sum::<f64>()
        };
        let z = DMatrix::from_fn(st.null.ncols(), 3, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2
        });
        let grad = &h * &z + &f;
        for i in 0..z.nrows() {
            for j in 0..3 {
                let step = 1e-5;
                let mut zp = z.clone();
                zp[(i, j)] += step;
                let mut zm = z.clone();
                zm[(i, j)] -= step;
                let fd = (energy(&zp) - energy(&zm)) / (2.0 * step);
                assert!(
                    (fd - grad[(i, j)]).abs() <= 1e-5 * (1.0 + grad[(i, j)].abs()),
                    "{fd} vs {}",
                    grad[(i, j)]
                );
            }
        }
    }

    #[test]
    fn combine_is_convex_and_exact_at_vertices() {
        let spheres = vec![
            Sphere::new(Vec3::new(0.0, 0.0, 1.0), 2.0),
            Sphere::new(Vec3::new(3.0, 0.5, 1.0), 2.0),
            Sphere::new(Vec3::new(6.0, 0.0, 1.0), 2.0),
        ];
        let corridor = SphereCorridor::new(spheres).unwrap();
        let tri = [
            Vec3::new(0.0, -0.5, 0.0),
            Vec3::new(0.0, 0.5, 0.0),
            Vec3::new(0.0, 0.0, 0.8),
        ];
        let paths: BoundaryPaths = (0..3)
            .map(|k| {
                let mut p = vec![tri[k] + Vec3::new(-0.5, 0.0, 1.0)];
                p.extend(
                    corridor
                        .planes
                        .iter()
                        .map(|pl| pl.point(0.8, 2.0 * std::f64::consts::PI * k as f64 / 3.0)),
                );
                p.push(tri[k] + Vec3::new(6.5, 0.0, 1.0));
                p
            })
            .collect();
        let cfg = SpatialConfig {
            derivative_bounds: vec![20.0],
            ..SpatialConfig::default()
        };
        let prob = SpatialProblem::new(&corridor, paths, vec![1.5, 1.5, 1.5], cfg).unwrap();
        let sol = solve_all(&prob, Parallelism::default()).unwrap();
        let seq = solve_all(&prob, Parallelism::Sequential).unwrap();
        assert_eq!(sol, seq);
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            let t = sol.trajectory(&e, &sol.durations).unwrap();
            assert_eq!(t, sol.boundaries[k].trajectory);
        }
        let eta = [0.2, 0.5, 0.3];
        let t = sol.trajectory(&eta, &sol.durations).unwrap();
        let bound: f64 = eta
            .iter()
            .zip(&sol.boundaries)
            .map(|(w, b)| w * b.objective)
            .sum();
        assert!(derivative_energy(&t, 3) <= bound + 1e-6);
        assert!(t.continuity_defect(2) < 1e-6);
        for (m, seg) in t.segments().iter().enumerate() {
            assert!(seg.hull_membership(&sol.spheres[m].center, sol.spheres[m].radius));
        }
        assert!(matches!(
            sol.combine(&[0.5, 0.6, -0.1]),
            Err(Error::Domain(_))
        ));
        assert_eq!(sol.content_hash(), seq.content_hash());
    }
}
