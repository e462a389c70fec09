//! Simplicial partition of the parameter simplex into critical regions.
//!
//! Each region is a simplex whose vertices carry exact LP optimizers. Inside
//! a region the optimizer is approximated by barycentric interpolation of the
//! vertex optimizers. Because the value function is convex, the interpolated
//! cost overestimates it and the error `e(θ) = Ṽ(θ) − V*(θ)` is concave, so
//! its maximum is found by cutting planes. Regions whose maximum error
//! exceeds `ε` are split at the maximizer into `k_c` children.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpSolution};
use crate::par::{map_range, Parallelism};
use crate::temporal::ParametricTimeLp;

/// Barycentric tolerance for containment tests.
pub const CONTAINMENT_TOL: f64 = 1e-9;
pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub max_depth: usize,
    /// Stop the max-error search once its upper bound is within this
    /// (relative) gap of the best error found.
    pub tolerance: f64,
    /// Cutting planes allowed per region before the bound is reported as is.
    pub max_cuts: usize,
    /// Children with smaller volume are skipped.
    pub min_volume: f64,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            max_depth: 20,
            tolerance: 1e-10,
            max_cuts: 200,
            min_volume: 1e-12,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawRegion {
    vertices: Vec<Vec<f64>>,
    optimizers: Vec<Vec<f64>>,
    values: Vec<f64>,
    max_error: f64,
    children: Vec<CriticalRegion>,
}

/// Simplex of parameters with exact optimizers at its vertices.
#[derive(Debug, Clone)]
pub struct CriticalRegion {
    /// Vertex parameters, each a point of the root simplex in barycentric coordinates.
    pub vertices: Vec<Vec<f64>>,
    /// Optimal durations at each vertex.
    pub optimizers: Vec<Vec<f64>>,
    /// Optimal total time at each vertex.
    pub values: Vec<f64>,
    /// Largest interpolation error found inside the region.
    pub max_error: f64,
    pub children: Vec<CriticalRegion>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl PartialEq for CriticalRegion {
    fn eq(&self, o: &Self) -> bool {
        self.vertices == o.vertices
            && self.optimizers == o.optimizers
            && self.values == o.values
            && self.max_error.to_bits() == o.max_error.to_bits()
            && self.children == o.children
    }
}

impl Serialize for CriticalRegion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawRegion {
            vertices: self.vertices.clone(),
            optimizers: self.optimizers.clone(),
            values: self.values.clone(),
            max_error: self.max_error,
            children: self.children.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CriticalRegion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawRegion::deserialize(d)?;
        CriticalRegion::new(
            raw.vertices,
            raw.optimizers,
            raw.values,
            raw.max_error,
            raw.children,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// `[[1 … 1], [θ₁ … θ_k]]` using the first `k_c − 1` coordinates of each vertex.
pub fn vertex_matrix(vertices: &[Vec<f64>]) -> DMatrix<f64> {
    let k = vertices.len();
    DMatrix::from_fn(k, k, |i, j| if i == 0 { 1.0 } else { vertices[j][i - 1] })
}

fn lifted(theta: &[f64]) -> DVector<f64> {
    let k = theta.len();
    DVector::from_fn(k, |i, _| if i == 0 { 1.0 } else { theta[i - 1] })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Volume of the simplex in the coordinates `θ₁ … θ_{k−1}`.
pub fn simplex_volume(vertices: &[Vec<f64>]) -> f64 {
    vertex_matrix(vertices).determinant().abs() / factorial(vertices.len() - 1)
}

impl CriticalRegion {
    fn new(
        vertices: Vec<Vec<f64>>,
        optimizers: Vec<Vec<f64>>,
        values: Vec<f64>,
        max_error: f64,
        children: Vec<CriticalRegion>,
    ) -> Result<Self> {
        let k = vertices.len();
        if k < 2
            || vertices.iter().any(|v| v.len() != k)
            || optimizers.len() != k
            || values.len() != k
        {
            return Err(Error::Assembly(
                "region data has inconsistent dimensions".into(),
            ));
        }
        let m = vertex_matrix(&vertices);
        if m.determinant().abs() < 1e-300 {
            return Err(Error::DegenerateSimplex(format!(
                "vertices {vertices:?} are affinely dependent"
            )));
        }
        let lu = m.lu();
        Ok(Self {
            vertices,
            optimizers,
            values,
            max_error,
            children,
            lu,
        })
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn volume(&self) -> f64 {
        simplex_volume(&self.vertices)
    }

    /// Coordinates of `θ` relative to this region's vertices.
    pub fn local_coordinates(&self, theta: &[f64]) -> DVector<f64> {
        self.lu
            .solve(&lifted(theta))
            .expect("factorization of a nonsingular matrix")
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.local_coordinates(theta)
            .iter()
            .all(|&l| l >= -CONTAINMENT_TOL)
    }

    /// `Ṽ(θ)`: interpolated optimal value.
    pub fn interpolated_value(&self, theta: &[f64]) -> f64 {
        let lam = self.local_coordinates(theta);
        self.values.iter().zip(lam.iter()).map(|(v, l)| v * l).sum()
    }

    /// `x̃(θ) = X M⁻¹ [1; θ]`.
    pub fn eval_optimizer(&self, theta: &[f64]) -> Vec<f64> {
        let lam = self.local_coordinates(theta);
        let n = self.optimizers[0].len();
        let mut x = vec![0.0; n];
        for (xi, l) in self.optimizers.iter().zip(lam.iter()) {
            for (acc, v) in x.iter_mut().zip(xi) {
                *acc += l * v;
            }
        }
        x
    }

    pub fn leaves(&self) -> Vec<&CriticalRegion> {
        if self.is_leaf() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Point of the root simplex with local coordinates `lam`.
    pub fn point(&self, lam: &[f64]) -> Vec<f64> {
        let k = self.vertices.len();
        let mut theta = vec![0.0; k];
        for (v, &l) in self.vertices.iter().zip(lam) {
            for (t, x) in theta.iter_mut().zip(v) {
                *t += l * x;
            }
        }
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRegionTree {
    pub version: u32,
    pub root: CriticalRegion,
    #[serde(with = "infinite_as_null")]
    pub epsilon: f64,
    pub k_c: usize,
    pub n_t: usize,
    #[serde(default)]
    pub source_hash: Option<String>,
}

pub(crate) mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Checks `θ` lies in the root simplex.
pub fn check_theta(theta: &[f64], k_c: usize) -> Result<()> {
    if theta.len() != k_c {
        return Err(Error::Domain(format!(
            "θ has {} entries, expected {k_c}",
            theta.len()
        )));
    }
    if theta
        .iter()
        .any(|t| !t.is_finite() || *t < -CONTAINMENT_TOL)
        || (theta.iter().sum::<f64>() - 1.0).abs() > CONTAINMENT_TOL
    {
        return Err(Error::Domain(format!(
            "θ = {theta:?} is outside the parameter simplex"
        )));
    }
    Ok(())
}

impl CriticalRegionTree {
    pub fn leaf_count(&self) -> usize {
        self.root.leaves().len()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Leaf containing `θ`; shared faces resolve to the lowest-index child.
    pub fn locate(&self, theta: &[f64]) -> Result<&CriticalRegion> {
        check_theta(theta, self.k_c)?;
        let mut node = &self.root;
        while !node.is_leaf() {
            let mut best: Option<(&CriticalRegion, f64)> = None;
            let mut found = None;
            for child in &node.children {
                let lam_min = child.local_coordinates(theta).min();
                if lam_min >= -CONTAINMENT_TOL {
                    found = Some(child);
                    break;
                }
                if best.is_none_or(|(_, b)| lam_min > b) {
                    best = Some((child, lam_min));
                }
            }
            node = found.or(best.map(|b| b.0)).expect("non-leaf has children");
        }
        Ok(node)
    }

    /// `x̃(θ)` from the containing leaf.
    pub fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.locate(theta)?.eval_optimizer(theta))
    }

    pub fn approx_value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.locate(theta)?.interpolated_value(theta))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)
            .map_err(|e| Error::Schema(format!("critical region tree: {e}")))?;
        if t.version != TREE_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported tree version {}",
                t.version
            )));
        }
        Ok(t)
    }
}

/// Result of the max-error search inside one region.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxError {
    pub error: f64,
    pub theta: Vec<f64>,
    pub optimizer: Vec<f64>,
    pub value: f64,
}

/// Exact LP at `θ` for a point of `region`, with holes reported as such.
fn solve_point(plp: &ParametricTimeLp, theta: &[f64]) -> Result<LpSolution> {
    match lp::solve(&plp.at(theta)?.lp) {
        Err(Error::LpInfeasible { .. }) => Err(Error::FeasibilityHole {
            theta: theta.to_vec(),
        }),
        r => r,
    }
}

/// Maximizer of `Ṽ − V*` over the region, by Kelley's cutting planes.
///
/// Every solve at `θ_j` yields dual multipliers `λ_j` that stay dual feasible
/// for all `θ` (the equality rows only rescale with `θ`), so
/// `V*(θ) ≥ −b₁(θ)ᵀλ_j` everywhere. The master LP maximizes `Ṽ` minus the
/// best of these lower bounds, which is an upper bound on the error.
/// Iteration stops once that bound meets the best error actually attained.
pub fn max_error(
    region: &CriticalRegion,
    plp: &ParametricTimeLp,
    cfg: &PartitionConfig,
) -> Result<MaxError> {
    let k = region.vertices.len();
    let mut best: Option<MaxError> = None;
    // cut j evaluated at the region vertices: Ṽ(v_i) − lower_j(v_i)
    let mut cuts: Vec<Vec<f64>> = Vec::new();
    let add = |lam: &[f64], best: &mut Option<MaxError>, cuts: &mut Vec<Vec<f64>>| -> Result<f64> {
        let theta = region.point(lam);
        let sol = solve_point(plp, &theta)?;
        let interp: f64 = region.values.iter().zip(lam).map(|(v, l)| v * l).sum();
        let e = interp - sol.objective;
        let slopes: Vec<f64> = plp.b1.iter().map(|b| -b.dot(&sol.ineq_duals)).collect();
        cuts.push(
            region
                .vertices
                .iter()
                .zip(&region.values)
                .map(|(v, val)| val - v.iter().zip(&slopes).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        );
        if best.as_ref().is_none_or(|b| e > b.error) {
            *best = Some(MaxError {
                error: e,
                theta,
                optimizer: sol.x.iter().copied().collect(),
                value: sol.objective,
            });
        }
        Ok(e)
    };
    for i in 0..k {
        let mut lam = vec![0.0; k];
        lam[i] = 1.0;
        add(&lam, &mut best, &mut cuts)?;
    }
    let scale = 1.0 + region.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..cfg.max_cuts {
        let (lam, bound) = master(&cuts)?;
        let b = best.as_ref().expect("vertices evaluated").error;
        if bound - b <= cfg.tolerance * scale {
            break;
        }
        add(&lam, &mut best, &mut cuts)?;
        if cuts.len() == cfg.max_cuts + k {
            // out of cuts: report the certified bound so no region passes unchecked
            let mut m = best.expect("vertices evaluated");
            m.error = m.error.max(master(&cuts)?.1);
            return Ok(m);
        }
    }
    Ok(best.expect("vertices evaluated"))
}

/// `max u` s.t. `u ≤ Σ λ_i cut_j[i]` for every cut, `λ` on the simplex.
fn master(cuts: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let k = cuts[0].len();
    let n = k + 1;
    let mut c = DVector::zeros(n);
    c[k] = -1.0;
    let mut a_ub = DMatrix::zeros(cuts.len() + k, n);
    for (j, cut) in cuts.iter().enumerate() {
        for i in 0..k {
            a_ub[(j, i)] = -cut[i];
        }
        a_ub[(j, k)] = 1.0;
    }
    for i in 0..k {
        a_ub[(cuts.len() + i, i)] = -1.0;
    }
    let b_ub = DVector::zeros(cuts.len() + k);
    let mut a_eq = DMatrix::zeros(1, n);
    a_eq.row_mut(0).columns_mut(0, k).fill(1.0);
    let b_eq = DVector::from_element(1, 1.0);
    let sol = lp::solve(&LinearProgram::new(c, a_ub, b_ub, a_eq, b_eq)?)?;
    let mut lam: Vec<f64> = (0..k).map(|i| sol.x[i].max(0.0)).collect();
    let s: f64 = lam.iter().sum();
    lam.iter_mut().for_each(|v| *v /= s);
    Ok((lam, sol.x[k]))
}

fn refine(
    region: CriticalRegion,
    plp: &ParametricTimeLp,
    epsilon: f64,
    depth: usize,
    cfg: &PartitionConfig,
) -> Result<CriticalRegion> {
    if epsilon.is_infinite() {
        return Ok(region);
    }
    let found = max_error(&region, plp, cfg)?;
    if found.error <= epsilon {
        return Ok(CriticalRegion {
            max_error: found.error,
            ..region
        });
    }
    if depth >= cfg.max_depth {
        return Err(Error::Budget {
            depth,
            worst_error: found.error,
        });
    }
    let k = region.vertices.len();
    let mut children = Vec::new();
    for i in 0..k {
        let mut vertices = region.vertices.clone();
        let mut optimizers = region.optimizers.clone();
        let mut values = region.values.clone();
        vertices[i] = found.theta.clone();
        optimizers[i] = found.optimizer.clone();
        values[i] = found.value;
        if simplex_volume(&vertices) < cfg.min_volume {
            continue;
        }
        children.push(CriticalRegion::new(
            vertices,
            optimizers,
            values,
            0.0,
            Vec::new(),
        )?);
    }
    if children.is_empty() {
        return Err(Error::DegenerateSimplex(format!(
            "no valid split at θ = {:?}",
            found.theta
        )));
    }
    let refined = map_range(cfg.parallelism, children.len(), |i| {
        refine(children[i].clone(), plp, epsilon, depth + 1, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(CriticalRegion {
        max_error: found.error,
        children: refined,
        ..region
    })
}

/// Partitions the parameter simplex until every leaf's interpolation error is at most `ε`.
pub fn partition(
    plp: &ParametricTimeLp,
    epsilon: f64,
    cfg: &PartitionConfig,
) -> Result<CriticalRegionTree> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let k = plp.k_c();
    let vertices: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            e
        })
        .collect();
    let sols = map_range(cfg.parallelism, k, |i| plp.solve_at(&vertices[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let root = CriticalRegion::new(
        vertices,
        sols.iter().map(|s| s.durations.clone()).collect(),
        sols.iter().map(|s| s.total).collect(),
        0.0,
        Vec::new(),
    )?;
    let root = refine(root, plp, epsilon, 0, cfg)?;
    Ok(CriticalRegionTree {
        version: TREE_FORMAT_VERSION,
        root,
        epsilon,
        k_c: k,
        n_t: plp.segment_count(),
        source_hash: plp.source_hash.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::temporal::{assemble_parametric, build_lp, DEFAULT_T_MIN};
    use rand::{Rng, SeedableRng};

    fn seg(a: Vec3, b: Vec3) -> Vec<Vec3> {
        vec![a, b]
    }

    /// V*(θ) = 3·max(θ₁, θ₂): one breakpoint at the midpoint.
    fn kinked() -> ParametricTimeLp {
        let l1 = build_lp(
            &[seg(Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0))],
            Vec3::repeat(1.0),
            DEFAULT_T_MIN,
        )
        .unwrap();
        let l2 = build_lp(
            &[seg(Vec3::zeros(), Vec3::new(0.0, 3.0, 0.0))],
            Vec3::repeat(1.0),
            DEFAULT_T_MIN,
        )
        .unwrap();
        assemble_parametric(&[l1, l2]).unwrap()
    }

    /// Three boundaries with a curved value function over a 2-simplex.
    fn triangle() -> ParametricTimeLp {
        let ends = [
            Vec3::new(4.0, 0.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
            Vec3::new(1.0, 3.0, 2.5),
        ];
        let lps: Vec<_> = ends
            .iter()
            .map(|e| {
                let mid = e * 0.5;
                build_lp(
                    &[seg(Vec3::zeros(), mid), seg(mid, *e)],
                    Vec3::new(1.0, 1.3, 2.0),
                    DEFAULT_T_MIN,
                )
                .unwrap()
            })
            .collect();
        assemble_parametric(&lps).unwrap()
    }

    #[test]
    fn affine_value_gives_single_leaf() {
        let l1 = build_lp(
            &[seg(Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0))],
            Vec3::repeat(1.0),
            DEFAULT_T_MIN,
        )
        .unwrap();
        let l2 = build_lp(
            &[seg(Vec3::new(0.0, 1.0, 0.0), Vec3::new(3.0, 1.0, 0.0))],
            Vec3::repeat(1.0),
            DEFAULT_T_MIN,
        )
        .unwrap();
        let plp = assemble_parametric(&[l1, l2]).unwrap();
        let tree = partition(&plp, 1e-6, &PartitionConfig::default()).unwrap();
        assert_eq!(tree.leaf_count(), 1);
        assert!(tree.root.max_error.abs() < 1e-12);
        let inf = partition(&triangle(), f64::INFINITY, &PartitionConfig::default()).unwrap();
        assert_eq!(inf.leaf_count(), 1);
        let back = CriticalRegionTree::from_json(&inf.to_json()).unwrap();
        assert_eq!(back, inf);
        assert!(back.epsilon.is_infinite());
    }

    #[test]
    fn breakpoint_is_found() {
        let plp = kinked();
        let tree = partition(&plp, f64::INFINITY, &PartitionConfig::default()).unwrap();
        let found = max_error(&tree.root, &plp, &PartitionConfig::default()).unwrap();
        // dense grid oracle
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let e = tree.root.interpolated_value(&[t, 1.0 - t])
                - plp.solve_at(&[t, 1.0 - t]).unwrap().total;
            if e > best {
                best = e;
                arg = t;
            }
        }
        assert!((arg - 0.5).abs() < 1e-12);
        assert!((found.theta[0] - 0.5).abs() < 1e-9, "{:?}", found.theta);
        assert!((found.error - best).abs() < 1e-9);
    }

    /// Simplicial grid of local coordinates with `n` steps per edge.
    fn simplex_grid(k: usize, n: usize) -> Vec<Vec<f64>> {
        fn counts(k: usize, n: usize) -> Vec<Vec<usize>> {
            if k == 1 {
                return vec![vec![n]];
            }
            (0..=n)
                .flat_map(|i| {
                    counts(k - 1, n - i).into_iter().map(move |mut rest| {
                        rest.insert(0, i);
                        rest
                    })
                })
                .collect()
        }
        counts(k, n)
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f64 / n as f64).collect())
            .collect()
    }

    #[test]
    fn max_error_matches_grid_oracle() {
        let plp = triangle();
        let cfg = PartitionConfig::default();
        let root = partition(&plp, f64::INFINITY, &cfg).unwrap().root;
        let found = max_error(&root, &plp, &cfg).unwrap();
        let mut best = f64::NEG_INFINITY;
        let n = 44; // 45·46/2 = 1035 samples
        for lam in simplex_grid(3, n) {
            let theta = root.point(&lam);
            best = best.max(root.interpolated_value(&theta) - plp.solve_at(&theta).unwrap().total);
        }
        assert!(
            found.error >= best - 1e-9,
            "{} vs grid {}",
            found.error,
            best
        );
        assert!(found.error > 0.0);
    }

    #[test]
    fn partition_is_sound_and_tiles() {
        let plp = triangle();
        let cfg = PartitionConfig::default();
        let coarse = partition(&plp, 0.5, &cfg).unwrap();
        let fine = partition(&plp, 0.05, &cfg).unwrap();
        assert!(fine.leaf_count() >= coarse.leaf_count());
        assert!(fine.leaf_count() > 1);
        let vol: f64 = fine.root.leaves().iter().map(|l| l.volume()).sum();
        assert!((vol - 0.5).abs() < 1e-9);
        let seq = partition(
            &plp,
            0.05,
            &PartitionConfig {
                parallelism: Parallelism::Sequential,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(seq, fine);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let leaves = fine.root.leaves();
        for _ in 0..2000 {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let (a, b) = if a + b > 1.0 {
                (1.0 - a, 1.0 - b)
            } else {
                (a, b)
            };
            let theta = [a, b, 1.0 - a - b];
            let leaf = fine.locate(&theta).unwrap();
            assert!(leaf.contains(&theta));
            let first = leaves.iter().position(|l| l.contains(&theta)).unwrap();
            assert!(leaves[first].contains(&theta));
            let exact = plp.solve_at(&theta).unwrap().total;
            let x = fine.eval(&theta).unwrap();
            let gap = x.iter().sum::<f64>() - exact;
            assert!(gap >= -1e-7 && gap <= 0.05 * 1.01, "gap {gap}");
            assert!(
                plp.at(&theta)
                    .unwrap()
                    .lp
                    .max_violation(&DVector::from_vec(x))
                    < 1e-6
            );
        }
        for leaf in &leaves {
            for (i, v) in leaf.vertices.iter().enumerate() {
                let x = leaf.eval_optimizer(v);
                for (a, b) in x.iter().zip(&leaf.optimizers[i]) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        let back = CriticalRegionTree::from_json(&fine.to_json()).unwrap();
        assert_eq!(back, fine);
    }

    #[test]
    fn locate_rejects_points_outside() {
        let tree = partition(&triangle(), 0.5, &PartitionConfig::default()).unwrap();
        assert!(matches!(
            tree.locate(&[0.6, 0.6, -0.2]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(tree.locate(&[0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn depth_cap_reports_budget() {
        let full = partition(&triangle(), 1e-4, &PartitionConfig::default()).unwrap();
        assert!(full.depth() >= 3, "depth {}", full.depth());
        let cfg = PartitionConfig {
            max_depth: 1,
            ..PartitionConfig::default()
        };
        match partition(&triangle(), 1e-4, &cfg) {
            Err(Error::Budget { depth, worst_error }) => {
                assert_eq!(depth, 1);
                assert!(worst_error > 1e-4);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
