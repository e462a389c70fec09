//! World description: obstacles, bounds, and the terminal regions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (p - self.center).norm() <= self.radius + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Signed distance: positive outside, negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let outside = Vec3::from_fn(|i, _| (self.min[i] - p[i]).max(p[i] - self.max[i]).max(0.0));
        let n = outside.norm();
        if n > 0.0 {
            n
        } else {
            -(0..3)
                .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
                .fold(f64::INFINITY, f64::min)
        }
    }

    /// Distance from an interior point to the nearest face; negative outside.
    pub fn interior_clearance(&self, p: &Vec3) -> f64 {
        -self.signed_distance(p)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    fn of_points(points: &[Vec3]) -> Self {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Self { min, max }
    }

    fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Shape {
    /// Signed distance from `p` to the shape surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { min, max } => Aabb::new(*min, *max).signed_distance(p),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(flatten)]
    pub shape: Shape,
    /// Unknown obstacles are only discovered by sensing during replanning.
    #[serde(default = "default_true")]
    pub known: bool,
}

impl Obstacle {
    pub fn known(shape: Shape) -> Self {
        Self { shape, known: true }
    }

    pub fn unknown(shape: Shape) -> Self {
        Self {
            shape,
            known: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMap {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl ObstacleMap {
    pub fn new(bounds: Aabb, obstacles: Vec<Obstacle>) -> Self {
        Self { bounds, obstacles }
    }

    /// Distance to the nearest known obstacle or world face, whichever is closer.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .filter(|o| o.known)
            .map(|o| o.shape.distance(p))
            .fold(self.bounds.interior_clearance(p), f64::min)
    }

    /// Distance to the nearest obstacle of any kind; world faces excluded.
    pub fn obstacle_distance(&self, p: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.shape.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Copy in which every obstacle is treated as known.
    pub fn revealed(&self) -> Self {
        let mut m = self.clone();
        m.obstacles.iter_mut().for_each(|o| o.known = true);
        m
    }
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Matrix3<f64>,
    pub offset: Vec3,
}

impl AffineMap {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.matrix * p + self.offset
    }

    pub fn translation(offset: Vec3) -> Self {
        Self {
            matrix: Matrix3::identity(),
            offset,
        }
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64
}

/// Start region, goal region, and the pairing map between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminals {
    pub start: Vec<Vec3>,
    pub goal: Vec<Vec3>,
    pub map: AffineMap,
}

impl Terminals {
    /// Derives the pairing map from the vertex correspondence `start[i] ↦ goal[i]`.
    /// Directions not spanned by the start vertices map identically.
    pub fn new(start: Vec<Vec3>, goal: Vec<Vec3>) -> Result<Self> {
        Self::check_counts(&start, &goal)?;
        let c0 = centroid(&start);
        let c1 = centroid(&goal);
        let x0 =
            nalgebra::Matrix3xX::from_columns(&start.iter().map(|p| p - c0).collect::<Vec<_>>());
        let x1 =
            nalgebra::Matrix3xX::from_columns(&goal.iter().map(|p| p - c1).collect::<Vec<_>>());
        let pinv = x0
            .clone()
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Config(format!("terminal map: {e}")))?;
        let projector = &x0 * &pinv;
        let matrix = &x1 * &pinv + (Matrix3::identity() - projector);
        let map = AffineMap {
            matrix,
            offset: c1 - matrix * c0,
        };
        Self::with_map(start, goal, map)
    }

    pub fn with_map(start: Vec<Vec3>, goal: Vec<Vec3>, map: AffineMap) -> Result<Self> {
        Self::check_counts(&start, &goal)?;
        if map.matrix.determinant().abs() < 1e-9 {
            return Err(Error::Config("terminal map is not invertible".into()));
        }
        let scale = start
            .iter()
            .chain(&goal)
            .map(|p| p.norm())
            .fold(1.0, f64::max);
        for (i, (s, g)) in start.iter().zip(&goal).enumerate() {
            if (map.apply(s) - g).norm() > 1e-9 * scale {
                return Err(Error::Config(format!(
                    "goal vertex {i} is not the image of start vertex {i} under the terminal map"
                )));
            }
        }
        let t = Self { start, goal, map };
        if !t.disjoint() {
            return Err(Error::Config("start and goal regions overlap".into()));
        }
        Ok(t)
    }

    fn check_counts(start: &[Vec3], goal: &[Vec3]) -> Result<()> {
        if start.is_empty() || start.len() != goal.len() {
            return Err(Error::Config(format!(
                "start/goal vertex counts must match and be nonzero ({} vs {})",
                start.len(),
                goal.len()
            )));
        }
        Ok(())
    }

    /// Conservative disjointness: bounding boxes or a separating plane along
    /// the centroid direction.
    fn disjoint(&self) -> bool {
        if !Aabb::of_points(&self.start).overlaps(&Aabb::of_points(&self.goal)) {
            return true;
        }
        let axis = centroid(&self.goal) - centroid(&self.start);
        if axis.norm() == 0.0 {
            return false;
        }
        let hi0 = self
            .start
            .iter()
            .map(|p| p.dot(&axis))
            .fold(f64::NEG_INFINITY, f64::max);
        let lo1 = self
            .goal
            .iter()
            .map(|p| p.dot(&axis))
            .fold(f64::INFINITY, f64::min);
        hi0 < lo1
    }

    pub fn start_centroid(&self) -> Vec3 {
        centroid(&self.start)
    }

    pub fn goal_centroid(&self) -> Vec3 {
        centroid(&self.goal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(offset: Vec3) -> Vec<Vec3> {
        vec![
            offset + Vec3::new(0.0, -1.0, 0.0),
            offset + Vec3::new(0.0, 1.0, 0.0),
            offset + Vec3::new(0.0, 0.0, 1.5),
        ]
    }

    #[test]
    fn translation_map_is_recovered() {
        let t = Terminals::new(tri(Vec3::zeros()), tri(Vec3::new(10.0, 0.0, 0.0))).unwrap();
        assert!((t.map.matrix - Matrix3::identity()).norm() < 1e-12);
        assert!((t.map.offset - Vec3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn overlapping_terminals_rejected() {
        assert!(matches!(
            Terminals::new(tri(Vec3::zeros()), tri(Vec3::new(0.0, 0.5, 0.0))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mismatched_counts_rejected() {
        let mut g = tri(Vec3::new(5.0, 0.0, 0.0));
        g.pop();
        assert!(Terminals::new(tri(Vec3::zeros()), g).is_err());
    }

    #[test]
    fn box_signed_distance() {
        let b = Aabb::new(Vec3::zeros(), Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(b.signed_distance(&Vec3::new(1.0, 1.0, 1.0)), -1.0);
        assert_eq!(b.signed_distance(&Vec3::new(5.0, 1.0, 1.0)), 3.0);
        assert!((b.signed_distance(&Vec3::new(3.0, 3.0, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
    }
}
