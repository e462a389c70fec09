//! Bézier segments and piecewise Bézier trajectories.
//!
//! A segment of degree `p` is defined on the local time interval `[0, Δt]`
//! and evaluated with the Bernstein basis in normalized time `s = t / Δt`.
//! A matrix (power basis) form is also provided; the two agree to rounding.

use nalgebra::{DMatrix, DVector, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point<const D: usize> = SVector<f64, D>;

/// Binomial coefficient as a float; exact for the small degrees used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `B_{p,k}(s)` in normalized time.
pub fn bernstein(p: usize, k: usize, s: f64) -> f64 {
    binomial(p, k) * s.powi(k as i32) * (1.0 - s).powi((p - k) as i32)
}

/// Power-basis matrices for the matrix form `h(t) = β(t) S_Δt M Pᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    /// Bernstein-to-power change of basis, row `i` holds the coefficients of `s^i`.
    pub coefficients: DMatrix<f64>,
    /// `diag(1, 1/Δt, …, 1/Δt^p)`.
    pub scaling: DMatrix<f64>,
}

impl BasisMatrices {
    pub fn new(degree: usize, duration: f64) -> Self {
        Self {
            coefficients: bernstein_to_power(degree),
            scaling: duration_scaling(degree, duration),
        }
    }
}

/// Entry `(i, j)` is `(-1)^(i-j) C(p,i) C(i,j)` for `j <= i`.
pub fn bernstein_to_power(degree: usize) -> DMatrix<f64> {
    let n = degree + 1;
    DMatrix::from_fn(n, n, |i, j| {
        if j > i {
            0.0
        } else {
            let sign = if (i - j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(degree, i) * binomial(i, j)
        }
    })
}

pub fn duration_scaling(degree: usize, duration: f64) -> DMatrix<f64> {
    DMatrix::from_fn(degree + 1, degree + 1, |i, j| {
        if i == j {
            duration.powi(-(i as i32))
        } else {
            0.0
        }
    })
}

/// A single Bézier segment in `R^D` with its duration in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierSegment<const D: usize> {
    control_points: Vec<Point<D>>,
    duration: f64,
}

impl<const D: usize> BezierSegment<D> {
    /// Builds a segment. A single control point gives a constant (degree 0)
    /// segment, which is what differentiating a linear segment produces.
    pub fn new(control_points: Vec<Point<D>>, duration: f64) -> Result<Self> {
        if control_points.is_empty() {
            return Err(Error::Config(
                "segment needs at least one control point".into(),
            ));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Domain(format!(
                "segment duration must be positive, got {duration}"
            )));
        }
        if control_points
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Domain("non-finite control point".into()));
        }
        Ok(Self {
            control_points,
            duration,
        })
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn control_points(&self) -> &[Point<D>] {
        &self.control_points
    }

    pub fn start(&self) -> Point<D> {
        self.control_points[0]
    }

    pub fn end(&self) -> Point<D> {
        self.control_points[self.degree()]
    }

    /// Evaluates the curve at local time `t ∈ [0, Δt]`.
    pub fn eval(&self, t: f64) -> Result<Point<D>> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside segment domain [0, {}]",
                self.duration
            )));
        }
        Ok(self.eval_normalized(t / self.duration))
    }

    /// Bernstein-sum evaluation at normalized time `s ∈ [0, 1]`.
    pub fn eval_normalized(&self, s: f64) -> Point<D> {
        let p = self.degree();
        self.control_points
            .iter()
            .enumerate()
            .fold(Point::<D>::zeros(), |acc, (k, cp)| {
                acc + cp * bernstein(p, k, s)
            })
    }

    /// Evaluation through the power-basis matrix form.
    pub fn eval_matrix(&self, t: f64) -> Result<Point<D>> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside segment domain")));
        }
        let p = self.degree();
        let basis = BasisMatrices::new(p, self.duration);
        let beta = DVector::from_fn(p + 1, |i, _| t.powi(i as i32));
        let weights = (beta.transpose() * &basis.scaling * &basis.coefficients).transpose();
        Ok(self
            .control_points
            .iter()
            .zip(weights.iter())
            .fold(Point::<D>::zeros(), |acc, (cp, w)| acc + cp * *w))
    }

    /// Hodograph: degree `p-1` with `q_k = p/Δt (p_{k+1} - p_k)`.
    pub fn derivative(&self) -> Self {
        let p = self.degree();
        if p == 0 {
            return Self {
                control_points: vec![Point::<D>::zeros()],
                duration: self.duration,
            };
        }
        let scale = p as f64 / self.duration;
        let control_points = self
            .control_points
            .windows(2)
            .map(|w| (w[1] - w[0]) * scale)
            .collect();
        Self {
            control_points,
            duration: self.duration,
        }
    }

    pub fn nth_derivative(&self, order: usize) -> Self {
        (0..order).fold(self.clone(), |seg, _| seg.derivative())
    }

    /// True iff every control point lies in the closed ball `(center, radius)`.
    pub fn hull_membership(&self, center: &Point<D>, radius: f64) -> bool {
        self.control_points
            .iter()
            .all(|p| (p - center).norm() <= radius)
    }

    /// Same segment with a new duration; control points are unchanged.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.control_points.clone(), duration)
    }
}

/// Concatenation of same-degree segments, evaluated in global time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<BezierSegment<D>>", try_from = "Vec<BezierSegment<D>>")]
pub struct PiecewiseBezier<const D: usize> {
    segments: Vec<BezierSegment<D>>,
    /// Global start time of each segment plus the total time at the end.
    knots: Vec<f64>,
}

impl<const D: usize> From<PiecewiseBezier<D>> for Vec<BezierSegment<D>> {
    fn from(t: PiecewiseBezier<D>) -> Self {
        t.segments
    }
}

impl<const D: usize> TryFrom<Vec<BezierSegment<D>>> for PiecewiseBezier<D> {
    type Error = Error;
    fn try_from(segments: Vec<BezierSegment<D>>) -> Result<Self> {
        Self::new(segments)
    }
}

impl<const D: usize> PiecewiseBezier<D> {
    pub fn new(segments: Vec<BezierSegment<D>>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Config("trajectory needs at least one segment".into()))?;
        let degree = first.degree();
        if segments.iter().any(|s| s.degree() != degree) {
            return Err(Error::Config("all segments must share one degree".into()));
        }
        let knots = Self::knots_of(&segments);
        Ok(Self { segments, knots })
    }

    fn knots_of(segments: &[BezierSegment<D>]) -> Vec<f64> {
        let mut knots = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        knots.push(acc);
        for s in segments {
            acc += s.duration;
            knots.push(acc);
        }
        knots
    }

    pub fn segments(&self) -> &[BezierSegment<D>] {
        &self.segments
    }

    pub fn degree(&self) -> usize {
        self.segments[0].degree()
    }

    pub fn total_time(&self) -> f64 {
        self.knots[self.segments.len()]
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    /// Global start time of every segment.
    pub fn segment_starts(&self) -> &[f64] {
        &self.knots[..self.segments.len()]
    }

    pub fn start(&self) -> Point<D> {
        self.segments[0].start()
    }

    pub fn end(&self) -> Point<D> {
        self.segments[self.segments.len() - 1].end()
    }

    /// Segment index and local time for global time `t`. Joints resolve to
    /// the later segment; `t = T` resolves to the last one.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_time();
        if !(0.0..=total).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside trajectory domain [0, {total}]"
            )));
        }
        let n = self.segments.len();
        // Largest m with knots[m] <= t, capped at the last segment.
        let m = match self.knots[..n].binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let local = (t - self.knots[m]).clamp(0.0, self.segments[m].duration);
        Ok((m, local))
    }

    /// `order`-th derivative at global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<Point<D>> {
        let (m, local) = self.locate(t)?;
        let seg = &self.segments[m];
        let s = local / seg.duration;
        if order == 0 {
            Ok(seg.eval_normalized(s))
        } else {
            Ok(seg.nth_derivative(order).eval_normalized(s))
        }
    }

    /// Piecewise hodograph of the whole trajectory.
    pub fn derivative(&self) -> Self {
        let segments: Vec<_> = self.segments.iter().map(|s| s.derivative()).collect();
        let knots = Self::knots_of(&segments);
        Self { segments, knots }
    }

    /// Same control points with new segment durations.
    pub fn retimed(&self, durations: &[f64]) -> Result<Self> {
        if durations.len() != self.segments.len() {
            return Err(Error::Assembly(format!(
                "{} durations for {} segments",
                durations.len(),
                self.segments.len()
            )));
        }
        let segments = self
            .segments
            .iter()
            .zip(durations)
            .map(|(s, &dt)| s.with_duration(dt))
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments)
    }

    /// Largest jump of the `order`-th derivative across interior joints.
    pub fn continuity_defect(&self, order: usize) -> f64 {
        let derived: Vec<_> = self
            .segments
            .iter()
            .map(|s| s.nth_derivative(order))
            .collect();
        derived
            .windows(2)
            .map(|w| (w[0].eval_normalized(1.0) - w[1].eval_normalized(0.0)).norm())
            .fold(0.0, f64::max)
    }
}
