//! The body, the moving inclusion, probing curves and numerical checks of
//! the geometric hypotheses.

mod curve;
mod shape;
mod validate;

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

pub use curve::{build_curve_family, curve_profile, DistanceProfile, FamilyOptions, ProbeCurve};
pub use shape::Shape;
pub use validate::{validate_inclusion, vitali_cover, GeometryGrid, GeometryReport};

use crate::math::{lerp, Point};
use crate::{Error, Result};

/// The body: an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

/// A planar face of the box boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    pub axis: usize,
    pub normal: Point,
    pub offset: f64,
}

impl Domain {
    pub fn new(dim: usize, lo: Point, hi: Point) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Invalid(format!("dimension {dim} not supported")));
        }
        if (0..dim).any(|i| hi[i] <= lo[i]) {
            return Err(Error::Invalid("degenerate domain".into()));
        }
        let (mut lo, mut hi) = (lo, hi);
        if dim == 2 {
            lo[2] = 0.0;
            hi[2] = 0.0;
        }
        Ok(Domain { dim, lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        let mut hi = [1.0; 3];
        if dim == 2 {
            hi[2] = 0.0;
        }
        Domain { dim, lo: [0.0; 3], hi }
    }

    pub fn vertices(&self) -> Vec<Point> {
        let k = 1usize << self.dim;
        (0..k)
            .map(|m| {
                let mut p = [0.0; 3];
                for i in 0..self.dim {
                    p[i] = if m >> i & 1 == 0 { self.lo[i] } else { self.hi[i] };
                }
                p
            })
            .collect()
    }

    pub fn facets(&self) -> Vec<Facet> {
        let mut f = Vec::new();
        for axis in 0..self.dim {
            let mut n = [0.0; 3];
            n[axis] = -1.0;
            f.push(Facet { axis, normal: n, offset: -self.lo[axis] });
            n[axis] = 1.0;
            f.push(Facet { axis, normal: n, offset: self.hi[axis] });
        }
        f
    }

    /// Largest pairwise vertex distance.
    pub fn diameter(&self) -> f64 {
        let v = self.vertices();
        let mut d: f64 = 0.0;
        for a in &v {
            for b in &v {
                d = d.max(crate::math::dist(a, b));
            }
        }
        d
    }

    pub fn contains_closed(&self, x: &Point, tol: f64) -> bool {
        (0..self.dim).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    /// Distance from an interior point to the boundary (0 outside).
    pub fn depth(&self, x: &Point) -> f64 {
        (0..self.dim)
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    /// Distance from an exterior point to the box (0 inside).
    pub fn outside_distance(&self, x: &Point) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let e = (self.lo[i] - x[i]).max(x[i] - self.hi[i]).max(0.0);
            s += e * e;
        }
        s.sqrt()
    }
}

/// Piecewise-linear displacement `t -> v(t)`, constant outside the keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPath {
    pub keys: Vec<(f64, Point)>,
}

impl MotionPath {
    pub fn stationary() -> Self {
        MotionPath { keys: alloc::vec![(0.0, [0.0; 3])] }
    }

    /// Constant velocity starting at time 0.
    pub fn linear(velocity: Point, t_final: f64) -> Self {
        MotionPath { keys: alloc::vec![(0.0, [0.0; 3]), (t_final, crate::math::scale(&velocity, t_final))] }
    }

    pub fn displacement(&self, t: f64) -> Point {
        let k = &self.keys;
        if k.is_empty() {
            return [0.0; 3];
        }
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            if t <= w[1].0 {
                let s = (t - w[0].0) / (w[1].0 - w[0].0);
                return lerp(&w[0].1, &w[1].1, s);
            }
        }
        k[k.len() - 1].1
    }

    /// Largest keyframe speed.
    pub fn max_speed(&self) -> f64 {
        self.keys
            .windows(2)
            .map(|w| crate::math::dist(&w[0].1, &w[1].1) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }
}

/// A primitive with its motion and the window where it exists.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingShape {
    pub shape: Shape,
    pub path: MotionPath,
    /// The shape exists for `active.0 <= t <= active.1`.
    pub active: (f64, f64),
}

impl MovingShape {
    pub fn stationary(shape: Shape) -> Self {
        MovingShape { shape, path: MotionPath::stationary(), active: (f64::NEG_INFINITY, f64::INFINITY) }
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active.0 && t <= self.active.1
    }

    pub fn at(&self, t: f64) -> Shape {
        self.shape.translated(&self.path.displacement(t))
    }
}

/// `D = union of D_t x {t}`, a finite union of moving primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingInclusion {
    pub dim: usize,
    pub t_final: f64,
    pub shapes: Vec<MovingShape>,
}

impl MovingInclusion {
    pub fn new(dim: usize, t_final: f64, shapes: Vec<MovingShape>) -> Result<Self> {
        if dim == 3 && shapes.iter().any(|s| s.shape.planar_only()) {
            return Err(Error::Invalid("ellipses and polygons are planar shapes".into()));
        }
        Ok(MovingInclusion { dim, t_final, shapes })
    }

    pub fn empty(dim: usize, t_final: f64) -> Self {
        MovingInclusion { dim, t_final, shapes: Vec::new() }
    }

    pub fn stationary(dim: usize, t_final: f64, shapes: Vec<Shape>) -> Result<Self> {
        Self::new(dim, t_final, shapes.into_iter().map(MovingShape::stationary).collect())
    }

    /// Shapes making up `D_t`.
    pub fn shapes_at(&self, t: f64) -> Vec<Shape> {
        self.shapes.iter().filter(|s| s.is_active(t)).map(|s| s.at(t)).collect()
    }

    pub fn is_empty_at(&self, t: f64) -> bool {
        !self.shapes.iter().any(|s| s.is_active(t))
    }

    pub fn contains(&self, x: &Point, t: f64) -> bool {
        self.shapes.iter().any(|s| s.is_active(t) && s.at(t).contains(x))
    }

    /// `(d(x, D_t), d(x, complement of D_t))` without domain checks.
    pub fn distances(&self, x: &Point, t: f64) -> (f64, f64) {
        let mut d_in = f64::INFINITY;
        let mut d_out: f64 = 0.0;
        for s in self.shapes.iter().filter(|s| s.is_active(t)) {
            let sh = s.at(t);
            d_in = d_in.min(sh.distance(x));
            d_out = d_out.max(sh.depth(x));
        }
        (d_in, d_out)
    }

    /// Maximal subintervals of `[0, T]` on which `D_t` is empty.
    pub fn empty_intervals(&self) -> Vec<(f64, f64)> {
        let mut cuts: Vec<f64> = alloc::vec![0.0, self.t_final];
        for s in &self.shapes {
            for v in [s.active.0, s.active.1] {
                if v > 0.0 && v < self.t_final {
                    cuts.push(v);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut out: Vec<(f64, f64)> = Vec::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if self.is_empty_at(mid) {
                match out.last_mut() {
                    Some(last) if last.1 == w[0] => last.1 = w[1],
                    _ => out.push((w[0], w[1])),
                }
            }
        }
        if self.shapes.is_empty() && out.is_empty() {
            out.push((0.0, self.t_final));
        }
        out
    }

    /// Max keyframe speed over all primitives.
    pub fn max_speed(&self) -> f64 {
        self.shapes.iter().map(|s| s.path.max_speed()).fold(0.0, f64::max)
    }

    /// Outward-normal boundary samples of `D_t` (points of one primitive
    /// covered by another are dropped).
    pub fn boundary_samples(&self, t: f64, per_shape: usize) -> Vec<(Point, Point)> {
        let shapes = self.shapes_at(t);
        let mut out = Vec::new();
        for (i, s) in shapes.iter().enumerate() {
            for (p, n) in s.boundary_samples(self.dim, per_shape) {
                if !shapes.iter().enumerate().any(|(j, o)| j != i && o.contains(&p)) {
                    out.push((p, n));
                }
            }
        }
        out
    }

    /// Bounding box of `D_t`.
    pub fn bbox_at(&self, t: f64) -> Option<(Point, Point)> {
        let shapes = self.shapes_at(t);
        if shapes.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in &shapes {
            let (a, b) = s.bbox();
            for i in 0..3 {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(b[i]);
            }
        }
        if self.dim == 2 {
            lo[2] = 0.0;
            hi[2] = 0.0;
        }
        Some((lo, hi))
    }
}

/// `(d_in, d_out) = (d(x, D_t), d(x, Omega \ D_t))`, with `d_in = +inf` when
/// `D_t` is empty.
pub fn inclusion_distance(x: &Point, t: f64, incl: &MovingInclusion, dom: &Domain) -> Result<(f64, f64)> {
    if !dom.contains_closed(x, 1e-12) {
        return Err(Error::Domain(format!("point {x:?} lies outside the closed body")));
    }
    if !(-1e-12..=incl.t_final + 1e-12).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, T]")));
    }
    Ok(incl.distances(x, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(c: [f64; 2], r: f64) -> Shape {
        Shape::Ball { center: [c[0], c[1], 0.0], radius: r }
    }

    #[test]
    fn disc_center_and_exterior_point() {
        let dom = Domain::new(2, [-3.0, -3.0, 0.0], [3.0, 3.0, 0.0]).unwrap();
        let inc = MovingInclusion::stationary(2, 1.0, alloc::vec![disc([0.0, 0.0], 1.0)]).unwrap();
        assert_eq!(inclusion_distance(&[0.0; 3], 0.5, &inc, &dom).unwrap(), (0.0, 1.0));
        assert_eq!(inclusion_distance(&[2.0, 0.0, 0.0], 0.5, &inc, &dom).unwrap(), (1.0, 0.0));
        assert!(inclusion_distance(&[4.0, 0.0, 0.0], 0.5, &inc, &dom).is_err());
    }

    #[test]
    fn empty_inclusion_has_infinite_distance() {
        let dom = Domain::unit(2);
        let inc = MovingInclusion::empty(2, 1.0);
        let (a, b) = inclusion_distance(&[0.5, 0.5, 0.0], 0.3, &inc, &dom).unwrap();
        assert!(a.is_infinite() && b == 0.0);
        assert_eq!(inc.empty_intervals(), alloc::vec![(0.0, 1.0)]);
    }

    #[test]
    fn vanishing_windows_are_reported() {
        let mut s = MovingShape::stationary(disc([0.5, 0.5], 0.1));
        s.active = (0.25, 0.75);
        let inc = MovingInclusion::new(2, 1.0, alloc::vec![s]).unwrap();
        assert_eq!(inc.empty_intervals(), alloc::vec![(0.0, 0.25), (0.75, 1.0)]);
    }

    #[test]
    fn domain_diameter() {
        assert!((Domain::unit(3).diameter() - 3.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(Domain::unit(2).vertices().len(), 4);
    }
}
