#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::{add, dist, dot, norm, scale, sub, Point};

/// Primitive convex shapes with exact distance formulas.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Disc (2D) or ball (3D).
    Ball { center: Point, radius: f64 },
    /// Ball cut by the half space `(x - center) . normal <= offset`.
    ClippedBall { center: Point, radius: f64, normal: Point, offset: f64 },
    /// Planar ellipse with semi-axes `semi` rotated by `angle`.
    Ellipse { center: Point, semi: [f64; 2], angle: f64 },
    /// Planar convex polygon, vertices counter-clockwise.
    Polygon { vertices: Vec<Point> },
}

impl Shape {
    /// Shape translated by `v`.
    pub fn translated(&self, v: &Point) -> Shape {
        match self {
            Shape::Ball { center, radius } => Shape::Ball { center: add(center, v), radius: *radius },
            Shape::ClippedBall { center, radius, normal, offset } => Shape::ClippedBall {
                center: add(center, v),
                radius: *radius,
                normal: *normal,
                offset: *offset,
            },
            Shape::Ellipse { center, semi, angle } => Shape::Ellipse { center: add(center, v), semi: *semi, angle: *angle },
            Shape::Polygon { vertices } => Shape::Polygon { vertices: vertices.iter().map(|p| add(p, v)).collect() },
        }
    }

    /// True for planar-only shapes.
    pub fn planar_only(&self) -> bool {
        matches!(self, Shape::Ellipse { .. } | Shape::Polygon { .. })
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.depth(x) > 0.0
    }

    /// Distance from `x` to the shape (0 inside).
    pub fn distance(&self, x: &Point) -> f64 {
        match self {
            Shape::Ball { center, radius } => (dist(x, center) - radius).max(0.0),
            Shape::ClippedBall { center, radius, normal, offset } => {
                clipped_ball_distance(x, center, *radius, normal, *offset)
            }
            Shape::Ellipse { center, semi, angle } => {
                let p = ellipse_local(x, center, *angle);
                if inside_ellipse(&p, semi) {
                    0.0
                } else {
                    ellipse_boundary_distance(&p, semi)
                }
            }
            Shape::Polygon { vertices } => {
                if polygon_inside(x, vertices) {
                    0.0
                } else {
                    let n = vertices.len();
                    (0..n)
                        .map(|i| segment_distance(x, &vertices[i], &vertices[(i + 1) % n]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    /// Distance from `x` to the complement of the shape (0 outside).
    pub fn depth(&self, x: &Point) -> f64 {
        match self {
            Shape::Ball { center, radius } => (radius - dist(x, center)).max(0.0),
            Shape::ClippedBall { center, radius, normal, offset } => {
                let r = sub(x, center);
                (radius - norm(&r)).min(offset - dot(&r, normal)).max(0.0)
            }
            Shape::Ellipse { center, semi, angle } => {
                let p = ellipse_local(x, center, *angle);
                if inside_ellipse(&p, semi) {
                    ellipse_boundary_distance(&p, semi)
                } else {
                    0.0
                }
            }
            Shape::Polygon { vertices } => {
                if !polygon_inside(x, vertices) {
                    return 0.0;
                }
                let n = vertices.len();
                (0..n)
                    .map(|i| {
                        let (a, b) = (&vertices[i], &vertices[(i + 1) % n]);
                        let e = sub(b, a);
                        let len = norm(&e);
                        // inward normal of a CCW edge is (-e_y, e_x)
                        let w = sub(x, a);
                        (e[0] * w[1] - e[1] * w[0]) / len
                    })
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
            }
        }
    }

    /// Axis-aligned bounding box.
    pub fn bbox(&self) -> (Point, Point) {
        match self {
            Shape::Ball { center, radius } | Shape::ClippedBall { center, radius, .. } => {
                (sub(center, &[*radius; 3]), add(center, &[*radius; 3]))
            }
            Shape::Ellipse { center, semi, .. } => {
                let r = semi[0].max(semi[1]);
                (sub(center, &[r, r, 0.0]), add(center, &[r, r, 0.0]))
            }
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY, f64::INFINITY, 0.0];
                let mut hi = [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0];
                for v in vertices {
                    for i in 0..2 {
                        lo[i] = lo[i].min(v[i]);
                        hi[i] = hi[i].max(v[i]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Roughly `n` boundary points with outward unit normals.
    pub fn boundary_samples(&self, dim: usize, n: usize) -> Vec<(Point, Point)> {
        let n = n.max(4);
        match self {
            Shape::Ball { center, radius } => sphere_dirs(dim, n)
                .into_iter()
                .map(|u| (add(center, &scale(&u, *radius)), u))
                .collect(),
            Shape::ClippedBall { center, radius, normal, offset } => {
                let mut out: Vec<(Point, Point)> = sphere_dirs(dim, n)
                    .into_iter()
                    .filter(|u| dot(u, normal) * radius <= *offset)
                    .map(|u| (add(center, &scale(&u, *radius)), u))
                    .collect();
                // flat face
                let rho = (radius * radius - offset * offset).max(0.0).sqrt();
                let base = add(center, &scale(normal, *offset));
                let t1 = perp(normal, dim);
                if dim == 2 {
                    let m = (n / 4).max(3);
                    for k in 0..=m {
                        let s = -rho + 2.0 * rho * k as f64 / m as f64;
                        out.push((add(&base, &scale(&t1, s)), *normal));
                    }
                } else {
                    let t2 = cross(normal, &t1);
                    let m = (n / 4).max(8);
                    for k in 0..m {
                        let r = rho * ((k as f64 + 0.5) / m as f64).sqrt();
                        let a = k as f64 * PI * (3.0 - 5.0.sqrt());
                        let p = add(&add(&base, &scale(&t1, r * a.cos())), &scale(&t2, r * a.sin()));
                        out.push((p, *normal));
                    }
                }
                out
            }
            Shape::Ellipse { center, semi, angle } => {
                let (c, s) = (angle.cos(), angle.sin());
                (0..n)
                    .map(|k| {
                        let phi = 2.0 * PI * k as f64 / n as f64;
                        let lx = semi[0] * phi.cos();
                        let ly = semi[1] * phi.sin();
                        let gx = lx / (semi[0] * semi[0]);
                        let gy = ly / (semi[1] * semi[1]);
                        let gn = (gx * gx + gy * gy).sqrt();
                        let p = [center[0] + c * lx - s * ly, center[1] + s * lx + c * ly, 0.0];
                        let nn = [(c * gx - s * gy) / gn, (s * gx + c * gy) / gn, 0.0];
                        (p, nn)
                    })
                    .collect()
            }
            Shape::Polygon { vertices } => {
                let m = vertices.len();
                let per: f64 = (0..m).map(|i| dist(&vertices[i], &vertices[(i + 1) % m])).sum();
                let mut out = Vec::new();
                for i in 0..m {
                    let (a, b) = (&vertices[i], &vertices[(i + 1) % m]);
                    let e = sub(b, a);
                    let len = norm(&e);
                    let nrm = [e[1] / len, -e[0] / len, 0.0];
                    let k = ((n as f64 * len / per).ceil() as usize).max(1);
                    for j in 0..k {
                        let s = j as f64 / k as f64;
                        let p = crate::math::lerp(a, b, s);
                        let nn = if j == 0 {
                            let pe = sub(a, &vertices[(i + m - 1) % m]);
                            let pl = norm(&pe);
                            let pn = [pe[1] / pl, -pe[0] / pl, 0.0];
                            let s2 = add(&nrm, &pn);
                            scale(&s2, 1.0 / norm(&s2))
                        } else {
                            nrm
                        };
                        out.push((p, nn));
                    }
                }
                out
            }
        }
    }
}

/// Unit vector orthogonal to `n`.
pub(crate) fn perp(n: &Point, dim: usize) -> Point {
    if dim == 2 {
        return [-n[1], n[0], 0.0];
    }
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let c = cross(n, &a);
    scale(&c, 1.0 / norm(&c))
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Evenly spread unit directions (circle or Fibonacci sphere).
pub(crate) fn sphere_dirs(dim: usize, n: usize) -> Vec<Point> {
    if dim == 2 {
        (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                [a.cos(), a.sin(), 0.0]
            })
            .collect()
    } else {
        let ga = PI * (3.0 - 5.0.sqrt());
        (0..n)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let a = ga * k as f64;
                [r * a.cos(), r * a.sin(), z]
            })
            .collect()
    }
}

fn clipped_ball_distance(x: &Point, c: &Point, r: f64, n: &Point, s: f64) -> f64 {
    let v = sub(x, c);
    let vn = dot(&v, n);
    let vr = norm(&v);
    if vr < r && vn < s {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    // sphere part
    if vr > 0.0 {
        let p = scale(&v, r / vr);
        if dot(&p, n) <= s {
            best = best.min((vr - r).abs());
        }
    }
    // flat part
    let q = sub(&v, &scale(n, vn - s));
    if norm(&q) <= r {
        best = best.min((vn - s).abs());
    }
    // rim
    let rho = (r * r - s * s).max(0.0).sqrt();
    let tang = sub(&v, &scale(n, vn));
    let tl = norm(&tang);
    let dir = if tl > 1e-300 { scale(&tang, 1.0 / tl) } else { perp(n, 3) };
    let rim = add(&scale(n, s), &scale(&dir, rho));
    best = best.min(dist(&v, &rim));
    best
}

fn ellipse_local(x: &Point, c: &Point, angle: f64) -> Point {
    let d = sub(x, c);
    let (cs, sn) = (angle.cos(), angle.sin());
    [cs * d[0] + sn * d[1], -sn * d[0] + cs * d[1], 0.0]
}

fn inside_ellipse(p: &Point, semi: &[f64; 2]) -> bool {
    (p[0] / semi[0]).powi(2) + (p[1] / semi[1]).powi(2) < 1.0
}

/// Distance from a point (ellipse frame) to the ellipse curve.
fn ellipse_boundary_distance(p: &Point, semi: &[f64; 2]) -> f64 {
    // reduce to the first quadrant with e0 >= e1
    let (mut e0, mut e1) = (semi[0], semi[1]);
    let (mut y0, mut y1) = (p[0].abs(), p[1].abs());
    if e1 > e0 {
        core::mem::swap(&mut e0, &mut e1);
        core::mem::swap(&mut y0, &mut y1);
    }
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1) * (e0 / e1);
                let sbar = bisect_root(r0, z0, z1, g);
                let x0 = r0 * y0 / (sbar + r0);
                let x1 = y1 / (sbar + 1.0);
                return ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt();
            }
            return 0.0;
        }
        return (y1 - e1).abs();
    }
    let numer0 = e0 * y0;
    let denom0 = e0 * e0 - e1 * e1;
    if numer0 < denom0 {
        let xde0 = numer0 / denom0;
        let x0 = e0 * xde0;
        let x1 = e1 * (1.0 - xde0 * xde0).max(0.0).sqrt();
        ((x0 - y0).powi(2) + x1 * x1).sqrt()
    } else {
        (y0 - e0).abs()
    }
}

fn bisect_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { (n0 * n0 + z1 * z1).sqrt() - 1.0 };
    let mut s = 0.0;
    for _ in 0..200 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let gs = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if gs > 0.0 {
            s0 = s;
        } else if gs < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

fn polygon_inside(x: &Point, v: &[Point]) -> bool {
    let n = v.len();
    (0..n).all(|i| {
        let (a, b) = (&v[i], &v[(i + 1) % n]);
        (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]) > 0.0
    })
}

fn segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    let e = sub(b, a);
    let w = sub(x, a);
    let t = (dot(&w, &e) / dot(&e, &e)).clamp(0.0, 1.0);
    dist(x, &add(a, &scale(&e, t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_distance_matches_brute_force() {
        let sh = Shape::Ellipse { center: [0.5, 0.5, 0.0], semi: [0.3, 0.1], angle: 0.4 };
        let pts: Vec<Point> = (0..20000)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 20000.0;
                let (lx, ly) = (0.3 * a.cos(), 0.1 * a.sin());
                let (c, s) = (0.4f64.cos(), 0.4f64.sin());
                [0.5 + c * lx - s * ly, 0.5 + s * lx + c * ly, 0.0]
            })
            .collect();
        for &x in &[[0.9, 0.5, 0.0], [0.5, 0.55, 0.0], [0.2, 0.8, 0.0], [0.6, 0.52, 0.0]] {
            let brute = pts.iter().map(|p| dist(p, &x)).fold(f64::INFINITY, f64::min);
            let exact = if sh.contains(&x) { sh.depth(&x) } else { sh.distance(&x) };
            assert!((brute - exact).abs() < 2e-4, "{x:?}: {brute} vs {exact}");
        }
    }

    #[test]
    fn clipped_ball_distance_matches_brute_force() {
        let sh = Shape::ClippedBall { center: [0.0; 3], radius: 1.0, normal: [1.0, 0.0, 0.0], offset: 0.3 };
        let mut pts = Vec::new();
        for k in 0..4000 {
            let a = 2.0 * PI * k as f64 / 4000.0;
            let p = [a.cos(), a.sin(), 0.0];
            if p[0] <= 0.3 {
                pts.push(p);
            }
        }
        let h = (1.0f64 - 0.09).sqrt();
        for k in 0..=2000 {
            pts.push([0.3, -h + 2.0 * h * k as f64 / 2000.0, 0.0]);
        }
        for &x in &[[2.0, 0.0, 0.0], [0.8, 1.2, 0.0], [0.0, 2.0, 0.0], [-1.5, -0.5, 0.0], [0.5, 0.1, 0.0]] {
            let brute = pts.iter().map(|p| dist(p, &x)).fold(f64::INFINITY, f64::min);
            assert!((brute - sh.distance(&x)).abs() < 2e-3, "{x:?}");
        }
        assert!((sh.depth(&[0.2, 0.0, 0.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn polygon_distances() {
        let sq = Shape::Polygon { vertices: alloc::vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]] };
        assert!((sq.distance(&[2.0, 2.0, 0.0]) - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((sq.depth(&[0.25, 0.5, 0.0]) - 0.25).abs() < 1e-12);
        assert_eq!(sq.distance(&[0.5, 0.5, 0.0]), 0.0);
    }
}
