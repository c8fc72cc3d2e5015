//! 3D primitives and predicates: points, axis-aligned boxes, line segments.
//!
//! All coordinates are micrometers carried as plain `f64`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polyline must contain at least two points")]
    PolylineTooShort,
}

/// A point or direction in 3D space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction, or +x for a zero vector.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_component(mut self, axis: usize, v: f64) -> Vec3 {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Closed axis-aligned box; `min <= max` component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    /// Cube of the given edge length centered at `center`.
    pub fn cube(center: Vec3, edge: f64) -> Self {
        let h = edge / 2.0;
        Aabb::new(center - Vec3::new(h, h, h), center + Vec3::new(h, h, h))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && self.max.x >= other.min.x
            && self.min.y <= other.max.y
            && self.max.y >= other.min.y
            && self.min.z <= other.max.z
            && self.max.z >= other.min.z
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(
            Vec3::new(
                self.min.x.min(other.min.x),
                self.min.y.min(other.min.y),
                self.min.z.min(other.min.z),
            ),
            Vec3::new(
                self.max.x.max(other.max.x),
                self.max.y.max(other.max.y),
                self.max.z.max(other.max.z),
            ),
        )
    }

    pub fn inflate(&self, margin: f64) -> Aabb {
        let m = Vec3::new(margin, margin, margin);
        Aabb::new(self.min - m, self.max + m)
    }

    /// Euclidean gap between two boxes; 0 when they touch or overlap.
    pub fn gap_distance(&self, other: &Aabb) -> f64 {
        let mut s = 0.0;
        for axis in 0..3 {
            let a_min = self.min.component(axis);
            let a_max = self.max.component(axis);
            let b_min = other.min.component(axis);
            let b_max = other.max.component(axis);
            let d = (b_min - a_max).max(a_min - b_max).max(0.0);
            s += d * d;
        }
        f64::sqrt(s)
    }

    /// Distance from a point to the box; 0 inside.
    pub fn distance_to_point(&self, p: Vec3) -> f64 {
        let mut s = 0.0;
        for axis in 0..3 {
            let v = p.component(axis);
            let d = (self.min.component(axis) - v).max(v - self.max.component(axis)).max(0.0);
            s += d * d;
        }
        f64::sqrt(s)
    }

    /// Closest point of the box to `p` (`p` itself when inside).
    pub fn clamp_point(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

/// Line segment between two points. May be degenerate (`p0 == p1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p0: Vec3,
    pub p1: Vec3,
}

impl Segment {
    pub fn new(p0: Vec3, p1: Vec3) -> Self {
        Segment { p0, p1 }
    }

    pub fn direction(&self) -> Vec3 {
        self.p1 - self.p0
    }

    pub fn length(&self) -> f64 {
        self.direction().norm()
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.p0 + self.p1) * 0.5
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.p0 + self.direction() * t
    }
}

/// True iff the segment has at least one point inside or on the closed box.
///
/// Liang-Barsky style clip of the segment parameter range against the three
/// slabs. Boundary contact counts as intersecting.
pub fn aabb_intersects_segment(bbox: &Aabb, seg: &Segment) -> bool {
    clip_segment_params(bbox, seg).is_some()
}

/// Parameter range `[t_enter, t_exit] ⊆ [0,1]` of the segment inside the box,
/// or `None` when disjoint.
pub fn clip_segment_params(bbox: &Aabb, seg: &Segment) -> Option<(f64, f64)> {
    let d = seg.direction();
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for axis in 0..3 {
        let p = seg.p0.component(axis);
        let dir = d.component(axis);
        let lo = bbox.min.component(axis);
        let hi = bbox.max.component(axis);
        if dir == 0.0 {
            if p < lo || p > hi {
                return None;
            }
        } else {
            let inv = 1.0 / dir;
            let mut ta = (lo - p) * inv;
            let mut tb = (hi - p) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Minimum Euclidean distance between two segments.
///
/// Closest-point computation on the pair of parameterized lines with the
/// parameters clamped to `[0,1]`; degenerate segments reduce to point cases.
pub fn min_segment_distance(a: &Segment, b: &Segment) -> f64 {
    let d1 = a.direction();
    let d2 = b.direction();
    let r = a.p0 - b.p0;
    let a11 = d1.dot(d1);
    let a22 = d2.dot(d2);
    let eps = 1e-300;

    let (s, t) = if a11 <= eps && a22 <= eps {
        (0.0, 0.0)
    } else if a11 <= eps {
        (0.0, (d2.dot(r) / a22).clamp(0.0, 1.0))
    } else if a22 <= eps {
        ((-d1.dot(r) / a11).clamp(0.0, 1.0), 0.0)
    } else {
        let a12 = d1.dot(d2);
        let b1 = d1.dot(r);
        let b2 = d2.dot(r);
        let denom = a11 * a22 - a12 * a12;
        let mut s = if denom > f64::EPSILON * a11 * a22 {
            ((a12 * b2 - a22 * b1) / denom).clamp(0.0, 1.0)
        } else {
            // Parallel lines: any s works, pick 0 and fix up below.
            0.0
        };
        let mut t = (a12 * s + b2) / a22;
        if t < 0.0 {
            t = 0.0;
            s = (-b1 / a11).clamp(0.0, 1.0);
        } else if t > 1.0 {
            t = 1.0;
            s = ((a12 - b1) / a11).clamp(0.0, 1.0);
        }
        (s, t)
    };

    a.point_at(s).distance(b.point_at(t))
}

/// Minimum distance from a point to a segment.
pub fn point_segment_distance(p: Vec3, seg: &Segment) -> f64 {
    let d = seg.direction();
    let len2 = d.dot(d);
    if len2 <= 1e-300 {
        return p.distance(seg.p0);
    }
    let t = ((p - seg.p0).dot(d) / len2).clamp(0.0, 1.0);
    p.distance(seg.point_at(t))
}

/// Point reached by walking `distance` along a polyline from the vertex at
/// `start_index`, clamped to the final vertex.
pub fn clamp_advance(
    polyline: &[Vec3],
    start_index: usize,
    distance: f64,
) -> Result<Vec3, GeometryError> {
    if polyline.len() < 2 || start_index >= polyline.len() {
        return Err(GeometryError::PolylineTooShort);
    }
    let mut remaining = distance.max(0.0);
    let mut current = polyline[start_index];
    for next in &polyline[start_index + 1..] {
        let step = current.distance(*next);
        if remaining <= step {
            if step == 0.0 {
                current = *next;
                continue;
            }
            return Ok(current + (*next - current) * (remaining / step));
        }
        remaining -= step;
        current = *next;
    }
    Ok(*polyline.last().unwrap())
}

/// Total arc length of a polyline.
pub fn polyline_length(polyline: &[Vec3]) -> f64 {
    polyline.windows(2).map(|w| w[0].distance(w[1])).sum()
}
