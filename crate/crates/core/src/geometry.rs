//! Planar primitives for vehicle footprints.
//!
//! All coordinates are in feet. Boxes are closed regions: touching edges
//! intersect and boundary points are contained.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotated(self, angle_rad: f64) -> Point2 {
        let (s, c) = angle_rad.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned extent, used for broad-phase hashing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }
}

/// Convex quadrilateral footprint of a vehicle, corners stored counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[Point2; 4]", into = "[Point2; 4]")]
pub struct OrientedBox {
    corners: [Point2; 4],
}

impl TryFrom<[Point2; 4]> for OrientedBox {
    type Error = Error;
    fn try_from(corners: [Point2; 4]) -> Result<Self> {
        OrientedBox::new(corners)
    }
}

impl From<OrientedBox> for [Point2; 4] {
    fn from(b: OrientedBox) -> Self {
        b.corners
    }
}

impl OrientedBox {
    /// Validates the quadrilateral and normalizes it to counter-clockwise winding.
    ///
    /// Corners must be finite and form a strictly convex, non-self-intersecting
    /// quadrilateral with positive area.
    pub fn new(mut corners: [Point2; 4]) -> Result<Self> {
        if corners.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("box corner is not finite"));
        }
        if signed_area(&corners) < 0.0 {
            corners.reverse();
        }
        for i in 0..4 {
            let a = corners[i];
            let b = corners[(i + 1) % 4];
            let c = corners[(i + 2) % 4];
            if (b - a).cross(c - b) <= 0.0 {
                return Err(Error::invalid(
                    "box corners do not form a convex quadrilateral with positive area",
                ));
            }
        }
        Ok(Self { corners })
    }

    /// Rectangle of the given dimensions centred on `center`, long axis along
    /// `heading_deg` measured clockwise from north (+y).
    pub fn from_pose(center: Point2, length: f64, width: f64, heading_deg: f64) -> Result<Self> {
        if !(length > 0.0) || !(width > 0.0) {
            return Err(Error::invalid(format!(
                "box dimensions must be positive, got length {length} width {width}"
            )));
        }
        if !center.is_finite() || !heading_deg.is_finite() {
            return Err(Error::invalid("box pose is not finite"));
        }
        let h = heading_deg.to_radians();
        let (s, c) = h.sin_cos();
        let forward = Point2::new(s, c) * (length / 2.0);
        let right = Point2::new(c, -s) * (width / 2.0);
        OrientedBox::new([
            center + forward + right,
            center + forward - right,
            center - forward - right,
            center - forward + right,
        ])
    }

    /// Axis-aligned square of side `2 * half_side` centred on `center`.
    pub fn square(center: Point2, half_side: f64) -> Result<Self> {
        let d = half_side;
        OrientedBox::new([
            center + Point2::new(-d, -d),
            center + Point2::new(d, -d),
            center + Point2::new(d, d),
            center + Point2::new(-d, d),
        ])
    }

    pub fn corners(&self) -> &[Point2; 4] {
        &self.corners
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners)
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point2 {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for i in 0..4 {
            let p = self.corners[i];
            let q = self.corners[(i + 1) % 4];
            let w = p.cross(q);
            a2 += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    /// Shortest edge length; the vehicle width for rectangular footprints.
    pub fn min_edge(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a.distance(b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        (0..4).map(move |i| (self.corners[i], self.corners[(i + 1) % 4]))
    }

    pub fn aabb(&self) -> Aabb {
        let mut min = self.corners[0];
        let mut max = self.corners[0];
        for c in &self.corners[1..] {
            min.x = min.x.min(c.x);
            min.y = min.y.min(c.y);
            max.x = max.x.max(c.x);
            max.y = max.y.max(c.y);
        }
        Aabb { min, max }
    }

    /// Applies a rigid motion: rotation about the origin, then translation.
    pub fn transformed(&self, angle_rad: f64, offset: Point2) -> Result<Self> {
        let mut c = self.corners;
        for p in &mut c {
            *p = p.rotated(angle_rad) + offset;
        }
        OrientedBox::new(c)
    }
}

fn signed_area(c: &[Point2; 4]) -> f64 {
    let mut a = 0.0;
    for i in 0..4 {
        a += c[i].cross(c[(i + 1) % 4]);
    }
    a / 2.0
}

fn project(b: &OrientedBox, axis: Point2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &b.corners {
        let d = c.dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

fn separated_on_edges_of(owner: &OrientedBox, a: &OrientedBox, b: &OrientedBox) -> bool {
    owner.edges().any(|(p, q)| {
        let e = q - p;
        let axis = Point2::new(-e.y, e.x);
        let (a_lo, a_hi) = project(a, axis);
        let (b_lo, b_hi) = project(b, axis);
        a_hi < b_lo || b_hi < a_lo
    })
}

/// True iff the two closed boxes share at least one point.
///
/// Separating-axis test over the edge normals of both quadrilaterals.
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    !(separated_on_edges_of(a, a, b) || separated_on_edges_of(b, a, b))
}

/// True iff `p` lies in the closed region of `b`.
pub fn point_in_box(p: Point2, b: &OrientedBox) -> bool {
    b.edges().all(|(s, e)| (e - s).cross(p - s) >= 0.0)
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + ab * t)
}

/// Boundary-to-boundary separation; zero when the boxes intersect.
pub fn boxes_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if boxes_intersect(a, b) {
        return 0.0;
    }
    // Disjoint convex polygons: the gap is realized at a vertex of one of them.
    let mut best = f64::INFINITY;
    for (x, y) in [(a, b), (b, a)] {
        for &p in x.corners() {
            for (s, e) in y.edges() {
                best = best.min(point_segment_distance(p, s, e));
            }
        }
    }
    best
}

/// Even-odd containment test for a simple polygon given by its vertices.
pub fn point_in_polygon(p: Point2, polygon: &[Point2]) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (polygon[i], polygon[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pj.x + (p.y - pj.y) * (pi.x - pj.x) / (pi.y - pj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
