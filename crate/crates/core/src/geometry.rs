//! Planar geometry: points, oriented rectangles and lane polylines.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Oriented rectangle given by its center, length along `heading` and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Point,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
}

impl Rect {
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.heading.sin_cos();
        let fwd = Point::new(c, s).scale(self.length / 2.0);
        let left = Point::new(-s, c).scale(self.width / 2.0);
        let p = self.center;
        [
            p.add(fwd).add(left),
            p.sub(fwd).add(left),
            p.sub(fwd).sub(left),
            p.add(fwd).sub(left),
        ]
    }

    /// Closed-set overlap test (touching counts).
    pub fn intersects(&self, other: &Rect) -> bool {
        convex_polygons_intersect(&self.corners(), &other.corners())
    }
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| q.sub(p).cross(r.sub(p));
    let on_segment = |p: Point, q: Point, r: Point| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Point in convex polygon (boundary included), vertices in either winding.
fn point_in_convex(poly: &[Point], p: Point) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let c = b.sub(a).cross(p.sub(a));
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

/// Overlap via edge crossings plus containment.
pub fn convex_polygons_intersect(a: &[Point], b: &[Point]) -> bool {
    for i in 0..a.len() {
        for j in 0..b.len() {
            if segments_intersect(a[i], a[(i + 1) % a.len()], b[j], b[(j + 1) % b.len()]) {
                return true;
            }
        }
    }
    point_in_convex(a, b[0]) || point_in_convex(b, a[0])
}

/// Keeps the part of `poly` where `f(p) <= 0` (`f` affine).
pub fn clip_half_plane(poly: &[Point], f: impl Fn(Point) -> f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (fp, fq) = (f(p), f(q));
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let t = fp / (fp - fq);
            out.push(p.add(q.sub(p).scale(t)));
        }
    }
    out
}

/// Projection of a point onto a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    /// Arc length along the centerline.
    pub s: f64,
    /// Signed lateral offset, positive to the left.
    pub d: f64,
    /// Centerline heading at the projection.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LaneSpec", into = "LaneSpec")]
pub struct Lane {
    pub centerline: Vec<Point>,
    pub width: f64,
    cumulative: Vec<f64>,
}

impl Lane {
    /// Returns `None` for fewer than two points, repeated points or a
    /// non-positive width.
    pub fn new(centerline: Vec<Point>, width: f64) -> Option<Lane> {
        if centerline.len() < 2 || !(width > 0.0) {
            return None;
        }
        let mut cumulative = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in centerline.windows(2) {
            let len = w[1].sub(w[0]).norm();
            if !(len > 0.0) {
                return None;
            }
            acc += len;
            cumulative.push(acc);
        }
        Some(Lane {
            centerline,
            width,
            cumulative,
        })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point, f64)> + '_ {
        self.centerline
            .windows(2)
            .zip(&self.cumulative)
            .map(|(w, s0)| (w[0], w[1], *s0))
    }

    pub fn project(&self, p: Point) -> LanePosition {
        let mut best: Option<(f64, LanePosition)> = None;
        let n = self.centerline.len() - 1;
        for (i, (a, b, s0)) in self.segments().enumerate() {
            let ab = b.sub(a);
            let len = ab.norm();
            let t_raw = p.sub(a).dot(ab) / (len * len);
            // the first and last segments extend past the lane ends
            let t = match (i == 0, i == n - 1) {
                (true, true) => t_raw,
                (true, false) => t_raw.min(1.0),
                (false, true) => t_raw.max(0.0),
                (false, false) => t_raw.clamp(0.0, 1.0),
            };
            let foot = a.add(ab.scale(t));
            let dist = p.sub(foot).norm();
            let unit = ab.scale(1.0 / len);
            let pos = LanePosition {
                s: s0 + t * len,
                d: unit.cross(p.sub(foot)),
                heading: ab.y.atan2(ab.x),
            };
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                best = Some((dist, pos));
            }
        }
        best.expect("lane has segments").1
    }

    /// Point and heading at arc length `s` (extrapolated past either end).
    pub fn point_at(&self, s: f64) -> (Point, f64) {
        let n = self.centerline.len() - 1;
        for (i, (a, b, s0)) in self.segments().enumerate() {
            let len = b.sub(a).norm();
            if s <= s0 + len || i == n - 1 {
                let dir = b.sub(a).scale(1.0 / len);
                return (a.add(dir.scale(s - s0)), dir.y.atan2(dir.x));
            }
        }
        unreachable!()
    }

    /// Mean signed curvature over `[s - half_window, s + half_window]`.
    pub fn curvature_at(&self, s: f64, half_window: f64) -> f64 {
        let (_, h0) = self.point_at(s - half_window);
        let (_, h1) = self.point_at(s + half_window);
        wrap_angle(h1 - h0) / (2.0 * half_window)
    }
}

#[derive(Serialize, Deserialize)]
struct LaneSpec {
    centerline: Vec<Point>,
    width: f64,
}

impl TryFrom<LaneSpec> for Lane {
    type Error = String;

    fn try_from(spec: LaneSpec) -> Result<Self, Self::Error> {
        Lane::new(spec.centerline, spec.width).ok_or_else(|| "invalid lane geometry".to_string())
    }
}

impl From<Lane> for LaneSpec {
    fn from(lane: Lane) -> Self {
        LaneSpec {
            centerline: lane.centerline,
            width: lane.width,
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}
