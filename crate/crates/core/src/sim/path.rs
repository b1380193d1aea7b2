use crate::geometry::{GlobalPlan, Point};

/// Arc-length parameterised polyline with tangents and left normals, used
/// to place scripted events along a route and to track it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFrame {
    pts: Vec<Point>,
    cum: Vec<f64>,
}

impl PathFrame {
    pub fn new(plan: &GlobalPlan) -> Self {
        let pts = plan.points.clone();
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].dist(w[1]));
        }
        Self { pts, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let n = self.pts.len();
        let s = s.clamp(0.0, self.length());
        let k = self.cum.partition_point(|&c| c <= s).clamp(1, n - 1);
        let len = self.cum[k] - self.cum[k - 1];
        let t = if len > 0.0 { (s - self.cum[k - 1]) / len } else { 0.0 };
        (k - 1, t)
    }

    pub fn point(&self, s: f64) -> Point {
        let (i, t) = self.segment(s);
        self.pts[i].lerp(self.pts[i + 1], t)
    }

    /// Unit tangent at `s`, averaged over ±0.25 m so resampled corners turn
    /// smoothly.
    pub fn tangent(&self, s: f64) -> Point {
        let a = self.point(s - 0.25);
        let b = self.point(s + 0.25);
        let d = b - a;
        let n = d.norm();
        if n > 1e-12 {
            d * (1.0 / n)
        } else {
            Point::new(1.0, 0.0)
        }
    }

    /// Unit normal pointing to the left of the direction of travel.
    pub fn normal(&self, s: f64) -> Point {
        let t = self.tangent(s);
        Point::new(-t.y, t.x)
    }

    /// Point displaced `l` meters to the left of the path at `s`.
    pub fn at(&self, s: f64, l: f64) -> Point {
        self.point(s) + self.normal(s) * l
    }

    /// Projection `(s, l)`: arc position of the nearest path point and the
    /// signed lateral offset (left positive). Only segments overlapping the
    /// arc window `[lo, hi]` are searched.
    pub fn project_within(&self, p: Point, lo: f64, hi: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.pts.len() - 1 {
            if self.cum[i + 1] < lo || self.cum[i] > hi {
                continue;
            }
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a.lerp(b, t);
            let d = q.dist(p);
            if d < best.0 {
                let side = ab.cross(p - a).signum();
                best = (d, self.cum[i] + t * len2.sqrt(), d * side);
            }
        }
        (best.1, best.2)
    }

    pub fn project(&self, p: Point) -> (f64, f64) {
        self.project_within(p, f64::NEG_INFINITY, f64::INFINITY)
    }
}
