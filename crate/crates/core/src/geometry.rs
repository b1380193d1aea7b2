//! Shared value types: poses, commands, range scans, observations and plans.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Control period of the simulator and of every recorded episode.
pub const DT: f64 = 0.1;
/// Number of scans (and odometry poses) kept in an observation.
pub const HISTORY_LEN: usize = 5;
pub const NUM_BEAMS: usize = 72;
pub const MAX_RANGE: f64 = 10.0;
pub const V_MAX: f64 = 1.6;
pub const OMEGA_MAX: f64 = 1.5;
/// Resolution at which global plans are compared.
pub const PLAN_POINTS: usize = 200;
/// Arc length of the demonstrated path used to place the navigation goal.
pub const GOAL_HORIZON: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap(theta))
}

pub(crate) fn wrap(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = theta.rem_euclid(two_pi);
    if a > PI {
        a -= two_pi;
    }
    // rem_euclid maps odd multiples of π (from either side) onto π already; a
    // result of exactly -π can only come from the subtraction above.
    if a <= -PI {
        a += two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    /// Builds a pose, wrapping `theta` into (−π, π].
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap(theta) }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Expresses a world-frame point in the frame of `pose`.
pub fn to_robot_frame(p: Point, pose: &Pose2D) -> Point {
    let (s, c) = pose.theta.sin_cos();
    let dx = p.x - pose.x;
    let dy = p.y - pose.y;
    Point::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`to_robot_frame`].
pub fn to_world_frame(p: Point, pose: &Pose2D) -> Point {
    let (s, c) = pose.theta.sin_cos();
    Point::new(pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y)
}

/// Linear/angular velocity pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub omega: f64,
}

impl Command {
    pub const STOP: Command = Command { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// Clamps into the admissible range `0 ≤ v ≤ V_MAX`, `|ω| ≤ OMEGA_MAX`.
    pub fn clamped(self) -> Self {
        let v = if self.v.is_finite() { self.v.clamp(0.0, V_MAX) } else { 0.0 };
        let omega = if self.omega.is_finite() { self.omega.clamp(-OMEGA_MAX, OMEGA_MAX) } else { 0.0 };
        Self { v, omega }
    }
}

/// Planar range scan; beam 0 points along the robot heading and beams advance
/// counter-clockwise at uniform spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScan {
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl RangeScan {
    pub fn beam_angle(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.ranges.len() as f64
    }

    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// World-frame endpoints of beams that hit something (range below max).
    pub fn endpoints(&self, pose: &Pose2D) -> Vec<Point> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < self.max_range)
            .map(|(i, &r)| {
                let a = pose.theta + self.beam_angle(i);
                Point::new(pose.x + r * a.cos(), pose.y + r * a.sin())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Oldest first.
    pub scan_history: Vec<RangeScan>,
    /// Oldest first; the last entry is the current pose.
    pub odom_history: Vec<Pose2D>,
    pub last_command: Command,
    pub goal: Pose2D,
    pub stamp: f64,
}

impl Observation {
    pub fn pose(&self) -> &Pose2D {
        self.odom_history.last().expect("observation without odometry")
    }

    pub fn scan(&self) -> &RangeScan {
        self.scan_history.last().expect("observation without scans")
    }
}

/// Ordered world-frame waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalPlan {
    pub points: Vec<Point>,
}

impl GlobalPlan {
    /// Builds a plan, dropping consecutive duplicates. Fails when fewer than
    /// two distinct points remain.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let mut out: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if !p.is_finite() {
                return Err(Error::NonFinite("plan"));
            }
            if out.last().map_or(true, |&q| q != p) {
                out.push(p);
            }
        }
        if out.len() < 2 {
            return Err(Error::DegeneratePlan);
        }
        Ok(Self { points: out })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().expect("empty plan")
    }

    /// Point at arc length `s` from the start, clamped to the plan ends.
    pub fn point_at(&self, s: f64) -> Point {
        if s <= 0.0 {
            return self.start();
        }
        let mut acc = 0.0;
        for w in self.points.windows(2) {
            let seg = w[0].dist(w[1]);
            if acc + seg >= s && seg > 0.0 {
                return w[0].lerp(w[1], (s - acc) / seg);
            }
            acc += seg;
        }
        self.end()
    }
}

/// Resamples `plan` to `count` points spaced uniformly by arc length. The
/// first and last points are kept exactly.
pub fn resample_plan(plan: &GlobalPlan, count: usize) -> Result<GlobalPlan> {
    if count < 2 {
        return Err(Error::InvalidArgument(format!("resample count {count} < 2")));
    }
    if plan.points.len() < 2 {
        return Err(Error::DegeneratePlan);
    }
    let pts = &plan.points;
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::DegeneratePlan);
    }
    let mut out = Vec::with_capacity(count);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..count - 1 {
        let s = total * k as f64 / (count - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(pts[seg].lerp(pts[seg + 1], t));
    }
    out.push(*pts.last().unwrap());
    // Uniform spacing of a non-degenerate plan never repeats a point, but
    // keep the constructor's invariant check anyway.
    GlobalPlan::new(out)
}

/// One recorded control step of a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub obs: Observation,
    pub demo_plan: GlobalPlan,
    pub demo_command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scenario_id: String,
    pub seed: u64,
    pub dt: f64,
    pub spec: crate::sim::ScenarioSpec,
    /// Robot pose after the last step.
    pub final_pose: Pose2D,
    pub steps: Vec<DemoStep>,
}
