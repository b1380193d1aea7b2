use serde::{Deserialize, Serialize};

use crate::costmap::{Costmap, INSCRIBED, LETHAL};
use crate::geometry::{wrap, Command, GlobalPlan, Point, Pose2D, OMEGA_MAX, V_MAX};
use crate::sim::integrate_unicycle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwaParams {
    pub v_samples: usize,
    pub omega_samples: usize,
    pub horizon: f64,
    pub dt: f64,
    pub w_path: f64,
    pub w_heading: f64,
    pub w_clear: f64,
    /// Clearance beyond this distance (m) is not rewarded.
    pub clear_range: f64,
    pub w_speed: f64,
    /// Weight on the rollout end's distance to the plan end.
    pub w_goal: f64,
    /// Arc length past the rollout end's projection used for the heading
    /// term.
    pub lookahead: f64,
}

impl Default for DwaParams {
    fn default() -> Self {
        Self {
            v_samples: 11,
            omega_samples: 21,
            horizon: 2.0,
            dt: 0.1,
            w_path: 2.0,
            w_heading: 0.5,
            w_clear: 0.3,
            clear_range: 1.0,
            w_speed: 1.0,
            w_goal: 0.5,
            lookahead: 1.5,
        }
    }
}

impl DwaParams {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.v_samples >= 2
            && self.omega_samples >= 2
            && self.horizon > 0.0
            && self.clear_range > 0.0
            && self.dt > 0.0
            && [self.w_path, self.w_heading, self.w_clear, self.w_speed, self.w_goal].iter().all(|w| *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("bad DWA parameters {self:?}")))
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// The sampled command grid, `v` major.
    pub fn samples(&self) -> Vec<Command> {
        let mut out = Vec::with_capacity(self.v_samples * self.omega_samples);
        for i in 0..self.v_samples {
            let v = V_MAX * i as f64 / (self.v_samples - 1) as f64;
            for j in 0..self.omega_samples {
                let omega = -OMEGA_MAX + 2.0 * OMEGA_MAX * j as f64 / (self.omega_samples - 1) as f64;
                out.push(Command { v, omega });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwaOutcome {
    pub command: Command,
    /// No sampled rollout was admissible; `command` is the rotate-in-place
    /// recovery.
    pub recovery: bool,
}

pub const RECOVERY: Command = Command { v: 0.0, omega: OMEGA_MAX / 2.0 };

/// Poses reached after each rollout period (the start pose excluded).
pub fn rollout(pose: &Pose2D, cmd: Command, p: &DwaParams) -> Vec<Pose2D> {
    let mut out = Vec::with_capacity(p.steps());
    let mut cur = *pose;
    for _ in 0..p.steps() {
        cur = integrate_unicycle(&cur, cmd, p.dt);
        out.push(cur);
    }
    out
}

/// Nearest-vertex queries on a plan through a uniform bucket grid, searched
/// ring by ring until no closer vertex can remain.
struct PlanIndex<'a> {
    pts: &'a [Point],
    cum: Vec<f64>,
    min: Point,
    cols: i64,
    rows: i64,
    buckets: Vec<Vec<usize>>,
}

const BUCKET: f64 = 0.3;

impl<'a> PlanIndex<'a> {
    fn new(plan: &'a GlobalPlan) -> Self {
        let pts = &plan.points;
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].dist(w[1]));
        }
        let (mut lo, mut hi) = (pts[0], pts[0]);
        for p in pts {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let cols = ((hi.x - lo.x) / BUCKET).floor() as i64 + 1;
        let rows = ((hi.y - lo.y) / BUCKET).floor() as i64 + 1;
        let mut buckets = vec![Vec::new(); (cols * rows) as usize];
        for (i, p) in pts.iter().enumerate() {
            let (c, r) = Self::bucket_of(lo, *p);
            buckets[(r * cols + c) as usize].push(i);
        }
        Self { pts, cum, min: lo, cols, rows, buckets }
    }

    fn bucket_of(min: Point, p: Point) -> (i64, i64) {
        (((p.x - min.x) / BUCKET).floor() as i64, ((p.y - min.y) / BUCKET).floor() as i64)
    }

    /// Nearest vertex `(index, distance)`; the lowest index wins ties.
    fn nearest(&self, q: Point) -> (usize, f64) {
        let (qc, qr) = Self::bucket_of(self.min, q);
        // (index, squared distance)
        let mut best = (usize::MAX, f64::INFINITY);
        // rings that lie wholly outside the grid hold nothing
        let outside = [-qc, qc - (self.cols - 1), -qr, qr - (self.rows - 1)].into_iter().max().unwrap().max(0);
        let last = outside + self.cols.max(self.rows);
        for ring in outside..=last {
            // vertices in rings beyond this one are at least `ring·BUCKET` away
            let bound = (ring - 1).max(0) as f64 * BUCKET;
            if best.1 < bound * bound {
                break;
            }
            for r in qr - ring..=qr + ring {
                if r < 0 || r >= self.rows {
                    continue;
                }
                let edge = r == qr - ring || r == qr + ring;
                let mut c = qc - ring;
                while c <= qc + ring {
                    if c >= 0 && c < self.cols {
                        for &i in &self.buckets[(r * self.cols + c) as usize] {
                            let (dx, dy) = (self.pts[i].x - q.x, self.pts[i].y - q.y);
                            let d2 = dx * dx + dy * dy;
                            if d2 < best.1 || (d2 == best.1 && i < best.0) {
                                best = (i, d2);
                            }
                        }
                    }
                    c += if edge || ring == 0 { 1 } else { 2 * ring };
                }
            }
        }
        (best.0, self.pts[best.0].dist(q))
    }

    fn point_at(&self, s: f64) -> Point {
        let n = self.pts.len();
        if s >= self.cum[n - 1] {
            return self.pts[n - 1];
        }
        let k = self.cum.partition_point(|&c| c <= s).clamp(1, n - 1);
        let (a, b) = (self.cum[k - 1], self.cum[k]);
        let t = if b > a { (s - a) / (b - a) } else { 0.0 };
        self.pts[k - 1].lerp(self.pts[k], t)
    }
}

/// Samples the command grid, rolls each command out for the horizon,
/// discards rollouts that touch a lethal cell (or enter the inscribed zone
/// from outside it) and returns the lowest score
/// (ties: higher `v`, then `|ω|` closest to zero). Standing still is only
/// chosen when no moving rollout is admissible.
pub fn dwa_select(pose: &Pose2D, plan: &GlobalPlan, cm: &Costmap, p: &DwaParams) -> DwaOutcome {
    let dist = cm.lethal_distance();
    dwa_select_with(pose, plan, cm, &dist, p)
}

/// [`dwa_select`] with a precomputed lethal-distance field.
pub fn dwa_select_with(pose: &Pose2D, plan: &GlobalPlan, cm: &Costmap, dist: &[f64], p: &DwaParams) -> DwaOutcome {
    let index = PlanIndex::new(plan);
    let mut best: Option<(f64, Command)> = None;
    let mut standstill = None;
    let mut moving = false;
    for cmd in p.samples() {
        let Some(score) = score_rollout(pose, cmd, &index, cm, dist, p) else {
            continue;
        };
        // standing still is kept as a last resort, for when nothing that
        // moves is admissible; otherwise it is a local minimum near walls
        if cmd == Command::STOP {
            standstill = Some(score);
            continue;
        }
        moving |= cmd.v > 0.0;
        let better = match best {
            None => true,
            Some((s, b)) => {
                score < s
                    || (score == s
                        && (cmd.v > b.v || (cmd.v == b.v && cmd.omega.abs() < b.omega.abs())))
            }
        };
        if better {
            best = Some((score, cmd));
        }
    }
    if let (false, Some(score)) = (moving, standstill) {
        if best.map_or(true, |(s, _)| score <= s) {
            best = Some((score, Command::STOP));
        }
    }
    match best {
        Some((_, command)) => DwaOutcome { command, recovery: false },
        None => DwaOutcome { command: RECOVERY, recovery: true },
    }
}

fn score_rollout(
    pose: &Pose2D,
    cmd: Command,
    index: &PlanIndex,
    cm: &Costmap,
    dist: &[f64],
    p: &DwaParams,
) -> Option<f64> {
    let traj = rollout(pose, cmd, p);
    // the footprint may not enter the inscribed zone unless it starts there
    let limit = if cm.cost_at(pose.position()) >= INSCRIBED { LETHAL } else { INSCRIBED };
    let mut path_sum = 0.0;
    let mut clearance = f64::INFINITY;
    for q in &traj {
        let cell = cm.cell_of(q.position())?;
        let i = cm.index(cell.0, cell.1);
        if cm.cells[i] >= limit {
            return None;
        }
        clearance = clearance.min(dist[i]);
        path_sum += index.nearest(q.position()).1;
    }
    let end = traj.last()?;
    let (k, _) = index.nearest(end.position());
    let n = index.pts.len();
    // once the lookahead runs off the plan, align with its final direction
    let to = if index.cum[k] + p.lookahead >= index.cum[n - 1] {
        index.pts[n - 1] - index.pts[n - 2]
    } else {
        index.point_at(index.cum[k] + p.lookahead) - end.position()
    };
    let heading_err = if to.norm() < 1e-9 { 0.0 } else { wrap(to.y.atan2(to.x) - end.theta).abs() };
    let clear_term = if clearance > 0.0 { (1.0 / clearance - 1.0 / p.clear_range).max(0.0) } else { f64::INFINITY };
    Some(
        p.w_path * path_sum / traj.len() as f64
            + p.w_heading * heading_err
            + p.w_clear * clear_term
            + p.w_speed * (V_MAX - cmd.v)
            + p.w_goal * end.position().dist(index.pts[n - 1]),
    )
}
