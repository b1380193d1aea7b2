use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::costmap::{Costmap, INSCRIBED, LETHAL};
use crate::error::{Error, Result};
use crate::geometry::{resample_plan, GlobalPlan, Point, PLAN_POINTS};

/// Divisor mapping cell cost to edge-cost multiplier `1 + cost/64`.
pub const COST_DIVISOR: u64 = 64;
pub const SMOOTH_ITERATIONS: usize = 50;
pub const SMOOTH_STEP: f64 = 0.1;
/// A goal inside a lethal cell is moved to the nearest free cell within this
/// radius.
pub const GOAL_SNAP_RADIUS: f64 = 0.5;

/// Exact path cost `res/64 · (straight + √2·diagonal)`: each move adds
/// `64 + cost(target)` to the straight or diagonal accumulator, so
/// comparisons never suffer from float summation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PathCost {
    pub straight: u64,
    pub diagonal: u64,
}

impl PathCost {
    pub fn value(&self, resolution: f64) -> f64 {
        resolution / COST_DIVISOR as f64 * (self.straight as f64 + std::f64::consts::SQRT_2 * self.diagonal as f64)
    }

    fn add(self, diagonal: bool, cell_cost: u8) -> Self {
        let w = COST_DIVISOR + cell_cost as u64;
        if diagonal {
            Self { diagonal: self.diagonal + w, ..self }
        } else {
            Self { straight: self.straight + w, ..self }
        }
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of a + √2·b decided in integers
        let a = self.straight as i128 - other.straight as i128;
        let b = self.diagonal as i128 - other.diagonal as i128;
        match (a.signum(), b.signum()) {
            (0, 0) => Ordering::Equal,
            (sa, sb) if sa >= 0 && sb >= 0 => Ordering::Greater,
            (sa, sb) if sa <= 0 && sb <= 0 => Ordering::Less,
            (1, _) => (a * a).cmp(&(2 * b * b)),
            _ => (2 * b * b).cmp(&(a * a)),
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(PartialEq, Eq)]
struct Entry {
    cost: PathCost,
    index: usize,
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, index)
        other.cost.cmp(&self.cost).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The eight grid moves and whether each is diagonal.
pub const MOVES: [(i64, i64, bool); 8] = [
    (1, 0, false),
    (-1, 0, false),
    (0, 1, false),
    (0, -1, false),
    (1, 1, true),
    (1, -1, true),
    (-1, 1, true),
    (-1, -1, true),
];

/// Neighbours of `(c, r)` reachable in one move: target not lethal, and a
/// diagonal move may not cut the corner of a lethal cell.
pub fn neighbours(cm: &Costmap, c: usize, r: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
    let lethal = move |c: i64, r: i64| {
        c < 0 || r < 0 || c >= cm.width as i64 || r >= cm.height as i64 || cm.get(c as usize, r as usize) == LETHAL
    };
    MOVES.iter().filter_map(move |&(dc, dr, diag)| {
        let (nc, nr) = (c as i64 + dc, r as i64 + dr);
        if lethal(nc, nr) || (diag && (lethal(c as i64 + dc, r as i64) || lethal(c as i64, r as i64 + dr))) {
            return None;
        }
        Some((nc as usize, nr as usize, diag))
    })
}

/// Minimum-cost 8-connected cell path from `start` to `goal` (inclusive),
/// with its exact cost. Ties resolve on the smallest `(cost, row-major index)`.
pub fn dijkstra(cm: &Costmap, start: (usize, usize), goal: (usize, usize)) -> Option<(PathCost, Vec<(usize, usize)>)> {
    let n = cm.cells.len();
    let si = cm.index(start.0, start.1);
    let gi = cm.index(goal.0, goal.1);
    if cm.cells[si] == LETHAL || cm.cells[gi] == LETHAL {
        return None;
    }
    let mut best: Vec<Option<PathCost>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[si] = Some(PathCost::default());
    heap.push(Entry { cost: PathCost::default(), index: si });
    while let Some(Entry { cost, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        if index == gi {
            let mut cells = vec![(gi % cm.width, gi / cm.width)];
            let mut i = gi;
            while i != si {
                i = parent[i];
                cells.push((i % cm.width, i / cm.width));
            }
            cells.reverse();
            return Some((cost, cells));
        }
        let (c, r) = (index % cm.width, index / cm.width);
        for (nc, nr, diag) in neighbours(cm, c, r) {
            let j = cm.index(nc, nr);
            if done[j] {
                continue;
            }
            let cand = cost.add(diag, cm.cells[j]);
            if best[j].map_or(true, |b| cand < b) {
                best[j] = Some(cand);
                parent[j] = index;
                heap.push(Entry { cost: cand, index: j });
            }
        }
    }
    None
}

/// Nearest non-lethal cell center within `radius` of `p` (ties by row-major
/// index).
fn snap_to_free(cm: &Costmap, p: Point, radius: f64) -> Option<(usize, usize)> {
    let reach = (radius / cm.resolution).ceil() as i64 + 1;
    let (c0, r0) = cm.cell_of(p)?;
    let mut best: Option<(f64, usize, (usize, usize))> = None;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (c, r) = (c0 as i64 + dc, r0 as i64 + dr);
            if c < 0 || r < 0 || c >= cm.width as i64 || r >= cm.height as i64 {
                continue;
            }
            let (c, r) = (c as usize, r as usize);
            if cm.get(c, r) == LETHAL {
                continue;
            }
            let d = cm.cell_center(c, r).dist(p);
            if d > radius {
                continue;
            }
            let key = (d, cm.index(c, r), (c, r));
            if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
    }
    best.map(|b| b.2)
}

/// Whether the closed segment `a`→`b` touches the axis-aligned box.
fn segment_hits_box(a: Point, b: Point, lo: Point, hi: Point) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, d, l, h) in [(a.x, b.x - a.x, lo.x, hi.x), (a.y, b.y - a.y, lo.y, hi.y)] {
        if d.abs() < 1e-15 {
            if p < l || p > h {
                return false;
            }
        } else {
            let (u, v) = ((l - p) / d, (h - p) / d);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
    }
    t0 <= t1
}

/// Whether the segment `a`→`b` stays off lethal cells (exact box test over
/// the cells its bounding box covers; outside the grid counts as lethal).
fn segment_clear(cm: &Costmap, a: Point, b: Point) -> bool {
    let (Some(ca), Some(cb)) = (cm.cell_of(a), cm.cell_of(b)) else {
        return false;
    };
    let (c0, c1) = (ca.0.min(cb.0).saturating_sub(1), (ca.0.max(cb.0) + 1).min(cm.width - 1));
    let (r0, r1) = (ca.1.min(cb.1).saturating_sub(1), (ca.1.max(cb.1) + 1).min(cm.height - 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            if cm.get(c, r) != LETHAL {
                continue;
            }
            let lo = Point::new(cm.origin.x + c as f64 * cm.resolution, cm.origin.y + r as f64 * cm.resolution);
            let hi = Point::new(lo.x + cm.resolution, lo.y + cm.resolution);
            if segment_hits_box(a, b, lo, hi) {
                return false;
            }
        }
    }
    true
}

/// Laplacian shortcutting with fixed endpoints; a move is rejected when it
/// would land in an inscribed or lethal cell or pull an adjacent segment
/// across a lethal one.
pub fn smooth_path(cm: &Costmap, points: &[Point], iterations: usize, step: f64) -> Vec<Point> {
    let mut pts = points.to_vec();
    if pts.len() < 3 {
        return pts;
    }
    for _ in 0..iterations {
        let prev = pts.clone();
        for i in 1..pts.len() - 1 {
            let target = (prev[i - 1] + prev[i + 1]) * 0.5;
            let cand = prev[i] + (target - prev[i]) * step;
            if cm.cost_at(cand) < INSCRIBED && segment_clear(cm, pts[i - 1], cand) && segment_clear(cm, cand, prev[i + 1]) {
                pts[i] = cand;
            }
        }
    }
    pts
}

/// Global plan on the costmap: Dijkstra over cells, cell centers joined with
/// the exact start and goal, smoothed and resampled to 200 points.
pub fn plan_global(cm: &Costmap, start: Point, goal: Point) -> Result<GlobalPlan> {
    let start_cell = cm.cell_of(start).ok_or(Error::NoPath)?;
    if cm.get(start_cell.0, start_cell.1) == LETHAL {
        return Err(Error::NoPath);
    }
    let raw_goal_cell = cm.cell_of(goal).ok_or(Error::NoPath)?;
    let (goal_cell, goal_point) = if cm.get(raw_goal_cell.0, raw_goal_cell.1) == LETHAL {
        let c = snap_to_free(cm, goal, GOAL_SNAP_RADIUS).ok_or(Error::NoPath)?;
        (c, cm.cell_center(c.0, c.1))
    } else {
        (raw_goal_cell, goal)
    };
    if goal_cell == start_cell {
        return Err(Error::DegenerateGoal);
    }
    let (_, cells) = dijkstra(cm, start_cell, goal_cell).ok_or(Error::NoPath)?;
    let mut pts: Vec<Point> = cells.iter().map(|&(c, r)| cm.cell_center(c, r)).collect();
    pts[0] = start;
    *pts.last_mut().unwrap() = goal_point;
    let pts = smooth_path(cm, &pts, SMOOTH_ITERATIONS, SMOOTH_STEP);
    resample_plan(&GlobalPlan::new(pts)?, PLAN_POINTS)
}
