//! Occupancy-derived cost grid: lethal marking from the static map and the
//! current scan, exponential inflation, and the Gaussian social layer.

use std::fmt::Write as _;

use crate::geometry::{Point, Pose2D, RangeScan};
use crate::sim::WorldMap;

pub const LETHAL: u8 = 254;
pub const INSCRIBED: u8 = 253;
pub const FREE: u8 = 0;

pub const DEFAULT_INSCRIBED_RADIUS: f64 = 0.35;
pub const DEFAULT_DECAY: f64 = 3.0;
pub const DEFAULT_SOCIAL_SIGMA: f64 = 0.8;
pub const DEFAULT_SOCIAL_AMPLITUDE: f64 = 200.0;

/// Single-linkage distance used to group unexplained scan endpoints.
pub const CLUSTER_LINK: f64 = 0.5;
/// Minimum centroid displacement over the scan history for a cluster to be
/// treated as a moving person.
pub const MOVING_THRESHOLD: f64 = 0.1;

/// Row-major cost grid sharing the geometry of the [`WorldMap`] it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub resolution: f64,
    pub origin: Point,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

impl Costmap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point) -> Self {
        Self { resolution, origin, width, height, cells: vec![FREE; width * height] }
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.cells[self.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, cost: u8) {
        let i = self.index(col, row);
        self.cells[i] = cost;
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cost at a world point; outside the grid reads as lethal.
    pub fn cost_at(&self, p: Point) -> u8 {
        self.cell_of(p).map_or(LETHAL, |(c, r)| self.get(c, r))
    }

    pub fn is_lethal_at(&self, p: Point) -> bool {
        self.cost_at(p) == LETHAL
    }

    pub fn has_lethal(&self) -> bool {
        self.cells.iter().any(|&c| c == LETHAL)
    }

    /// Distance in meters from every cell center to the nearest lethal cell
    /// center (`INFINITY` when there is none).
    pub fn lethal_distance(&self) -> Vec<f64> {
        let seeds: Vec<bool> = self.cells.iter().map(|&c| c == LETHAL).collect();
        edt_squared(&seeds, self.width, self.height)
            .into_iter()
            .map(|d2| if d2.is_finite() { d2.sqrt() * self.resolution } else { f64::INFINITY })
            .collect()
    }

    /// ASCII graymap of the costs (0 = free rendered white) for inspection.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n254\n", self.width, self.height);
        for row in (0..self.height).rev() {
            let line: Vec<String> = (0..self.width).map(|c| (254 - self.get(c, row)).to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Lethal exactly on occupied map cells.
pub fn from_map(map: &WorldMap) -> Costmap {
    let mut cm = Costmap::new(map.width, map.height, map.resolution, map.origin);
    for (c, &occ) in cm.cells.iter_mut().zip(&map.occupancy) {
        if occ {
            *c = LETHAL;
        }
    }
    cm
}

/// Marks occupied map cells and scan endpoints as lethal; everything else is
/// free.
pub fn build(map: &WorldMap, scan: &RangeScan, pose: &Pose2D) -> Costmap {
    let mut cm = from_map(map);
    for p in hit_points(scan, pose) {
        if let Some((c, r)) = cm.cell_of(p) {
            cm.set(c, r, LETHAL);
        }
    }
    cm
}

/// Scan endpoints pushed a hair past the surface so they land inside the
/// cell (or disc) that stopped the beam.
fn hit_points(scan: &RangeScan, pose: &Pose2D) -> Vec<Point> {
    const NUDGE: f64 = 1e-6;
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < scan.max_range)
        .map(|(i, &r)| {
            let a = pose.theta + scan.beam_angle(i);
            let r = r + NUDGE;
            Point::new(pose.x + r * a.cos(), pose.y + r * a.sin())
        })
        .collect()
}

/// Inflated cost for a cell at `dist` meters from the nearest lethal cell.
pub fn inflation_cost(dist: f64, inscribed_radius: f64, decay: f64) -> u8 {
    if dist < inscribed_radius - 1e-9 {
        INSCRIBED
    } else {
        let c = (252.0 * (-decay * (dist - inscribed_radius).max(0.0)).exp()).round();
        c.clamp(0.0, 252.0) as u8
    }
}

/// Exponential inflation around lethal cells using an exact Euclidean
/// distance transform. Existing costs are never lowered.
pub fn inflate(cm: &Costmap, inscribed_radius: f64, decay: f64) -> Costmap {
    assert!(inscribed_radius > 0.0, "inscribed radius must be positive");
    if !cm.has_lethal() {
        return cm.clone();
    }
    inflate_with(cm, &cm.lethal_distance(), inscribed_radius, decay)
}

/// [`inflate`] with the lethal-distance field already computed.
pub fn inflate_with(cm: &Costmap, dist: &[f64], inscribed_radius: f64, decay: f64) -> Costmap {
    let mut out = cm.clone();
    for (c, &d) in out.cells.iter_mut().zip(dist) {
        if *c == LETHAL {
            continue;
        }
        *c = (*c).max(inflation_cost(d, inscribed_radius, decay));
    }
    out
}

/// Gaussian cost bumps around detected people. Lethal cells are left alone;
/// per-detection increments are rounded, summed, then capped at 253.
pub fn add_social_layer(cm: &Costmap, detections: &[Point], sigma: f64, amplitude: f64) -> Costmap {
    assert!(sigma > 0.0, "social sigma must be positive");
    assert!(amplitude <= INSCRIBED as f64, "social amplitude above 253");
    let mut out = cm.clone();
    if detections.is_empty() || amplitude <= 0.0 {
        return out;
    }
    // beyond this radius every rounded increment is zero
    let reach = sigma * (2.0 * (2.0 * amplitude).ln()).max(0.0).sqrt() + cm.resolution;
    let mut extra = vec![0u32; cm.cells.len()];
    for d in detections {
        let lo_c = (((d.x - reach - cm.origin.x) / cm.resolution).floor().max(0.0)) as usize;
        let lo_r = (((d.y - reach - cm.origin.y) / cm.resolution).floor().max(0.0)) as usize;
        let hi_c = (((d.x + reach - cm.origin.x) / cm.resolution).ceil().max(0.0) as usize).min(cm.width);
        let hi_r = (((d.y + reach - cm.origin.y) / cm.resolution).ceil().max(0.0) as usize).min(cm.height);
        for r in lo_r..hi_r {
            for c in lo_c..hi_c {
                let q = cm.cell_center(c, r);
                let d2 = (q.x - d.x).powi(2) + (q.y - d.y).powi(2);
                let inc = (amplitude * (-d2 / (2.0 * sigma * sigma)).exp()).round();
                extra[cm.index(c, r)] += inc as u32;
            }
        }
    }
    for (c, e) in out.cells.iter_mut().zip(extra) {
        if *c != LETHAL && e > 0 {
            *c = (*c as u32 + e).min(INSCRIBED as u32) as u8;
        }
    }
    out
}

/// Moving people seen in the scan history: endpoints not explained by the
/// static map are clustered by single linkage; clusters of the newest scan
/// whose centroid moved at least [`MOVING_THRESHOLD`] since the matching
/// cluster of the oldest scan are returned (centroids, world frame).
pub fn detect_pedestrians(map: &WorldMap, scan_history: &[RangeScan], odom_history: &[Pose2D]) -> Vec<Point> {
    assert_eq!(scan_history.len(), odom_history.len(), "scan/odometry history mismatch");
    if scan_history.len() < 2 {
        return vec![];
    }
    let clusters_of = |scan: &RangeScan, pose: &Pose2D| -> Vec<Point> {
        let pts: Vec<Point> = hit_points(scan, pose).into_iter().filter(|p| !map.occupied_at(*p)).collect();
        cluster_centroids(&pts, CLUSTER_LINK)
    };
    let newest = clusters_of(scan_history.last().unwrap(), odom_history.last().unwrap());
    let oldest = clusters_of(&scan_history[0], &odom_history[0]);
    // people walk at most ~2.3 m/s in this world
    let assoc = 2.5 * 0.1 * (scan_history.len() - 1) as f64 + CLUSTER_LINK;
    newest
        .into_iter()
        .filter(|c| {
            let nearest = oldest.iter().map(|o| o.dist(*c)).fold(f64::INFINITY, f64::min);
            nearest.is_finite() && nearest <= assoc && nearest >= MOVING_THRESHOLD
        })
        .collect()
}

/// Single-linkage clustering (union-find); centroids in first-member order.
pub fn cluster_centroids(points: &[Point], link: f64) -> Vec<Point> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if points[i].dist(points[j]) <= link {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut sums: Vec<(usize, Point, usize)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match sums.iter_mut().find(|(r, _, _)| *r == root) {
            Some(entry) => {
                entry.1 = entry.1 + points[i];
                entry.2 += 1;
            }
            None => sums.push((root, points[i], 1)),
        }
    }
    sums.into_iter().map(|(_, s, k)| s * (1.0 / k as f64)).collect()
}

/// Exact squared Euclidean distance transform (Felzenszwalb & Huttenlocher),
/// in cell units, to the nearest `true` seed.
pub fn edt_squared(seeds: &[bool], width: usize, height: usize) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { inf }).collect();
    let mut f = vec![0.0; width.max(height)];
    let mut d = vec![0.0; width.max(height)];
    let mut v = vec![0usize; width.max(height)];
    let mut z = vec![0.0; width.max(height) + 1];
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = d[r];
        }
    }
    for r in 0..height {
        f[..width].copy_from_slice(&grid[r * width..(r + 1) * width]);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[r * width..(r + 1) * width].copy_from_slice(&d[..width]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(first) = (0..n).find(|&q| f[q].is_finite()) else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        d[q] = dq * dq + f[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MAX_RANGE, NUM_BEAMS};
    use proptest::prelude::*;

    fn clamped_scan() -> RangeScan {
        RangeScan { ranges: vec![MAX_RANGE; NUM_BEAMS], max_range: MAX_RANGE }
    }

    fn brute_edt(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; w * h];
        for r in 0..h {
            for c in 0..w {
                for rr in 0..h {
                    for cc in 0..w {
                        if seeds[rr * w + cc] {
                            let d2 = ((r as f64 - rr as f64).powi(2) + (c as f64 - cc as f64).powi(2)) as f64;
                            out[r * w + c] = out[r * w + c].min(d2);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn build_examples() {
        let map = WorldMap::closed_room(30, 20, 0.1, Point::default());
        let cm = build(&map, &clamped_scan(), &Pose2D::new(1.5, 1.0, 0.0));
        for r in 0..20 {
            for c in 0..30 {
                let border = r == 0 || c == 0 || r == 19 || c == 29;
                assert_eq!(cm.get(c, r) == LETHAL, border);
                assert!(cm.get(c, r) == LETHAL || cm.get(c, r) == FREE);
            }
        }

        let mut map = WorldMap::closed_room(30, 20, 0.1, Point::default());
        for c in 1..29 {
            map.set(c, 12, true);
        }
        let cm = build(&map, &clamped_scan(), &Pose2D::new(1.5, 0.5, 0.0));
        for c in 1..29 {
            assert_eq!(cm.get(c, 12), LETHAL);
            assert_eq!(cm.get(c, 11), FREE);
        }

        // pedestrian hit on beam 0 at 1.7 m
        let map = WorldMap::closed_room(60, 60, 0.1, Point::default());
        let pose = Pose2D::new(2.03, 3.01, 0.4);
        let mut scan = clamped_scan();
        scan.ranges[0] = 1.7;
        let cm = build(&map, &scan, &pose);
        let hx = 2.03 + 1.7 * 0.4f64.cos();
        let hy = 3.01 + 1.7 * 0.4f64.sin();
        let (c, r) = ((hx / 0.1).floor() as usize, (hy / 0.1).floor() as usize);
        assert_eq!(cm.get(c, r), LETHAL);
        assert_eq!(cm.cells.iter().filter(|&&x| x == LETHAL).count(), 4 * 59 + 1);
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = 12345u64;
        for _ in 0..20 {
            let (w, h) = (13, 9);
            let seeds: Vec<bool> = (0..w * h)
                .map(|_| {
                    rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (rng >> 33) % 11 == 0
                })
                .collect();
            assert_eq!(edt_squared(&seeds, w, h), brute_edt(&seeds, w, h));
        }
    }

    #[test]
    fn inflate_examples() {
        let cm = Costmap::new(10, 10, 0.1, Point::default());
        assert_eq!(inflate(&cm, 0.35, 3.0), cm);

        let mut cm = Costmap::new(40, 40, 0.05, Point::default());
        cm.set(10, 10, LETHAL);
        let out = inflate(&cm, 0.35, 3.0);
        // 7 cells × 0.05 m = inscribed radius exactly
        assert_eq!(out.get(17, 10), 252);
        assert_eq!(out.get(16, 10), INSCRIBED);
        // 11 cells = 0.55 m: round(252·e^{-0.6})
        assert_eq!((252.0 * (-0.6f64).exp()).round(), 138.0);
        assert_eq!(out.get(21, 10), 138);
        assert_eq!(out.get(10, 10), LETHAL);
    }

    #[test]
    fn social_layer_examples() {
        let mut cm = Costmap::new(50, 50, 0.1, Point::default());
        cm.set(0, 0, LETHAL);
        assert_eq!(add_social_layer(&cm, &[], 0.8, 200.0), cm);

        let center = cm.cell_center(25, 25);
        let out = add_social_layer(&cm, &[center], 0.8, 200.0);
        assert_eq!(out.get(25, 25), 200);
        assert_eq!(out.get(0, 0), LETHAL);
        // 8 cells at 0.1 m = 1σ
        assert_eq!((200.0 * (-0.5f64).exp()).round(), 121.0);
        assert_eq!(out.get(33, 25), 121);

        let out = add_social_layer(&cm, &[center, center], 0.8, 200.0);
        assert_eq!(out.get(25, 25), INSCRIBED);
    }

    #[test]
    fn detect_static_world_is_empty() {
        let map = WorldMap::closed_room(100, 100, 0.1, Point::default());
        let pose = Pose2D::new(5.0, 5.0, 0.0);
        let scan = crate::sim::sense_from(&map, &[], &pose);
        let scans = vec![scan; 5];
        let poses = vec![pose; 5];
        assert!(detect_pedestrians(&map, &scans, &poses).is_empty());
    }

    #[test]
    fn clustering_separates_distant_groups() {
        let mut pts = vec![];
        for i in 0..5 {
            pts.push(Point::new(1.0 + 0.1 * i as f64, 1.0));
            pts.push(Point::new(1.0 + 0.1 * i as f64, 4.0));
        }
        let cs = cluster_centroids(&pts, CLUSTER_LINK);
        assert_eq!(cs.len(), 2);
        assert!(cs[0].dist(Point::new(1.2, 1.0)) < 1e-12);
        assert!(cs[1].dist(Point::new(1.2, 4.0)) < 1e-12);
    }

    proptest! {
        #[test]
        fn inflation_is_monotone(cells in prop::collection::vec(0u8..3, 15 * 15), extra in 0usize..225) {
            let mut cm = Costmap::new(15, 15, 0.1, Point::default());
            for (c, v) in cm.cells.iter_mut().zip(cells) {
                *c = if v == 0 { LETHAL } else { FREE };
            }
            let a = inflate(&cm, 0.35, 3.0);
            cm.cells[extra] = LETHAL;
            let b = inflate(&cm, 0.35, 3.0);
            prop_assert!(a.cells.iter().zip(&b.cells).all(|(x, y)| y >= x));
            let twice = inflate(&b, 0.35, 3.0);
            prop_assert!(twice.cells.iter().zip(&b.cells).all(|(x, y)| x >= y));
        }

        #[test]
        fn social_layer_is_order_independent(
            dets in prop::collection::vec((0.0..3.0f64, 0.0..3.0f64), 0..6)
        ) {
            let cm = Costmap::new(30, 30, 0.1, Point::default());
            let pts: Vec<Point> = dets.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert_eq!(add_social_layer(&cm, &pts, 0.8, 200.0), add_social_layer(&cm, &rev, 0.8, 200.0));
        }
    }
}
