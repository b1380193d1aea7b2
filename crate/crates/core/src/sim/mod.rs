//! Deterministic 2D world: occupancy map, scripted pedestrians, unicycle
//! robot, range sensing and the scripted demonstrator.

mod expert;
mod map;
mod path;
mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use expert::{expert_policy, Expert, ExpertConfig, ExpertDecision};
pub use map::{MapMetadata, WorldMap};
pub use path::PathFrame;
pub use scenario::{
    build_map, generate_campus, generate_lab, lab_map, spawn, static_route, Block, Door, Layout, PedScript,
    PedWaypoint, ScenarioKind, ScenarioSpec, CAMPUS, LAB, LAB_GOAL, LAB_START,
};

use crate::geometry::{wrap, Command, Point, Pose2D, RangeScan, DT, MAX_RANGE, NUM_BEAMS};

pub const ROBOT_RADIUS: f64 = 0.3;
pub const PED_RADIUS: f64 = 0.3;
/// Repulsion gain and length scale of the pedestrian model.
pub const REPULSION_GAIN: f64 = 1.0;
pub const REPULSION_SIGMA: f64 = 0.4;
/// Extra clearance people keep from the robot disc.
pub const CONTACT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub pos: Point,
    pub vel: Point,
    pub waypoints: Vec<PedWaypoint>,
    pub pref_speed: f64,
    pub radius: f64,
    /// Members of one group do not repel each other.
    pub group: u32,
    /// Index of the waypoint being approached.
    pub target: usize,
    pub wait_left: f64,
    pub delay_left: f64,
    pub despawn: bool,
}

impl Pedestrian {
    pub fn from_script(id: u32, s: &PedScript) -> Self {
        Self {
            id,
            pos: s.start,
            vel: Point::default(),
            waypoints: s.waypoints.clone(),
            pref_speed: s.pref_speed,
            radius: s.radius,
            group: s.group,
            target: 0,
            wait_left: 0.0,
            delay_left: s.delay,
            despawn: s.despawn,
        }
    }

    pub fn is_walking(&self) -> bool {
        self.delay_left <= 0.0 && self.wait_left <= 0.0 && self.target < self.waypoints.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub robot: Pose2D,
    pub command: Command,
    pub pedestrians: Vec<Pedestrian>,
    pub map: Arc<WorldMap>,
    pub collided: bool,
}

/// Closed-form unicycle integration over `dt` at constant command.
pub fn integrate_unicycle(pose: &Pose2D, cmd: Command, dt: f64) -> Pose2D {
    let Command { v, omega } = cmd;
    if omega.abs() < 1e-6 {
        let (s, c) = pose.theta.sin_cos();
        Pose2D { x: pose.x + v * dt * c, y: pose.y + v * dt * s, theta: pose.theta }
    } else {
        let th1 = pose.theta + omega * dt;
        let r = v / omega;
        Pose2D {
            x: pose.x + r * (th1.sin() - pose.theta.sin()),
            y: pose.y - r * (th1.cos() - pose.theta.cos()),
            theta: wrap(th1),
        }
    }
}

fn repulsion(from: Point, at: Point, r_sum: f64) -> Point {
    let d = at - from;
    let dist = d.norm();
    if dist < 1e-9 {
        return Point::default();
    }
    let mag = REPULSION_GAIN * ((r_sum - dist) / REPULSION_SIGMA).exp();
    d * (mag / dist)
}

/// Walkers whose heading is blocked by the robot disc (inflated to
/// `r_block`) steer along the tangent passing it on their right.
fn detour(pos: Point, v: Point, robot: Point, r_block: f64, to_go: f64) -> Point {
    let rel = robot - pos;
    let d = rel.norm();
    let speed = v.norm();
    if speed < 1e-9 || d <= r_block || d > to_go || rel.dot(v) <= 0.0 {
        return v;
    }
    let half = (r_block / d).asin();
    let off = v.y.atan2(v.x) - rel.y.atan2(rel.x);
    let off = crate::geometry::wrap(off);
    if off.abs() >= half {
        return v;
    }
    let a = rel.y.atan2(rel.x) - half;
    Point::new(a.cos(), a.sin()) * speed
}

fn disc_free(map: &WorldMap, p: Point) -> bool {
    !map.occupied_at(p)
}

fn advance_pedestrians(peds: &[Pedestrian], robot: Point, map: &WorldMap, dt: f64) -> Vec<Pedestrian> {
    let mut next = Vec::with_capacity(peds.len());
    for (i, p) in peds.iter().enumerate() {
        let mut q = p.clone();
        if q.delay_left > 0.0 {
            q.delay_left -= dt;
            q.vel = Point::default();
            next.push(q);
            continue;
        }
        if q.wait_left > 0.0 {
            q.wait_left -= dt;
            q.vel = Point::default();
            next.push(q);
            continue;
        }
        // a pass-through waypoint covered by the robot is skipped once close
        while q.target + 1 < q.waypoints.len() && {
            let w = &q.waypoints[q.target];
            w.wait == 0.0 && w.point().dist(robot) < q.radius + ROBOT_RADIUS + 0.1 && w.point().dist(q.pos) < 1.0
        } {
            q.target += 1;
        }
        let Some(wp) = q.waypoints.get(q.target).cloned() else {
            q.vel = Point::default();
            next.push(q);
            continue;
        };
        let to_wp = wp.point() - q.pos;
        let dist = to_wp.norm();
        let mut v = if dist > 1e-9 { to_wp * (q.pref_speed / dist) } else { Point::default() };
        v = detour(q.pos, v, robot, q.radius + ROBOT_RADIUS + 2.0 * CONTACT_MARGIN, dist);
        v = v + repulsion(robot, q.pos, q.radius + ROBOT_RADIUS);
        for (j, o) in peds.iter().enumerate() {
            if j != i && o.group != q.group {
                v = v + repulsion(o.pos, q.pos, q.radius + o.radius);
            }
        }
        let vmax = 1.5 * q.pref_speed;
        let speed = v.norm();
        if speed > vmax {
            v = v * (vmax / speed);
        }
        let mut moved = q.pos + v * dt;
        if dist <= q.pref_speed * dt && (moved - wp.point()).norm() <= q.pref_speed * dt {
            moved = wp.point();
        }
        // people never step into the robot: drop the approaching radial part
        let r_sum = q.radius + ROBOT_RADIUS + CONTACT_MARGIN;
        if moved.dist(robot) < r_sum && moved.dist(robot) < q.pos.dist(robot) {
            let radial = q.pos - robot;
            let n = radial * (1.0 / radial.norm().max(1e-9));
            let step = moved - q.pos;
            let slid = q.pos + (step - n * step.dot(n).min(0.0));

            moved = if slid.dist(robot) >= r_sum.min(q.pos.dist(robot)) { slid } else { q.pos };
        }
        if !disc_free(map, moved) {
            let x_only = Point::new(moved.x, q.pos.y);
            let y_only = Point::new(q.pos.x, moved.y);
            moved = if disc_free(map, x_only) {
                x_only
            } else if disc_free(map, y_only) {
                y_only
            } else {
                q.pos
            };
        }
        q.vel = (moved - q.pos) * (1.0 / dt);
        q.pos = moved;
        if q.pos.dist(wp.point()) < 1e-9 || q.pos.dist(wp.point()) < 0.05 {
            q.pos = if disc_free(map, wp.point()) { wp.point() } else { q.pos };
            q.wait_left = wp.wait;
            q.target += 1;
            if q.target >= q.waypoints.len() && q.despawn {
                continue;
            }
        }
        next.push(q);
    }
    next
}

/// True when the robot center is in an occupied cell or its disc overlaps
/// a pedestrian.
pub fn in_collision(map: &WorldMap, robot: Point, peds: &[Pedestrian]) -> bool {
    map.occupied_at(robot) || peds.iter().any(|p| p.pos.dist(robot) < p.radius + ROBOT_RADIUS)
}

/// Advances the world by `dt`. Commands are clamped to the robot limits; a
/// collision freezes the robot and raises `collided`.
pub fn step(state: &SimState, cmd: Command, dt: f64) -> SimState {
    let cmd = cmd.clamped();
    if state.collided {
        return state.clone();
    }
    let robot = integrate_unicycle(&state.robot, cmd, dt);
    let peds = advance_pedestrians(&state.pedestrians, state.robot.position(), &state.map, dt);
    let collided = in_collision(&state.map, robot.position(), &peds);
    SimState {
        time: state.time + dt,
        robot: if collided { state.robot } else { robot },
        command: cmd,
        pedestrians: peds,
        map: Arc::clone(&state.map),
        collided,
    }
}

/// Distance along a ray to the first occupied cell (Amanatides–Woo
/// traversal), or `None` within `max_range`.
pub fn cast_grid(map: &WorldMap, origin: Point, angle: f64, max_range: f64) -> Option<f64> {
    let (dy, dx) = angle.sin_cos();
    let res = map.resolution;
    let gx = (origin.x - map.origin.x) / res;
    let gy = (origin.y - map.origin.y) / res;
    let mut cx = gx.floor() as i64;
    let mut cy = gy.floor() as i64;
    let inside = |cx: i64, cy: i64| cx >= 0 && cy >= 0 && (cx as usize) < map.width && (cy as usize) < map.height;
    if !inside(cx, cy) || map.occupied(cx as usize, cy as usize) {
        return Some(0.0);
    }
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        ((cx + 1) as f64 - gx) * res / dx
    } else if dx < 0.0 {
        (gx - cx as f64) * res / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        ((cy + 1) as f64 - gy) * res / dy
    } else if dy < 0.0 {
        (gy - cy as f64) * res / -dy
    } else {
        f64::INFINITY
    };
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t > max_range {
            return None;
        }
        if !inside(cx, cy) || map.occupied(cx as usize, cy as usize) {
            return Some(t);
        }
    }
}

/// Smallest positive ray parameter hitting a disc.
pub fn cast_disc(origin: Point, angle: f64, center: Point, radius: f64) -> Option<f64> {
    let d = Point::new(angle.cos(), angle.sin());
    let oc = origin - center;
    let b = oc.dot(d);
    let c = oc.dot(oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    let t1 = -b + sq;
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        // origin inside the disc
        Some(0.0)
    } else {
        None
    }
}

/// Smallest reported range; keeps every beam strictly positive.
const MIN_RANGE: f64 = 1e-3;

pub fn sense_from(map: &WorldMap, peds: &[Pedestrian], pose: &Pose2D) -> RangeScan {
    let origin = pose.position();
    let ranges = (0..NUM_BEAMS)
        .map(|i| {
            let a = pose.theta + 2.0 * std::f64::consts::PI * i as f64 / NUM_BEAMS as f64;
            let mut r = cast_grid(map, origin, a, MAX_RANGE).unwrap_or(MAX_RANGE);
            for p in peds {
                if let Some(t) = cast_disc(origin, a, p.pos, p.radius) {
                    r = r.min(t);
                }
            }
            r.clamp(MIN_RANGE, MAX_RANGE)
        })
        .collect();
    RangeScan { ranges, max_range: MAX_RANGE }
}

/// 72-beam scan from the robot pose against map cells and pedestrian discs.
pub fn sense(state: &SimState) -> RangeScan {
    sense_from(&state.map, &state.pedestrians, &state.robot)
}

/// Default control period; re-exported for callers that only use the sim.
pub const SIM_DT: f64 = DT;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn empty_state(robot: Pose2D) -> SimState {
        SimState {
            time: 0.0,
            robot,
            command: Command::STOP,
            pedestrians: vec![],
            map: Arc::new(WorldMap::closed_room(200, 200, 0.1, Point::default())),
            collided: false,
        }
    }

    fn ped_at(p: Point) -> Pedestrian {
        Pedestrian::from_script(
            0,
            &PedScript {
                start: p,
                waypoints: vec![],
                pref_speed: 1.0,
                radius: PED_RADIUS,
                group: 1,
                delay: 0.0,
                despawn: false,
            },
        )
    }

    #[test]
    fn step_examples() {
        let s = empty_state(Pose2D::new(5.0, 5.0, 0.0));
        let n = step(&s, Command::new(0.0, 0.0), 0.1);
        assert_eq!(n.robot, s.robot);

        let n = step(&s, Command::new(1.0, 0.0), 0.1);
        assert!((n.robot.x - 5.1).abs() < 1e-12);
        assert_eq!(n.robot.y, 5.0);

        let n = step(&s, Command::new(1.0, 1.0), 0.1);
        // closed-form arc for r = v/ω = 1
        let (ex, ey) = (0.1f64.sin(), 1.0 - 0.1f64.cos());
        assert!((n.robot.x - 5.0 - ex).abs() < 1e-12);
        assert!((n.robot.y - 5.0 - ey).abs() < 1e-12);
        assert!((n.robot.theta - 0.1).abs() < 1e-12);
        assert!((ex - 0.09983).abs() < 1e-5 && (ey - 0.00500).abs() < 1e-5);
    }

    #[test]
    fn step_is_deterministic_and_clamps() {
        let mut s = empty_state(Pose2D::new(5.0, 5.0, 0.3));
        s.pedestrians.push(ped_at(Point::new(8.0, 5.0)));
        s.pedestrians[0].waypoints = vec![PedWaypoint { x: 2.0, y: 5.0, wait: 0.0 }];
        let a = step(&s, Command::new(5.0, -9.0), 0.1);
        let b = step(&s, Command::new(5.0, -9.0), 0.1);
        assert_eq!(a, b);
        assert_eq!(a.command, Command::new(1.6, -1.5));
    }

    #[test]
    fn collision_sets_flag_and_freezes() {
        let mut s = empty_state(Pose2D::new(1.0, 1.0, 0.0));
        s.pedestrians.push(ped_at(Point::new(1.65, 1.0)));
        let n = step(&s, Command::new(1.0, 0.0), 0.1);
        assert!(n.collided);
        assert_eq!(n.robot, s.robot);
    }

    #[test]
    fn sense_empty_room() {
        let s = empty_state(Pose2D::new(10.0, 10.0, 0.0));
        let scan = sense(&s);
        assert_eq!(scan.ranges.len(), 72);
        // inner wall face is 9.9 m away along each axis; beam 0 at 9.9 stays
        // under the 10 m clamp while diagonals saturate
        assert!((scan.ranges[0] - 9.9).abs() < 1e-9);
        assert!((scan.ranges[18] - 9.9).abs() < 1e-9);
        assert_eq!(scan.ranges[9], MAX_RANGE);
        assert!(scan.ranges.iter().all(|&r| r > 0.0 && r <= MAX_RANGE));

        let big = SimState {
            map: Arc::new(WorldMap::closed_room(300, 300, 0.1, Point::default())),
            ..empty_state(Pose2D::new(15.0, 15.0, 0.0))
        };
        assert_eq!(sense(&big).ranges[0], MAX_RANGE);
    }

    #[test]
    fn sense_pedestrian_ahead() {
        let mut s = empty_state(Pose2D::new(10.0, 10.0, 0.0));
        s.pedestrians.push(ped_at(Point::new(12.0, 10.0)));
        let scan = sense(&s);
        assert!((scan.ranges[0] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn sense_matches_ray_segment_oracle_at_45_degrees() {
        // wall face along x = 13.0 (cells from col 130 onward), robot 3 m away
        let mut map = WorldMap::closed_room(200, 200, 0.1, Point::default());
        map.fill_rect(Point::new(13.05, 0.0), Point::new(20.0, 20.0), true);
        let pose = Pose2D::new(10.0, 10.0, PI / 4.0);
        let scan = sense_from(&map, &[], &pose);
        for (i, &r) in scan.ranges.iter().enumerate() {
            let a = pose.theta + scan.beam_angle(i);
            let (dx, dy) = (a.cos(), a.sin());
            // independent oracle: intersection with the segment x = 13, y ∈ [0.1, 19.9]
            if dx > 1e-9 {
                let t = 3.0 / dx;
                let y = 10.0 + t * dy;
                if t <= MAX_RANGE && (0.1..=19.9).contains(&y) {
                    assert!((r - t).abs() < 1e-6, "beam {i}: {r} vs {t}");
                }
            }
        }
        // beam 63 points along −π/4 + π/4 = 0 relative to the world x axis
        assert!((scan.ranges[63] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn sense_is_mirror_symmetric() {
        let mut map = WorldMap::closed_room(200, 200, 0.1, Point::default());
        map.fill_rect(Point::new(13.0, 11.0), Point::new(14.0, 12.5), true);
        map.fill_rect(Point::new(13.0, 7.5), Point::new(14.0, 9.0), true);
        let s = SimState { map: Arc::new(map), ..empty_state(Pose2D::new(10.05, 10.0, 0.0)) };
        let scan = sense(&s);
        for i in 1..36 {
            assert!((scan.ranges[i] - scan.ranges[72 - i]).abs() < 1e-9, "beam {i}");
        }
    }

    proptest::proptest! {
        #[test]
        fn walkers_never_step_into_a_stopped_robot(
            sx in 4.0..8.0f64, sy in 8.0..12.0f64, gx in 12.0..16.0f64, gy in 8.0..12.0f64,
            rx in 8.0..12.0f64, ry in 9.0..11.0f64, speed in 0.3..1.8f64,
        ) {
            let robot = Pose2D::new(rx, ry, 0.0);
            let start = Point::new(sx, sy);
            proptest::prop_assume!(start.dist(robot.position()) > 1.0);
            let script = PedScript {
                start,
                waypoints: vec![PedWaypoint::new(Point::new(gx, gy), 0.0)],
                pref_speed: speed,
                radius: PED_RADIUS,
                group: 1,
                delay: 0.0,
                despawn: false,
            };
            let mut s = SimState { pedestrians: vec![Pedestrian::from_script(0, &script)], ..empty_state(robot) };
            for _ in 0..200 {
                s = step(&s, Command::STOP, 0.1);
                proptest::prop_assert!(!s.collided);
            }
        }
    }
}
