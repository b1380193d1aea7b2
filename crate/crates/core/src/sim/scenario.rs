use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::path::PathFrame;
use super::{MapMetadata, Pedestrian, SimState, WorldMap, PED_RADIUS};
use crate::error::{Error, Result};
use crate::geometry::{Command, GlobalPlan, Point, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FrontalApproach,
    Intersection,
    NarrowDoorway,
    Following,
    Overtake,
    WaitingLine,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::FrontalApproach,
        ScenarioKind::Intersection,
        ScenarioKind::NarrowDoorway,
        ScenarioKind::Following,
        ScenarioKind::Overtake,
        ScenarioKind::WaitingLine,
    ];
    /// The curated out-of-distribution kinds.
    pub const CURATED: [ScenarioKind; 3] =
        [ScenarioKind::Intersection, ScenarioKind::FrontalApproach, ScenarioKind::Following];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FrontalApproach => "frontal_approach",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::NarrowDoorway => "narrow_doorway",
            ScenarioKind::Following => "following",
            ScenarioKind::Overtake => "overtake",
            ScenarioKind::WaitingLine => "waiting_line",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedWaypoint {
    pub x: f64,
    pub y: f64,
    /// Seconds to stand still after arriving.
    #[serde(default)]
    pub wait: f64,
}

impl PedWaypoint {
    pub fn new(p: Point, wait: f64) -> Self {
        Self { x: p.x, y: p.y, wait }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedScript {
    pub start: Point,
    pub waypoints: Vec<PedWaypoint>,
    pub pref_speed: f64,
    #[serde(default = "default_ped_radius")]
    pub radius: f64,
    #[serde(default)]
    pub group: u32,
    /// Seconds to stand at `start` before walking.
    #[serde(default)]
    pub delay: f64,
    /// Leave the world after the last waypoint.
    #[serde(default)]
    pub despawn: bool,
}

fn default_ped_radius() -> f64 {
    PED_RADIUS
}

/// Axis-aligned block added to the map template (cells whose centers lie
/// inside are occupied).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub min: Point,
    pub max: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub center: Point,
    pub width: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    #[serde(default)]
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub door: Option<Door>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Map template id: `campus` or `lab`.
    pub map: String,
    pub seed: u64,
    #[serde(default)]
    pub layout: Layout,
    pub peds: Vec<PedScript>,
    pub start: Pose2D,
    pub goal: Pose2D,
}

impl ScenarioSpec {
    pub fn id(&self) -> String {
        format!("{}-{}-{}", self.map, self.kind, self.seed)
    }
}

pub const CAMPUS: &str = "campus";
pub const LAB: &str = "lab";

const LAB_PGM: &str = include_str!("../../assets/lab.pgm");
const LAB_META: &str = include_str!("../../assets/lab.json");

/// The fixed lab floor used for curated held-out scenarios.
pub fn lab_map() -> Arc<WorldMap> {
    static LAB: OnceLock<Arc<WorldMap>> = OnceLock::new();
    LAB.get_or_init(|| {
        let meta: MapMetadata = serde_json::from_str(LAB_META).expect("lab metadata");
        Arc::new(WorldMap::from_pgm(LAB_PGM, meta).expect("lab map"))
    })
    .clone()
}

/// Static map of a scenario: template plus layout blocks.
pub fn build_map(spec: &ScenarioSpec) -> Result<WorldMap> {
    let mut map = match spec.map.as_str() {
        CAMPUS => WorldMap::closed_room(200, 200, 0.1, Point::default()),
        LAB => (*lab_map()).clone(),
        other => return Err(Error::InvalidArgument(format!("unknown map template {other:?}"))),
    };
    for b in &spec.layout.blocks {
        map.fill_rect(b.min, b.max, true);
    }
    Ok(map)
}

/// Initial simulation state; fails when the start or goal is blocked or not
/// connected through free space.
pub fn spawn(spec: &ScenarioSpec) -> Result<SimState> {
    let map = build_map(spec)?;
    let (s, g) = (spec.start.position(), spec.goal.position());
    if map.occupied_at(s) || map.occupied_at(g) {
        return Err(Error::InfeasibleScenario(format!("{}: start or goal occupied", spec.id())));
    }
    if !map.connected(s, g) {
        return Err(Error::InfeasibleScenario(format!("{}: no free path from start to goal", spec.id())));
    }
    let mut pedestrians = Vec::with_capacity(spec.peds.len());
    for (i, script) in spec.peds.iter().enumerate() {
        if map.occupied_at(script.start) || script.pref_speed <= 0.0 || script.radius <= 0.0 {
            return Err(Error::InfeasibleScenario(format!("{}: invalid pedestrian {i}", spec.id())));
        }
        pedestrians.push(Pedestrian::from_script(i as u32, script));
    }
    Ok(SimState {
        time: 0.0,
        robot: spec.start,
        command: Command::STOP,
        pedestrians,
        map: Arc::new(map),
        collided: false,
    })
}

/// Route the expert tracks on the static map.
pub fn static_route(map: &WorldMap, start: Point, goal: Point) -> Result<GlobalPlan> {
    let cm = crate::costmap::from_map(map);
    let cm = crate::costmap::inflate(&cm, crate::costmap::DEFAULT_INSCRIBED_RADIUS, crate::costmap::DEFAULT_DECAY);
    crate::planner::plan_global(&cm, start, goal)
}

const CORRIDOR_Y: f64 = 10.05;

fn rng_for(kind: ScenarioKind, seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (kind as u64 + 1) ^ salt)
}

fn script(start: Point, waypoints: Vec<PedWaypoint>, speed: f64, group: u32, delay: f64) -> PedScript {
    PedScript { start, waypoints, pref_speed: speed, radius: PED_RADIUS, group, delay, despawn: true }
}

fn along(frame: &PathFrame, from: f64, to: f64, l: f64, step: f64) -> Vec<PedWaypoint> {
    let n = ((to - from).abs() / step).ceil().max(1.0) as usize;
    (1..=n).map(|k| PedWaypoint::new(frame.at(from + (to - from) * k as f64 / n as f64, l), 0.0)).collect()
}

/// In-distribution episode: a randomized straight campus corridor with one
/// social event of `kind`.
pub fn generate_campus(kind: ScenarioKind, seed: u64) -> Result<ScenarioSpec> {
    let mut rng = rng_for(kind, seed, 0xC0FFEE);
    let half = (rng.gen_range(3.6..=5.0f64) * 10.0).round() / 20.0;
    let yc = CORRIDOR_Y;
    let mut layout = Layout::default();
    layout.blocks.push(Block { min: Point::new(0.0, 0.0), max: Point::new(20.0, yc - half) });
    layout.blocks.push(Block { min: Point::new(0.0, yc + half), max: Point::new(20.0, 20.0) });
    let start = Pose2D::new(1.5, yc, 0.0);
    let goal = Pose2D::new(18.5, yc, 0.0);
    let s_e: f64 = rng.gen_range(5.5..11.5);
    let x_e = start.x + s_e;

    // decorative pillars against the walls, away from the event
    let pillars = rng.gen_range(0..=3);
    for _ in 0..pillars {
        let x: f64 = rng.gen_range(3.0..17.0);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if (x - x_e).abs() < 4.0 {
            continue;
        }
        let inner = yc + side * (half - 0.4);
        let outer = yc + side * half;
        layout.blocks.push(Block {
            min: Point::new(x - 0.2, inner.min(outer)),
            max: Point::new(x + 0.2, inner.max(outer)),
        });
    }

    let mut map = WorldMap::closed_room(200, 200, 0.1, Point::default());
    for b in &layout.blocks {
        map.fill_rect(b.min, b.max, true);
    }
    let frame = PathFrame::new(&GlobalPlan::new(vec![start.position(), goal.position()])?);
    let end = frame.length();
    let mut peds = Vec::new();
    let wall_l = half - 0.45;

    match kind {
        ScenarioKind::FrontalApproach => {
            let speed = rng.gen_range(1.0..1.4);
            let l0 = rng.gen_range(0.25..0.5);
            let s0 = s_e + 6.0;
            peds.push(script(frame.at(s0, l0), along(&frame, s0, -0.5, l0, 20.0), speed, 1, 0.0));
            match rng.gen_range(0..3) {
                1 => {
                    let s1 = s0 + 1.2;
                    peds.push(script(frame.at(s1, l0), along(&frame, s1, -0.5, l0, 20.0), speed, 1, 0.0));
                }
                2 => {
                    let l1 = (l0 + 0.7).min(wall_l);
                    peds.push(script(frame.at(s0, l1), along(&frame, s0, -0.5, l1, 20.0), speed, 1, 0.0));
                }
                _ => {}
            }
        }
        ScenarioKind::Intersection => {
            let n = rng.gen_range(1..=3);
            let speed = rng.gen_range(0.8..1.3);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let eta_robot = s_e / crate::geometry::V_MAX;
            let travel = wall_l / speed;
            let delay = (eta_robot - travel + rng.gen_range(-1.0..0.5)).max(0.0);
            for k in 0..n {
                let s = s_e + 0.7 * k as f64 - 0.35 * (n - 1) as f64;
                let from = frame.at(s, side * wall_l);
                let to = frame.at(s, -side * wall_l);
                peds.push(script(from, vec![PedWaypoint::new(to, 0.0)], speed, 1, delay + 0.3 * k as f64));
            }
        }
        ScenarioKind::NarrowDoorway => {
            let x_d = (x_e * 10.0).round() / 10.0;
            let gap = 0.45;
            layout.blocks.push(Block { min: Point::new(x_d - 0.1, 0.0), max: Point::new(x_d + 0.1, yc - gap - 0.05) });
            layout.blocks.push(Block { min: Point::new(x_d - 0.1, yc + gap + 0.05), max: Point::new(x_d + 0.1, 20.0) });
            let door = Door { center: Point::new(x_d, yc), width: 2.0 * gap };
            layout.door = Some(door);
            let n = rng.gen_range(1..=3);
            let speed = rng.gen_range(0.9..1.3);
            let s_d = x_d - start.x;
            let eta_robot = (s_d - 2.0) / crate::geometry::V_MAX;
            let mut delay = 0.0;
            let mut arrival = f64::NEG_INFINITY;
            for k in 0..n {
                let s0 = s_d + rng.gen_range(3.0..4.5);
                let l0 = rng.gen_range(-0.6..0.6);
                let travel = (s0 - s_d) / speed;
                if k == 0 {
                    delay = (eta_robot - travel + rng.gen_range(-1.5..0.5)).max(0.0);
                } else {
                    delay += rng.gen_range(1.0..1.6);
                }
                // one person in the gap at a time
                delay = delay.max(arrival + 1.2 - travel);
                arrival = delay + travel;
                let exit_l = -(half - 0.8).min(1.2);
                let wps = vec![
                    PedWaypoint::new(frame.at(s_d + 0.6, 0.0), 0.0),
                    PedWaypoint::new(frame.at(s_d - 0.6, 0.0), 0.0),
                    PedWaypoint::new(frame.at(s_d - 2.0, exit_l), 0.0),
                    PedWaypoint::new(frame.at(-0.5, exit_l), 0.0),
                ];
                peds.push(script(frame.at(s0, l0), wps, speed, 1, delay));
            }
        }
        ScenarioKind::Following => {
            let speed = rng.gen_range(0.7..1.1);
            let s0 = rng.gen_range(2.5..3.5);
            let offsets: &[f64] = if rng.gen_bool(0.5) { &[0.0] } else { &[-0.35, 0.35] };
            for &l in offsets {
                peds.push(script(frame.at(s0, l), along(&frame, s0, end + 0.8, l, 20.0), speed, 1, 0.0));
            }
        }
        ScenarioKind::Overtake => {
            let speed = rng.gen_range(0.3..0.5);
            let s0 = rng.gen_range(4.0..6.0);
            let l = rng.gen_range(-0.15..0.3);
            peds.push(script(frame.at(s0, l), along(&frame, s0, end + 0.8, l, 20.0), speed, 1, 0.0));
        }
        ScenarioKind::WaitingLine => {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let tail: f64 = -side * rng.gen_range(0.3..0.5);
            // tail first, then toward the counter at the wall
            let mut slots = vec![tail];
            while (slots.last().unwrap() + side * 0.8).abs() <= wall_l {
                let next = slots.last().unwrap() + side * 0.8;
                slots.push(next);
            }
            let n = slots.len();
            let speed: f64 = 0.8;
            let period: f64 = rng.gen_range(1.6..2.6);
            let eta = (s_e - 1.6) / crate::geometry::V_MAX;
            let t0 = eta + rng.gen_range(0.5..1.5);
            let shuffle = 0.8 / speed;
            for (i, &l) in slots.iter().enumerate() {
                // i = 0 is the tail; the head (i = n-1) leaves first
                let rank = n - 1 - i;
                let mut wps = Vec::new();
                for j in 0..rank {
                    let slot = slots[i + j + 1];
                    wps.push(PedWaypoint::new(frame.at(s_e, slot), (period - shuffle).max(0.2)));
                }
                let head = slots[n - 1];
                wps.push(PedWaypoint::new(frame.at(s_e + 1.0, head), 0.0));
                wps.push(PedWaypoint::new(frame.at(end + 0.8, head), 0.0));
                peds.push(script(frame.at(s_e, l), wps, speed, 1, t0));
            }
        }
    }

    Ok(ScenarioSpec { kind, map: CAMPUS.into(), seed, layout, peds, start, goal })
}

/// Lab start and goal poses.
pub const LAB_START: Pose2D = Pose2D { x: 3.5, y: 4.0, theta: std::f64::consts::FRAC_PI_2 };
pub const LAB_GOAL: Pose2D = Pose2D { x: 16.5, y: 16.0, theta: std::f64::consts::FRAC_PI_2 };

/// Held-out episode on the lab floor; pedestrian speeds and group sizes lie
/// outside the campus ranges.
pub fn generate_lab(kind: ScenarioKind, seed: u64) -> Result<ScenarioSpec> {
    let mut rng = rng_for(kind, seed, 0x1AB);
    let map = lab_map();
    let route = static_route(&map, LAB_START.position(), LAB_GOAL.position())?;
    let frame = PathFrame::new(&route);
    let end = frame.length();
    // the long descending leg in the middle bay
    let (s_mid, _) = frame.project(Point::new(10.0, rng.gen_range(9.0..11.0)));
    let mut peds = Vec::new();
    match kind {
        ScenarioKind::FrontalApproach => {
            let n = rng.gen_range(2..=3);
            let speed = rng.gen_range(1.45..1.8);
            let l0 = rng.gen_range(0.35..0.6);
            let s0 = s_mid + 4.0;
            let eta = s_mid / crate::geometry::V_MAX;
            let delay = (eta - 4.0 / speed + rng.gen_range(-1.0..1.0)).max(0.0);
            for k in 0..n {
                let l = l0 - 0.7 * k as f64;
                peds.push(script(frame.at(s0, l), along(&frame, s0, s_mid - 8.0, l, 1.0), speed, 1, delay));
            }
        }
        ScenarioKind::Intersection => {
            let n = rng.gen_range(2..=3);
            let speed = rng.gen_range(1.35..1.7);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let span = 2.3;
            let eta = s_mid / crate::geometry::V_MAX;
            let delay = (eta - span / speed + rng.gen_range(-1.0..0.5)).max(0.0);
            for k in 0..n {
                let s = s_mid + 0.7 * k as f64 - 0.35 * (n - 1) as f64;
                let from = frame.at(s, side * span);
                let to = frame.at(s, -side * span);
                peds.push(script(from, vec![PedWaypoint::new(to, 0.0)], speed, 1, delay + 0.3 * k as f64));
            }
        }
        ScenarioKind::Following => {
            let speed = rng.gen_range(1.2..1.4);
            let s0 = rng.gen_range(2.5..3.5);
            let offsets: &[f64] = if rng.gen_bool(0.5) { &[0.0] } else { &[-0.35, 0.35] };
            for &l in offsets {
                peds.push(script(frame.at(s0, l), along(&frame, s0, end + 0.6, l, 0.5), speed, 1, 0.0));
            }
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a curated lab scenario"))),
    }
    Ok(ScenarioSpec {
        kind,
        map: LAB.into(),
        seed,
        layout: Layout::default(),
        peds,
        start: LAB_START,
        goal: LAB_GOAL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spawn_is_deterministic() {
        let spec = generate_campus(ScenarioKind::FrontalApproach, 0).unwrap();
        let a = spawn(&spec).unwrap();
        let b = spawn(&generate_campus(ScenarioKind::FrontalApproach, 0).unwrap()).unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert!(text.contains("\"kind\":\"frontal_approach\""));
    }

    #[test]
    fn doorway_has_one_gap_on_the_line() {
        for seed in 0..5 {
            let spec = generate_campus(ScenarioKind::NarrowDoorway, seed).unwrap();
            let map = build_map(&spec).unwrap();
            let door = spec.layout.door.unwrap();
            let (col, _) = map.cell_of(door.center).unwrap();
            // walk the wall column: exactly one free run, 9 cells wide
            let mut runs = vec![];
            let mut run = 0;
            for r in 0..map.height {
                if map.occupied(col, r) {
                    if run > 0 {
                        runs.push(run);
                    }
                    run = 0;
                } else {
                    run += 1;
                }
            }
            assert_eq!(runs, vec![9]);
            let gap_mid = map.cell_of(Point::new(door.center.x, CORRIDOR_Y)).unwrap();
            assert!(!map.occupied(gap_mid.0, gap_mid.1));
            assert!(map.connected(spec.start.position(), spec.goal.position()));
            let mut closed = map.clone();
            closed.fill_rect(Point::new(door.center.x - 0.1, 9.0), Point::new(door.center.x + 0.1, 11.0), true);
            assert!(!closed.connected(spec.start.position(), spec.goal.position()));
        }
    }

    #[test]
    fn waiting_line_queues_at_least_three() {
        for seed in 0..20 {
            let spec = generate_campus(ScenarioKind::WaitingLine, seed).unwrap();
            assert!(spec.peds.len() >= 3);
            let mut ys: Vec<f64> = spec.peds.iter().map(|p| p.start.y).collect();
            ys.sort_by(f64::total_cmp);
            for w in ys.windows(2) {
                assert!((w[1] - w[0] - 0.8).abs() < 1e-9);
            }
            assert!(spec.peds.iter().all(|p| (p.start.x - spec.peds[0].start.x).abs() < 1e-9));
        }
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let mut spec = generate_campus(ScenarioKind::Overtake, 1).unwrap();
        spec.layout.blocks.push(Block { min: Point::new(9.0, 0.0), max: Point::new(9.3, 20.0) });
        assert!(matches!(spawn(&spec), Err(Error::InfeasibleScenario(_))));
    }

    #[test]
    fn lab_is_distinct_and_loaded() {
        let lab = lab_map();
        assert_eq!((lab.width, lab.height), (200, 200));
        assert!(lab.connected(LAB_START.position(), LAB_GOAL.position()));
        for kind in ScenarioKind::CURATED {
            let spec = generate_lab(kind, 3).unwrap();
            assert_eq!(spec.map, LAB);
            spawn(&spec).unwrap();
        }
        assert!(generate_lab(ScenarioKind::Overtake, 0).is_err());
    }
}
