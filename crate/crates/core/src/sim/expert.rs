//! Rule-augmented path tracker standing in for human tele-operation.
//!
//! The demonstrator tracks the shortest static route by pure pursuit and
//! overrides speed or lateral offset when the scripted social rules fire. It
//! reads true pedestrian states, not sensor data.

use serde::{Deserialize, Serialize};

use super::path::PathFrame;
use super::scenario::{static_route, Door};
use super::SimState;
use crate::error::Result;
use crate::geometry::{to_robot_frame, wrap, Command, Point, Pose2D, OMEGA_MAX, V_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub lookahead: f64,
    /// Lateral offset when passing a person walking head-on, applied once
    /// they are within `frontal_range` along the route.
    pub frontal_offset: f64,
    pub frontal_range: f64,
    /// Slow walkers (below `overtake_speed`) are passed on the left at this
    /// offset.
    pub overtake_offset: f64,
    pub overtake_speed: f64,
    /// Minimum and preferred center distance behind a leader.
    pub follow_gap: f64,
    pub follow_distance: f64,
    /// Crossing people whose arrival at the route is this close in time to
    /// the robot's are yielded to.
    pub yield_eta_gap: f64,
    pub yield_distance: f64,
    /// Waiting spot before an occupied doorway: distance before the gap and
    /// lateral step aside.
    pub door_wait: f64,
    pub door_aside: f64,
    pub door_busy_radius: f64,
    /// Free space kept in front of a standing queue.
    pub queue_stop: f64,
    pub safety_radius: f64,
    pub safety_half_angle: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lookahead: 1.0,
            frontal_offset: 0.5,
            frontal_range: 4.0,
            overtake_offset: 1.0,
            overtake_speed: 0.6,
            follow_gap: 1.2,
            follow_distance: 1.8,
            yield_eta_gap: 2.0,
            yield_distance: 1.5,
            door_wait: 1.5,
            door_aside: 1.2,
            door_busy_radius: 2.5,
            queue_stop: 1.0,
            safety_radius: 1.0,
            safety_half_angle: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Passing lane beside the oncoming people spanning `lo..=hi`: at least
/// `offset` from the route and from every one of them, on the nearer side
/// (right on ties).
fn frontal_lane((lo, hi): (f64, f64), offset: f64) -> f64 {
    let right = (-offset).min(lo - offset);
    let left = offset.max(hi + offset);
    if -right <= left + 0.1 { right } else { left }
}

/// Speed cap that brings the robot to rest `dist` meters ahead.
fn stop_profile(dist: f64) -> f64 {
    (1.2 * dist).clamp(0.0, V_MAX)
}

/// Stateful demonstrator for one episode.
#[derive(Debug, Clone)]
pub struct Expert {
    cfg: ExpertConfig,
    frame: PathFrame,
    goal: Point,
    door_s: Option<(f64, Point)>,
    progress: f64,
    last_offset: f64,
}

/// What the rules decided at one step (exposed for tests and logs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertDecision {
    pub command: Command,
    pub offset: f64,
    pub speed_cap: f64,
    pub tracked: Point,
}

impl Expert {
    pub fn new(state: &SimState, goal: Point, door: Option<Door>, cfg: ExpertConfig) -> Result<Self> {
        let route = static_route(&state.map, state.robot.position(), goal)?;
        let frame = PathFrame::new(&route);
        let door_s = door.map(|d| (frame.project(d.center).0, d.center));
        let progress = frame.project(state.robot.position()).0;
        Ok(Self { cfg, frame, goal, door_s, progress, last_offset: 0.0 })
    }

    pub fn route(&self) -> &PathFrame {
        &self.frame
    }

    pub fn command(&mut self, state: &SimState) -> Command {
        self.decide(state).command
    }

    pub fn decide(&mut self, state: &SimState) -> ExpertDecision {
        let c = self.cfg;
        let pose = state.robot;
        let pos = pose.position();
        let (s_r, _) = self.frame.project_within(pos, self.progress - 1.5, self.progress + 3.0);
        self.progress = s_r;

        let mut cap = V_MAX;
        let mut offset: Option<f64> = None;
        // lateral extent of people walking head-on
        let mut oncoming: Option<(f64, f64)> = None;

        for p in &state.pedestrians {
            let (s_p, l_p) = self.frame.project_within(p.pos, s_r - 4.0, s_r + 10.0);
            if l_p.abs() > 3.0 {
                continue;
            }
            let ahead = s_p - s_r;
            let t = self.frame.tangent(s_p);
            let n = self.frame.normal(s_p);
            let u = p.vel.dot(t);
            let w = p.vel.dot(n);
            let speed = p.vel.norm();
            let crossing = w.abs() > 0.3 && w.abs() >= 0.8 * u.abs();
            let standing = speed < 0.15;

            if u > 0.15 && !crossing && l_p.abs() < 1.0 {
                if u < c.overtake_speed {
                    if ahead > -1.2 && ahead < 4.0 {
                        offset = Some(c.overtake_offset);
                    }
                } else if ahead > 0.0 && ahead < 6.0 && l_p.abs() < 0.9 {
                    let v = if ahead < c.follow_gap { 0.0 } else { u + 0.8 * (ahead - c.follow_distance) };
                    cap = cap.min(v.clamp(0.0, V_MAX));
                }
            }
            if u < -0.3 && !crossing && ahead > -0.6 && ahead < c.frontal_range && l_p.abs() < 1.6 {
                let (lo, hi) = oncoming.unwrap_or((l_p, l_p));
                oncoming = Some((lo.min(l_p), hi.max(l_p)));
            }
            if crossing && ahead > 0.3 && ahead < 7.0 {
                let on_route = l_p.abs() < 0.9;
                let approaching = l_p * w < 0.0;
                let conflict = on_route || {
                    let t_p = (l_p.abs() - 0.9).max(0.0) / w.abs();
                    approaching && (ahead / V_MAX - t_p).abs() < c.yield_eta_gap
                };
                if conflict {
                    cap = cap.min(stop_profile(ahead - c.yield_distance));
                }
            }
            if standing && ahead > 0.0 && ahead < 5.0 {
                let lane = offset.or(oncoming.map(|r| frontal_lane(r, c.frontal_offset))).unwrap_or(0.0);
                if (l_p - lane).abs() < 0.75 {
                    cap = cap.min(stop_profile(ahead - 0.6 - c.queue_stop));
                }
            }
        }

        let mut lookahead = c.lookahead;
        if let Some((s_d, center)) = self.door_s {
            let ahead_d = s_d - s_r;
            let busy = state.pedestrians.iter().any(|p| p.pos.dist(center) < c.door_busy_radius);
            if busy && ahead_d > 1.0 {
                offset = Some(c.door_aside);
                cap = cap.min(stop_profile(ahead_d - c.door_wait));
            } else if ahead_d > 0.0 && ahead_d <= 1.0 && state.pedestrians.iter().any(|p| p.pos.dist(center) < 1.2) {
                cap = 0.0;
            }
            // back onto the centerline before entering the gap
            let (_, l_r) = self.frame.project_within(pos, s_r - 0.5, s_r + 0.5);
            if offset.is_none() && ahead_d > 0.0 && ahead_d < 2.5 && l_r.abs() > 0.15 {
                lookahead = 0.4;
            }
        }

        for p in &state.pedestrians {
            let rel = to_robot_frame(p.pos, &pose);
            if rel.x > 0.0 && rel.norm() < c.safety_radius && rel.y.atan2(rel.x).abs() < c.safety_half_angle {
                cap = 0.0;
            }
        }

        let frontal = oncoming.map(|r| frontal_lane(r, c.frontal_offset));
        let lateral = offset.or(frontal).unwrap_or(0.0);
        self.last_offset = lateral;
        let s_t = (s_r + lookahead).min(self.frame.length());
        let near_end = self.frame.length() - s_r < lookahead + 0.5;
        let tracked = if near_end { self.goal } else { self.frame.at(s_t, lateral) };
        let mut command = pursue(&pose, tracked, cap);
        if command != Command::STOP
            && clearance(&pose, command, state) < SAFE_GAP
            && clearance(&pose, Command::STOP, state) > clearance(&pose, command, state)
        {
            command = Command::STOP;
        }
        ExpertDecision { command, offset: lateral, speed_cap: cap, tracked }
    }
}

const SAFE_GAP: f64 = super::ROBOT_RADIUS + super::PED_RADIUS + 0.1;

/// Smallest robot-to-person center distance over the next half second if
/// `cmd` is held and people keep their velocity.
fn clearance(pose: &Pose2D, cmd: Command, state: &SimState) -> f64 {
    let mut p = *pose;
    let mut best = f64::INFINITY;
    for k in 1..=5 {
        p = super::integrate_unicycle(&p, cmd, 0.1);
        for q in &state.pedestrians {
            best = best.min(p.position().dist(q.pos + q.vel * (0.1 * k as f64)));
        }
    }
    best
}

/// Pure pursuit toward `target` at speed `v`; turns in place when the target
/// is far off the heading.
fn pursue(pose: &Pose2D, target: Point, v: f64) -> Command {
    let local = to_robot_frame(target, pose);
    let d2 = local.dot(local);
    if d2 < 1e-12 || v <= 0.0 {
        return Command::STOP;
    }
    let bearing = wrap(local.y.atan2(local.x));
    if bearing.abs() > 1.2 {
        return Command::new(0.0, bearing.signum() * OMEGA_MAX);
    }
    let kappa = 2.0 * local.y / d2;
    let mut v = v;
    let mut omega = v * kappa;
    if omega.abs() > OMEGA_MAX {
        v = OMEGA_MAX / kappa.abs();
        omega = OMEGA_MAX * kappa.signum();
    }
    Command::new(v, omega).clamped()
}

/// One-shot expert command toward `goal` for a state (no door knowledge, no
/// episode memory).
pub fn expert_policy(state: &SimState, goal: Pose2D) -> Result<Command> {
    let mut e = Expert::new(state, goal.position(), None, ExpertConfig::default())?;
    Ok(e.command(state))
}
