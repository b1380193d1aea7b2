//! The hybrid planner: a gate predicts whether the classical stack will be
//! socially compliant and hands control to the behavior-cloned planner when
//! it will not. In closed loop the raw gate is smoothed by a voting window
//! and overridden near obstacles.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{hausdorff, l2_command, ComplianceRecord};
use crate::dataset::{demo_plan_resampled, Split, DatasetManifest, GOAL_TOLERANCE, MAX_STEPS};
use crate::error::{Error, Result};
use crate::geometry::{
    resample_plan, Command, Episode, GlobalPlan, Observation, Pose2D, RangeScan, DT, GOAL_HORIZON, HISTORY_LEN,
    PLAN_POINTS,
};
use crate::learned::{bc_predict, gate_predict, Mlp};
use crate::planner::{classical_behavior, ClassicalConfig, ClassicalOutput, RECOVERY};
use crate::sim::{build_map, sense, spawn, static_route, step, PathFrame, ScenarioSpec, SimState, WorldMap};

/// Slack for comparing accumulated step times with the override deadline.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Classical,
    Learned,
}

impl Choice {
    pub fn name(self) -> &'static str {
        match self {
            Choice::Classical => "classical",
            Choice::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Voting window length in steps.
    pub n: usize,
    /// Fraction of learned votes needed to run the learned planner.
    pub r: f64,
    /// Proximity (m) that forces the classical planner.
    pub p: f64,
    /// How long (s) the proximity override holds.
    pub t_lock: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self { n: 10, r: 0.7, p: 0.5, t_lock: 2.0 }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n >= 1 && self.r > 0.0 && self.r <= 1.0 && self.p > 0.0 && self.t_lock >= 0.0;
        if ok && self.t_lock.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("switch config out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchState {
    /// Most recent gate classes, oldest first, at most `n`.
    pub votes: VecDeque<u8>,
    pub active: Choice,
    pub override_until: f64,
}

impl Default for SwitchState {
    fn default() -> Self {
        Self { votes: VecDeque::new(), active: Choice::Classical, override_until: f64::NEG_INFINITY }
    }
}

impl SwitchState {
    pub fn overriding(&self, now: f64) -> bool {
        now + TIME_EPS < self.override_until
    }
}

/// M_φ thresholded: 1 (classical) when P(compliant) ≥ 0.5.
pub fn gate_class(p_classical: f64) -> u8 {
    u8::from(p_classical >= 0.5)
}

/// One voting step. Missing votes during startup count as classical.
pub fn update_switch(state: &SwitchState, vote: u8, min_range: f64, now: f64, cfg: &SwitchConfig) -> (SwitchState, Choice) {
    let mut next = state.clone();
    next.votes.push_back(vote);
    while next.votes.len() > cfg.n {
        next.votes.pop_front();
    }
    let choice = if min_range < cfg.p {
        next.override_until = now + cfg.t_lock;
        Choice::Classical
    } else if next.overriding(now) {
        Choice::Classical
    } else {
        let learned = next.votes.iter().filter(|&&v| v == 0).count();
        if learned as f64 / cfg.n as f64 >= cfg.r {
            Choice::Learned
        } else {
            Choice::Classical
        }
    };
    next.active = choice;
    (next, choice)
}

pub struct Models {
    pub bc: Mlp,
    pub gate: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub plan: GlobalPlan,
    pub command: Command,
    pub choice: Choice,
    pub vote: u8,
    pub p_classical: f64,
    pub min_range: f64,
    /// The proximity rule forced this choice.
    pub override_active: bool,
    /// The executed command is the recovery rotation.
    pub recovery: bool,
    pub classical: Option<ClassicalOutput>,
    pub learned: Option<(GlobalPlan, Command)>,
}

/// Stand-in plan when the chosen planner produced none.
fn fallback_plan(obs: &Observation) -> Result<GlobalPlan> {
    let a = obs.pose().position();
    let b = obs.goal.position();
    let line = GlobalPlan::new(vec![a, b]).or_else(|_| GlobalPlan::new(vec![a, a + crate::geometry::Point::new(1e-3, 0.0)]))?;
    resample_plan(&line, PLAN_POINTS)
}

fn classical_or_none(obs: &Observation, map: &WorldMap, cfg: &ClassicalConfig) -> Result<Option<ClassicalOutput>> {
    match classical_behavior(obs, map, cfg) {
        Ok(c) => Ok(Some(c)),
        Err(Error::NoPath | Error::DegenerateGoal) => Ok(None),
        Err(e) => Err(e),
    }
}

fn bc_or_none(net: &Mlp, obs: &Observation) -> Result<Option<(GlobalPlan, Command)>> {
    match bc_predict(net, obs) {
        Ok(x) => Ok(Some(x)),
        Err(Error::DegeneratePlan) => Ok(None),
        Err(e) => Err(e),
    }
}

/// F(S_t): evaluates both planners, votes, and returns the chosen output.
/// A missing classical plan yields the recovery rotation; a missing learned
/// plan falls back to the classical one.
pub fn hybrid_behavior(
    obs: &Observation,
    map: &WorldMap,
    models: &Models,
    state: &SwitchState,
    sw: &SwitchConfig,
    cc: &ClassicalConfig,
) -> Result<(HybridOutput, SwitchState)> {
    let classical = classical_or_none(obs, map, cc)?;
    let learned = bc_or_none(&models.bc, obs)?;
    let p_classical = gate_predict(&models.gate, obs)?;
    let vote = gate_class(p_classical);
    let min_range = obs.scan().min_range();
    let now = obs.stamp;
    let override_active = min_range < sw.p || state.overriding(now);
    let (next, choice) = update_switch(state, vote, min_range, now, sw);
    let (plan, command, recovery, choice) = match (choice, &classical, &learned) {
        (Choice::Learned, _, Some((p, c))) => (p.clone(), *c, false, Choice::Learned),
        (_, Some(c), _) => (c.plan.clone(), c.command, c.recovery, Choice::Classical),
        (_, None, _) => (fallback_plan(obs)?, RECOVERY, true, Choice::Classical),
    };
    let out = HybridOutput { plan, command, choice, vote, p_classical, min_range, override_active, recovery, classical, learned };
    Ok((out, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    Classical,
    Bc,
    Hybrid,
}

impl std::str::FromStr for Driver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Driver::Classical),
            "bc" => Ok(Driver::Bc),
            "hybrid" => Ok(Driver::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown planner {other}"))),
        }
    }
}

/// One line of the closed-loop run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub pose: Pose2D,
    pub chosen: Choice,
    pub vote: Option<u8>,
    pub min_range: f64,
    #[serde(rename = "override")]
    pub override_active: bool,
    pub recovery: bool,
    pub command: Command,
    pub classical_command: Option<Command>,
    pub d_global_classical: Option<f64>,
    pub d_global_learned: Option<f64>,
    pub d_local_classical: Option<f64>,
    pub d_local_learned: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub log: Vec<StepLog>,
    pub trajectory: Vec<Pose2D>,
    pub outcome: Outcome,
}

impl RunResult {
    /// Number of changes of the executed planner.
    pub fn switches(&self) -> usize {
        self.log.windows(2).filter(|w| w[0].chosen != w[1].chosen).count()
    }

    /// Every logged step closer than `p` to an obstacle executed the
    /// classical command.
    pub fn safety_holds(&self, p: f64) -> bool {
        self.log
            .iter()
            .filter(|l| l.min_range < p)
            .all(|l| l.chosen == Choice::Classical && (l.recovery || l.classical_command == Some(l.command)))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for l in &self.log {
            out.push_str(&serde_json::to_string(l)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Sliding sensor history feeding closed-loop observations.
struct History {
    scans: VecDeque<RangeScan>,
    odoms: VecDeque<Pose2D>,
}

impl History {
    fn push(&mut self, scan: RangeScan, pose: Pose2D) {
        if self.scans.is_empty() {
            self.scans.extend(std::iter::repeat(scan).take(HISTORY_LEN));
            self.odoms.extend(std::iter::repeat(pose).take(HISTORY_LEN));
        } else {
            self.scans.pop_front();
            self.odoms.pop_front();
            self.scans.push_back(scan);
            self.odoms.push_back(pose);
        }
    }
}

/// Local goal `GOAL_HORIZON` ahead along the static route.
fn route_goal(frame: &PathFrame, progress: &mut f64, pos: crate::geometry::Point, goal: Pose2D) -> Pose2D {
    let (s, _) = frame.project_within(pos, *progress - 1.5, *progress + 3.0);
    *progress = s;
    if frame.length() - s <= GOAL_HORIZON {
        return goal;
    }
    let g = frame.at(s + GOAL_HORIZON, 0.0);
    let t = frame.tangent(s + GOAL_HORIZON);
    Pose2D::new(g.x, g.y, t.y.atan2(t.x))
}

/// Drives the scenario with `driver` until the goal, a collision, or the
/// step limit. When `demo` is given, each planner's output is compared with
/// the demonstration step of the same index.
pub fn run_closed_loop(
    spec: &ScenarioSpec,
    driver: Driver,
    models: Option<&Models>,
    sw: &SwitchConfig,
    cc: &ClassicalConfig,
    demo: Option<&Episode>,
) -> Result<RunResult> {
    sw.validate()?;
    if driver != Driver::Classical && models.is_none() {
        return Err(Error::InvalidArgument(format!("{driver:?} planner needs trained models")));
    }
    let mut state: SimState = spawn(spec)?;
    let map = build_map(spec)?;
    let frame = PathFrame::new(&static_route(&map, spec.start.position(), spec.goal.position())?);
    let mut progress = 0.0;
    let mut hist = History { scans: VecDeque::new(), odoms: VecDeque::new() };
    let mut switch = SwitchState::default();
    let mut log = Vec::new();
    let mut trajectory = vec![state.robot];
    let demo_targets: Vec<(GlobalPlan, Command)> = match demo {
        Some(ep) => ep.steps.iter().map(|s| Ok((demo_plan_resampled(s)?, s.demo_command))).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let compare = |t: usize, plan: &GlobalPlan, cmd: Command| -> Result<Option<(f64, f64)>> {
        match demo_targets.get(t.min(demo_targets.len().saturating_sub(1))) {
            Some((dp, dc)) => Ok(Some((hausdorff(plan, dp)?, l2_command(cmd, *dc)))),
            None => Ok(None),
        }
    };

    let mut outcome = Outcome::Timeout;
    for t in 0..MAX_STEPS {
        if state.robot.position().dist(spec.goal.position()) < GOAL_TOLERANCE {
            outcome = Outcome::Reached;
            break;
        }
        hist.push(sense(&state), state.robot);
        let obs = Observation {
            scan_history: hist.scans.iter().cloned().collect(),
            odom_history: hist.odoms.iter().copied().collect(),
            last_command: state.command,
            goal: route_goal(&frame, &mut progress, state.robot.position(), spec.goal),
            stamp: state.time,
        };
        let out = match driver {
            Driver::Hybrid => {
                let (out, next) = hybrid_behavior(&obs, &map, models.expect("checked"), &switch, sw, cc)?;
                switch = next;
                out
            }
            Driver::Classical | Driver::Bc => {
                let classical = classical_or_none(&obs, &map, cc)?;
                let learned = match driver {
                    Driver::Bc => bc_or_none(&models.expect("checked").bc, &obs)?,
                    _ => None,
                };
                let (plan, command, recovery, choice) = match (driver, &classical, &learned) {
                    (Driver::Bc, _, Some((p, c))) => (p.clone(), *c, false, Choice::Learned),
                    (_, Some(c), _) => (c.plan.clone(), c.command, c.recovery, Choice::Classical),
                    _ => (fallback_plan(&obs)?, RECOVERY, true, Choice::Classical),
                };
                let min_range = obs.scan().min_range();
                HybridOutput {
                    plan,
                    command,
                    choice,
                    vote: 1,
                    p_classical: 1.0,
                    min_range,
                    override_active: false,
                    recovery,
                    classical,
                    learned,
                }
            }
        };
        let dc = match &out.classical {
            Some(c) => compare(t, &c.plan, c.command)?,
            None => None,
        };
        let dl = match &out.learned {
            Some((p, c)) => compare(t, p, *c)?,
            None => None,
        };
        log.push(StepLog {
            step: t,
            time: state.time,
            pose: state.robot,
            chosen: out.choice,
            vote: (driver == Driver::Hybrid).then_some(out.vote),
            min_range: out.min_range,
            override_active: out.override_active,
            recovery: out.recovery,
            command: out.command,
            classical_command: out.classical.as_ref().map(|c| c.command),
            d_global_classical: dc.map(|d| d.0),
            d_global_learned: dl.map(|d| d.0),
            d_local_classical: dc.map(|d| d.1),
            d_local_learned: dl.map(|d| d.1),
        });
        state = step(&state, out.command, DT);
        trajectory.push(state.robot);
        if state.collided {
            outcome = Outcome::Collision;
            break;
        }
    }
    if outcome == Outcome::Timeout && state.robot.position().dist(spec.goal.position()) < GOAL_TOLERANCE {
        outcome = Outcome::Reached;
    }
    Ok(RunResult { log, trajectory, outcome })
}

/// Planners compared in playback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Classical,
    Bc,
    Hybrid,
    /// Hybrid switched by the true compliance label (upper bound).
    OracleHybrid,
}

impl Planner {
    pub const ALL: [Planner; 4] = [Planner::Classical, Planner::Bc, Planner::Hybrid, Planner::OracleHybrid];

    pub fn name(self) -> &'static str {
        match self {
            Planner::Classical => "classical",
            Planner::Bc => "bc",
            Planner::Hybrid => "hybrid",
            Planner::OracleHybrid => "oracle_hybrid",
        }
    }
}

impl std::str::FromStr for Planner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Planner::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown planner {s}")))
    }
}

/// Every planner's answer to one recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackRow {
    pub split: Split,
    pub episode: String,
    pub step: usize,
    /// True label c_t of the classical output.
    pub c: bool,
    pub gate: Option<u8>,
    pub classical: ComplianceRecord,
    pub bc: Option<ComplianceRecord>,
    pub hybrid: Option<ComplianceRecord>,
    pub oracle: Option<ComplianceRecord>,
}

impl PlaybackRow {
    pub fn record(&self, p: Planner) -> Option<&ComplianceRecord> {
        match p {
            Planner::Classical => Some(&self.classical),
            Planner::Bc => self.bc.as_ref(),
            Planner::Hybrid => self.hybrid.as_ref(),
            Planner::OracleHybrid => self.oracle.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaybackEval {
    pub rows: Vec<PlaybackRow>,
    /// Steps with no classical output, per split.
    pub dropped: Vec<(Split, usize)>,
}

impl PlaybackEval {
    pub fn records(&self, p: Planner, split: Split) -> Vec<ComplianceRecord> {
        self.rows.iter().filter(|r| r.split == split).filter_map(|r| r.record(p).copied()).collect()
    }

    pub fn alpha(&self, p: Planner, split: Split, eps: f64) -> Result<f64> {
        let ds: Vec<f64> = self.records(p, split).iter().map(|r| r.d_global).collect();
        crate::compliance::alpha(&ds, eps)
    }

    /// Fraction of steps where the thresholded gate matches c_t.
    pub fn gate_accuracy(&self, split: Split) -> Option<f64> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.split == split && r.gate.is_some()).collect();
        if rows.is_empty() {
            return None;
        }
        let hits = rows.iter().filter(|r| r.gate == Some(u8::from(r.c))).count();
        Some(hits as f64 / rows.len() as f64)
    }
}

/// Playback of one episode: each planner answers every recorded S_t; the
/// hybrid uses the raw gate. Steps without a classical plan are dropped
/// for all planners so every planner is scored on the same steps.
pub fn playback_episode(
    ep: &Episode,
    split: Split,
    models: Option<&Models>,
    cc: &ClassicalConfig,
    eps: f64,
) -> Result<(Vec<PlaybackRow>, usize)> {
    let map = build_map(&ep.spec)?;
    let mut rows = Vec::with_capacity(ep.steps.len());
    let mut dropped = 0;
    for (t, s) in ep.steps.iter().enumerate() {
        let Some(c) = classical_or_none(&s.obs, &map, cc)? else {
            dropped += 1;
            continue;
        };
        let demo = demo_plan_resampled(s)?;
        let rec = |plan: &GlobalPlan, cmd: Command| -> Result<ComplianceRecord> {
            Ok(ComplianceRecord::new(t, hausdorff(plan, &demo)?, l2_command(cmd, s.demo_command), eps))
        };
        let classical = rec(&c.plan, c.command)?;
        let mut row = PlaybackRow {
            split,
            episode: ep.scenario_id.clone(),
            step: t,
            c: classical.compliant,
            gate: None,
            classical,
            bc: None,
            hybrid: None,
            oracle: None,
        };
        if let Some(m) = models {
            // a degenerate BC plan is scored as the recovery rotation in place
            let bc = match bc_or_none(&m.bc, &s.obs)? {
                Some((p, cmd)) => rec(&p, cmd)?,
                None => rec(&fallback_plan(&s.obs)?, RECOVERY)?,
            };
            let g = gate_class(gate_predict(&m.gate, &s.obs)?);
            row.gate = Some(g);
            row.bc = Some(bc);
            row.hybrid = Some(if g == 1 { classical } else { bc });
            row.oracle = Some(if row.c { classical } else { bc });
        }
        rows.push(row);
    }
    Ok((rows, dropped))
}

/// Playback over the test splits of a manifest (episodes in manifest
/// order).
pub fn run_playback_eval(
    manifest: &DatasetManifest,
    episodes: &[Episode],
    models: Option<&Models>,
    cc: &ClassicalConfig,
    eps: f64,
) -> Result<PlaybackEval> {
    if manifest.episodes.len() != episodes.len() {
        return Err(Error::DimensionMismatch { expected: manifest.episodes.len(), got: episodes.len() });
    }
    let jobs: Vec<(Split, &Episode)> = manifest
        .episodes
        .iter()
        .zip(episodes)
        .filter(|(e, _)| Split::TEST.contains(&e.split))
        .map(|(e, ep)| (e.split, ep))
        .collect();
    let parts: Vec<(Split, Vec<PlaybackRow>, usize)> = jobs
        .par_iter()
        .map(|&(split, ep)| playback_episode(ep, split, models, cc, eps).map(|(r, d)| (split, r, d)))
        .collect::<Result<_>>()?;
    let mut eval = PlaybackEval::default();
    for split in Split::TEST {
        let d = parts.iter().filter(|p| p.0 == split).map(|p| p.2).sum();
        eval.dropped.push((split, d));
    }
    for (_, rows, _) in parts {
        eval.rows.extend(rows);
    }
    Ok(eval)
}
