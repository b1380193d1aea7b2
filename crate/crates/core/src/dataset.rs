//! Demonstration recording, goal extraction, labeling against the classical
//! stack, and the in-/out-of-distribution split.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::compliance::{hausdorff, is_compliant, l2_command};
use crate::error::{Error, Result};
use crate::geometry::{
    resample_plan, Command, DemoStep, Episode, GlobalPlan, Observation, Pose2D, RangeScan, DT, GOAL_HORIZON,
    HISTORY_LEN, PLAN_POINTS,
};
use crate::learned::{bc_target, features};
use crate::planner::{classical_behavior, ClassicalConfig};
use crate::sim::{
    build_map, generate_campus, generate_lab, sense, spawn, step, Expert, ExpertConfig, ScenarioKind, ScenarioSpec,
    CAMPUS, LAB,
};

pub const MAX_STEPS: usize = 600;
pub const GOAL_TOLERANCE: f64 = 0.3;
pub const DEFAULT_EPS: f64 = 1.0;
pub const MANIFEST_VERSION: &str = "1.0.0";
pub const LABELS_VERSION: &str = "1.0.0";

/// Rounds to 9 significant digits (the on-disk precision of episodes).
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn quantize_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = serde_json::Number::from_f64(quantize(n.as_f64().unwrap())).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(quantize_value),
        Value::Object(o) => o.values_mut().for_each(quantize_value),
        _ => {}
    }
}

fn quantized<T: Serialize + serde::de::DeserializeOwned>(x: &T) -> Result<T> {
    let mut v = serde_json::to_value(x)?;
    quantize_value(&mut v);
    Ok(serde_json::from_value(v)?)
}

fn quantize_pose(p: Pose2D) -> Pose2D {
    Pose2D { x: quantize(p.x), y: quantize(p.y), theta: quantize(p.theta) }
}

/// Index of the first pose at least `GOAL_HORIZON` of arc length after `t`,
/// or the last one.
fn goal_index(poses: &[Pose2D], t: usize) -> usize {
    let mut arc = 0.0;
    for j in t + 1..poses.len() {
        arc += poses[j - 1].position().dist(poses[j].position());
        if arc >= GOAL_HORIZON {
            return j;
        }
    }
    poses.len() - 1
}

fn trajectory(ep: &Episode) -> Vec<Pose2D> {
    let mut poses: Vec<Pose2D> = ep.steps.iter().map(|s| *s.obs.pose()).collect();
    poses.push(ep.final_pose);
    poses
}

/// Goal 10 m ahead along the demonstrated path from step `t` (or the final
/// pose when less remains).
pub fn extract_goal(ep: &Episode, t: usize) -> Pose2D {
    let poses = trajectory(ep);
    poses[goal_index(&poses, t.min(poses.len() - 1))]
}

/// Runs the demonstrator on a scenario and records every control step.
pub fn record(spec: &ScenarioSpec) -> Result<Episode> {
    record_with(spec, ExpertConfig::default())
}

pub fn record_with(spec: &ScenarioSpec, cfg: ExpertConfig) -> Result<Episode> {
    let mut state = spawn(spec)?;
    let goal = spec.goal.position();
    let mut expert = Expert::new(&state, goal, spec.layout.door, cfg)?;
    let mut scans: VecDeque<RangeScan> = VecDeque::with_capacity(HISTORY_LEN);
    let mut odoms: VecDeque<Pose2D> = VecDeque::with_capacity(HISTORY_LEN);
    struct Raw {
        scans: Vec<RangeScan>,
        odoms: Vec<Pose2D>,
        last: Command,
        stamp: f64,
        cmd: Command,
    }
    let mut raw: Vec<Raw> = Vec::new();
    let mut poses = vec![quantize_pose(state.robot)];
    let mut reached = false;
    for _ in 0..MAX_STEPS {
        if state.robot.position().dist(goal) < GOAL_TOLERANCE {
            reached = true;
            break;
        }
        let scan: RangeScan = quantized(&sense(&state))?;
        let pose = quantize_pose(state.robot);
        if scans.is_empty() {
            // history before the first step repeats the initial reading
            scans.extend(std::iter::repeat(scan.clone()).take(HISTORY_LEN));
            odoms.extend(std::iter::repeat(pose).take(HISTORY_LEN));
        } else {
            scans.pop_front();
            odoms.pop_front();
            scans.push_back(scan);
            odoms.push_back(pose);
        }
        let cmd = expert.command(&state);
        raw.push(Raw {
            scans: scans.iter().cloned().collect(),
            odoms: odoms.iter().copied().collect(),
            last: quantized(&state.command)?,
            stamp: quantize(state.time),
            cmd: quantized(&cmd.clamped())?,
        });
        state = step(&state, cmd, DT);
        if state.collided {
            return Err(Error::ExpertFailure(format!("{}: collision at t = {:.1} s", spec.id(), state.time)));
        }
        poses.push(quantize_pose(state.robot));
    }
    if !reached && state.robot.position().dist(goal) >= GOAL_TOLERANCE {
        return Err(Error::ExpertFailure(format!("{}: goal not reached in {MAX_STEPS} steps", spec.id())));
    }
    if raw.is_empty() {
        return Err(Error::InfeasibleScenario(format!("{}: starts at the goal", spec.id())));
    }
    let mut steps = Vec::with_capacity(raw.len());
    for (t, r) in raw.into_iter().enumerate() {
        let g = goal_index(&poses, t);
        let demo_plan = GlobalPlan::new(poses[t..=g].iter().map(Pose2D::position).collect())?;
        let obs = Observation {
            scan_history: r.scans,
            odom_history: r.odoms,
            last_command: r.last,
            goal: poses[g],
            stamp: r.stamp,
        };
        steps.push(DemoStep { obs, demo_plan, demo_command: r.cmd });
    }
    Ok(Episode {
        scenario_id: spec.id(),
        seed: spec.seed,
        dt: DT,
        spec: spec.clone(),
        final_pose: *poses.last().unwrap(),
        steps,
    })
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    scenario_id: String,
    seed: u64,
    dt: f64,
    final_pose: Pose2D,
    spec: ScenarioSpec,
}

/// JSON Lines: one header line, then one `DemoStep` per line. Step floats
/// are already quantized by `record`, so the text is byte-stable.
pub fn episode_to_jsonl(ep: &Episode) -> Result<String> {
    let header = EpisodeHeader {
        scenario_id: ep.scenario_id.clone(),
        seed: ep.seed,
        dt: ep.dt,
        final_pose: ep.final_pose,
        spec: ep.spec.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for s in &ep.steps {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn episode_from_jsonl(text: &str) -> Result<Episode> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: EpisodeHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Data("empty episode file".into()))?)?;
    let steps = lines
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("step line {}: {e}", i + 2))))
        .collect::<Result<Vec<DemoStep>>>()?;
    Ok(Episode {
        scenario_id: header.scenario_id,
        seed: header.seed,
        dt: header.dt,
        spec: header.spec,
        final_pose: header.final_pose,
        steps,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    IdTrain,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::IdTrain, Split::IdTest, Split::OodTest];
    pub const TEST: [Split; 2] = [Split::IdTest, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::IdTrain => "id_train",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub master_seed: u64,
    pub id_episodes: usize,
    pub ood_episodes: usize,
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { master_seed: 0, id_episodes: 200, ood_episodes: 30, test_fraction: 0.2 }
    }
}

/// One episode slot of the dataset plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedEpisode {
    pub split: Split,
    pub kind: ScenarioKind,
    pub ood: bool,
    pub seed: u64,
}

const SEED_STRIDE: u64 = 10_000_000;
const OOD_OFFSET: u64 = 5_000_000;
const RETRY_STRIDE: u64 = 100_000;
const MAX_ATTEMPTS: u64 = 20;

/// Episode slots: ID episodes cycle through all six kinds on campus maps,
/// with a seeded 80/20 train/test partition; OOD episodes cycle through the
/// three curated kinds on the lab map.
pub fn build_splits(cfg: &SplitConfig) -> Result<Vec<PlannedEpisode>> {
    if cfg.id_episodes == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if cfg.id_episodes as u64 >= RETRY_STRIDE || cfg.ood_episodes as u64 >= RETRY_STRIDE {
        return Err(Error::InvalidArgument("too many episodes".into()));
    }
    let base = cfg.master_seed.wrapping_mul(SEED_STRIDE);
    let n_test = (cfg.id_episodes as f64 * cfg.test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cfg.id_episodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.master_seed));
    let mut is_test = vec![false; cfg.id_episodes];
    for &i in &order[..n_test.min(cfg.id_episodes)] {
        is_test[i] = true;
    }
    let mut out = Vec::with_capacity(cfg.id_episodes + cfg.ood_episodes);
    for (i, &test) in is_test.iter().enumerate() {
        out.push(PlannedEpisode {
            split: if test { Split::IdTest } else { Split::IdTrain },
            kind: ScenarioKind::ALL[i % ScenarioKind::ALL.len()],
            ood: false,
            seed: base.wrapping_add(i as u64),
        });
    }
    for i in 0..cfg.ood_episodes {
        out.push(PlannedEpisode {
            split: Split::OodTest,
            kind: ScenarioKind::CURATED[i % ScenarioKind::CURATED.len()],
            ood: true,
            seed: base.wrapping_add(OOD_OFFSET + i as u64),
        });
    }
    Ok(out)
}

pub fn scenario_for(p: &PlannedEpisode, seed: u64) -> Result<ScenarioSpec> {
    if p.ood {
        generate_lab(p.kind, seed)
    } else {
        generate_campus(p.kind, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub scenario_id: String,
    pub kind: ScenarioKind,
    pub map: String,
    pub seed: u64,
    pub steps: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub scenario_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub config: SplitConfig,
    pub episodes: Vec<ManifestEntry>,
    /// Attempts that failed (infeasible layout or demonstrator failure) and
    /// were replaced by the next seed.
    pub excluded: Vec<Excluded>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.episodes.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Records one slot, moving to the next seed when the scenario is
/// infeasible or the demonstrator fails.
fn record_slot(p: &PlannedEpisode) -> (Option<Episode>, Vec<Excluded>) {
    let mut excluded = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        let seed = p.seed.wrapping_add(attempt * RETRY_STRIDE);
        let spec = match scenario_for(p, seed) {
            Ok(spec) => spec,
            Err(e) => {
                let map = if p.ood { LAB } else { CAMPUS };
                excluded.push(Excluded { scenario_id: format!("{map}-{}-{seed}", p.kind), reason: e.to_string() });
                continue;
            }
        };
        match record(&spec) {
            Ok(ep) => return (Some(ep), excluded),
            Err(e) => excluded.push(Excluded { scenario_id: spec.id(), reason: e.to_string() }),
        }
    }
    (None, excluded)
}

/// Builds the splits, records every episode and writes episode files plus
/// `manifest.json` under `out`.
pub fn generate(cfg: &SplitConfig, out: &Path) -> Result<DatasetManifest> {
    let plan = build_splits(cfg)?;
    let recorded: Vec<(Option<Episode>, Vec<Excluded>)> = plan.par_iter().map(record_slot).collect();
    let mut episodes = Vec::with_capacity(plan.len());
    let mut excluded = Vec::new();
    for (p, (ep, mut ex)) in plan.iter().zip(recorded) {
        excluded.append(&mut ex);
        let ep = ep.ok_or_else(|| Error::ExpertFailure(format!("no feasible {} episode near seed {}", p.kind, p.seed)))?;
        let text = episode_to_jsonl(&ep)?;
        let file = format!("episodes/{}.jsonl", ep.scenario_id);
        write_atomic(&out.join(&file), text.as_bytes())?;
        episodes.push(ManifestEntry {
            file,
            split: p.split,
            scenario_id: ep.scenario_id.clone(),
            kind: ep.spec.kind,
            map: ep.spec.map.clone(),
            seed: ep.seed,
            steps: ep.steps.len(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION.into(), config: *cfg, episodes, excluded };
    write_atomic(&out.join("manifest.json"), manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.version.split('.').next() != MANIFEST_VERSION.split('.').next() {
        return Err(Error::Data(format!("unsupported manifest version {}", m.version)));
    }
    Ok(m)
}

/// Loads and hash-checks every episode of the manifest (in manifest order).
pub fn load_episodes(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<Episode>> {
    let missing: Vec<PathBuf> =
        manifest.episodes.iter().map(|e| dir.join(&e.file)).filter(|p| !p.is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    manifest
        .episodes
        .par_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path)?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(Error::HashMismatch(path));
            }
            let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
            episode_from_jsonl(&text)
        })
        .collect()
}

/// Classical-vs-demo distances of one step and its compliance label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub episode: String,
    pub step: usize,
    pub d_global: f64,
    pub d_local: f64,
    pub c: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeLabels {
    pub records: Vec<LabelRecord>,
    /// Steps where the classical stack found no path.
    pub dropped: Vec<usize>,
}

/// Demo plan at the comparison resolution.
pub fn demo_plan_resampled(step: &DemoStep) -> Result<GlobalPlan> {
    resample_plan(&step.demo_plan, PLAN_POINTS)
}

/// Runs C(·) on every recorded observation and compares it with the
/// demonstration: Hausdorff on plans, L2 on commands, c = d ≤ ε.
pub fn label_against_classical(ep: &Episode, cfg: &ClassicalConfig, eps: f64) -> Result<EpisodeLabels> {
    let map = build_map(&ep.spec)?;
    let mut out = EpisodeLabels::default();
    for (t, s) in ep.steps.iter().enumerate() {
        match classical_behavior(&s.obs, &map, cfg) {
            Ok(c) => {
                let d_global = hausdorff(&c.plan, &demo_plan_resampled(s)?)?;
                let d_local = l2_command(c.command, s.demo_command);
                out.records.push(LabelRecord {
                    episode: ep.scenario_id.clone(),
                    step: t,
                    d_global,
                    d_local,
                    c: is_compliant(d_global, eps),
                });
            }
            Err(Error::NoPath | Error::DegenerateGoal) => out.dropped.push(t),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Everything the learners need from one labeled step.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStep {
    pub episode: String,
    pub step: usize,
    pub features: Vec<f64>,
    pub c: bool,
    pub d_global: f64,
    pub d_local: f64,
    /// BC regression target (16 robot-frame displacements).
    pub demo_target: Vec<f64>,
    pub demo_command: Command,
}

pub fn labeled_steps(ep: &Episode, labels: &[LabelRecord]) -> Result<Vec<LabeledStep>> {
    labels
        .iter()
        .map(|r| {
            let s = ep
                .steps
                .get(r.step)
                .ok_or_else(|| Error::Data(format!("{} has no step {}", ep.scenario_id, r.step)))?;
            Ok(LabeledStep {
                episode: r.episode.clone(),
                step: r.step,
                features: features(&s.obs),
                c: r.c,
                d_global: r.d_global,
                d_local: r.d_local,
                demo_target: bc_target(s.obs.pose(), &s.demo_plan)?,
                demo_command: s.demo_command,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSummary {
    pub steps: usize,
    pub compliant: usize,
    pub non_compliant: usize,
    pub dropped: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub version: String,
    pub manifest_sha256: String,
    pub eps: f64,
    pub classical: ClassicalConfig,
    pub labels_sha256: String,
    pub splits: Vec<(Split, SplitSummary)>,
}

impl LabelSummary {
    pub fn split(&self, s: Split) -> SplitSummary {
        self.splits.iter().find(|(k, _)| *k == s).map(|x| x.1).unwrap_or_default()
    }
}

pub fn summarize(manifest: &DatasetManifest, labels: &[EpisodeLabels], split: Split) -> SplitSummary {
    let mut s = SplitSummary::default();
    for (e, l) in manifest.episodes.iter().zip(labels) {
        if e.split != split {
            continue;
        }
        s.steps += l.records.len();
        s.compliant += l.records.iter().filter(|r| r.c).count();
        s.dropped += l.dropped.len();
    }
    s.non_compliant = s.steps - s.compliant;
    s.alpha = if s.steps > 0 { s.compliant as f64 / s.steps as f64 } else { 0.0 };
    s
}

/// Labels every episode in parallel (manifest order is kept).
pub fn label_all(episodes: &[Episode], cfg: &ClassicalConfig, eps: f64) -> Result<Vec<EpisodeLabels>> {
    episodes.par_iter().map(|ep| label_against_classical(ep, cfg, eps)).collect()
}

/// Label records as JSON Lines, in manifest then step order.
pub fn labels_to_jsonl(labels: &[EpisodeLabels]) -> Result<String> {
    let mut out = String::new();
    for l in labels {
        for r in &l.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Regroups label lines by the manifest's episodes.
pub fn labels_from_jsonl(text: &str, manifest: &DatasetManifest) -> Result<Vec<Vec<LabelRecord>>> {
    let index: std::collections::HashMap<&str, usize> =
        manifest.episodes.iter().enumerate().map(|(i, e)| (e.scenario_id.as_str(), i)).collect();
    let mut out = vec![Vec::new(); manifest.episodes.len()];
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Data(format!("labels line {}: {e}", n + 1)))?;
        let i = *index
            .get(r.episode.as_str())
            .ok_or_else(|| Error::Data(format!("labels line {}: unknown episode {}", n + 1, r.episode)))?;
        out[i].push(r);
    }
    Ok(out)
}

/// Straight-line check used by tests and diagnostics: largest distance of a
/// plan's points from the chord between its ends.
pub fn max_chord_deviation(plan: &GlobalPlan) -> f64 {
    let (a, b) = (plan.start(), plan.end());
    let ab = b - a;
    let len = ab.norm();
    plan.points
        .iter()
        .map(|&p| if len > 0.0 { ab.cross(p - a).abs() / len } else { p.dist(a) })
        .fold(0.0, f64::max)
}
