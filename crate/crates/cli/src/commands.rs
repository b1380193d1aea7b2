use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use socnav_core::compliance::{cdf, one_way_anova, threshold_grid, Anova, CdfCurve};
use socnav_core::dataset::{
    generate, label_all, labeled_steps, labels_from_jsonl, labels_to_jsonl, load_episodes, load_manifest, record,
    sha256_hex, summarize, write_atomic, DatasetManifest, LabelRecord, LabelSummary, LabeledStep, Split, SplitConfig,
    LABELS_VERSION,
};
use socnav_core::geometry::{Episode, Pose2D};
use socnav_core::hybrid::{run_closed_loop, run_playback_eval, Driver, Models, Outcome, Planner, SwitchConfig};
use socnav_core::learned::{
    gate_predict, model_from_json, model_to_json, train_bc, train_gate, Mlp, ModelKind, ModelMeta, TrainReport,
    BC_OUTPUTS, FEATURE_LEN, HIDDEN,
};
use socnav_core::sim::{build_map, generate_campus, generate_lab, Layout, ScenarioKind, ScenarioSpec, CAMPUS, LAB};

use crate::config::RunConfig;
use crate::error::{CliResult, Failure};
use crate::report::{cdf_svg, csv_text, num, trajectory_svg, Series};

pub const LABELS_FILE: &str = "labels.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
/// Evaluation thresholds reported in the summary.
pub const REPORT_EPS: [f64; 2] = [1.0, 3.0];

pub fn global_grid() -> Vec<f64> {
    threshold_grid(0.0, 5.0, 0.1)
}

pub fn local_grid() -> Vec<f64> {
    threshold_grid(0.0, 2.5, 0.05)
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn base_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

// ---------------------------------------------------------------- gen

pub struct GenOutput {
    pub manifest: DatasetManifest,
    pub manifest_sha256: String,
}

pub fn gen(cfg: &RunConfig, out: &Path) -> CliResult<GenOutput> {
    let split = SplitConfig {
        master_seed: cfg.seed,
        id_episodes: cfg.id_episodes,
        ood_episodes: cfg.ood_episodes,
        ..SplitConfig::default()
    };
    let manifest = generate(&split, out)?;
    let manifest_sha256 = sha256_hex(&read(&out.join("manifest.json"))?);
    Ok(GenOutput { manifest, manifest_sha256 })
}

// ---------------------------------------------------------------- label

/// `summary.json` of a label run: where the data came from plus the split
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelIndex {
    pub manifest: PathBuf,
    #[serde(flatten)]
    pub summary: LabelSummary,
}

pub fn label(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> CliResult<LabelIndex> {
    if !(cfg.eps >= 0.0) {
        return Err(Failure::Usage(format!("eps must be non-negative, got {}", cfg.eps)));
    }
    let manifest_bytes = read(manifest_path)?;
    let manifest = load_manifest(manifest_path)?;
    let episodes = load_episodes(&manifest, &base_dir(manifest_path))?;
    let labels = label_all(&episodes, &cfg.classical, cfg.eps)?;
    let text = labels_to_jsonl(&labels)?;
    write(&out.join(LABELS_FILE), text.as_bytes())?;
    let summary = LabelSummary {
        version: LABELS_VERSION.into(),
        manifest_sha256: sha256_hex(&manifest_bytes),
        eps: cfg.eps,
        classical: cfg.classical,
        labels_sha256: sha256_hex(text.as_bytes()),
        splits: Split::ALL.iter().map(|&s| (s, summarize(&manifest, &labels, s))).collect(),
    };
    let manifest = std::fs::canonicalize(manifest_path)?;
    let index = LabelIndex { manifest, summary };
    write(&out.join(SUMMARY_FILE), (serde_json::to_string_pretty(&index)? + "\n").as_bytes())?;
    Ok(index)
}

/// A label run loaded back with its episodes, hashes verified.
pub struct Labeled {
    pub index: LabelIndex,
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
    pub labels: Vec<Vec<LabelRecord>>,
}

pub fn load_labeled(dir: &Path) -> CliResult<Labeled> {
    let index: LabelIndex = serde_json::from_slice(&read(&dir.join(SUMMARY_FILE))?)
        .map_err(|e| Failure::Data(format!("{}: {e}", dir.join(SUMMARY_FILE).display())))?;
    let manifest_bytes = read(&index.manifest)?;
    if sha256_hex(&manifest_bytes) != index.summary.manifest_sha256 {
        return Err(Failure::Data(format!("{} changed since labeling", index.manifest.display())));
    }
    let manifest = load_manifest(&index.manifest)?;
    let text = String::from_utf8(read(&dir.join(LABELS_FILE))?)
        .map_err(|_| Failure::Data(format!("{} is not UTF-8", dir.join(LABELS_FILE).display())))?;
    if sha256_hex(text.as_bytes()) != index.summary.labels_sha256 {
        return Err(Failure::Data(format!("{} does not match its summary", dir.join(LABELS_FILE).display())));
    }
    let labels = labels_from_jsonl(&text, &manifest)?;
    let episodes = load_episodes(&manifest, &base_dir(&index.manifest))?;
    Ok(Labeled { index, manifest, episodes, labels })
}

impl Labeled {
    pub fn steps(&self, split: Split) -> CliResult<Vec<LabeledStep>> {
        let mut out = Vec::new();
        for ((e, ep), l) in self.manifest.episodes.iter().zip(&self.episodes).zip(&self.labels) {
            if e.split == split {
                out.extend(labeled_steps(ep, l)?);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Bc,
    Gate,
}

impl ModelChoice {
    pub fn file_stem(self) -> &'static str {
        match self {
            ModelChoice::Bc => "bc",
            ModelChoice::Gate => "gate",
        }
    }
}

pub struct TrainOutput {
    pub report: TrainReport,
    pub model_path: PathBuf,
    pub model_sha256: String,
    /// Gate only: thresholded accuracy on the ID test split.
    pub id_test_accuracy: Option<f64>,
}

pub fn train(cfg: &RunConfig, which: ModelChoice, labeled: &Path, out: &Path) -> CliResult<TrainOutput> {
    let tc = socnav_core::learned::TrainConfig { seed: cfg.seed, ..cfg.train };
    tc.validate()?;
    let data = load_labeled(labeled)?;
    let train_steps = data.steps(Split::IdTrain)?;
    if train_steps.is_empty() {
        return Err(Failure::Data(socnav_core::Error::EmptyTrainingSet.to_string()));
    }
    let (net, report, id_test_accuracy) = match which {
        ModelChoice::Bc => {
            let dn: Vec<&LabeledStep> = train_steps.iter().filter(|s| !s.c).collect();
            let xs: Vec<Vec<f64>> = dn.iter().map(|s| s.features.clone()).collect();
            let ys: Vec<Vec<f64>> = dn.iter().map(|s| s.demo_target.clone()).collect();
            let (net, report) = train_bc(&xs, &ys, &tc)?;
            (net, report, None)
        }
        ModelChoice::Gate => {
            let xs: Vec<Vec<f64>> = train_steps.iter().map(|s| s.features.clone()).collect();
            let cs: Vec<bool> = train_steps.iter().map(|s| s.c).collect();
            let (net, report) = train_gate(&xs, &cs, &tc)?;
            let acc = gate_accuracy_on(&net, &data, Split::IdTest)?;
            (net, report, acc)
        }
    };
    let meta = ModelMeta {
        kind: match which {
            ModelChoice::Bc => ModelKind::Bc,
            ModelChoice::Gate => ModelKind::Gate,
        },
        seed: tc.seed,
        dataset_hash: data.index.summary.labels_sha256.clone(),
        train: tc,
        best_epoch: report.best_epoch,
        best_val: report.best_val,
    };
    let text = model_to_json(&net, &meta)?;
    let model_path = out.join(format!("{}.json", which.file_stem()));
    write(&model_path, text.as_bytes())?;
    let rows: Vec<Vec<String>> =
        report.curve.iter().map(|e| vec![e.epoch.to_string(), num(e.train_loss), num(e.val_metric)]).collect();
    let curve = csv_text(&["epoch", "train_loss", "val_metric"], &rows)?;
    write(&out.join(format!("{}_curve.csv", which.file_stem())), curve.as_bytes())?;
    Ok(TrainOutput { report, model_path, model_sha256: sha256_hex(text.as_bytes()), id_test_accuracy })
}

fn gate_accuracy_on(net: &Mlp, data: &Labeled, split: Split) -> CliResult<Option<f64>> {
    let (mut hits, mut n) = (0usize, 0usize);
    for ((e, ep), l) in data.manifest.episodes.iter().zip(&data.episodes).zip(&data.labels) {
        if e.split != split {
            continue;
        }
        for r in l {
            let step = ep
                .steps
                .get(r.step)
                .ok_or_else(|| Failure::Data(format!("{} has no step {}", ep.scenario_id, r.step)))?;
            let p = gate_predict(net, &step.obs)?;
            hits += usize::from((p >= 0.5) == r.c);
            n += 1;
        }
    }
    Ok((n > 0).then(|| hits as f64 / n as f64))
}

// ---------------------------------------------------------------- eval

pub fn parse_planners(list: &str) -> CliResult<Vec<Planner>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: Planner = name.parse().map_err(|e: socnav_core::Error| Failure::Usage(e.to_string()))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no planners requested".into()));
    }
    Ok(out)
}

fn load_model(dir: &Path, which: ModelChoice) -> CliResult<(Mlp, String)> {
    let path = dir.join(format!("{}.json", which.file_stem()));
    if !path.is_file() {
        return Err(Failure::Data(format!("missing {} model: {}", which.file_stem(), path.display())));
    }
    let bytes = read(&path)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::Data(format!("{} is not UTF-8", path.display())))?;
    let (net, meta) = model_from_json(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let want = match which {
        ModelChoice::Bc => ModelKind::Bc,
        ModelChoice::Gate => ModelKind::Gate,
    };
    if meta.kind != want {
        return Err(Failure::Data(format!("{} holds a {:?} model", path.display(), meta.kind)));
    }
    Ok((net, sha256_hex(text.as_bytes())))
}

/// Loads the models the planners need. A planner that does not need the
/// gate gets a placeholder whose outputs are never reported.
fn models_for(dir: Option<&Path>, planners: &[Planner]) -> CliResult<(Option<Models>, BTreeMap<String, String>)> {
    let needs_bc = planners.iter().any(|p| *p != Planner::Classical);
    let needs_gate = planners.contains(&Planner::Hybrid);
    let mut hashes = BTreeMap::new();
    if !needs_bc {
        return Ok((None, hashes));
    }
    let dir = dir.ok_or_else(|| Failure::Usage("--models is required for learned planners".into()))?;
    let (bc, h) = load_model(dir, ModelChoice::Bc)?;
    hashes.insert("bc".to_string(), h);
    let gate = if needs_gate {
        let (g, h) = load_model(dir, ModelChoice::Gate)?;
        hashes.insert("gate".to_string(), h);
        g
    } else {
        Mlp::zeros(&[FEATURE_LEN, HIDDEN, HIDDEN, 2])
    };
    debug_assert_eq!(bc.layers.last().map(|l| l.bias.len()), Some(BC_OUTPUTS));
    Ok((Some(Models { bc, gate }), hashes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    pub planner: String,
    pub split: Split,
    pub eps: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_sha256: String,
    pub config: RunConfig,
    pub manifest_sha256: String,
    pub models: BTreeMap<String, String>,
    pub planners: Vec<String>,
    pub steps: Vec<(Split, usize)>,
    pub dropped: Vec<(Split, usize)>,
    pub alpha: Vec<AlphaEntry>,
    pub gate_accuracy: Vec<(Split, f64)>,
}

impl EvalReport {
    pub fn alpha(&self, planner: Planner, split: Split, eps: f64) -> Option<f64> {
        self.alpha.iter().find(|a| a.planner == planner.name() && a.split == split && a.eps == eps).map(|a| a.alpha)
    }
}

pub fn eval(cfg: &RunConfig, manifest_path: &Path, models: Option<&Path>, planners: &[Planner], out: &Path) -> CliResult<EvalReport> {
    let (models, model_hashes) = models_for(models, planners)?;
    let manifest_sha256 = sha256_hex(&read(manifest_path)?);
    let manifest = load_manifest(manifest_path)?;
    let episodes = load_episodes(&manifest, &base_dir(manifest_path))?;
    let ev = run_playback_eval(&manifest, &episodes, models.as_ref(), &cfg.classical, cfg.eps)?;

    let mut step_rows = Vec::new();
    let mut global_rows = Vec::new();
    let mut local_rows = Vec::new();
    let mut global_curves: Vec<(String, CdfCurve)> = Vec::new();
    let mut local_curves: Vec<(String, CdfCurve)> = Vec::new();
    let mut alpha = Vec::new();
    let mut steps = Vec::new();
    for &p in planners {
        for split in Split::TEST {
            let recs = ev.records(p, split);
            if p == planners[0] {
                steps.push((split, recs.len()));
            }
            for r in &recs {
                step_rows.push(vec![
                    p.name().to_string(),
                    split.name().to_string(),
                    r.step.to_string(),
                    num(r.d_global),
                    num(r.d_local),
                    r.compliant.to_string(),
                ]);
            }
            if recs.is_empty() {
                continue;
            }
            let dg: Vec<f64> = recs.iter().map(|r| r.d_global).collect();
            let dl: Vec<f64> = recs.iter().map(|r| r.d_local).collect();
            let label = format!("{} / {}", p.name(), split.name());
            for (ds, grid, rows, curves) in [
                (&dg, global_grid(), &mut global_rows, &mut global_curves),
                (&dl, local_grid(), &mut local_rows, &mut local_curves),
            ] {
                let c = cdf(ds, &grid)?;
                for (t, f) in c.thresholds.iter().zip(&c.fractions) {
                    rows.push(vec![p.name().to_string(), split.name().to_string(), num(*t), num(*f)]);
                }
                curves.push((label.clone(), c));
            }
            for eps in REPORT_EPS {
                alpha.push(AlphaEntry {
                    planner: p.name().into(),
                    split,
                    eps,
                    alpha: socnav_core::compliance::alpha(&dg, eps)?,
                });
            }
        }
    }
    let header = ["planner", "split", "step", "d_global", "d_local", "compliant"];
    write(&out.join("steps.csv"), csv_text(&header, &step_rows)?.as_bytes())?;
    let header = ["planner", "split", "threshold", "fraction"];
    write(&out.join("cdf_global.csv"), csv_text(&header, &global_rows)?.as_bytes())?;
    write(&out.join("cdf_local.csv"), csv_text(&header, &local_rows)?.as_bytes())?;
    for (name, title, axis, curves) in [
        ("cdf_global.svg", "Global plan distance CDF", "Hausdorff distance to demonstration (m)", &global_curves),
        ("cdf_local.svg", "Local command distance CDF", "command distance to demonstration", &local_curves),
    ] {
        let s: Vec<Series<'_>> = curves.iter().map(|(l, c)| Series { label: l.clone(), curve: c }).collect();
        write(&out.join(name), cdf_svg(title, axis, &s).as_bytes())?;
    }

    let gate_accuracy = if planners.contains(&Planner::Hybrid) {
        Split::TEST.iter().filter_map(|&s| ev.gate_accuracy(s).map(|a| (s, a))).collect()
    } else {
        Vec::new()
    };
    let report = EvalReport {
        config_sha256: cfg.hash()?,
        config: cfg.clone(),
        manifest_sha256,
        models: model_hashes,
        planners: planners.iter().map(|p| p.name().to_string()).collect(),
        steps,
        dropped: ev.dropped.clone(),
        alpha,
        gate_accuracy,
    };
    write(&out.join(SUMMARY_FILE), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------- sim

/// Scenario argument: a JSON scenario file, `empty`, a kind name
/// (campus, seed from the config), or a full id `map-kind-seed`.
pub fn resolve_scenario(arg: &str, seed: u64) -> CliResult<ScenarioSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = String::from_utf8(read(path)?).map_err(|_| Failure::Data(format!("{arg} is not UTF-8")))?;
        return serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{arg}: {e}")));
    }
    if arg == "empty" {
        return Ok(ScenarioSpec {
            kind: ScenarioKind::FrontalApproach,
            map: CAMPUS.into(),
            seed,
            layout: Layout::default(),
            peds: Vec::new(),
            start: Pose2D::new(2.0, 10.0, 0.0),
            goal: Pose2D::new(18.0, 10.0, 0.0),
        });
    }
    let kind_of = |s: &str| ScenarioKind::ALL.into_iter().find(|k| k.name() == s);
    if let Some(kind) = kind_of(arg) {
        return Ok(generate_campus(kind, seed)?);
    }
    let parts: Vec<&str> = arg.splitn(2, '-').collect();
    if let [map, rest] = parts[..] {
        if let Some((kind, s)) = rest.rsplit_once('-') {
            if let (Some(kind), Ok(s)) = (kind_of(kind), s.parse::<u64>()) {
                return match map {
                    CAMPUS => Ok(generate_campus(kind, s)?),
                    LAB => Ok(generate_lab(kind, s)?),
                    _ => Err(Failure::Usage(format!("unknown map {map:?} in scenario {arg:?}"))),
                };
            }
        }
    }
    Err(Failure::Usage(format!(
        "unknown scenario {arg:?}: expected a scenario file, `empty`, a kind ({}) or `campus|lab-<kind>-<seed>`",
        ScenarioKind::ALL.map(|k| k.name()).join(", ")
    )))
}

pub struct SimOutput {
    pub outcome: Outcome,
    pub steps: usize,
    pub switches: usize,
    pub safety_holds: bool,
    pub learned_steps: usize,
}

pub fn sim(
    cfg: &RunConfig,
    spec: &ScenarioSpec,
    driver: Driver,
    models_dir: Option<&Path>,
    log_path: &Path,
    render: Option<&Path>,
) -> CliResult<SimOutput> {
    cfg.switch.validate()?;
    let models = match driver {
        Driver::Classical => None,
        Driver::Bc => models_for(models_dir, &[Planner::Bc])?.0,
        Driver::Hybrid => models_for(models_dir, &[Planner::Hybrid])?.0,
    };
    // the demonstrator's run on the same scenario, when it succeeds
    let demo = record(spec).ok();
    let run = run_closed_loop(spec, driver, models.as_ref(), &cfg.switch, &cfg.classical, demo.as_ref())?;
    write(log_path, run.to_jsonl()?.as_bytes())?;
    if let Some(svg) = render {
        let map = build_map(spec)?;
        let demo_track: Vec<Pose2D> = match &demo {
            Some(ep) => ep.steps.iter().map(|s| *s.obs.pose()).chain(std::iter::once(ep.final_pose)).collect(),
            None => Vec::new(),
        };
        let mut tracks: Vec<(&str, &[Pose2D])> = Vec::new();
        if !demo_track.is_empty() {
            tracks.push(("demonstration", &demo_track));
        }
        let label = format!("{driver:?}").to_lowercase();
        tracks.push((&label, &run.trajectory));
        write(svg, trajectory_svg(&map, &tracks).as_bytes())?;
    }
    Ok(SimOutput {
        outcome: run.outcome,
        steps: run.log.len(),
        switches: run.switches(),
        safety_holds: run.safety_holds(cfg.switch.p),
        learned_steps: run.log.iter().filter(|l| l.chosen == socnav_core::hybrid::Choice::Learned).count(),
    })
}

pub fn load_switch_config(path: &Path) -> CliResult<SwitchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let sw: SwitchConfig = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    sw.validate()?;
    Ok(sw)
}

// ---------------------------------------------------------------- anova

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow {
    pub question: String,
    pub groups: Vec<String>,
    pub result: Anova,
}

impl AnovaRow {
    pub fn significant(&self) -> bool {
        self.result.p < 0.05
    }
}

/// Per-question one-way ANOVA over a `group,question,score` table.
pub fn anova(text: &str) -> CliResult<Vec<AnovaRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Failure::Data(format!("line 1: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Data(format!("line 1: missing column {name:?} (need group,question,score)")))
    };
    let (gi, qi, si) = (col("group")?, col("question")?, col("score")?);
    let mut table: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Failure::Data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).ok_or_else(|| Failure::Data(format!("line {line}: missing field")));
        let score: f64 = field(si)?
            .parse()
            .map_err(|_| Failure::Data(format!("line {line}: score {:?} is not a number", field(si).unwrap_or(""))))?;
        if !score.is_finite() {
            return Err(Failure::Data(format!("line {line}: score is not finite")));
        }
        table.entry(field(qi)?.to_string()).or_default().entry(field(gi)?.to_string()).or_default().push(score);
    }
    if table.is_empty() {
        return Err(Failure::Data("no scores".into()));
    }
    table
        .into_iter()
        .map(|(question, groups)| {
            let names: Vec<String> = groups.keys().cloned().collect();
            let data: Vec<Vec<f64>> = groups.into_values().collect();
            let result = one_way_anova(&data).map_err(|e| Failure::Data(format!("question {question:?}: {e}")))?;
            Ok(AnovaRow { question, groups: names, result })
        })
        .collect()
}

pub fn anova_table(rows: &[AnovaRow]) -> CliResult<String> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.question.clone(),
                r.groups.join(";"),
                r.result.df_between.to_string(),
                r.result.df_within.to_string(),
                num(r.result.f),
                num(r.result.p),
                r.significant().to_string(),
            ]
        })
        .collect();
    csv_text(&["question", "groups", "df_between", "df_within", "f", "p", "significant"], &rows)
}
