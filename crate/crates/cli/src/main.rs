use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use socnav_cli::commands::{self, ModelChoice, REPORT_EPS};
use socnav_cli::config::RunConfig;
use socnav_cli::error::{CliResult, Failure};
use socnav_core::dataset::Split;
use socnav_core::hybrid::{Driver, Outcome};

// stdout may be a closed pipe (`| head`); output is best effort
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "socnav", version, about = "Hybrid classical/learned social navigation toolkit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenarios, record demonstrations and write the manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Master seed (falls back to SOCNAV_SEED).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        id_episodes: Option<usize>,
        #[arg(long)]
        ood_episodes: Option<usize>,
    },
    /// Label every recorded step against the classical planner.
    Label {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        social_layer: bool,
        /// Output directory [default: `labels` next to the manifest].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the behavior-cloning planner or the gate.
    Train {
        #[arg(value_enum)]
        model: ModelArg,
        /// Directory written by `label`.
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory [default: `models` next to the labels].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play back the test splits and report compliance per planner.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding bc.json / gate.json.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Comma-separated: classical, bc, hybrid, oracle_hybrid.
        #[arg(long, default_value = "classical,bc,hybrid")]
        planners: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        social_layer: bool,
    },
    /// Run one scenario in closed loop.
    Sim {
        /// Scenario file, `empty`, a kind name, or `campus|lab-<kind>-<seed>`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "classical")]
        planner: String,
        /// JSON switch parameters {n, r, p, t_lock}.
        #[arg(long)]
        switch_config: Option<PathBuf>,
        /// Write a trajectory snapshot SVG here.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Run log (JSON Lines).
        #[arg(long, default_value = "sim_log.jsonl")]
        log: PathBuf,
        /// Seed for scenarios given by kind name.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        social_layer: bool,
    },
    /// One-way ANOVA per question over a group,question,score table.
    Anova {
        #[arg(long)]
        scores: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bc,
    Gate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Gen { out, seed, id_episodes, ood_episodes } => {
            cfg.set_seed(seed);
            cfg.id_episodes = id_episodes.unwrap_or(cfg.id_episodes);
            cfg.ood_episodes = ood_episodes.unwrap_or(cfg.ood_episodes);
            let g = commands::gen(&cfg, &out)?;
            let count = |s: Split| g.manifest.entries(s).count();
            say!(
                "wrote {} episodes ({} id_train, {} id_test, {} ood_test; {} attempts excluded) to {}",
                g.manifest.episodes.len(),
                count(Split::IdTrain),
                count(Split::IdTest),
                count(Split::OodTest),
                g.manifest.excluded.len(),
                out.display()
            );
            say!("manifest sha256 {}", g.manifest_sha256);
        }
        Cmd::Label { manifest, eps, social_layer, out } => {
            cfg.eps = eps.unwrap_or(cfg.eps);
            cfg.set_social_layer(social_layer);
            let out = out.unwrap_or_else(|| sibling(&manifest, "labels"));
            let idx = commands::label(&cfg, &manifest, &out)?;
            say!("eps {}  social_layer {}", cfg.eps, cfg.classical.social_layer);
            say!("{:<9} {:>7} {:>7} {:>7} {:>7} {:>7}", "split", "steps", "|D^C|", "|D^N|", "dropped", "alpha");
            for (s, x) in &idx.summary.splits {
                say!("{:<9} {:>7} {:>7} {:>7} {:>7} {:>7.3}", s.name(), x.steps, x.compliant, x.non_compliant, x.dropped, x.alpha);
            }
            say!("labels sha256 {}", idx.summary.labels_sha256);
        }
        Cmd::Train { model, labeled, seed, epochs, out } => {
            cfg.set_seed(seed);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            let which = match model {
                ModelArg::Bc => ModelChoice::Bc,
                ModelArg::Gate => ModelChoice::Gate,
            };
            let out = out.unwrap_or_else(|| sibling(&labeled, "models"));
            let t = commands::train(&cfg, which, &labeled, &out)?;
            let metric = match which {
                ModelChoice::Bc => "validation MSE",
                ModelChoice::Gate => "validation accuracy",
            };
            say!(
                "trained {} on {} samples ({} held out): best {metric} {:.4} at epoch {}",
                which.file_stem(),
                t.report.train_samples,
                t.report.val_samples,
                t.report.best_val,
                t.report.best_epoch
            );
            if let Some(a) = t.id_test_accuracy {
                say!("held-out accuracy (id_test) {a:.4}");
            }
            say!("model {} sha256 {}", t.model_path.display(), t.model_sha256);
        }
        Cmd::Eval { manifest, models, planners, out, social_layer } => {
            cfg.set_social_layer(social_layer);
            let planners = commands::parse_planners(&planners)?;
            let r = commands::eval(&cfg, &manifest, models.as_deref(), &planners, &out)?;
            say!("config sha256 {}", r.config_sha256);
            for split in Split::TEST {
                for p in &planners {
                    let a: Vec<String> = REPORT_EPS
                        .iter()
                        .map(|&e| match r.alpha(*p, split, e) {
                            Some(a) => format!("alpha({e:.1}) {a:.3}"),
                            None => format!("alpha({e:.1}) -"),
                        })
                        .collect();
                    say!("{:<9} {:<14} {}", split.name(), p.name(), a.join("  "));
                }
            }
            for (s, a) in &r.gate_accuracy {
                say!("gate accuracy {} {a:.3}", s.name());
            }
            say!("wrote steps.csv, cdf_global.csv, cdf_local.csv, cdf_global.svg, cdf_local.svg, summary.json to {}", out.display());
        }
        Cmd::Sim { scenario, planner, switch_config, render, models, log, seed, social_layer } => {
            cfg.set_seed(seed);
            cfg.set_social_layer(social_layer);
            if let Some(p) = switch_config {
                cfg.switch = commands::load_switch_config(&p)?;
            }
            let driver: Driver = planner.parse().map_err(|e: socnav_core::Error| Failure::Usage(e.to_string()))?;
            let spec = commands::resolve_scenario(&scenario, cfg.seed)?;
            let s = commands::sim(&cfg, &spec, driver, models.as_deref(), &log, render.as_deref())?;
            // the proximity invariant only constrains the hybrid switch
            let safety = match (driver, s.safety_holds) {
                (Driver::Hybrid, true) => ", safety invariant holds",
                (Driver::Hybrid, false) => ", safety invariant VIOLATED",
                _ => "",
            };
            say!(
                "{} with {planner}: {:?} after {} steps, {} switches, {} learned steps{safety}",
                scenario,
                s.outcome,
                s.steps,
                s.switches,
                s.learned_steps,
            );
            say!("log {}", log.display());
            match s.outcome {
                Outcome::Reached => {}
                Outcome::Collision => return Err(Failure::Run(format!("collision; log kept at {}", log.display()))),
                Outcome::Timeout => return Err(Failure::Run(format!("goal not reached; log kept at {}", log.display()))),
            }
        }
        Cmd::Anova { scores } => {
            let text = std::fs::read_to_string(&scores).map_err(|e| Failure::Data(format!("{}: {e}", scores.display())))?;
            let rows = commands::anova(&text)?;
            say_raw!("{}", commands::anova_table(&rows)?);
        }
    }
    Ok(())
}

/// `name` in the directory containing `file`.
fn sibling(file: &std::path::Path, name: &str) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}
