use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use watermark_core::learning::LearnerState;
use watermark_core::lti::{rows, SimState};
use watermark_core::scenario::{
    emit, run_study, Manifest, Mode, ScenarioConfig, Study, WATERMARK_STREAM,
};
use watermark_core::Result;

#[derive(Parser)]
#[command(
    name = "wmark",
    version,
    about = "Physical watermarking against replay attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact-parameter optimal watermark and detector for the configured plant.
    Design(Common),
    /// A single replica of the configured scenario.
    Simulate(Common),
    /// Detection-rate study over `monte_carlo` replicas.
    Montecarlo(Common),
    /// Reduced-order learning study.
    Reduced {
        #[command(flatten)]
        common: Common,
        /// Model order of the learner.
        #[arg(long)]
        n_model: Option<usize>,
    },
    /// Long learning run with checkpoints.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Samples to ingest in this invocation.
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint written earlier.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Progress line every this many samples.
        #[arg(long, default_value_t = 10_000)]
        report_every: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Override any config key, e.g. `--set learner.delta=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let base = match (&self.manifest, &self.config) {
            (Some(path), _) => Manifest::load(path)?.config,
            (None, Some(path)) => ScenarioConfig::load(path)?,
            (None, None) => ScenarioConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.plots {
            cfg.plots = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct DesignReport {
    u: Vec<Vec<f64>>,
    direction: Vec<f64>,
    p: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    u_response: Vec<Vec<f64>>,
    j0: f64,
    delta_j: f64,
    zeta: f64,
    non_unique: bool,
}

fn say(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn design(cfg: &ScenarioConfig) -> Result<()> {
    let study = Study::prepare(cfg)?;
    let report = DesignReport {
        u: rows(study.exact_u()),
        direction: study.optimal.direction.clone(),
        p: rows(&study.pair.p_mat),
        x: rows(&study.pair.x_mat),
        w: rows(&study.wcal),
        u_response: rows(&study.ucal),
        j0: study.cost.j0,
        delta_j: study.cost.delta_j,
        zeta: study.zeta,
        non_unique: study.optimal.non_unique,
    };
    say(&serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn run_and_emit(cfg: &ScenarioConfig) -> Result<()> {
    let study = Study::prepare(cfg)?;
    let artifacts = run_study(&study, cfg)?;
    let files = emit(&artifacts, cfg, &cfg.out_dir)?;
    let summary = serde_json::json!({
        "mode": cfg.mode.label(),
        "replicas": artifacts.replicas.len(),
        "zeta": artifacts.zeta,
        "pre_attack_rate": cfg.attack.map(|a| artifacts.mean_rate(0, a.replay_start)),
        "post_attack_rate": cfg.attack.map(|a| artifacts.mean_rate(a.replay_start, a.replay_end())),
        "probes": artifacts.probes,
        "manifest": files.manifest,
    });
    say(&serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LearnCheckpoint {
    config: ScenarioConfig,
    learner: LearnerState,
    plant: SimState,
    rng: ChaCha8Rng,
}

fn write_checkpoint(path: &Path, ckpt: &LearnCheckpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string(ckpt)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn learn(
    cfg: ScenarioConfig,
    steps: u64,
    checkpoint: Option<&Path>,
    resume: Option<&Path>,
    report_every: u64,
) -> Result<()> {
    let mut ckpt = match resume {
        Some(path) => serde_json::from_str::<LearnCheckpoint>(&std::fs::read_to_string(path)?)?,
        None => {
            let sys = cfg.system.build()?;
            let n_model = match cfg.mode {
                Mode::ReducedOrder { n_model } => n_model,
                _ => sys.n(),
            };
            LearnCheckpoint {
                learner: LearnerState::new(cfg.learner.learner_config(n_model, sys.m(), sys.p()))?,
                plant: SimState::new(sys.n(), cfg.seed),
                rng: {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(WATERMARK_STREAM);
                    rng
                },
                config: cfg,
            }
        }
    };
    let study = Study::prepare(&ckpt.config)?;
    let h0 = study.sys.c() * study.sys.b();
    for _ in 0..steps {
        let phi = ckpt.learner.generate_watermark(&mut ckpt.rng)?;
        let y = study.sys.simulate_step(&mut ckpt.plant, &phi)?;
        let due = ckpt.learner.redesign_due();
        ckpt.learner.ingest(&y)?;
        if due {
            let report = ckpt.learner.redesign();
            if let Some(err) = report.error {
                log::info!(
                    "redesign at k = {} kept the previous design: {err}",
                    report.k
                );
            }
        }
        let k = ckpt.learner.k();
        if report_every > 0 && k % report_every == 0 {
            let line = serde_json::json!({
                "k": k,
                "h0_error": (&ckpt.learner.markov_estimates()[0] - &h0).norm(),
                "u_error": (ckpt.learner.current_covariance() - study.exact_u()).norm(),
                "audit_clean": ckpt.learner.audit().clean(),
            });
            say(&line.to_string())?;
            if let Some(path) = checkpoint {
                write_checkpoint(path, &ckpt)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        write_checkpoint(path, &ckpt)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design(common) => design(&common.resolve()?),
        Command::Simulate(common) => {
            let mut cfg = common.resolve()?;
            cfg.monte_carlo = 1;
            run_and_emit(&cfg)
        }
        Command::Montecarlo(common) => run_and_emit(&common.resolve()?),
        Command::Reduced { common, n_model } => {
            let mut cfg = common.resolve()?;
            cfg.mode = match (n_model, cfg.mode) {
                (Some(n), _) => Mode::ReducedOrder { n_model: n },
                (None, Mode::ReducedOrder { n_model }) => Mode::ReducedOrder { n_model },
                (None, _) => {
                    return Err(watermark_core::Error::InvalidConfig(
                        "reduced needs --n-model or mode.reduced_order in the config".into(),
                    ))
                }
            };
            cfg.validate()?;
            run_and_emit(&cfg)
        }
        Command::Learn {
            common,
            steps,
            checkpoint,
            resume,
            report_every,
        } => {
            let cfg = common.resolve()?;
            learn(
                cfg,
                steps,
                checkpoint.as_deref(),
                resume.as_deref(),
                report_every,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(watermark_core::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => {
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
