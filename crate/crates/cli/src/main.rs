//! `stemflow` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! stage fails. Log verbosity comes from `STEMFLOW_LOG` (env_logger syntax,
//! default `info`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stemflow_core::pipeline::{self, Stage, MANIFEST_FILE};
use stemflow_core::seeds::derive_seed;
use stemflow_core::synth::{self, ImageConfig};
use stemflow_core::task::{self, scenario_by_ref};
use stemflow_core::{augment, io, neat, plot, vision};
use stemflow_core::{
    Error, ExperimentTag, FastLstm, Genome, LstmModel, PipelineConfig, RolloutTrace, RunManifest, Schedule,
};

const LOG_ENV: &str = "STEMFLOW_LOG";

#[derive(Parser)]
#[command(name = "stemflow", version, about = "Plant stem tracking, forward modelling and controller evolution")]
struct Cli {
    /// Sectioned key-value config; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic frame sequence, optionally rendered to images.
    Synth(SynthArgs),
    /// Track stems in a directory of images.
    Track(TrackArgs),
    /// Build a regression dataset from frame files.
    Augment(AugmentArgs),
    /// Train the LSTM forward model.
    Train(TrainArgs),
    /// Evolve light controllers on a scenario set.
    Evolve(EvolveArgs),
    /// Roll out a controller in one scenario.
    Simulate(SimulateArgs),
    /// Render traces or frame sequences to SVG.
    Plot(PlotArgs),
    /// Run pipeline stages into an output directory with a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    steps: Option<usize>,
    /// openloop6h, left, right or random (random uses the config dwell range).
    #[arg(long, default_value = "openloop6h")]
    schedule: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write images, setup images, a light log and a matching tracker config here.
    #[arg(long, value_name = "DIR")]
    render: Option<PathBuf>,
    /// Render every k-th frame.
    #[arg(long, default_value_t = 1)]
    render_every: usize,
    /// Image scale; the default camera uses 80.
    #[arg(long, default_value_t = 80.0)]
    px_per_cm: f64,
    #[arg(long, default_value_t = 5)]
    setup_images: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long, value_name = "DIR")]
    images: PathBuf,
    #[arg(long, value_name = "DIR")]
    setup: PathBuf,
    /// Light log with `timestep side` lines; without it every frame is left-lit.
    #[arg(long)]
    lights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Frame files, in order; the first is the open-loop source by default.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-epoch train and validation MAE as CSV.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    /// left or middle.
    #[arg(long)]
    scenario_set: Option<String>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    genome: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Scenario reference such as left:2 or middle:1.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Rollout trace CSVs to overlay.
    #[arg(long, num_args = 1.., conflicts_with = "frames")]
    trace: Vec<PathBuf>,
    /// Scenario the traces ran in.
    #[arg(long, requires = "trace")]
    scenario: Option<String>,
    /// A frame file to plot instead of traces.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Draw every n-th stem.
    #[arg(long, default_value_t = 24)]
    every: usize,
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Comma-separated subset, e.g. synth,augment,train.
    #[arg(long)]
    stages: Option<String>,
    /// Check the digests of an existing run instead of running.
    #[arg(long)]
    verify: bool,
}

/// A problem with the configuration or arguments, reported with exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e
        .chain()
        .any(|c| c.is::<ConfigError>() || matches!(c.downcast_ref::<Error>(), Some(Error::Config { .. })));
    if config {
        2
    } else {
        3
    }
}

/// The error chain, skipping causes already quoted by an outer message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let s = cause.to_string();
        if !msg.contains(&s) {
            msg = format!("{msg}: {s}");
        }
    }
    msg
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            Error::Config { .. } => config_err(format!("{}: {e}", p.display())),
            e => config_err(e),
        })?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth_cmd(&cfg, a),
        Command::Track(a) => track_cmd(&cfg, a),
        Command::Augment(a) => augment_cmd(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Evolve(a) => {
            if let Some(p) = a.pop {
                cfg.neat.pop_size = p;
                cfg.neat.validate().map_err(config_err)?;
            }
            evolve_cmd(&cfg, a)
        }
        Command::Simulate(a) => simulate_cmd(&cfg, a),
        Command::Plot(a) => plot_cmd(&cfg, a),
        Command::Pipeline(a) => pipeline_cmd(&cfg, a),
    }
}

fn synth_cmd(cfg: &PipelineConfig, a: SynthArgs) -> Result<()> {
    let p = &cfg.pipeline;
    let steps = a.steps.unwrap_or(p.steps);
    let seed = a.seed.unwrap_or(p.seed);
    let schedule = match a.schedule.as_str() {
        "random" => Schedule::Random {
            min_dwell: p.min_dwell,
            max_dwell: p.max_dwell,
            seed: derive_seed(seed, "synth", 0),
        },
        name => Schedule::parse(name).map_err(config_err)?,
    };
    if steps == 0 {
        return Err(config_err("--steps must be positive"));
    }
    let frames = synth::generate_dataset(&cfg.synth, &schedule, steps);
    io::write_text(&a.out, &io::serialize_frames(&frames))?;
    log::info!("wrote {} frames to {}", frames.len(), a.out.display());
    if let Some(dir) = &a.render {
        if !(a.px_per_cm > 0.0) || a.render_every == 0 || a.setup_images == 0 {
            return Err(config_err("--px-per-cm, --render-every and --setup-images must be positive"));
        }
        render(&frames, dir, &a, seed)?;
    }
    Ok(())
}

/// Writes `images/frame_NNNNN.ppm`, `setup/setup_NN.ppm`, `lights.log` and
/// `tracker.conf` so the directory can be fed straight back to `track`.
fn render(frames: &[stemflow_core::TrackedFrame], dir: &Path, a: &SynthArgs, seed: u64) -> Result<()> {
    let base = ImageConfig::default();
    let s = a.px_per_cm / base.px_per_cm;
    let img = ImageConfig {
        width: ((base.width as f64 * s).round() as u32).max(1),
        height: ((base.height as f64 * s).round() as u32).max(1),
        px_per_cm: a.px_per_cm,
        anchor_px: (base.anchor_px.0 * s, base.anchor_px.1 * s),
        stroke_px: (base.stroke_px * s).max(1.0),
        ..base
    };
    let downsample = ((8.0 * s).round() as usize).max(1);
    for sub in ["setup", "images"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    }
    let setup = synth::render_setup_images(&img, a.setup_images, derive_seed(seed, "render", 0));
    for (i, im) in setup.iter().enumerate() {
        vision::save_ppm(im, &dir.join(format!("setup/setup_{i:02}.ppm")))?;
    }
    let mut log = String::from("# timestep side\n");
    let mut last = None;
    let mut clipped = 0;
    for (k, f) in frames.iter().step_by(a.render_every).enumerate() {
        let (im, clip) = synth::render_frame(&f.stem, &setup[0], &img);
        clipped += clip as usize;
        vision::save_ppm(&im, &dir.join(format!("images/frame_{k:05}.ppm")))?;
        if last != Some(f.light) {
            log.push_str(&format!("{k} {}\n", f.light));
            last = Some(f.light);
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} rendered frames clipped at the image border");
    }
    io::write_text(&dir.join("lights.log"), &log)?;
    let tracker = format!(
        "[tracker]\ndownsample = {downsample}\npx_per_cm = {}\nanchor_px = {} {}\n",
        img.px_per_cm, img.anchor_px.0, img.anchor_px.1
    );
    io::write_text(&dir.join("tracker.conf"), &tracker)?;
    log::info!("rendered {}x{} images to {}", img.width, img.height, dir.display());
    Ok(())
}

fn track_cmd(cfg: &PipelineConfig, a: TrackArgs) -> Result<()> {
    let lights = match &a.lights {
        Some(p) => pipeline::read_light_log(p)?,
        None => vision::LightLog::constant(stemflow_core::LightCondition::Left),
    };
    let out = pipeline::track_directory(&a.images, &a.setup, &lights, &cfg.tracker)?;
    io::write_text(&a.out, &io::serialize_frames(&out.frames))?;
    log::info!("tracked {} frames, {} without plant pixels", out.frames.len(), out.gaps.len());
    Ok(())
}

fn augment_cmd(cfg: &PipelineConfig, a: AugmentArgs) -> Result<()> {
    let sources = a
        .frames
        .iter()
        .map(|f| io::read_frames_file(f))
        .collect::<stemflow_core::Result<Vec<_>>>()?;
    let seed = derive_seed(a.seed.unwrap_or(cfg.pipeline.seed), "augment", 0);
    let data = augment::augment(&sources, &cfg.augment, seed)?;
    io::write_text(&a.out, &io::serialize_regression(&data))?;
    log::info!("wrote {} regression vectors to {}", data.len(), a.out.display());
    Ok(())
}

fn train_cmd(cfg: &PipelineConfig, a: TrainArgs) -> Result<()> {
    let data = io::read_regression_file(&a.data)?;
    let seed = a.seed.unwrap_or(cfg.pipeline.seed);
    let tc = stemflow_core::TrainConfig {
        shuffle_seed: derive_seed(seed, "train", 0),
        ..cfg.train.clone()
    };
    let init = derive_seed(seed, "lstm-init", 0);
    let (model, report) = pipeline::train_model(&data, &tc, cfg.lstm_hidden, cfg.delta_scale, init)?;
    model.save(&a.out)?;
    if let Some(p) = &a.losses {
        io::write_text(p, &pipeline::losses_csv(&report))?;
    }
    log::info!(
        "validation MAE {:.3e} -> {:.3e} (best epoch {}, stopped at {}), test MAE {:.3e}",
        report.initial_val_loss,
        report.val_loss[report.best_epoch - 1],
        report.best_epoch,
        report.stop_epoch,
        report.test_mae
    );
    Ok(())
}

fn load_fast(path: &Path) -> Result<FastLstm> {
    Ok(FastLstm::new(&LstmModel::load(path)?)?)
}

fn evolve_cmd(cfg: &PipelineConfig, a: EvolveArgs) -> Result<()> {
    let tag = match &a.scenario_set {
        Some(s) => ExperimentTag::parse(s).map_err(config_err)?,
        None => cfg.pipeline.experiment,
    };
    let gens = a.gens.unwrap_or(cfg.pipeline.generations);
    if gens == 0 {
        return Err(config_err("--gens must be positive"));
    }
    let fast = load_fast(&a.model)?;
    let seed = derive_seed(a.seed.unwrap_or(cfg.pipeline.seed), "evolve", 0);
    let set = task::builtin_scenarios(tag);
    let r = pipeline::evolve_controllers(&fast, &set, &cfg.neat, &cfg.task, gens, seed)?;
    r.champion.save(&a.out)?;
    if let Some(p) = &a.stats {
        io::write_text(p, &neat::stats_csv(&r.history))?;
    }
    log::info!(
        "{tag}: champion fitness {:.4} after {gens} generations",
        r.champion.fitness.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn simulate_cmd(cfg: &PipelineConfig, a: SimulateArgs) -> Result<()> {
    let (_, _, scenario) = scenario_by_ref(&a.scenario).map_err(config_err)?;
    let genome = Genome::load(&a.genome)?;
    let fast = load_fast(&a.model)?;
    let trace = pipeline::simulate(&genome, &fast, &scenario, &cfg.task, cfg.neat.sigmoid_slope)?;
    io::write_text(&a.trace, &trace.to_csv())?;
    if let Some(p) = &a.svg {
        let svg = plot::traces_svg(&[("controller", &trace)], &scenario, &a.scenario, 24);
        io::write_text(p, &svg)?;
    }
    let tip = trace.final_tip();
    println!(
        "{}: fitness {:.4}, {} steps, {}, tip ({:.2}, {:.2})",
        a.scenario,
        trace.fitness,
        trace.steps.len(),
        trace.cause.name(),
        tip.x,
        tip.y
    );
    Ok(())
}

fn plot_cmd(cfg: &PipelineConfig, a: PlotArgs) -> Result<()> {
    let svg = if let Some(f) = &a.frames {
        let frames = io::read_frames_file(f)?;
        let title = a.title.clone().unwrap_or_else(|| f.display().to_string());
        plot::frames_svg(&frames, &title, a.every)
    } else {
        if a.trace.is_empty() {
            return Err(config_err("plot needs --trace files or --frames"));
        }
        let reference = a.scenario.as_deref().ok_or_else(|| config_err("--trace needs --scenario"))?;
        let (_, _, scenario) = scenario_by_ref(reference).map_err(config_err)?;
        let mut traces = Vec::new();
        for p in &a.trace {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let trace = RolloutTrace::from_csv(&text, &scenario, &cfg.task)
                .with_context(|| format!("parsing {}", p.display()))?;
            let label = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            traces.push((label, trace));
        }
        let refs: Vec<(&str, &RolloutTrace)> = traces.iter().map(|(l, t)| (l.as_str(), t)).collect();
        let title = a.title.clone().unwrap_or_else(|| reference.to_string());
        plot::traces_svg(&refs, &scenario, &title, a.every)
    };
    io::write_text(&a.out, &svg)?;
    Ok(())
}

fn pipeline_cmd(cfg: &PipelineConfig, a: PipelineArgs) -> Result<()> {
    if a.verify {
        let m = RunManifest::load(&a.out)?;
        m.verify(&a.out)?;
        let files: usize = m.stages.iter().map(|s| s.outputs.len()).sum();
        println!("{}: {} stage records, {files} outputs verified", a.out.join(MANIFEST_FILE).display(), m.stages.len());
        return Ok(());
    }
    let stages = match &a.stages {
        Some(s) => Stage::parse_list(s).map_err(config_err)?,
        None => Stage::defaults(cfg),
    };
    let m = pipeline::run_pipeline(cfg, &stages, &a.out)?;
    for rec in m.stages.iter().rev().take(stages.len()).rev() {
        let summary: Vec<String> = rec.summary.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{}: {} outputs {}", rec.stage, rec.outputs.len(), summary.join(" "));
    }
    Ok(())
}
