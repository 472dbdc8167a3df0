//! End-to-end runs with a self-verifying manifest.
//!
//! Every stage writes its files under the output directory and appends one
//! record to `manifest.json`: the seeds it drew, the sha256 of every file it
//! read and wrote, and the artifact format versions. Stage timings go to
//! `timings.json` so the manifest itself stays byte-identical across runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geom::TrackedFrame;
use crate::io;
use crate::lstm::{self, FastLstm, LstmModel, TrainReport};
use crate::neat::{self, EvolutionResult, Genome, NeatParams, Phenotype};
use crate::plot;
use crate::seeds::derive_seed;
use crate::synth::{self, Schedule};
use crate::task::{self, ForwardModel, RolloutLimits, RolloutTrace, CONTROLLER_INPUTS};
use crate::vision::{self, LightLog, TrackOutput, TrackerConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
const MANIFEST_FORMAT: &str = "stemflow manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Track,
    Augment,
    Train,
    Evolve,
    Simulate,
    Plot,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Track,
        Stage::Augment,
        Stage::Train,
        Stage::Evolve,
        Stage::Simulate,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Track => "track",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Evolve => "evolve",
            Stage::Simulate => "simulate",
            Stage::Plot => "plot",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown stage `{s}`")))
    }

    /// Parses a comma-separated list into dependency order.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out: Vec<Stage> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Stage::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Invalid("no stages requested".into()));
        }
        Ok(out)
    }

    /// Stages a run performs when none are named: everything except
    /// tracking, which needs images.
    pub fn defaults(cfg: &PipelineConfig) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Track || cfg.pipeline.images.is_some())
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub index: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub seeds: Vec<SeedRecord>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub artifact_versions: Vec<String>,
    /// Headline numbers, e.g. losses or fitness.
    pub summary: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub config_sha256: String,
    /// Full config, every key spelled out.
    pub config: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let config = cfg.to_text();
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: cfg.pipeline.seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            stages: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Invalid(format!("manifest format `{}` is not supported", m.format)));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        RunManifest::from_json(&text)
    }

    /// Latest successful record of a stage.
    pub fn latest(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages
            .iter()
            .rev()
            .find(|r| r.stage == stage.name() && r.status == StageStatus::Ok)
    }

    /// Re-hashes every output of every successful stage. Later stages may
    /// legitimately overwrite a file, so only the latest record of each
    /// path is checked.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut latest: BTreeMap<&str, &Artifact> = BTreeMap::new();
        for r in self.stages.iter().filter(|r| r.status == StageStatus::Ok) {
            for a in &r.outputs {
                latest.insert(&a.path, a);
            }
        }
        for a in latest.values() {
            let now = artifact(dir, &dir.join(&a.path))?;
            if now.sha256 != a.sha256 {
                return Err(Error::Invalid(format!("{} changed since it was recorded", a.path)));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn relative(dir: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(dir).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn artifact(dir: &Path, path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Artifact {
        path: relative(dir, path),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Reads a recorded input and checks it still matches its digest.
fn verified_input(dir: &Path, a: &Artifact) -> Result<(PathBuf, Artifact)> {
    let path = dir.join(&a.path);
    let now = artifact(dir, &path)?;
    if now.sha256 != a.sha256 {
        return Err(Error::Invalid(format!("{} changed since it was recorded", a.path)));
    }
    Ok((path, now))
}

/// Synth sequences: the open-loop schedule, then `sequences` random-dwell
/// schedules with derived seeds.
pub fn synth_sequences(cfg: &PipelineConfig) -> (Vec<Vec<TrackedFrame>>, Vec<SeedRecord>) {
    let p = &cfg.pipeline;
    let mut seqs = vec![synth::generate_dataset(&cfg.synth, &Schedule::open_loop_6h(), p.steps)];
    let mut seeds = Vec::new();
    for i in 0..p.sequences as u64 {
        let seed = derive_seed(p.seed, "synth", i);
        seeds.push(SeedRecord {
            label: "synth".into(),
            index: i,
            seed,
        });
        let sched = Schedule::Random {
            min_dwell: p.min_dwell,
            max_dwell: p.max_dwell,
            seed,
        };
        seqs.push(synth::generate_dataset(&cfg.synth, &sched, p.steps));
    }
    (seqs, seeds)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "pnm" | "png")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no PPM or PNG images in {}", dir.display())));
    }
    Ok(files)
}

/// Tracks every image of `images` (sorted by name, one per timestep)
/// against the empty-setup images in `setup`.
pub fn track_directory(images: &Path, setup: &Path, lights: &LightLog, cfg: &TrackerConfig) -> Result<TrackOutput> {
    cfg.validate()?;
    let setup_images = image_files(setup)?
        .iter()
        .map(|p| vision::load_image(p))
        .collect::<Result<Vec<_>>>()?;
    let env = vision::build_envelope(&setup_images, cfg.downsample)?;
    let files = image_files(images)?;
    vision::track_iter(files.iter().map(|p| vision::load_image(p)), &env, cfg, lights)
}

pub fn read_light_log(path: &Path) -> Result<LightLog> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    LightLog::parse(std::io::BufReader::new(f))
}

/// A fresh model of the configured shape trained on `data`.
pub fn train_model(
    data: &[crate::geom::RegressionVector],
    cfg: &lstm::TrainConfig,
    hidden: usize,
    delta_scale: f64,
    init_seed: u64,
) -> Result<(LstmModel, TrainReport)> {
    let mut model = LstmModel::new(hidden, init_seed)?;
    model.delta_scale = delta_scale;
    let report = lstm::train(&mut model, data, cfg)?;
    Ok((model, report))
}

pub fn losses_csv(r: &TrainReport) -> String {
    let mut out = String::from("epoch,train_mae,val_mae\n");
    for (e, (t, v)) in r.train_loss.iter().zip(&r.val_loss).enumerate() {
        out.push_str(&format!("{},{t},{v}\n", e + 1));
    }
    out
}

/// Mean fitness of a genome over a scenario set.
pub fn controller_fitness<M: ForwardModel>(
    g: &Genome,
    model: &M,
    set: &task::ScenarioSet,
    limits: &RolloutLimits,
    slope: f64,
) -> Result<f64> {
    let mut net = Phenotype::new(g, slope)?;
    task::evaluate(&mut net, model, set, limits)
}

/// One NEAT run of controllers for `set`.
pub fn evolve_controllers<M: ForwardModel + Sync>(
    model: &M,
    set: &task::ScenarioSet,
    params: &NeatParams,
    limits: &RolloutLimits,
    generations: usize,
    seed: u64,
) -> Result<EvolutionResult> {
    neat::evolve(
        |g| controller_fitness(g, model, set, limits, params.sigmoid_slope),
        CONTROLLER_INPUTS,
        1,
        params,
        generations,
        seed,
    )
}

/// Rollout of a genome in one scenario.
pub fn simulate<M: ForwardModel>(
    g: &Genome,
    model: &M,
    scenario: &crate::geom::Scenario,
    limits: &RolloutLimits,
    slope: f64,
) -> Result<RolloutTrace> {
    let mut net = Phenotype::new(g, slope)?;
    task::rollout(&mut net, model, scenario, limits)
}

struct StageRun<'a> {
    dir: &'a Path,
    record: StageRecord,
}

impl<'a> StageRun<'a> {
    fn new(dir: &'a Path, stage: Stage) -> Self {
        StageRun {
            dir,
            record: StageRecord {
                stage: stage.name().into(),
                status: StageStatus::Ok,
                seeds: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                artifact_versions: Vec::new(),
                summary: BTreeMap::new(),
                error: None,
            },
        }
    }

    fn seed(&mut self, label: &str, index: u64, master: u64) -> u64 {
        let seed = derive_seed(master, label, index);
        self.record.seeds.push(SeedRecord {
            label: label.into(),
            index,
            seed,
        });
        seed
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        io::write_text(&path, text)?;
        self.record.outputs.push(artifact(self.dir, &path)?);
        Ok(path)
    }

    fn version(&mut self, v: &str) {
        if !self.record.artifact_versions.iter().any(|x| x == v) {
            self.record.artifact_versions.push(v.into());
        }
    }

    /// Verified paths of the outputs of the latest run of `stage`.
    fn inputs_from(&mut self, manifest: &RunManifest, stage: Stage, suffix: &str) -> Result<Vec<PathBuf>> {
        let rec = manifest.latest(stage).ok_or_else(|| {
            Error::Invalid(format!(
                "no completed `{stage}` stage in {}",
                self.dir.join(MANIFEST_FILE).display()
            ))
        })?;
        let mut out = Vec::new();
        for a in rec.outputs.iter().filter(|a| a.path.ends_with(suffix)) {
            let (path, art) = verified_input(self.dir, a)?;
            self.record.inputs.push(art);
            out.push(path);
        }
        Ok(out)
    }

    /// A file that must exist at a fixed place, e.g. a checkpoint.
    fn input(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        self.record.inputs.push(artifact(self.dir, &path)?);
        Ok(path)
    }
}

const FRAMES_VERSION: &str = "stemflow frames v1";
const REGRESSION_VERSION: &str = "stemflow regression v1";
const LSTM_VERSION: &str = "stemflow lstm v1";
const GENOME_VERSION: &str = "stemflow genome v1";

fn run_stage(stage: Stage, cfg: &PipelineConfig, run: &mut StageRun, manifest: &RunManifest) -> Result<()> {
    let master = cfg.pipeline.seed;
    match stage {
        Stage::Synth => {
            let (seqs, seeds) = synth_sequences(cfg);
            run.record.seeds = seeds;
            for (i, s) in seqs.iter().enumerate() {
                run.write(&format!("synth/seq_{i:03}.frames"), &io::serialize_frames(s))?;
            }
            run.version(FRAMES_VERSION);
            run.record.summary.insert("sequences".into(), seqs.len() as f64);
        }
        Stage::Track => {
            let p = &cfg.pipeline;
            let missing = |k: &str| Error::Invalid(format!("track needs `pipeline.{k}` in the config"));
            let images = p.images.as_ref().ok_or_else(|| missing("images"))?;
            let setup = p.setup.as_ref().ok_or_else(|| missing("setup"))?;
            let lights_path = p.lights.as_ref().ok_or_else(|| missing("lights"))?;
            let lights = read_light_log(lights_path)?;
            let out = track_directory(images, setup, &lights, &cfg.tracker)?;
            run.write("track/tracked.frames", &io::serialize_frames(&out.frames))?;
            run.version(FRAMES_VERSION);
            run.record.summary.insert("frames".into(), out.frames.len() as f64);
            run.record.summary.insert("gaps".into(), out.gaps.len() as f64);
        }
        Stage::Augment => {
            let mut files = run.inputs_from(manifest, Stage::Synth, ".frames")?;
            if manifest.latest(Stage::Track).is_some() {
                files.extend(run.inputs_from(manifest, Stage::Track, ".frames")?);
            }
            let sources = files
                .iter()
                .map(|f| io::read_frames_file(f))
                .collect::<Result<Vec<_>>>()?;
            let seed = run.seed("augment", 0, master);
            let data = augment::augment(&sources, &cfg.augment, seed)?;
            run.write("augment/dataset.txt", &io::serialize_regression(&data))?;
            run.version(REGRESSION_VERSION);
            run.record.summary.insert("pairs".into(), data.len() as f64);
        }
        Stage::Train => {
            let files = run.inputs_from(manifest, Stage::Augment, "dataset.txt")?;
            let data = io::read_regression_file(&files[0])?;
            let init = run.seed("lstm-init", 0, master);
            let shuffle = run.seed("train", 0, master);
            let tc = lstm::TrainConfig {
                shuffle_seed: shuffle,
                ..cfg.train.clone()
            };
            let (model, report) = train_model(&data, &tc, cfg.lstm_hidden, cfg.delta_scale, init)?;
            run.write("train/model.lstm", &model.to_checkpoint())?;
            run.write("train/losses.csv", &losses_csv(&report))?;
            run.version(LSTM_VERSION);
            let s = &mut run.record.summary;
            s.insert("initial_val_mae".into(), report.initial_val_loss);
            s.insert("val_mae".into(), report.val_loss[report.best_epoch - 1]);
            s.insert("test_mae".into(), report.test_mae);
            s.insert("best_epoch".into(), report.best_epoch as f64);
            s.insert("stop_epoch".into(), report.stop_epoch as f64);
        }
        Stage::Evolve => {
            let files = run.inputs_from(manifest, Stage::Train, "model.lstm")?;
            let fast = FastLstm::new(&LstmModel::load(&files[0])?)?;
            let set = task::builtin_scenarios(cfg.pipeline.experiment);
            let mut best: Option<(f64, Genome)> = None;
            for k in 0..cfg.pipeline.runs as u64 {
                let seed = run.seed("evolve", k, master);
                let r = evolve_controllers(&fast, &set, &cfg.neat, &cfg.task, cfg.pipeline.generations, seed)?;
                run.write(&format!("evolve/run_{k:03}.genome"), &r.champion.to_text())?;
                run.write(&format!("evolve/run_{k:03}_stats.csv"), &neat::stats_csv(&r.history))?;
                let f = r.champion.fitness.expect("champion evaluated");
                run.record.summary.insert(format!("run_{k:03}_fitness"), f);
                if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                    best = Some((f, r.champion));
                }
            }
            let (f, champion) = best.expect("at least one run");
            run.write("evolve/champion.genome", &champion.to_text())?;
            run.version(GENOME_VERSION);
            run.record.summary.insert("champion_fitness".into(), f);
        }
        Stage::Simulate => {
            let model_path = run.inputs_from(manifest, Stage::Train, "model.lstm")?;
            let genome_path = run.inputs_from(manifest, Stage::Evolve, "champion.genome")?;
            let fast = FastLstm::new(&LstmModel::load(&model_path[0])?)?;
            let champion = Genome::load(&genome_path[0])?;
            let set = task::builtin_scenarios(cfg.pipeline.experiment);
            for (i, sc) in set.scenarios.iter().enumerate() {
                let trace = simulate(&champion, &fast, sc, &cfg.task, cfg.neat.sigmoid_slope)?;
                run.write(&format!("simulate/{}_{}.csv", set.tag, i + 1), &trace.to_csv())?;
                run.record.summary.insert(format!("{}_{}_fitness", set.tag, i + 1), trace.fitness);
            }
        }
        Stage::Plot => {
            if let Some(first) = manifest.latest(Stage::Synth).and_then(|r| r.outputs.first()).cloned() {
                let (path, art) = verified_input(run.dir, &first)?;
                run.record.inputs.push(art);
                let frames = io::read_frames_file(&path)?;
                run.write("plot/synth_000.svg", &plot::frames_svg(&frames, "synth sequence 0", 24))?;
            }
            if manifest.latest(Stage::Simulate).is_some() {
                let model_path = run.input("train/model.lstm")?;
                let genome_path = run.input("evolve/champion.genome")?;
                let fast = FastLstm::new(&LstmModel::load(&model_path)?)?;
                let champion = Genome::load(&genome_path)?;
                let set = task::builtin_scenarios(cfg.pipeline.experiment);
                for (i, sc) in set.scenarios.iter().enumerate() {
                    let trace = simulate(&champion, &fast, sc, &cfg.task, cfg.neat.sigmoid_slope)?;
                    let name = format!("{}_{}", set.tag, i + 1);
                    let svg = plot::traces_svg(&[("champion", &trace)], sc, &name, 48);
                    run.write(&format!("plot/{name}.svg"), &svg)?;
                }
            }
            if run.record.outputs.is_empty() {
                return Err(Error::Invalid("nothing to plot: run synth or simulate first".into()));
            }
        }
    }
    Ok(())
}

fn save_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    io::write_text(&dir.join(MANIFEST_FILE), &m.to_json())
}

/// Runs `stages` in dependency order into `dir`, appending to an existing
/// manifest of the same config. A failing stage is recorded and halts the
/// run with [`Error::Stage`].
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage], dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let fresh = RunManifest::new(cfg);
    let mut manifest = if dir.join(MANIFEST_FILE).exists() {
        let m = RunManifest::load(dir)?;
        if m.config_sha256 != fresh.config_sha256 {
            return Err(Error::Invalid(format!(
                "{} belongs to a run with a different config",
                dir.join(MANIFEST_FILE).display()
            )));
        }
        m
    } else {
        fresh
    };
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    for stage in stages {
        log::info!("stage {stage}");
        let t0 = Instant::now();
        let mut run = StageRun::new(dir, stage);
        let outcome = run_stage(stage, cfg, &mut run, &manifest);
        timings.insert(stage.name().into(), t0.elapsed().as_secs_f64());
        let mut record = run.record;
        if let Err(e) = &outcome {
            record.status = StageStatus::Failed;
            record.error = Some(e.to_string());
        }
        manifest.stages.push(record);
        save_manifest(dir, &manifest)?;
        let timings_json = serde_json::to_string_pretty(&timings).expect("timings serialize");
        io::write_text(&dir.join(TIMINGS_FILE), &(timings_json + "\n"))?;
        if let Err(e) = outcome {
            return Err(Error::Stage {
                stage: stage.name().into(),
                source: Box::new(e),
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.pipeline.sequences = 1;
        c.pipeline.steps = 120;
        c.pipeline.generations = 2;
        c.augment.n_noisy = 1;
        c.augment.theta3 = 10;
        c.train.max_epochs = 2;
        c.lstm_hidden = 4;
        c.neat.pop_size = 6;
        c.task.step_cap = 40;
        c
    }

    #[test]
    fn stage_lists_sort_into_dependency_order() {
        let s = Stage::parse_list("plot, synth,train,synth").unwrap();
        assert_eq!(s, vec![Stage::Synth, Stage::Train, Stage::Plot]);
        assert!(Stage::parse_list("synth,trian").is_err());
        assert!(Stage::parse_list(" , ").is_err());
        assert!(!Stage::defaults(&PipelineConfig::default()).contains(&Stage::Track));
    }

    #[test]
    fn synth_only_writes_frames_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_pipeline(&small(), &[Stage::Synth], dir.path()).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].outputs.len(), 2);
        assert!(m.stages[0].outputs.iter().all(|a| a.path.starts_with("synth/")));
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, vec!["manifest.json", "synth", "timings.json"]);
        m.verify(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn train_without_data_fails_and_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_pipeline(&small(), &[Stage::Train], dir.path()).unwrap_err();
        assert!(matches!(&e, Error::Stage { stage, .. } if stage == "train"), "{e}");
        assert!(e.to_string().contains("manifest.json"), "{e}");
        let m = RunManifest::load(dir.path()).unwrap();
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].status, StageStatus::Failed);
        assert!(m.stages[0].error.is_some());
    }

    #[test]
    fn missing_recorded_input_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        run_pipeline(&cfg, &[Stage::Synth, Stage::Augment], dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("augment/dataset.txt")).unwrap();
        let e = run_pipeline(&cfg, &[Stage::Train], dir.path()).unwrap_err().to_string();
        assert!(e.contains("dataset.txt"), "{e}");
        let m = RunManifest::load(dir.path()).unwrap();
        assert_eq!(m.stages.last().unwrap().status, StageStatus::Failed);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_pipeline(&small(), &[Stage::Synth], dir.path()).unwrap();
        std::fs::write(dir.path().join("synth/seq_000.frames"), "# stemflow frames v1\n").unwrap();
        assert!(m.verify(dir.path()).is_err());
    }

    #[test]
    fn different_config_refuses_to_append() {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&small(), &[Stage::Synth], dir.path()).unwrap();
        let mut other = small();
        other.pipeline.seed = 1;
        assert!(run_pipeline(&other, &[Stage::Synth], dir.path()).is_err());
    }

    #[test]
    fn full_small_run_is_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = small();
        let stages = Stage::defaults(&cfg);
        let ma = run_pipeline(&cfg, &stages, a.path()).unwrap();
        let mb = run_pipeline(&cfg, &stages, b.path()).unwrap();
        assert_eq!(ma.to_json(), mb.to_json());
        assert_eq!(ma.stages.len(), 6);
        ma.verify(a.path()).unwrap();
    }
}
