//! Flat sectioned key-value configuration.
//!
//! ```text
//! # comments start with '#'
//! [pipeline]
//! seed = 7
//! [tracker]
//! theta1 = 0.2
//! anchor_px = 1296 1880
//! ```
//!
//! Every key is optional; missing keys keep their defaults. Unknown keys,
//! repeated keys and out-of-range values are rejected with the line number.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::augment::{AugmentConfig, ExclusionRect};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::lstm::{TrainConfig, DEFAULT_DELTA_SCALE, DEFAULT_HIDDEN};
use crate::neat::NeatParams;
use crate::synth::PlantParams;
use crate::task::{ExperimentTag, RolloutLimits};
use crate::vision::TrackerConfig;

/// Orchestration settings that belong to no single module.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub seed: u64,
    /// Random-dwell synth sequences generated next to the open-loop one.
    pub sequences: usize,
    /// Steps per synth sequence.
    pub steps: usize,
    pub min_dwell: u64,
    pub max_dwell: u64,
    pub experiment: ExperimentTag,
    pub runs: usize,
    pub generations: usize,
    /// Image directory for the track stage.
    pub images: Option<PathBuf>,
    /// Directory of empty-setup images.
    pub setup: Option<PathBuf>,
    /// Light log for the tracked images.
    pub lights: Option<PathBuf>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            seed: 0,
            sequences: 5,
            steps: 864,
            min_dwell: 12,
            max_dwell: 288,
            experiment: ExperimentTag::LeftTarget,
            runs: 1,
            generations: 200,
            images: None,
            setup: None,
            lights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub pipeline: PipelineSettings,
    pub tracker: TrackerConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub lstm_hidden: usize,
    pub delta_scale: f64,
    pub neat: NeatParams,
    pub task: RolloutLimits,
    pub synth: PlantParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pipeline: PipelineSettings::default(),
            tracker: TrackerConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            lstm_hidden: DEFAULT_HIDDEN,
            delta_scale: DEFAULT_DELTA_SCALE,
            neat: NeatParams::default(),
            task: RolloutLimits::default(),
            synth: PlantParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Range {
    Open01,
    Closed01,
    Positive,
    NonNegative,
    AtLeast(f64),
}

impl Range {
    fn holds(self, v: f64) -> bool {
        v.is_finite()
            && match self {
                Range::Open01 => v > 0.0 && v < 1.0,
                Range::Closed01 => (0.0..=1.0).contains(&v),
                Range::Positive => v > 0.0,
                Range::NonNegative => v >= 0.0,
                Range::AtLeast(m) => v >= m,
            }
    }

    fn describe(self, name: &str) -> String {
        match self {
            Range::Open01 => format!("{name} ∈ (0,1)"),
            Range::Closed01 => format!("{name} ∈ [0,1]"),
            Range::Positive => format!("{name} > 0"),
            Range::NonNegative => format!("{name} ≥ 0"),
            Range::AtLeast(m) => format!("{name} ≥ {m}"),
        }
    }
}

type Setter = fn(&mut PipelineConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&PipelineConfig) -> String;

struct Key {
    section: &'static str,
    name: &'static str,
    set: Setter,
    get: Getter,
}

trait Scalar: Sized + ToString {
    fn parse_scalar(v: &str) -> Option<Self>;
    fn as_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn parse_scalar(v: &str) -> Option<Self> {
        v.parse().ok()
    }
    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for usize {
    fn parse_scalar(v: &str) -> Option<Self> {
        v.parse().ok()
    }
    fn as_f64(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for u64 {
    fn parse_scalar(v: &str) -> Option<Self> {
        v.parse().ok()
    }
    fn as_f64(&self) -> f64 {
        *self as f64
    }
}

fn scalar<T: Scalar>(v: &str, name: &str, range: Range) -> std::result::Result<T, String> {
    let x = T::parse_scalar(v).ok_or_else(|| format!("`{v}` is not a valid value for {name}"))?;
    if !range.holds(x.as_f64()) {
        return Err(format!("{name} = {v} is out of range: {}", range.describe(name)));
    }
    Ok(x)
}

fn reals(v: &str, name: &str, count: usize) -> std::result::Result<Vec<f64>, String> {
    let xs: Vec<f64> = v
        .split_whitespace()
        .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| format!("{name} takes {count} numbers, got `{v}`"))?;
    if xs.len() != count {
        return Err(format!("{name} takes {count} numbers, got {}", xs.len()));
    }
    Ok(xs)
}

fn point(v: &str, name: &str) -> std::result::Result<Point2, String> {
    let xs = reals(v, name, 2)?;
    Ok(Point2::new(xs[0], xs[1]))
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

macro_rules! scalar_key {
    ($sec:literal, $name:literal, $range:expr, $($field:ident).+) => {
        Key {
            section: $sec,
            name: $name,
            set: |c, v| {
                c.$($field).+ = scalar(v, $name, $range)?;
                Ok(())
            },
            get: |c| c.$($field).+.to_string(),
        }
    };
}

const KEYS: &[Key] = &[
    scalar_key!("pipeline", "seed", Range::NonNegative, pipeline.seed),
    scalar_key!("pipeline", "sequences", Range::NonNegative, pipeline.sequences),
    scalar_key!("pipeline", "steps", Range::AtLeast(2.0), pipeline.steps),
    scalar_key!("pipeline", "min_dwell", Range::AtLeast(1.0), pipeline.min_dwell),
    scalar_key!("pipeline", "max_dwell", Range::AtLeast(1.0), pipeline.max_dwell),
    Key {
        section: "pipeline",
        name: "experiment",
        set: |c, v| {
            c.pipeline.experiment = ExperimentTag::parse(v).map_err(|e| e.to_string())?;
            Ok(())
        },
        get: |c| c.pipeline.experiment.name().to_string(),
    },
    scalar_key!("pipeline", "runs", Range::AtLeast(1.0), pipeline.runs),
    scalar_key!("pipeline", "generations", Range::AtLeast(1.0), pipeline.generations),
    Key {
        section: "pipeline",
        name: "images",
        set: |c, v| {
            c.pipeline.images = path(v);
            Ok(())
        },
        get: |c| show_path(&c.pipeline.images),
    },
    Key {
        section: "pipeline",
        name: "setup",
        set: |c, v| {
            c.pipeline.setup = path(v);
            Ok(())
        },
        get: |c| show_path(&c.pipeline.setup),
    },
    Key {
        section: "pipeline",
        name: "lights",
        set: |c, v| {
            c.pipeline.lights = path(v);
            Ok(())
        },
        get: |c| show_path(&c.pipeline.lights),
    },
    scalar_key!("tracker", "theta1", Range::Open01, tracker.theta1),
    scalar_key!("tracker", "theta2", Range::Positive, tracker.theta2),
    scalar_key!("tracker", "downsample", Range::AtLeast(1.0), tracker.downsample),
    scalar_key!("tracker", "px_per_cm", Range::Positive, tracker.px_per_cm),
    Key {
        section: "tracker",
        name: "anchor_px",
        set: |c, v| {
            let p = point(v, "anchor_px")?;
            c.tracker.anchor_px = (p.x, p.y);
            Ok(())
        },
        get: |c| format!("{} {}", c.tracker.anchor_px.0, c.tracker.anchor_px.1),
    },
    scalar_key!("augment", "theta3", Range::AtLeast(1.0), augment.theta3),
    scalar_key!("augment", "omega", Range::NonNegative, augment.omega),
    scalar_key!("augment", "n_noisy", Range::NonNegative, augment.n_noisy),
    Key {
        section: "augment",
        name: "lambda_exponents",
        set: |c, v| {
            c.augment.lambda_exponents = v
                .split_whitespace()
                .map(|t| t.parse::<i32>().ok().filter(|e| (-300..=300).contains(e)))
                .collect::<Option<_>>()
                .ok_or_else(|| format!("lambda_exponents takes integers, got `{v}`"))?;
            Ok(())
        },
        get: |c| join(&c.augment.lambda_exponents),
    },
    scalar_key!("augment", "jump_factor", Range::Positive, augment.jump_factor),
    Key {
        section: "augment",
        name: "generic_indices",
        set: |c, v| {
            c.augment.generic_indices = v
                .split_whitespace()
                .map(|t| t.parse::<usize>().ok())
                .collect::<Option<_>>()
                .ok_or_else(|| format!("generic_indices takes frame indices, got `{v}`"))?;
            Ok(())
        },
        get: |c| join(&c.augment.generic_indices),
    },
    Key {
        section: "augment",
        name: "exclusions",
        set: |c, v| {
            // `x0 y0 x1 y1` rectangles separated by ';'
            let mut out = Vec::new();
            for part in v.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                let r = reals(part, "each exclusion", 4)?;
                if r[0] > r[2] || r[1] > r[3] {
                    return Err(format!("exclusion `{part}` needs x0 ≤ x1 and y0 ≤ y1"));
                }
                out.push(ExclusionRect {
                    min: Point2::new(r[0], r[1]),
                    max: Point2::new(r[2], r[3]),
                });
            }
            c.augment.exclusions = out;
            Ok(())
        },
        get: |c| {
            let parts: Vec<String> = c
                .augment
                .exclusions
                .iter()
                .map(|r| format!("{} {} {} {}", r.min.x, r.min.y, r.max.x, r.max.y))
                .collect();
            parts.join("; ")
        },
    },
    scalar_key!("train", "batch_size", Range::AtLeast(1.0), train.batch_size),
    scalar_key!("train", "max_epochs", Range::AtLeast(1.0), train.max_epochs),
    scalar_key!("train", "lr", Range::Positive, train.lr),
    scalar_key!("train", "patience", Range::AtLeast(1.0), train.patience),
    Key {
        section: "train",
        name: "split",
        set: |c, v| {
            let s = reals(v, "split", 3)?;
            if s.iter().any(|x| !(0.0..=1.0).contains(x)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(format!("split = {v} is out of range: fractions in [0,1] summing to 1"));
            }
            c.train.split = (s[0], s[1], s[2]);
            Ok(())
        },
        get: |c| format!("{} {} {}", c.train.split.0, c.train.split.1, c.train.split.2),
    },
    scalar_key!("train", "beta1", Range::Closed01, train.beta1),
    scalar_key!("train", "beta2", Range::Closed01, train.beta2),
    scalar_key!("train", "eps", Range::Positive, train.eps),
    scalar_key!("train", "hidden", Range::AtLeast(1.0), lstm_hidden),
    scalar_key!("train", "delta_scale", Range::Positive, delta_scale),
    scalar_key!("neat", "pop_size", Range::AtLeast(2.0), neat.pop_size),
    scalar_key!("neat", "c1", Range::NonNegative, neat.c1),
    scalar_key!("neat", "c2", Range::NonNegative, neat.c2),
    scalar_key!("neat", "c3", Range::NonNegative, neat.c3),
    scalar_key!("neat", "compat_threshold", Range::Positive, neat.compat_threshold),
    scalar_key!("neat", "weight_mutation_rate", Range::Closed01, neat.weight_mutation_rate),
    scalar_key!("neat", "weight_perturb_prob", Range::Closed01, neat.weight_perturb_prob),
    scalar_key!("neat", "weight_perturb_power", Range::Positive, neat.weight_perturb_power),
    scalar_key!("neat", "weight_init_std", Range::Positive, neat.weight_init_std),
    scalar_key!("neat", "weight_limit", Range::Positive, neat.weight_limit),
    scalar_key!("neat", "add_conn_rate", Range::Closed01, neat.add_conn_rate),
    scalar_key!("neat", "add_node_rate", Range::Closed01, neat.add_node_rate),
    scalar_key!("neat", "crossover_rate", Range::Closed01, neat.crossover_rate),
    scalar_key!("neat", "disable_inherit_prob", Range::Closed01, neat.disable_inherit_prob),
    scalar_key!("neat", "elitism", Range::NonNegative, neat.elitism),
    scalar_key!("neat", "survival_threshold", Range::Closed01, neat.survival_threshold),
    scalar_key!("neat", "stagnation_limit", Range::AtLeast(1.0), neat.stagnation_limit),
    scalar_key!("neat", "sigmoid_slope", Range::Positive, neat.sigmoid_slope),
    scalar_key!("task", "stop_height", Range::Positive, task.stop_height),
    scalar_key!("task", "step_cap", Range::AtLeast(1.0), task.step_cap),
    scalar_key!("task", "seedling_height", Range::Positive, task.seedling_height),
    scalar_key!("synth", "growth_rate", Range::NonNegative, synth.growth_rate),
    scalar_key!("synth", "phototropic_gain", Range::NonNegative, synth.phototropic_gain),
    scalar_key!("synth", "nutation_amp", Range::NonNegative, synth.nutation_amp),
    scalar_key!("synth", "nutation_period", Range::AtLeast(2.0), synth.nutation_period),
    scalar_key!("synth", "stiffening_halflife", Range::Positive, synth.stiffening_halflife),
    scalar_key!("synth", "straightening", Range::Closed01, synth.straightening),
    scalar_key!("synth", "max_lean", Range::Positive, synth.max_lean),
    scalar_key!("synth", "seedling_height", Range::Positive, synth.seedling_height),
    Key {
        section: "synth",
        name: "light_left",
        set: |c, v| {
            c.synth.light_positions[0] = point(v, "light_left")?;
            Ok(())
        },
        get: |c| format!("{} {}", c.synth.light_positions[0].x, c.synth.light_positions[0].y),
    },
    Key {
        section: "synth",
        name: "light_right",
        set: |c, v| {
            c.synth.light_positions[1] = point(v, "light_right")?;
            Ok(())
        },
        get: |c| format!("{} {}", c.synth.light_positions[1].x, c.synth.light_positions[1].y),
    },
];

const SECTIONS: &[&str] = &["pipeline", "tracker", "augment", "train", "neat", "task", "synth"];

fn nearest<'a>(word: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates.min_by_key(|c| (strsim::levenshtein(word, c), *c))
}

impl PipelineConfig {
    /// Parses a config file; an empty text gives all defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut section: Option<&str> = None;
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| Error::Config { line, msg };
            let content = raw.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{content}`")))?
                    .trim();
                match SECTIONS.iter().find(|s| **s == name) {
                    Some(s) => section = Some(s),
                    None => {
                        let hint = nearest(name, SECTIONS.iter().copied()).unwrap_or_default();
                        return Err(err(format!("unknown section `{name}`; did you mean `{hint}`?")));
                    }
                }
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section.ok_or_else(|| err(format!("key `{k}` appears before any [section]")))?;
            let Some(key) = KEYS.iter().find(|key| key.section == sec && key.name == k) else {
                let hint = nearest(k, KEYS.iter().filter(|key| key.section == sec).map(|key| key.name))
                    .unwrap_or_default();
                return Err(err(format!("unknown key `{k}` in [{sec}]; did you mean `{hint}`?")));
            };
            if seen.contains(&(sec, key.name)) {
                return Err(err(format!("key `{k}` set twice in [{sec}]")));
            }
            seen.push((sec, key.name));
            (key.set)(&mut cfg, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    /// Cross-field checks on top of the per-key ranges.
    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.neat.validate()?;
        self.task.validate()?;
        self.synth.validate()?;
        let p = &self.pipeline;
        if p.min_dwell > p.max_dwell {
            return Err(Error::Invalid(format!(
                "min_dwell {} exceeds max_dwell {}",
                p.min_dwell, p.max_dwell
            )));
        }
        Ok(())
    }

    /// Every key with its current value, in a form `parse` reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for sec in SECTIONS {
            if !out.is_empty() {
                out.push('\n');
            }
            writeln!(out, "[{sec}]").unwrap();
            for key in KEYS.iter().filter(|k| k.section == *sec) {
                let v = (key.get)(self);
                if v.is_empty() {
                    writeln!(out, "{} =", key.name).unwrap();
                } else {
                    writeln!(out, "{} = {v}", key.name).unwrap();
                }
            }
        }
        out
    }

    /// `section.key` names of every accepted key.
    pub fn key_names() -> Vec<String> {
        KEYS.iter().map(|k| format!("{}.{}", k.section, k.name)).collect()
    }
}
