//! Single-layer LSTM regressor for next-stem prediction.
//!
//! Inputs are the 18 interior/tip coordinates in workspace units (cm / 40)
//! plus the light bit. The network output is a residual: the predicted next
//! coordinates are `current + delta_scale * output`, so a zero network
//! predicts no motion. Losses are reported in workspace units.
//!
//! Gate order in every weight block is input, forget, candidate, output.

use std::fmt::Write as _;
use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{LightCondition, Point2, RegressionVector, StemPolyline, STEM_COORDS};
use crate::task::ForwardModel;

pub const INPUT_DIM: usize = STEM_COORDS + 1;
pub const OUTPUT_DIM: usize = STEM_COORDS;
pub const DEFAULT_HIDDEN: usize = 50;
/// Centimetres per workspace unit.
pub const COORD_SCALE: f64 = 40.0;
/// Workspace units per unit of raw network output.
pub const DEFAULT_DELTA_SCALE: f64 = 3e-3;

const CHECKPOINT_HEADER: &str = "# stemflow lstm v1";

/// Offsets of the weight blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    hidden: usize,
    wx: usize,
    wh: usize,
    b: usize,
    wy: usize,
    by: usize,
    len: usize,
}

impl Layout {
    fn new(hidden: usize) -> Self {
        let g = 4 * hidden;
        let wx = 0;
        let wh = wx + g * INPUT_DIM;
        let b = wh + g * hidden;
        let wy = b + g;
        let by = wy + OUTPUT_DIM * hidden;
        Layout {
            hidden,
            wx,
            wh,
            b,
            wy,
            by,
            len: by + OUTPUT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    hidden: usize,
    /// All weights and biases, laid out as `Wx | Wh | b | Wy | by`.
    params: Vec<f64>,
    pub delta_scale: f64,
    pub seed: u64,
}

/// Hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One training example in network space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub input: [f64; INPUT_DIM],
    /// Raw output target.
    pub target: [f64; OUTPUT_DIM],
}

impl Sample {
    pub fn from_vector(v: &RegressionVector, delta_scale: f64) -> Self {
        let mut input = [0.0; INPUT_DIM];
        let mut target = [0.0; OUTPUT_DIM];
        for k in 0..STEM_COORDS {
            input[k] = v.current[k] / COORD_SCALE;
            target[k] = (v.next[k] - v.current[k]) / COORD_SCALE / delta_scale;
        }
        input[STEM_COORDS] = v.light.as_bit();
        Sample { input, target }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one cell update, kept for backpropagation.
struct Cache {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    y: [f64; OUTPUT_DIM],
}

impl LstmModel {
    /// Uniform `[-k, k]` initialisation with `k = 1/sqrt(fan_in)` and forget
    /// bias 1.
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Invalid("hidden size must be at least 1".into()));
        }
        let lay = Layout::new(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; lay.len];
        let kg = 1.0 / ((INPUT_DIM + hidden) as f64).sqrt();
        for p in &mut params[lay.wx..lay.b] {
            *p = rng.random_range(-kg..=kg);
        }
        for (r, p) in params[lay.b..lay.wy].iter_mut().enumerate() {
            *p = if r / hidden == 1 { 1.0 } else { 0.0 };
        }
        let ky = 1.0 / (hidden as f64).sqrt();
        for p in &mut params[lay.wy..lay.by] {
            *p = rng.random_range(-ky..=ky);
        }
        Ok(LstmModel {
            hidden,
            params,
            delta_scale: DEFAULT_DELTA_SCALE,
            seed,
        })
    }

    /// A model with every weight and bias zero.
    pub fn zeros(hidden: usize) -> Self {
        LstmModel {
            hidden,
            params: vec![0.0; Layout::new(hidden).len],
            delta_scale: DEFAULT_DELTA_SCALE,
            seed: 0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        Layout::new(self.hidden)
    }

    /// Weight from input `j` into gate row `r` (`r = gate * hidden + unit`).
    pub fn wx(&self, r: usize, j: usize) -> f64 {
        self.params[self.layout().wx + r * INPUT_DIM + j]
    }

    pub fn set_wx(&mut self, r: usize, j: usize, v: f64) {
        let o = self.layout().wx;
        self.params[o + r * INPUT_DIM + j] = v;
    }

    pub fn set_wh(&mut self, r: usize, u: usize, v: f64) {
        let lay = self.layout();
        self.params[lay.wh + r * self.hidden + u] = v;
    }

    pub fn set_bias(&mut self, r: usize, v: f64) {
        let o = self.layout().b;
        self.params[o + r] = v;
    }

    pub fn set_wy(&mut self, k: usize, u: usize, v: f64) {
        let lay = self.layout();
        self.params[lay.wy + k * self.hidden + u] = v;
    }

    pub fn set_by(&mut self, k: usize, v: f64) {
        let o = self.layout().by;
        self.params[o + k] = v;
    }

    fn cell(&self, x: &[f64; INPUT_DIM], h0: Option<&LstmState>) -> Cache {
        let hd = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let mut z = p[lay.b..lay.b + 4 * hd].to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &p[lay.wx + r * INPUT_DIM..lay.wx + (r + 1) * INPUT_DIM];
            *zr += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        if let Some(s) = h0 {
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &p[lay.wh + r * hd..lay.wh + (r + 1) * hd];
                *zr += row.iter().zip(&s.h).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd)
            .map(|u| f[u] * h0.map_or(0.0, |s| s.c[u]) + i[u] * g[u])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|u| o[u] * tanh_c[u]).collect();
        let mut y = [0.0; OUTPUT_DIM];
        for (k, yk) in y.iter_mut().enumerate() {
            let row = &p[lay.wy + k * hd..lay.wy + (k + 1) * hd];
            *yk = p[lay.by + k] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
        }
        Cache {
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            c,
            y,
        }
    }

    /// One cell update from `state`, returning the raw output and new state.
    pub fn forward(&self, input: &[f64; INPUT_DIM], state: &LstmState) -> Result<([f64; OUTPUT_DIM], LstmState)> {
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LSTM input".into()));
        }
        if state.h.len() != self.hidden || state.c.len() != self.hidden {
            return Err(Error::Dimension(format!(
                "state size {} / {} does not match hidden size {}",
                state.h.len(),
                state.c.len(),
                self.hidden
            )));
        }
        let cache = self.cell(input, Some(state));
        Ok((cache.y, LstmState { h: cache.h, c: cache.c }))
    }

    /// Raw output from a zero state.
    pub fn predict_raw(&self, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        self.cell(input, None).y
    }

    /// Predicts the next stem with the state reset, keeping the anchor at the
    /// origin.
    pub fn predict_stem(&self, stem: &StemPolyline, light: LightCondition) -> Result<StemPolyline> {
        let coords = stem.coords();
        let mut input = [0.0; INPUT_DIM];
        for k in 0..STEM_COORDS {
            input[k] = coords[k] / COORD_SCALE;
        }
        input[STEM_COORDS] = light.as_bit();
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stem coordinates".into()));
        }
        let y = self.predict_raw(&input);
        let mut next = [0.0; STEM_COORDS];
        for k in 0..STEM_COORDS {
            next[k] = (input[k] + self.delta_scale * y[k]) * COORD_SCALE;
        }
        StemPolyline::from_coords(Point2::ORIGIN, &next)
    }

    /// Accumulates `weight * d/dθ Σ|y - target|` into `grad` and returns the
    /// weighted absolute error. `states` gives per-sample initial states; the
    /// zero state is used when it is `None`.
    fn accumulate(
        &self,
        batch: &[Sample],
        states: Option<&[LstmState]>,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let hd = self.hidden;
        let lay = self.layout();
        let p = &self.params;
        let mut loss = 0.0;
        let mut dh = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for (n, s) in batch.iter().enumerate() {
            let st = states.map(|all| &all[n]);
            let cache = self.cell(&s.input, st);
            let mut dy = [0.0; OUTPUT_DIM];
            for k in 0..OUTPUT_DIM {
                let r = cache.y[k] - s.target[k];
                loss += weight * r.abs();
                // subgradient of |r| at 0 is taken as 0
                dy[k] = weight * if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..OUTPUT_DIM {
                grad[lay.by + k] += dy[k];
                let row = lay.wy + k * hd;
                for u in 0..hd {
                    grad[row + u] += dy[k] * cache.h[u];
                    dh[u] += p[row + u] * dy[k];
                }
            }
            for u in 0..hd {
                let dc = dh[u] * cache.o[u] * (1.0 - cache.tanh_c[u] * cache.tanh_c[u]);
                let c_prev = st.map_or(0.0, |s| s.c[u]);
                dz[u] = dc * cache.g[u] * cache.i[u] * (1.0 - cache.i[u]);
                dz[hd + u] = dc * c_prev * cache.f[u] * (1.0 - cache.f[u]);
                dz[2 * hd + u] = dc * cache.i[u] * (1.0 - cache.g[u] * cache.g[u]);
                dz[3 * hd + u] = dh[u] * cache.tanh_c[u] * cache.o[u] * (1.0 - cache.o[u]);
            }
            for r in 0..4 * hd {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                grad[lay.b + r] += d;
                let row = lay.wx + r * INPUT_DIM;
                for j in 0..INPUT_DIM {
                    grad[row + j] += d * s.input[j];
                }
                if let Some(st) = st {
                    let row = lay.wh + r * hd;
                    for u in 0..hd {
                        grad[row + u] += d * st.h[u];
                    }
                }
            }
        }
        loss
    }

    /// MAE loss of the batch (raw output units) and its exact gradient.
    pub fn gradients(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
        self.gradients_from(batch, None)
    }

    /// As [`gradients`](Self::gradients), starting each sample from the given
    /// state instead of zero.
    pub fn gradients_from(&self, batch: &[Sample], states: Option<&[LstmState]>) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch".into()));
        }
        if let Some(s) = states {
            if s.len() != batch.len() || s.iter().any(|st| st.h.len() != self.hidden || st.c.len() != self.hidden) {
                return Err(Error::Dimension("initial states do not match batch".into()));
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let weight = 1.0 / (batch.len() * OUTPUT_DIM) as f64;
        let loss = self.accumulate(batch, states, weight, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((loss, grad))
    }

    /// MAE in raw output units from zero state, optionally from given states.
    pub fn batch_loss(&self, batch: &[Sample], states: Option<&[LstmState]>) -> f64 {
        let preds: Vec<[f64; OUTPUT_DIM]> = batch
            .iter()
            .enumerate()
            .map(|(n, s)| self.cell(&s.input, states.map(|all| &all[n])).y)
            .collect();
        let truth: Vec<[f64; OUTPUT_DIM]> = batch.iter().map(|s| s.target).collect();
        mae_loss(&preds, &truth).unwrap_or(f64::NAN)
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::with_capacity(self.params.len() * 24 + 200);
        writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
        writeln!(out, "input {INPUT_DIM}").unwrap();
        writeln!(out, "hidden {}", self.hidden).unwrap();
        writeln!(out, "output {OUTPUT_DIM}").unwrap();
        writeln!(out, "coord_scale {COORD_SCALE}").unwrap();
        writeln!(out, "delta_scale {}", self.delta_scale).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(out, "{p}").unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, h)) if h == CHECKPOINT_HEADER => {}
            _ => return Err(Error::parse(1, "missing lstm checkpoint header")),
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing `{name}`")))?;
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| Error::parse(n, format!("expected `{name} <value>`")))?;
            if k != name {
                return Err(Error::parse(n, format!("expected `{name}`, found `{k}`")));
            }
            Ok((n, v.trim().to_string()))
        };
        let int = |(n, v): (usize, String)| -> Result<usize> {
            v.parse().map_err(|_| Error::parse(n, format!("bad integer `{v}`")))
        };
        let float = |(n, v): (usize, String)| -> Result<f64> {
            v.parse().map_err(|_| Error::parse(n, format!("bad number `{v}`")))
        };
        let input = int(field("input")?)?;
        let hidden = int(field("hidden")?)?;
        let output = int(field("output")?)?;
        if input != INPUT_DIM || output != OUTPUT_DIM || hidden == 0 {
            return Err(Error::Dimension(format!(
                "checkpoint dims {input}-{hidden}-{output}, expected {INPUT_DIM}-h-{OUTPUT_DIM}"
            )));
        }
        let coord_scale = float(field("coord_scale")?)?;
        if coord_scale != COORD_SCALE {
            return Err(Error::Invalid(format!("coord_scale {coord_scale} unsupported")));
        }
        let delta_scale = float(field("delta_scale")?)?;
        let (n, seed) = field("seed")?;
        let seed: u64 = seed.parse().map_err(|_| Error::parse(n, "bad seed"))?;
        let count = int(field("params")?)?;
        let expected = Layout::new(hidden).len;
        if count != expected {
            return Err(Error::Dimension(format!("{count} params, expected {expected}")));
        }
        let mut params = Vec::with_capacity(count);
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let v: f64 = l.parse().map_err(|_| Error::parse(n, format!("bad number `{l}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(n, "non-finite parameter"));
            }
            params.push(v);
        }
        if params.len() != count {
            return Err(Error::Dimension(format!("{} params, expected {count}", params.len())));
        }
        Ok(LstmModel {
            hidden,
            params,
            delta_scale,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_text(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// `(1/N) Σ_n (1/d) Σ_k |pred - truth|`.
pub fn mae_loss<const D: usize>(pred: &[[f64; D]], truth: &[[f64; D]]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / D as f64)
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub split: (f64, f64, f64),
    pub shuffle_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 30,
            max_epochs: 200,
            lr: 0.001,
            patience: 10,
            split: (0.70, 0.20, 0.10),
            shuffle_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|v| !(0.0..=1.0).contains(v)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split ({a}, {b}, {c}) must be fractions summing to 1")));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Invalid("max_epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Invalid("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Validation MAE of the untrained model.
    pub initial_val_loss: f64,
    /// Per-epoch training loss `L_t` (mean over batches).
    pub train_loss: Vec<f64>,
    /// Per-epoch validation loss `L_v`.
    pub val_loss: Vec<f64>,
    /// 1-based epoch with the lowest validation loss; its weights are kept.
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub early_stopped: bool,
    pub test_mae: f64,
    pub split_sizes: (usize, usize, usize),
}

/// Trains on regression vectors, restoring the best-validation weights.
/// Losses are in workspace units.
pub fn train(model: &mut LstmModel, data: &[RegressionVector], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let samples: Vec<Sample> = data.iter().map(|v| Sample::from_vector(v, model.delta_scale)).collect();
    train_samples(model, &samples, cfg)
}

pub fn train_samples(model: &mut LstmModel, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = samples.len();
    let n_train = (cfg.split.0 * n as f64).round() as usize;
    let n_val = ((cfg.split.1 * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Empty(format!(
            "split of {n} samples gives {n_train}/{n_val}/{n_test} train/val/test"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i]).collect::<Vec<_>>();
    let mut train_set = pick(&order[..n_train]);
    let val_set = pick(&order[n_train..n_train + n_val]);
    let test_set = pick(&order[n_train + n_val..]);

    let scale = model.delta_scale;
    let initial_val_loss = model.batch_loss(&val_set, None) * scale;
    let mut adam = Adam::new(model.param_count(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut best = (initial_val_loss, model.params.clone(), 0usize);
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut early_stopped = false;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        train_set.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in train_set.chunks(cfg.batch_size) {
            let (loss, grad) = model.gradients(batch)?;
            adam.step(&mut model.params, &grad);
            sum += loss;
            batches += 1;
        }
        let lt = sum / batches as f64 * scale;
        let lv = model.batch_loss(&val_set, None) * scale;
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        debug!("epoch {epoch}: L_t = {lt:.3e}, L_v = {lv:.3e}");
        train_loss.push(lt);
        val_loss.push(lv);
        if lv < best.0 {
            best = (lv, model.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }
    let stop_epoch = val_loss.len();
    model.params = best.1;
    let test_mae = model.batch_loss(&test_set, None) * scale;
    Ok(TrainReport {
        initial_val_loss,
        train_loss,
        val_loss,
        best_epoch: best.2,
        stop_epoch,
        early_stopped,
        test_mae,
        split_sizes: (n_train, n_val, n_test),
    })
}

/// Single-precision, zero-state inference copy of a model.
///
/// With the state reset every step the forget gate and recurrent weights
/// have no effect, so only the input, candidate and output gates are kept.
#[derive(Debug, Clone)]
pub struct FastLstm {
    /// Hidden size rounded up to a multiple of 8; padding units stay zero.
    padded: usize,
    /// Gate weights for blocks i, g, o, stored as row groups of 8, each
    /// group laid out `[input][lane]`.
    wx: Vec<f32>,
    b: Vec<f32>,
    /// Column-major `OUT_PAD x P` readout.
    wy: Vec<f32>,
    by: [f32; OUT_PAD],
    delta_scale: f64,
    avx2: bool,
}

const OUT_PAD: usize = 24;
/// Largest padded hidden size the inference path supports.
pub const FAST_MAX_HIDDEN: usize = 128;

impl FastLstm {
    pub fn new(model: &LstmModel) -> Result<Self> {
        let hd = model.hidden;
        let hp = hd.div_ceil(8) * 8;
        if hp > FAST_MAX_HIDDEN {
            return Err(Error::Invalid(format!(
                "hidden size {hd} exceeds the inference limit {FAST_MAX_HIDDEN}"
            )));
        }
        let lay = model.layout();
        let p = &model.params;
        let mut wx = vec![0.0f32; 3 * hp * INPUT_DIM];
        let mut b = vec![0.0f32; 3 * hp];
        for (slot, gate) in [0, 2, 3].into_iter().enumerate() {
            for u in 0..hd {
                let r = gate * hd + u;
                let dst = slot * hp + u;
                b[dst] = p[lay.b + r] as f32;
                for j in 0..INPUT_DIM {
                    wx[(dst / 8) * 8 * INPUT_DIM + j * 8 + dst % 8] = p[lay.wx + r * INPUT_DIM + j] as f32;
                }
            }
        }
        let mut wy = vec![0.0f32; OUT_PAD * hp];
        let mut by = [0.0f32; OUT_PAD];
        for k in 0..OUTPUT_DIM {
            by[k] = p[lay.by + k] as f32;
            for u in 0..hd {
                wy[u * OUT_PAD + k] = p[lay.wy + k * hd + u] as f32;
            }
        }
        Ok(FastLstm {
            padded: hp,
            wx,
            b,
            wy,
            by,
            delta_scale: model.delta_scale,
            avx2: detect_avx2(),
        })
    }

    pub fn predict_raw(&self, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        #[cfg(target_arch = "x86_64")]
        if self.avx2 {
            // SAFETY: `avx2` is only set when the CPU reports the feature.
            return unsafe { self.raw_avx2(input) };
        }
        self.raw_kernel(input)
    }

    /// Same arithmetic as the portable path; lanes are independent, so the
    /// wider vectors give bit-identical results.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn raw_avx2(&self, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        self.raw_kernel(input)
    }

    #[inline(always)]
    fn raw_kernel(&self, input: &[f64; INPUT_DIM]) -> [f64; OUTPUT_DIM] {
        let hp = self.padded;
        let n = 3 * hp;
        let mut zbuf = [0.0f32; 3 * FAST_MAX_HIDDEN];
        let z = &mut zbuf[..n];
        let x: [f32; INPUT_DIM] = std::array::from_fn(|j| input[j] as f32);
        for ((zc, bc), wc) in z
            .chunks_exact_mut(8)
            .zip(self.b.chunks_exact(8))
            .zip(self.wx.chunks_exact(8 * INPUT_DIM))
        {
            let mut acc = [0.0f32; 8];
            acc.copy_from_slice(bc);
            for (xj, w) in x.iter().zip(wc.chunks_exact(8)) {
                for l in 0..8 {
                    acc[l] += w[l] * xj;
                }
            }
            zc.copy_from_slice(&acc);
        }
        let (zi, rest) = z.split_at_mut(hp);
        let (zg, zo) = rest.split_at_mut(hp);
        let mut hbuf = [0.0f32; FAST_MAX_HIDDEN];
        let h = &mut hbuf[..hp];
        // tanh(v) = 2 s(2v) - 1
        for u in 0..hp {
            let i = 1.0 / (1.0 + fast_exp(-zi[u]));
            let g = 2.0 / (1.0 + fast_exp(-2.0 * zg[u])) - 1.0;
            let o = 1.0 / (1.0 + fast_exp(-zo[u]));
            let c = i * g;
            h[u] = o * (2.0 / (1.0 + fast_exp(-2.0 * c)) - 1.0);
        }
        let mut acc = self.by;
        for (u, &hu) in h.iter().enumerate() {
            let col = &self.wy[u * OUT_PAD..(u + 1) * OUT_PAD];
            for (a, w) in acc.iter_mut().zip(col) {
                *a += w * hu;
            }
        }
        std::array::from_fn(|k| acc[k] as f64)
    }

    pub fn predict_stem(&self, stem: &StemPolyline, light: LightCondition) -> Result<StemPolyline> {
        let coords = stem.coords();
        let mut input = [0.0; INPUT_DIM];
        for k in 0..STEM_COORDS {
            input[k] = coords[k] / COORD_SCALE;
        }
        input[STEM_COORDS] = light.as_bit();
        let y = self.predict_raw(&input);
        let mut next = [0.0; STEM_COORDS];
        for k in 0..STEM_COORDS {
            next[k] = (input[k] + self.delta_scale * y[k]) * COORD_SCALE;
        }
        StemPolyline::from_coords(Point2::ORIGIN, &next)
    }
}

impl ForwardModel for FastLstm {
    type State = StemPolyline;

    fn initial_state(&self, stem: &StemPolyline) -> StemPolyline {
        *stem
    }

    fn advance(&self, state: &StemPolyline, light: LightCondition) -> Result<StemPolyline> {
        self.predict_stem(state, light)
    }

    fn stem<'a>(&self, state: &'a StemPolyline) -> &'a StemPolyline {
        state
    }
}

impl ForwardModel for LstmModel {
    type State = StemPolyline;

    fn initial_state(&self, stem: &StemPolyline) -> StemPolyline {
        *stem
    }

    fn advance(&self, state: &StemPolyline, light: LightCondition) -> Result<StemPolyline> {
        self.predict_stem(state, light)
    }

    fn stem<'a>(&self, state: &'a StemPolyline) -> &'a StemPolyline {
        state
    }
}

fn detect_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `e^x` for single precision, written so the compiler can vectorise it.
/// Relative error is below 2e-7 over the clamped range.
#[inline(always)]
fn fast_exp(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let t = x * LOG2E + ROUND;
    let n = t - ROUND;
    // the rounded integer sits in the low mantissa bits of `t`
    // wrapping ops keep the loop branch-free under overflow checks; the clamp
    // keeps both in range
    let ni = (t.to_bits() as i32).wrapping_sub(ROUND.to_bits() as i32);
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    f32::from_bits((ni.wrapping_add(127) as u32) << 23) * p
}
