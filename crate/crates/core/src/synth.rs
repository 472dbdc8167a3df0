//! Deterministic parametric plant used as ground truth.
//!
//! The model is deliberately small: the stem is a chain of segments, each of
//! which bends toward the active light in proportion to its mobility; only
//! the top segment elongates; mobile tissue relaxes toward the straight line
//! through its neighbours; and mobility decays with tissue age so that old
//! curvature is frozen into the stem. Points are re-sampled every
//! step so the ten points stay evenly spaced in `y`, which is the same
//! parameterisation the vision tracker produces.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{LightCondition, Point2, StemPolyline, TrackedFrame, STEM_POINTS};
use crate::vision::SetupEnvelope;

/// Timesteps per 6 h light-switching interval of the open-loop schedule.
pub const OPEN_LOOP_PERIOD: u64 = 72;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// Tip extension per step (cm).
    pub growth_rate: f64,
    /// Rotation of a fully mobile segment toward the active light per step
    /// (rad).
    pub phototropic_gain: f64,
    /// Amplitude of the circumnutation oscillation of the tip (cm).
    pub nutation_amp: f64,
    /// Circumnutation period in steps.
    pub nutation_period: f64,
    /// Steps for tissue mobility to halve.
    pub stiffening_halflife: f64,
    /// Fraction of the gap to the neighbour midpoint closed per step by fully
    /// mobile tissue.
    pub straightening: f64,
    /// Largest lateral slope `|dx/dy|` any segment may reach.
    pub max_lean: f64,
    /// Height of the seedling the plant starts from (cm).
    pub seedling_height: f64,
    /// Left and right light sources.
    pub light_positions: [Point2; 2],
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            // 20 cm of growth in 72 h
            growth_rate: 20.0 / 864.0,
            phototropic_gain: 0.003,
            nutation_amp: 0.1,
            nutation_period: 24.0,
            stiffening_halflife: 1440.0,
            straightening: 0.0,
            max_lean: 0.8,
            seedling_height: 1.0,
            light_positions: [Point2::new(-35.0, 30.0), Point2::new(35.0, 30.0)],
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("growth_rate", self.growth_rate),
            ("phototropic_gain", self.phototropic_gain),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        let positive = [
            ("stiffening_halflife", self.stiffening_halflife),
            ("max_lean", self.max_lean),
            ("seedling_height", self.seedling_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nutation_amp >= 0.0) {
            return Err(Error::Invalid("nutation_amp must be non-negative".into()));
        }
        if !(self.nutation_period >= 2.0) {
            return Err(Error::Invalid("nutation_period must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.straightening) {
            return Err(Error::Invalid("straightening must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn light_x(&self, light: LightCondition) -> f64 {
        match light {
            LightCondition::Left => self.light_positions[0].x,
            LightCondition::Right => self.light_positions[1].x,
        }
    }

    /// True when swapping left and right leaves the parameters unchanged.
    pub fn is_symmetric(&self) -> bool {
        let [l, r] = self.light_positions;
        l.x == -r.x && l.y == r.y && self.nutation_amp == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub stem: StemPolyline,
    /// Per-point mobility in `[0, 1]`; zero at the anchor, one at the tip.
    pub mobility: [f64; STEM_POINTS],
    pub phase: f64,
}

impl PlantState {
    /// A straight vertical seedling of the configured height.
    pub fn seedling(params: &PlantParams) -> Self {
        Self::from_stem(StemPolyline::vertical(params.seedling_height))
    }

    /// Starts the model from an arbitrary stem with a linear mobility ramp.
    pub fn from_stem(stem: StemPolyline) -> Self {
        let mut mobility = [0.0; STEM_POINTS];
        for (i, m) in mobility.iter_mut().enumerate() {
            *m = i as f64 / (STEM_POINTS - 1) as f64;
        }
        PlantState {
            stem,
            mobility,
            phase: 0.0,
        }
    }
}

/// Advances the plant by one timestep under `light`.
pub fn step(state: &PlantState, light: LightCondition, params: &PlantParams) -> PlantState {
    let old = state.stem.points();
    let last = STEM_POINTS - 1;
    let toward = (params.light_x(light) - old[last].x).signum();
    let limit = params.max_lean.atan();

    // every segment bends toward the light in proportion to its mobility
    let mut angle = [0.0; STEM_POINTS - 1];
    let mut len = [0.0; STEM_POINTS - 1];
    for i in 0..last {
        let d = old[i + 1] - old[i];
        len[i] = d.x.hypot(d.y);
        let mobility = 0.5 * (state.mobility[i] + state.mobility[i + 1]);
        let a = if len[i] > 0.0 { d.x.atan2(d.y) } else { 0.0 };
        angle[i] = (a + toward * params.phototropic_gain * mobility).clamp(-limit, limit);
    }
    // only the top segment elongates
    len[last - 1] += params.growth_rate;

    let mut pts = [Point2::ORIGIN; STEM_POINTS];
    pts[0] = old[0];
    for i in 0..last {
        pts[i + 1] = Point2::new(
            pts[i].x + len[i] * angle[i].sin(),
            pts[i].y + len[i] * angle[i].cos(),
        );
    }
    let dphase = 2.0 * PI / params.nutation_period;
    pts[last].x += params.nutation_amp * ((state.phase + dphase).sin() - state.phase.sin());

    // mobile tissue relaxes toward its neighbours, tip first
    for i in (1..last).rev() {
        let mid = 0.5 * (pts[i - 1].x + pts[i + 1].x);
        pts[i].x += params.straightening * state.mobility[i] * (mid - pts[i].x);
    }

    let (pts, mut mobility) = resample_even_y(&pts, &state.mobility);
    let decay = (-1.0 / params.stiffening_halflife).exp2();
    for m in &mut mobility[1..last] {
        *m *= decay;
    }
    mobility[0] = 0.0;
    mobility[last] = 1.0;

    PlantState {
        stem: StemPolyline::from_array(pts).expect("plant step produced a non-finite stem"),
        mobility,
        phase: state.phase + dphase,
    }
}

/// Re-samples a y-monotone polyline (and a per-point attribute) at ten evenly
/// spaced heights between the anchor and the tip.
fn resample_even_y(
    pts: &[Point2; STEM_POINTS],
    attr: &[f64; STEM_POINTS],
) -> ([Point2; STEM_POINTS], [f64; STEM_POINTS]) {
    let last = STEM_POINTS - 1;
    let y0 = pts[0].y;
    let y_tip = pts[last].y;
    let mut out = *pts;
    let mut out_attr = *attr;
    let mut seg = 0;
    for k in 1..last {
        let y = y0 + (y_tip - y0) * k as f64 / last as f64;
        while seg + 1 < last && pts[seg + 1].y < y {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let dy = b.y - a.y;
        let t = if dy > 0.0 { ((y - a.y) / dy).clamp(0.0, 1.0) } else { 0.0 };
        out[k] = Point2::new(a.x + (b.x - a.x) * t, y);
        out_attr[k] = attr[seg] + (attr[seg + 1] - attr[seg]) * t;
    }
    (out, out_attr)
}

/// Light schedule driving a generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(LightCondition),
    /// Toggles every `period` steps, starting with `first`.
    OpenLoop {
        period: u64,
        first: LightCondition,
    },
    /// Dwell times drawn uniformly from `min_dwell..=max_dwell`.
    Random {
        min_dwell: u64,
        max_dwell: u64,
        seed: u64,
    },
    Explicit(Vec<LightCondition>),
}

impl Schedule {
    /// The default 6 h open-loop schedule.
    pub fn open_loop_6h() -> Self {
        Schedule::OpenLoop {
            period: OPEN_LOOP_PERIOD,
            first: LightCondition::Left,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "openloop6h" => Ok(Self::open_loop_6h()),
            "left" => Ok(Schedule::Constant(LightCondition::Left)),
            "right" => Ok(Schedule::Constant(LightCondition::Right)),
            other => Err(Error::Invalid(format!(
                "unknown schedule `{other}` (expected openloop6h, left or right)"
            ))),
        }
    }

    /// Lights for timesteps `0..=steps`.
    pub fn lights(&self, steps: usize) -> Vec<LightCondition> {
        let n = steps + 1;
        match self {
            Schedule::Constant(l) => vec![*l; n],
            Schedule::OpenLoop { period, first } => (0..n as u64)
                .map(|t| {
                    if (t / period.max(&1)) % 2 == 0 {
                        *first
                    } else {
                        first.mirrored()
                    }
                })
                .collect(),
            Schedule::Random {
                min_dwell,
                max_dwell,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut light = if rng.random::<bool>() {
                    LightCondition::Left
                } else {
                    LightCondition::Right
                };
                let mut out = Vec::with_capacity(n);
                while out.len() < n {
                    let dwell = rng.random_range(*min_dwell.max(&1)..=*max_dwell.max(min_dwell.max(&1)));
                    for _ in 0..dwell {
                        out.push(light);
                    }
                    light = light.mirrored();
                }
                out.truncate(n);
                out
            }
            Schedule::Explicit(v) => {
                let fill = v.last().copied().unwrap_or(LightCondition::Left);
                (0..n).map(|t| v.get(t).copied().unwrap_or(fill)).collect()
            }
        }
    }
}

/// Runs the plant for `steps` steps from a seedling. Frame `t` holds the stem
/// after `t` steps and the light switched on for the following step, so
/// consecutive frames form training pairs directly.
pub fn generate_dataset(params: &PlantParams, schedule: &Schedule, steps: usize) -> Vec<TrackedFrame> {
    generate_states(params, schedule, steps)
        .into_iter()
        .map(|(t, state, light)| TrackedFrame {
            t,
            light,
            stem: state.stem,
        })
        .collect()
}

/// Like [`generate_dataset`] but keeps the full plant state per frame.
pub fn generate_states(
    params: &PlantParams,
    schedule: &Schedule,
    steps: usize,
) -> Vec<(u64, PlantState, LightCondition)> {
    let lights = schedule.lights(steps);
    let mut state = PlantState::seedling(params);
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        state = step(&state, lights[t - 1], params);
        out.push((t as u64, state.clone(), lights[t]));
    }
    out
}

/// Camera model for rendering synthetic frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageConfig {
    pub width: u32,
    pub height: u32,
    /// Pixels per cm at full resolution.
    pub px_per_cm: f64,
    /// Anchor position in full-resolution pixel coordinates (column, row).
    pub anchor_px: (f64, f64),
    /// Stem stroke width in full-resolution pixels.
    pub stroke_px: f64,
    pub stem_rgb: [u8; 3],
}

impl Default for ImageConfig {
    fn default() -> Self {
        // roughly a 5 MP camera framing a 32 x 24 cm window around the pot
        ImageConfig {
            width: 2592,
            height: 1944,
            px_per_cm: 80.0,
            anchor_px: (1296.0, 1880.0),
            stroke_px: 24.0,
            stem_rgb: [60, 210, 50],
        }
    }
}

impl ImageConfig {
    pub fn to_px(&self, p: Point2) -> (f64, f64) {
        (
            self.anchor_px.0 + p.x * self.px_per_cm,
            self.anchor_px.1 - p.y * self.px_per_cm,
        )
    }
}

/// Setup images of the empty box: a dark matte background whose green
/// channel varies slightly with the light state and a per-image flicker.
pub fn render_setup_images(cfg: &ImageConfig, count: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let flicker: i32 = rng.random_range(-4..=4);
            let side: i32 = if rng.random::<bool>() { 1 } else { -1 };
            RgbImage::from_fn(cfg.width, cfg.height, |c, r| {
                let base = 30 + ((c / 64 + r / 64) % 3) as i32 * 4;
                let gradient = side * (c as i32 - cfg.width as i32 / 2) * 6 / cfg.width as i32;
                let g = (base + flicker + gradient).clamp(0, 255) as u8;
                Rgb([g.saturating_sub(6), g, g.saturating_sub(3)])
            })
        })
        .collect()
}

/// Background consistent with an envelope: each pixel's green channel is
/// the envelope midpoint, which lies inside `[low, high]`.
pub fn background_from_envelope(env: &SetupEnvelope) -> RgbImage {
    let (w, h) = env.dims();
    RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let (lo, hi) = env.bounds(r as usize, c as usize);
        let g = (127.5 * (lo + hi)).round().clamp(0.0, 255.0) as u8;
        Rgb([g.saturating_sub(6), g, g.saturating_sub(3)])
    })
}

/// Draws `stem` as a flat-colour capsule polyline onto a copy of
/// `background`. Returns the image and whether any part of the stem fell
/// outside the frame.
pub fn render_frame(stem: &StemPolyline, background: &RgbImage, cfg: &ImageConfig) -> (RgbImage, bool) {
    let mut img = background.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let radius = 0.5 * cfg.stroke_px;
    let mut clipped = false;
    let colour = Rgb(cfg.stem_rgb);
    for (a, b) in stem.segments() {
        let (ax, ay) = cfg.to_px(a);
        let (bx, by) = cfg.to_px(b);
        let c0 = (ax.min(bx) - radius).floor() as i64;
        let c1 = (ax.max(bx) + radius).ceil() as i64;
        let r0 = (ay.min(by) - radius).floor() as i64;
        let r1 = (ay.max(by) + radius).ceil() as i64;
        if c0 < 0 || r0 < 0 || c1 >= w || r1 >= h {
            clipped = true;
        }
        for r in r0.max(0)..=r1.min(h - 1) {
            for c in c0.max(0)..=c1.min(w - 1) {
                let d = point_segment_distance((c as f64, r as f64), (ax, ay), (bx, by));
                if d <= radius {
                    img.put_pixel(c as u32, r as u32, colour);
                }
            }
        }
    }
    (img, clipped)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

/// Runs the plant under an explicit light sequence and returns the stems.
pub fn run_stems(params: &PlantParams, lights: &[LightCondition]) -> Vec<StemPolyline> {
    let mut state = PlantState::seedling(params);
    lights
        .iter()
        .map(|&l| {
            state = step(&state, l, params);
            state.stem
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PlantParams {
        PlantParams {
            nutation_amp: 0.0,
            ..PlantParams::default()
        }
    }

    #[test]
    fn no_lateral_forces_grow_straight() {
        let p = PlantParams {
            phototropic_gain: 0.0,
            nutation_amp: 0.0,
            ..PlantParams::default()
        };
        let stems = run_stems(&p, &[LightCondition::Left; 300]);
        let last = stems.last().unwrap();
        for pt in last.points() {
            assert!(pt.x.abs() < 1e-12, "{pt:?}");
        }
        assert!(last.tip().y > 7.0);
    }

    #[test]
    fn constant_left_light_moves_tip_left_monotonically() {
        let stems = run_stems(&quiet(), &[LightCondition::Left; 100]);
        let mut prev = 0.0;
        for s in &stems {
            assert!(s.tip().x < prev, "tip x {} not below {}", s.tip().x, prev);
            prev = s.tip().x;
        }
    }

    #[test]
    fn mobility_decays_with_half_life_without_growth() {
        let p = PlantParams {
            growth_rate: 0.0,
            phototropic_gain: 0.0,
            nutation_amp: 0.0,
            ..PlantParams::default()
        };
        let mut state = PlantState::seedling(&p);
        let initial = state.mobility;
        for t in 1..=200u32 {
            state = step(&state, LightCondition::Right, &p);
            for i in 1..STEM_POINTS - 1 {
                let expect = initial[i] * (-(t as f64) / p.stiffening_halflife).exp2();
                assert!(
                    (state.mobility[i] - expect).abs() <= 1e-12 * initial[i].max(1e-300),
                    "t={t} i={i}: {} vs {expect}",
                    state.mobility[i]
                );
            }
        }
    }

    #[test]
    fn anchor_fixed_and_tip_height_non_decreasing() {
        let frames = generate_dataset(&PlantParams::default(), &Schedule::open_loop_6h(), 864);
        let mut prev = 0.0;
        for f in &frames {
            assert_eq!(f.stem.anchor(), Point2::ORIGIN);
            assert!(f.stem.tip().y >= prev);
            prev = f.stem.tip().y;
        }
    }

    #[test]
    fn one_step_gives_one_frame() {
        assert_eq!(generate_dataset(&PlantParams::default(), &Schedule::open_loop_6h(), 1).len(), 1);
    }

    #[test]
    fn open_loop_72h_has_twelve_switches() {
        let frames = generate_dataset(&PlantParams::default(), &Schedule::open_loop_6h(), 864);
        let switches = frames.windows(2).filter(|w| w[0].light != w[1].light).count();
        assert_eq!(switches, 12);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = PlantParams::default();
        let a = generate_dataset(&p, &Schedule::open_loop_6h(), 500);
        let b = generate_dataset(&p, &Schedule::open_loop_6h(), 500);
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_params_give_mirrored_runs() {
        let p = quiet();
        assert!(p.is_symmetric());
        let left = generate_dataset(&p, &Schedule::OpenLoop { period: 50, first: LightCondition::Left }, 400);
        let right = generate_dataset(&p, &Schedule::OpenLoop { period: 50, first: LightCondition::Right }, 400);
        for (l, r) in left.iter().zip(&right) {
            assert_eq!(l.mirrored(), *r);
        }
    }

    #[test]
    fn mobility_profile_is_monotone() {
        let states = generate_states(&PlantParams::default(), &Schedule::open_loop_6h(), 600);
        for (_, s, _) in &states {
            assert_eq!(s.mobility[0], 0.0);
            for w in s.mobility.windows(2) {
                assert!(w[0] <= w[1] + 1e-15, "{:?}", s.mobility);
            }
        }
    }

    #[test]
    fn empty_stem_render_equals_background() {
        let cfg = ImageConfig {
            width: 64,
            height: 48,
            px_per_cm: 2.0,
            anchor_px: (32.0, 40.0),
            stroke_px: 2.0,
            ..ImageConfig::default()
        };
        let bg = render_setup_images(&cfg, 1, 3).remove(0);
        // a stem collapsed far outside the frame draws nothing
        let stem = StemPolyline::straight(Point2::new(500.0, 0.0), Point2::new(500.0, 0.0));
        let (img, clipped) = render_frame(&stem, &bg, &cfg);
        assert!(clipped);
        assert_eq!(img, bg);
    }
}
