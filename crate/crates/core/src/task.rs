//! Step-wise obstacle-avoidance task: scenarios, rollouts and fitness.

use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::{LightCondition, Obstacle, Point2, Scenario, StemPolyline};
use crate::synth::{self, PlantParams, PlantState};

/// Number of controller inputs: 20 stem coordinates, target, obstacle.
pub const CONTROLLER_INPUTS: usize = 26;

/// Workspace extents used to scale controller inputs to `[-1, 1]`.
pub const WORKSPACE_HALF_WIDTH: f64 = 40.0;
pub const WORKSPACE_HEIGHT: f64 = 40.0;

/// Predicts how a stem evolves under a light condition.
pub trait ForwardModel {
    type State: Clone;

    fn initial_state(&self, stem: &StemPolyline) -> Self::State;
    fn advance(&self, state: &Self::State, light: LightCondition) -> Result<Self::State>;
    fn stem<'a>(&self, state: &'a Self::State) -> &'a StemPolyline;
}

/// The synthetic plant used directly as a forward model.
#[derive(Debug, Clone)]
pub struct SynthForward(pub PlantParams);

impl ForwardModel for SynthForward {
    type State = PlantState;

    fn initial_state(&self, stem: &StemPolyline) -> PlantState {
        PlantState::from_stem(*stem)
    }

    fn advance(&self, state: &PlantState, light: LightCondition) -> Result<PlantState> {
        Ok(synth::step(state, light, &self.0))
    }

    fn stem<'a>(&self, state: &'a PlantState) -> &'a StemPolyline {
        &state.stem
    }
}

/// Maps controller inputs to the control value `C_t` in `(0, 1)`.
pub trait Controller {
    /// Clears any recurrent state before a new rollout.
    fn reset(&mut self);
    fn control(&mut self, inputs: &[f64; CONTROLLER_INPUTS]) -> Result<f64>;
}

impl<F: FnMut(&[f64; CONTROLLER_INPUTS]) -> f64> Controller for F {
    fn reset(&mut self) {}

    fn control(&mut self, inputs: &[f64; CONTROLLER_INPUTS]) -> Result<f64> {
        Ok(self(inputs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentTag {
    LeftTarget,
    MiddleTarget,
}

impl ExperimentTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" | "left_target" => Ok(ExperimentTag::LeftTarget),
            "middle" | "middle_target" => Ok(ExperimentTag::MiddleTarget),
            other => Err(Error::Invalid(format!(
                "unknown scenario set `{other}` (expected left_target or middle_target)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentTag::LeftTarget => "left_target",
            ExperimentTag::MiddleTarget => "middle_target",
        }
    }
}

impl fmt::Display for ExperimentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub tag: ExperimentTag,
    pub scenarios: Vec<Scenario>,
}

pub const TARGET_HEIGHT: f64 = 17.9;
pub const TARGET_RADIUS: f64 = 2.0;
pub const LEFT_TARGET_X: f64 = -5.12;
pub const OBSTACLE_WIDTH: f64 = 7.0;
pub const OBSTACLE_HEIGHT: f64 = 3.0;
pub const OBSTACLE_Y: f64 = 8.8;
/// Cumulative x shifts of the left-target obstacle relative to scenario 1.
pub const LEFT_OBSTACLE_SHIFTS: [f64; 4] = [0.0, 2.67, 2.67 + 2.67, 2.67 + 2.67 + 5.33];
pub const LEFT_OBSTACLE_X0: f64 = -8.24;
pub const MIDDLE_OBSTACLE_X: [f64; 2] = [3.0, -3.0];

pub fn builtin_scenarios(tag: ExperimentTag) -> ScenarioSet {
    let obstacle = |x: f64| Obstacle::new(Point2::new(x, OBSTACLE_Y), OBSTACLE_WIDTH, OBSTACLE_HEIGHT).unwrap();
    let scenarios = match tag {
        ExperimentTag::LeftTarget => LEFT_OBSTACLE_SHIFTS
            .iter()
            .map(|s| {
                Scenario::new(
                    Point2::new(LEFT_TARGET_X, TARGET_HEIGHT),
                    TARGET_RADIUS,
                    vec![obstacle(LEFT_OBSTACLE_X0 + s)],
                )
                .unwrap()
            })
            .collect(),
        ExperimentTag::MiddleTarget => MIDDLE_OBSTACLE_X
            .iter()
            .map(|&x| Scenario::new(Point2::new(0.0, TARGET_HEIGHT), TARGET_RADIUS, vec![obstacle(x)]).unwrap())
            .collect(),
    };
    ScenarioSet { tag, scenarios }
}

/// Parses `left:2` style references (1-based index) into a single scenario.
pub fn scenario_by_ref(reference: &str) -> Result<(ExperimentTag, usize, Scenario)> {
    let (tag, idx) = reference
        .split_once(':')
        .ok_or_else(|| Error::Invalid(format!("scenario `{reference}` must look like left:2")))?;
    let tag = ExperimentTag::parse(tag)?;
    let set = builtin_scenarios(tag);
    let idx: usize = idx
        .parse()
        .map_err(|_| Error::Invalid(format!("bad scenario index `{idx}`")))?;
    if idx == 0 || idx > set.scenarios.len() {
        return Err(Error::Invalid(format!(
            "{tag} has scenarios 1..={}, got {idx}",
            set.scenarios.len()
        )));
    }
    Ok((tag, idx, set.scenarios[idx - 1].clone()))
}

/// True iff any of the stem's segments touches the closed rectangle.
pub fn collides(stem: &StemPolyline, obstacle: &Obstacle) -> bool {
    stem.segments().any(|(a, b)| obstacle.intersects_segment(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutLimits {
    /// The rollout ends once the tip reaches this height (cm).
    pub stop_height: f64,
    pub step_cap: usize,
    /// Height of the vertical seedling the rollout starts from (cm).
    pub seedling_height: f64,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        RolloutLimits {
            stop_height: TARGET_HEIGHT,
            step_cap: 1500,
            seedling_height: 1.0,
        }
    }
}

impl RolloutLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_height > 0.0 && self.stop_height.is_finite()) {
            return Err(Error::Invalid("stop_height must be positive".into()));
        }
        if self.step_cap == 0 {
            return Err(Error::Invalid("step_cap must be at least 1".into()));
        }
        if !(self.seedling_height > 0.0 && self.seedling_height.is_finite()) {
            return Err(Error::Invalid("seedling_height must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalCause {
    HeightReached,
    Collision,
    StepCap,
}

impl TerminalCause {
    pub fn name(self) -> &'static str {
        match self {
            TerminalCause::HeightReached => "height_reached",
            TerminalCause::Collision => "collision",
            TerminalCause::StepCap => "step_cap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub light: LightCondition,
    pub control: f64,
    /// Stem after applying `light`.
    pub stem: StemPolyline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub initial: StemPolyline,
    pub steps: Vec<TraceStep>,
    pub cause: TerminalCause,
    pub fitness: f64,
}

impl RolloutTrace {
    pub fn final_tip(&self) -> Point2 {
        self.steps.last().map_or(self.initial.tip(), |s| s.stem.tip())
    }

    /// Tip positions, starting with the seedling's.
    pub fn tips(&self) -> Vec<Point2> {
        std::iter::once(self.initial.tip())
            .chain(self.steps.iter().map(|s| s.stem.tip()))
            .collect()
    }

    /// CSV with columns `step,light,c_t,x0,y0,..,x9,y9`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,light,c_t");
        for i in 0..10 {
            write!(out, ",x{i},y{i}").unwrap();
        }
        out.push('\n');
        for (k, s) in self.steps.iter().enumerate() {
            write!(out, "{},{},{}", k + 1, s.light, s.control).unwrap();
            for p in s.stem.points() {
                write!(out, ",{},{}", p.x, p.y).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

impl RolloutTrace {
    /// Rebuilds a trace from its CSV. The CSV does not store the seedling,
    /// terminal cause or fitness, so they are recomputed from `scenario` and
    /// `limits`.
    pub fn from_csv(text: &str, scenario: &Scenario, limits: &RolloutLimits) -> Result<RolloutTrace> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.starts_with("step,light,c_t") => {}
            _ => return Err(Error::parse(1, "trace CSV must start with `step,light,c_t,...`")),
        }
        let mut steps = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 + 2 * crate::geom::STEM_POINTS {
                return Err(Error::parse(lineno, format!("expected 23 columns, got {}", f.len())));
            }
            let light = LightCondition::from_symbol(f[1])
                .ok_or_else(|| Error::parse(lineno, format!("bad light `{}`", f[1])))?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("bad number `{s}`")))
            };
            let control = num(f[2])?;
            let mut pts = Vec::with_capacity(crate::geom::STEM_POINTS);
            for k in 0..crate::geom::STEM_POINTS {
                pts.push(Point2::new(num(f[3 + 2 * k])?, num(f[4 + 2 * k])?));
            }
            let stem = StemPolyline::new(pts).map_err(|e| Error::parse(lineno, e.to_string()))?;
            steps.push(TraceStep { light, control, stem });
        }
        let last = steps.last().map(|s| s.stem);
        let cause = match last {
            Some(st) if scenario.obstacles.iter().any(|o| collides(&st, o)) => TerminalCause::Collision,
            Some(st) if st.tip().y >= limits.stop_height => TerminalCause::HeightReached,
            _ => TerminalCause::StepCap,
        };
        let mut trace = RolloutTrace {
            initial: StemPolyline::vertical(limits.seedling_height),
            steps,
            cause,
            fitness: 0.0,
        };
        trace.fitness = fitness_at(trace.final_tip(), scenario.target)?;
        Ok(trace)
    }
}

/// Scales the stem, target and first obstacle into controller inputs.
pub fn controller_inputs(stem: &StemPolyline, scenario: &Scenario) -> [f64; CONTROLLER_INPUTS] {
    let sx = |x: f64| x / WORKSPACE_HALF_WIDTH;
    let sy = |y: f64| (y - 0.5 * WORKSPACE_HEIGHT) / (0.5 * WORKSPACE_HEIGHT);
    let mut inp = [0.0; CONTROLLER_INPUTS];
    for (k, p) in stem.points().iter().enumerate() {
        inp[2 * k] = sx(p.x);
        inp[2 * k + 1] = sy(p.y);
    }
    inp[20] = sx(scenario.target.x);
    inp[21] = sy(scenario.target.y);
    if let Some(o) = scenario.obstacles.first() {
        inp[22] = sx(o.center.x);
        inp[23] = sy(o.center.y);
        inp[24] = o.width / WORKSPACE_HALF_WIDTH;
        inp[25] = o.height / WORKSPACE_HALF_WIDTH;
    }
    inp
}

pub fn rollout<M: ForwardModel, C: Controller + ?Sized>(
    controller: &mut C,
    model: &M,
    scenario: &Scenario,
    limits: &RolloutLimits,
) -> Result<RolloutTrace> {
    limits.validate()?;
    controller.reset();
    let initial = StemPolyline::vertical(limits.seedling_height);
    let mut state = model.initial_state(&initial);
    let mut steps = Vec::with_capacity(1024);
    let mut cause = TerminalCause::StepCap;
    for _ in 0..limits.step_cap {
        let inputs = controller_inputs(model.stem(&state), scenario);
        let control = controller.control(&inputs)?;
        if !control.is_finite() {
            return Err(Error::NonFinite("controller output".into()));
        }
        let light = LightCondition::from_control(control);
        state = model.advance(&state, light)?;
        let stem = *model.stem(&state);
        steps.push(TraceStep { light, control, stem });
        if scenario.obstacles.iter().any(|o| collides(&stem, o)) {
            cause = TerminalCause::Collision;
            break;
        }
        if stem.tip().y >= limits.stop_height {
            cause = TerminalCause::HeightReached;
            break;
        }
    }
    let mut trace = RolloutTrace {
        initial,
        steps,
        cause,
        fitness: 0.0,
    };
    trace.fitness = fitness_at(trace.final_tip(), scenario.target)?;
    Ok(trace)
}

/// `F = (x_r + y_r) / (|x*| + |y*|)` for a final tip against a target.
pub fn fitness_at(tip: Point2, target: Point2) -> Result<f64> {
    let denom = target.x.abs() + target.y.abs();
    if denom == 0.0 {
        return Err(Error::Invalid("target at the origin has no defined fitness".into()));
    }
    let xr = target.x.abs() - (target.x - tip.x).abs();
    let yr = target.y.abs() - (target.y - tip.y).abs();
    Ok((xr + yr) / denom)
}

pub fn fitness(trace: &RolloutTrace, scenario: &Scenario) -> Result<f64> {
    fitness_at(trace.final_tip(), scenario.target)
}

/// Mean fitness over every scenario of the set.
pub fn evaluate<M: ForwardModel, C: Controller + ?Sized>(
    controller: &mut C,
    model: &M,
    set: &ScenarioSet,
    limits: &RolloutLimits,
) -> Result<f64> {
    if set.scenarios.is_empty() {
        return Err(Error::Empty("scenario set".into()));
    }
    let mut total = 0.0;
    for s in &set.scenarios {
        total += rollout(controller, model, s, limits)?.fitness;
    }
    Ok(total / set.scenarios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64) -> impl FnMut(&[f64; CONTROLLER_INPUTS]) -> f64 {
        move |_| c
    }

    #[test]
    fn trace_csv_round_trip() {
        let (_, _, sc) = scenario_by_ref("left:2").unwrap();
        let limits = RolloutLimits::default();
        let mut alternate = {
            let mut k = 0u32;
            move |_: &[f64; CONTROLLER_INPUTS]| {
                k += 1;
                if (k / 50) % 2 == 0 { 0.9 } else { 0.1 }
            }
        };
        let t = rollout(&mut alternate, &SynthForward(PlantParams::default()), &sc, &limits).unwrap();
        let back = RolloutTrace::from_csv(&t.to_csv(), &sc, &limits).unwrap();
        assert_eq!(back.steps.len(), t.steps.len());
        assert_eq!(back.cause, t.cause);
        assert_eq!(back.fitness, t.fitness);
        assert_eq!(back.initial, t.initial);
        for (a, b) in back.steps.iter().zip(&t.steps) {
            assert_eq!(a.light, b.light);
            assert_eq!(a.control, b.control);
            assert_eq!(a.stem, b.stem);
        }
        assert!(RolloutTrace::from_csv("x,y\n", &sc, &limits).is_err());
    }

    #[test]
    fn fitness_worked_examples() {
        let left = Point2::new(-5.12, 17.9);
        assert_eq!(fitness_at(left, left).unwrap(), 1.0);
        assert!(fitness_at(Point2::ORIGIN, left).unwrap().abs() < 1e-12);
        let mid = Point2::new(0.0, 17.9);
        let f = fitness_at(Point2::new(2.0, 17.9), mid).unwrap();
        assert!((f - 15.9 / 17.9).abs() < 1e-12);
        assert!(fitness_at(Point2::new(1.0, 1.0), Point2::ORIGIN).is_err());
    }

    #[test]
    fn scenario_geometry() {
        let left = builtin_scenarios(ExperimentTag::LeftTarget);
        let xs: Vec<f64> = left.scenarios.iter().map(|s| s.obstacles[0].center.x).collect();
        assert_eq!(xs.len(), 4);
        for (got, want) in xs.iter().zip([-8.24, -5.57, -2.90, 2.43]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        let mid = builtin_scenarios(ExperimentTag::MiddleTarget);
        assert_eq!(mid.scenarios.len(), 2);
        assert_eq!(mid.scenarios[0].target, Point2::new(0.0, 17.9));
        let (_, _, s2) = scenario_by_ref("left:2").unwrap();
        assert_eq!(s2, left.scenarios[1]);
        assert!(scenario_by_ref("left:5").is_err());
        assert!(scenario_by_ref("middle:0").is_err());
    }

    #[test]
    fn collision_cases() {
        let o = Obstacle::new(Point2::new(5.0, 5.0), 2.0, 2.0).unwrap();
        // stem at x = 3 leaves 1 cm clearance to the left edge at x = 4
        let clear = StemPolyline::straight(Point2::new(3.0, 0.0), Point2::new(3.0, 9.0));
        assert!(!collides(&clear, &o));
        let crossing = StemPolyline::straight(Point2::new(3.0, 0.0), Point2::new(7.0, 9.0));
        assert!(collides(&crossing, &o));
        let touching = StemPolyline::straight(Point2::new(4.0, 0.0), Point2::new(4.0, 4.5));
        assert!(collides(&touching, &o));
    }

    #[test]
    fn obstacle_on_seedling_collides_immediately() {
        let o = Obstacle::new(Point2::new(0.0, 0.5), 2.0, 2.0).unwrap();
        let s = Scenario::new(Point2::new(0.0, 17.9), 2.0, vec![o]).unwrap();
        let model = SynthForward(PlantParams::default());
        let trace = rollout(&mut constant(0.0), &model, &s, &RolloutLimits::default()).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.cause, TerminalCause::Collision);
    }

    #[test]
    fn constant_left_drifts_negative_and_terminates() {
        let model = SynthForward(PlantParams::default());
        let s = Scenario::new(Point2::new(-5.12, 17.9), 2.0, vec![]).unwrap();
        let limits = RolloutLimits::default();
        let trace = rollout(&mut constant(0.2), &model, &s, &limits).unwrap();
        assert_eq!(trace.cause, TerminalCause::HeightReached);
        assert!(trace.final_tip().x < -1.0);
        assert!(trace.steps.len() <= limits.step_cap);
        let again = rollout(&mut constant(0.2), &model, &s, &limits).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn step_cap_bounds_length() {
        let model = SynthForward(PlantParams {
            growth_rate: 0.0,
            ..PlantParams::default()
        });
        let s = Scenario::new(Point2::new(0.0, 17.9), 2.0, vec![]).unwrap();
        let limits = RolloutLimits {
            step_cap: 37,
            ..RolloutLimits::default()
        };
        let trace = rollout(&mut constant(0.9), &model, &s, &limits).unwrap();
        assert_eq!(trace.cause, TerminalCause::StepCap);
        assert_eq!(trace.steps.len(), 37);
    }

    #[test]
    fn evaluate_is_mean_of_rollouts() {
        let model = SynthForward(PlantParams::default());
        let set = builtin_scenarios(ExperimentTag::LeftTarget);
        let limits = RolloutLimits::default();
        let mean = evaluate(&mut constant(0.1), &model, &set, &limits).unwrap();
        let sum: f64 = set
            .scenarios
            .iter()
            .map(|s| rollout(&mut constant(0.1), &model, s, &limits).unwrap().fitness)
            .sum();
        assert!((mean - sum / 4.0).abs() < 1e-15);
    }

    #[test]
    fn mirrored_controller_on_mirrored_scenario_matches() {
        let params = PlantParams {
            nutation_amp: 0.0,
            ..PlantParams::default()
        };
        assert!(params.is_symmetric());
        let model = SynthForward(params);
        let limits = RolloutLimits::default();
        // bang-bang tracking of x = 2 sin(y / 3)
        let policy = |inp: &[f64; CONTROLLER_INPUTS]| {
            let (x, y) = (inp[18] * 40.0, inp[19] * 20.0 + 20.0);
            if x < 2.0 * (y / 3.0).sin() { 0.9 } else { 0.1 }
        };
        let mirrored = |inp: &[f64; CONTROLLER_INPUTS]| {
            let mut m = *inp;
            for k in [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22] {
                m[k] = -m[k];
            }
            1.0 - policy(&m)
        };
        for s in builtin_scenarios(ExperimentTag::LeftTarget).scenarios {
            let a = rollout(&mut { policy }, &model, &s, &limits).unwrap();
            let b = rollout(&mut { mirrored }, &model, &s.mirror_x(), &limits).unwrap();
            assert_eq!(a.fitness, b.fitness);
            assert_eq!(a.steps.len(), b.steps.len());
        }
    }

    #[test]
    fn trace_csv_shape() {
        let model = SynthForward(PlantParams::default());
        let s = Scenario::new(Point2::new(0.0, 17.9), 2.0, vec![]).unwrap();
        let limits = RolloutLimits {
            step_cap: 3,
            ..RolloutLimits::default()
        };
        let csv = rollout(&mut constant(0.9), &model, &s, &limits).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 23));
        assert!(lines[1].starts_with("1,R,0.9,0,0,"));
    }
}
