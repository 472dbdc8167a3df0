//! Shared geometric and dataset types.
//!
//! Coordinates are centimetres in the plant frame: the origin is the anchor
//! (where the stem leaves the soil) after unification, `+y` points up and
//! `+x` points toward the right-hand light source.

use std::fmt;

use crate::error::{Error, Result};

/// Number of points describing a stem, anchor first, growth tip last.
pub const STEM_POINTS: usize = 10;

/// Number of coordinates that change between timesteps (points 1..=9).
pub const STEM_COORDS: usize = 2 * (STEM_POINTS - 1);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Ten ordered points from the anchor (`points[0]`) to the growth tip
/// (`points[9]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StemPolyline {
    points: [Point2; STEM_POINTS],
}

impl StemPolyline {
    /// Builds a stem from exactly ten finite points.
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        let points: [Point2; STEM_POINTS] = points.try_into().map_err(|v: Vec<Point2>| {
            Error::InvalidStem(format!("expected {STEM_POINTS} points, got {}", v.len()))
        })?;
        Self::from_array(points)
    }

    pub fn from_array(points: [Point2; STEM_POINTS]) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidStem(format!("point {i} is not finite")));
        }
        Ok(StemPolyline { points })
    }

    /// A straight vertical stem from the origin to `(0, height)` with evenly
    /// spaced points.
    pub fn vertical(height: f64) -> Self {
        Self::straight(Point2::ORIGIN, Point2::new(0.0, height))
    }

    pub fn straight(anchor: Point2, tip: Point2) -> Self {
        let mut points = [Point2::ORIGIN; STEM_POINTS];
        for (i, p) in points.iter_mut().enumerate() {
            *p = anchor.lerp(&tip, i as f64 / (STEM_POINTS - 1) as f64);
        }
        StemPolyline { points }
    }

    /// Rebuilds a stem from an anchor plus the 18 coordinates of points 1..=9.
    pub fn from_coords(anchor: Point2, coords: &[f64; STEM_COORDS]) -> Result<Self> {
        let mut points = [anchor; STEM_POINTS];
        for (i, p) in points.iter_mut().enumerate().skip(1) {
            *p = Point2::new(coords[2 * (i - 1)], coords[2 * (i - 1) + 1]);
        }
        Self::from_array(points)
    }

    pub fn points(&self) -> &[Point2; STEM_POINTS] {
        &self.points
    }

    pub fn anchor(&self) -> Point2 {
        self.points[0]
    }

    pub fn tip(&self) -> Point2 {
        self.points[STEM_POINTS - 1]
    }

    /// The 18 coordinates `x1 y1 .. x9 y9`, anchor excluded.
    pub fn coords(&self) -> [f64; STEM_COORDS] {
        let mut out = [0.0; STEM_COORDS];
        for (i, p) in self.points[1..].iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    /// All 20 coordinates including the anchor.
    pub fn all_coords(&self) -> [f64; 2 * STEM_POINTS] {
        let mut out = [0.0; 2 * STEM_POINTS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    /// Mirror across the vertical axis: `(x, y) -> (-x, y)`.
    pub fn mirror_x(&self) -> StemPolyline {
        let mut points = self.points;
        for p in &mut points {
            p.x = -p.x;
        }
        StemPolyline { points }
    }

    pub fn translate(&self, offset: Point2) -> StemPolyline {
        let mut points = self.points;
        for p in &mut points {
            *p = *p + offset;
        }
        StemPolyline { points }
    }

    /// The nine segments `(p[i], p[i + 1])`.
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// Discrete bending energy `sum |p[i-1] - 2 p[i] + p[i+1]|^2` over the
    /// interior points.
    pub fn bending_energy(&self) -> f64 {
        self.points
            .windows(3)
            .map(|w| {
                let dx = w[0].x - 2.0 * w[1].x + w[2].x;
                let dy = w[0].y - 2.0 * w[1].y + w[2].y;
                dx * dx + dy * dy
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LightCondition {
    Left,
    Right,
}

impl LightCondition {
    /// Network encoding: LEFT = 0, RIGHT = 1.
    pub fn as_bit(self) -> f64 {
        match self {
            LightCondition::Left => 0.0,
            LightCondition::Right => 1.0,
        }
    }

    /// Unit direction along x toward the active light.
    pub fn direction(self) -> f64 {
        match self {
            LightCondition::Left => -1.0,
            LightCondition::Right => 1.0,
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            LightCondition::Left => LightCondition::Right,
            LightCondition::Right => LightCondition::Left,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            LightCondition::Left => 'L',
            LightCondition::Right => 'R',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "L" | "l" | "left" | "LEFT" => Some(LightCondition::Left),
            "R" | "r" | "right" | "RIGHT" => Some(LightCondition::Right),
            _ => None,
        }
    }

    /// Controller output convention: `C_t <= 0.5` selects the left light.
    pub fn from_control(c: f64) -> Self {
        if c <= 0.5 {
            LightCondition::Left
        } else {
            LightCondition::Right
        }
    }
}

impl fmt::Display for LightCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Minutes of wall time per timestep.
pub const MINUTES_PER_STEP: u32 = 5;

/// Timesteps per hour of plant time.
pub const STEPS_PER_HOUR: u32 = 60 / MINUTES_PER_STEP;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedFrame {
    pub t: u64,
    pub light: LightCondition,
    pub stem: StemPolyline,
}

impl TrackedFrame {
    pub fn mirrored(&self) -> TrackedFrame {
        TrackedFrame {
            t: self.t,
            light: self.light.mirrored(),
            stem: self.stem.mirror_x(),
        }
    }
}

/// One training pair: the stem at `t`, the stem at `t + 1` and the light
/// active during that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionVector {
    pub current: [f64; STEM_COORDS],
    pub next: [f64; STEM_COORDS],
    pub light: LightCondition,
}

impl RegressionVector {
    pub fn mirrored(&self) -> RegressionVector {
        let mut out = *self;
        for i in (0..STEM_COORDS).step_by(2) {
            out.current[i] = -out.current[i];
            out.next[i] = -out.next[i];
        }
        out.light = self.light.mirrored();
        out
    }

    pub fn mean_abs_change(&self) -> f64 {
        self.current
            .iter()
            .zip(&self.next)
            .map(|(c, n)| (n - c).abs())
            .sum::<f64>()
            / STEM_COORDS as f64
    }
}

/// Axis-aligned rectangle, `width` along x and `height` along y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Point2,
    pub width: f64,
    pub height: f64,
}

impl Obstacle {
    pub fn new(center: Point2, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !center.is_finite() {
            return Err(Error::Invalid(format!(
                "obstacle needs positive finite size, got {width} x {height}"
            )));
        }
        Ok(Obstacle {
            center,
            width,
            height,
        })
    }

    pub fn min(&self) -> Point2 {
        Point2::new(
            self.center.x - 0.5 * self.width,
            self.center.y - 0.5 * self.height,
        )
    }

    pub fn max(&self) -> Point2 {
        Point2::new(
            self.center.x + 0.5 * self.width,
            self.center.y + 0.5 * self.height,
        )
    }

    pub fn mirror_x(&self) -> Obstacle {
        Obstacle {
            center: Point2::new(-self.center.x, self.center.y),
            ..*self
        }
    }

    /// Closed-rectangle test: touching the boundary counts.
    pub fn intersects_segment(&self, a: Point2, b: Point2) -> bool {
        let (lo, hi) = (self.min(), self.max());
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        // Liang-Barsky clipping against the four slabs.
        for (p, q) in [
            (-d.x, a.x - lo.x),
            (d.x, hi.x - a.x),
            (-d.y, a.y - lo.y),
            (d.y, hi.y - a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub target: Point2,
    pub target_radius: f64,
    pub obstacles: Vec<Obstacle>,
}

impl Scenario {
    pub fn new(target: Point2, target_radius: f64, obstacles: Vec<Obstacle>) -> Result<Self> {
        if !(target_radius > 0.0) || !target.is_finite() {
            return Err(Error::Invalid(format!(
                "scenario target radius must be positive, got {target_radius}"
            )));
        }
        Ok(Scenario {
            target,
            target_radius,
            obstacles,
        })
    }

    pub fn mirror_x(&self) -> Scenario {
        Scenario {
            target: Point2::new(-self.target.x, self.target.y),
            target_radius: self.target_radius,
            obstacles: self.obstacles.iter().map(Obstacle::mirror_x).collect(),
        }
    }
}
