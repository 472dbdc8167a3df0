//! Stem extraction from RGB frames.
//!
//! Frames are stride-sampled, reduced to their green channel and compared to
//! the per-pixel green interval observed in images of the empty setup.
//! Pixels outside that interval by more than `theta1` are plant material.
//! From those pixels the growth tip is chosen, eight intermediate points are
//! averaged in horizontal bands, and the ten points are smoothed before
//! conversion to centimetres.

use std::io::BufRead;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geom::{LightCondition, Point2, StemPolyline, TrackedFrame, STEM_POINTS};

/// Green channel values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GreenMatrix {
    /// Samples every `downsample`-th pixel in both directions.
    pub fn from_image(img: &RgbImage, downsample: usize) -> Self {
        let step = downsample.max(1);
        let rows = (img.height() as usize).div_ceil(step);
        let cols = (img.width() as usize).div_ceil(step);
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let px = img.get_pixel((c * step) as u32, (r * step) as u32);
                values.push(px.0[1] as f64 / 255.0);
            }
        }
        GreenMatrix { rows, cols, values }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("green values must lie in [0, 1]".into()));
        }
        Ok(GreenMatrix { rows, cols, values })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-pixel minimum and maximum green over the setup images.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupEnvelope {
    low: GreenMatrix,
    high: GreenMatrix,
}

impl SetupEnvelope {
    pub fn low(&self) -> &GreenMatrix {
        &self.low
    }

    pub fn high(&self) -> &GreenMatrix {
        &self.high
    }

    /// `(cols, rows)` of the sampled grid.
    pub fn dims(&self) -> (usize, usize) {
        self.low.dims()
    }

    pub fn bounds(&self, row: usize, col: usize) -> (f64, f64) {
        (self.low.get(row, col), self.high.get(row, col))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Plant-pixel threshold on the green channel.
    pub theta1: f64,
    /// Half-height of the averaging bands, in sampled pixels.
    pub theta2: f64,
    pub downsample: usize,
    /// Scale at full resolution.
    pub px_per_cm: f64,
    /// Anchor at full resolution, `(column, row)`.
    pub anchor_px: (f64, f64),
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            theta1: 0.2,
            theta2: 30.0,
            downsample: 8,
            px_per_cm: 80.0,
            anchor_px: (1296.0, 1880.0),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta1 > 0.0 && self.theta1 < 1.0) {
            return Err(Error::Invalid(format!("theta1 must lie in (0,1), got {}", self.theta1)));
        }
        if !(self.theta2 > 0.0) {
            return Err(Error::Invalid(format!("theta2 must be positive, got {}", self.theta2)));
        }
        if self.downsample < 1 {
            return Err(Error::Invalid("downsample must be at least 1".into()));
        }
        if !(self.px_per_cm > 0.0) {
            return Err(Error::Invalid(format!("px_per_cm must be positive, got {}", self.px_per_cm)));
        }
        Ok(())
    }

    /// Anchor in sampled pixel coordinates.
    pub fn anchor_sampled(&self) -> Point2 {
        let d = self.downsample as f64;
        Point2::new(self.anchor_px.0 / d, self.anchor_px.1 / d)
    }

    pub fn px_per_cm_sampled(&self) -> f64 {
        self.px_per_cm / self.downsample as f64
    }

    /// Sampled pixel coordinates to plant-frame centimetres (y up).
    pub fn to_cm(&self, p: Point2) -> Point2 {
        let a = self.anchor_sampled();
        let s = self.px_per_cm_sampled();
        Point2::new((p.x - a.x) / s, (a.y - p.y) / s)
    }
}

pub fn build_envelope(setup_images: &[RgbImage], downsample: usize) -> Result<SetupEnvelope> {
    let first = setup_images
        .first()
        .ok_or_else(|| Error::Empty("no setup images".into()))?;
    let mut low = GreenMatrix::from_image(first, downsample);
    let mut high = low.clone();
    for img in &setup_images[1..] {
        if img.dimensions() != first.dimensions() {
            return Err(Error::Dimension(format!(
                "setup image is {:?}, expected {:?}",
                img.dimensions(),
                first.dimensions()
            )));
        }
        let m = GreenMatrix::from_image(img, downsample);
        for ((lo, hi), v) in low.values.iter_mut().zip(high.values.iter_mut()).zip(&m.values) {
            *lo = lo.min(*v);
            *hi = hi.max(*v);
        }
    }
    Ok(SetupEnvelope { low, high })
}

/// Plant pixels of `image`, in sampled pixel coordinates (x = column,
/// y = row).
pub fn extract_plant_pixels(image: &RgbImage, env: &SetupEnvelope, cfg: &TrackerConfig) -> Result<Vec<Point2>> {
    let m = GreenMatrix::from_image(image, cfg.downsample);
    plant_pixels_from_matrix(&m, env, cfg.theta1)
}

pub fn plant_pixels_from_matrix(m: &GreenMatrix, env: &SetupEnvelope, theta1: f64) -> Result<Vec<Point2>> {
    if m.dims() != env.dims() {
        return Err(Error::Dimension(format!(
            "frame samples to {:?}, envelope is {:?}",
            m.dims(),
            env.dims()
        )));
    }
    let mut out = Vec::new();
    for r in 0..m.rows {
        for c in 0..m.cols {
            let v = m.get(r, c);
            let (lo, hi) = env.bounds(r, c);
            if v < lo - theta1 || v > hi + theta1 {
                out.push(Point2::new(c as f64, r as f64));
            }
        }
    }
    Ok(out)
}

/// Chooses between the corner point (furthest from the anchor in Manhattan
/// distance) and the high point (furthest in y) by proximity to the previous
/// tip. Equal distances go to the high point.
pub fn select_tip(pixels: &[Point2], anchor: Point2, prev_tip: Point2) -> Result<Point2> {
    let first = *pixels
        .first()
        .ok_or_else(|| Error::Empty("no plant pixels for tip selection".into()))?;
    let mut corner = first;
    let mut corner_d = f64::NEG_INFINITY;
    let mut high = first;
    let mut high_d = f64::NEG_INFINITY;
    for p in pixels {
        let dy = (anchor.y - p.y).abs();
        let manhattan = (anchor.x - p.x).abs() + dy;
        if manhattan > corner_d {
            corner_d = manhattan;
            corner = *p;
        }
        if dy > high_d {
            high_d = dy;
            high = *p;
        }
    }
    if prev_tip.distance(&high) <= prev_tip.distance(&corner) {
        Ok(high)
    } else {
        Ok(corner)
    }
}

/// The eight intermediate points, evenly spaced in y between anchor and tip,
/// each at the mean x of the plant pixels within `theta2` rows.
///
/// A band without pixels takes the x of the nearest populated band below
/// it, or the anchor's x.
pub fn band_averages(pixels: &[Point2], anchor: Point2, tip: Point2, theta2: f64) -> Result<[Point2; 8]> {
    if pixels.is_empty() {
        return Err(Error::Empty("no plant pixels for band averaging".into()));
    }
    if anchor == tip {
        return Err(Error::Invalid("tip coincides with anchor".into()));
    }
    let mut out = [Point2::ORIGIN; 8];
    let mut populated = 0;
    let mut below_x = anchor.x;
    for (k, slot) in out.iter_mut().enumerate() {
        let y = anchor.y + (k + 1) as f64 / 9.0 * (tip.y - anchor.y);
        let (sum, n) = pixels
            .iter()
            .filter(|p| (p.y - y).abs() < theta2)
            .fold((0.0, 0usize), |(s, n), p| (s + p.x, n + 1));
        let x = if n > 0 {
            populated += 1;
            sum / n as f64
        } else {
            below_x
        };
        below_x = x;
        *slot = Point2::new(x, y);
    }
    if populated == 0 {
        return Err(Error::Empty("all bands are empty".into()));
    }
    Ok(out)
}

/// Index passes of the iterative averaging, zero-based (the one-based sets
/// are {2,4,6,8}, {3,5,7,9}, {2,4,6,8}).
const SIA_PASSES: [[usize; 4]; 3] = [[1, 3, 5, 7], [2, 4, 6, 8], [1, 3, 5, 7]];

/// Smoothing by iterative averaging: interior points are replaced by the
/// midpoint of their neighbours in three alternating passes. Anchor and tip
/// are never touched.
pub fn sia_smooth(stem: &StemPolyline) -> StemPolyline {
    let mut pts = *stem.points();
    sia_smooth_points(&mut pts);
    StemPolyline::from_array(pts).expect("midpoints of finite points are finite")
}

pub fn sia_smooth_points(pts: &mut [Point2; STEM_POINTS]) {
    for pass in SIA_PASSES {
        for i in pass {
            pts[i] = pts[i - 1].midpoint(&pts[i + 1]);
        }
    }
}

/// `(timestep, side)` records describing which light was on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LightLog {
    entries: Vec<(u64, LightCondition)>,
}

impl LightLog {
    pub fn new(mut entries: Vec<(u64, LightCondition)>) -> Self {
        entries.sort_by_key(|e| e.0);
        LightLog { entries }
    }

    pub fn constant(light: LightCondition) -> Self {
        LightLog {
            entries: vec![(0, light)],
        }
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let t = it
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| Error::parse(i + 1, "expected timestep"))?;
            let side = it
                .next()
                .and_then(LightCondition::from_symbol)
                .ok_or_else(|| Error::parse(i + 1, "expected side L or R"))?;
            if it.next().is_some() {
                return Err(Error::parse(i + 1, "trailing fields"));
            }
            entries.push((t, side));
        }
        Ok(Self::new(entries))
    }

    /// Light in effect at `t`: the latest entry at or before it (the first
    /// entry before the log starts).
    pub fn at(&self, t: u64) -> LightCondition {
        let idx = self.entries.partition_point(|e| e.0 <= t);
        match idx {
            0 => self.entries.first().map(|e| e.1).unwrap_or(LightCondition::Left),
            i => self.entries[i - 1].1,
        }
    }
}

/// Sequential stem tracker: carries the previous tip between frames.
#[derive(Debug, Clone)]
pub struct Tracker<'a> {
    env: &'a SetupEnvelope,
    cfg: &'a TrackerConfig,
    prev_tip: Point2,
}

impl<'a> Tracker<'a> {
    pub fn new(env: &'a SetupEnvelope, cfg: &'a TrackerConfig) -> Self {
        Tracker {
            env,
            cfg,
            prev_tip: cfg.anchor_sampled(),
        }
    }

    /// Stem in centimetres (anchor at the origin), or `None` when the frame
    /// has no plant pixels. A skipped frame leaves the previous tip in place.
    pub fn track(&mut self, image: &RgbImage) -> Result<Option<StemPolyline>> {
        let pixels = extract_plant_pixels(image, self.env, self.cfg)?;
        self.track_pixels(&pixels)
    }

    pub fn track_pixels(&mut self, pixels: &[Point2]) -> Result<Option<StemPolyline>> {
        if pixels.is_empty() {
            return Ok(None);
        }
        let anchor = self.cfg.anchor_sampled();
        let tip = select_tip(pixels, anchor, self.prev_tip)?;
        if tip == anchor {
            return Ok(None);
        }
        let bands = band_averages(pixels, anchor, tip, self.cfg.theta2)?;
        let mut pts = [anchor; STEM_POINTS];
        pts[1..9].copy_from_slice(&bands);
        pts[9] = tip;
        sia_smooth_points(&mut pts);
        for p in &mut pts {
            *p = self.cfg.to_cm(*p);
        }
        self.prev_tip = tip;
        Ok(Some(StemPolyline::from_array(pts)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frames: Vec<TrackedFrame>,
    /// Timesteps of frames without plant pixels.
    pub gaps: Vec<u64>,
}

/// Tracks a time-ordered sequence; image `i` is timestep `i`.
pub fn track_sequence(
    images: &[RgbImage],
    env: &SetupEnvelope,
    cfg: &TrackerConfig,
    lights: &LightLog,
) -> Result<TrackOutput> {
    track_iter(images.iter().map(|img| Ok(img.clone())), env, cfg, lights)
}

/// Streaming variant of [`track_sequence`] so long sequences need not be
/// held in memory.
pub fn track_iter<I>(images: I, env: &SetupEnvelope, cfg: &TrackerConfig, lights: &LightLog) -> Result<TrackOutput>
where
    I: IntoIterator<Item = Result<RgbImage>>,
{
    cfg.validate()?;
    let mut tracker = Tracker::new(env, cfg);
    let mut frames = Vec::new();
    let mut gaps = Vec::new();
    for (t, img) in images.into_iter().enumerate() {
        let t = t as u64;
        match tracker.track(&img?)? {
            Some(stem) => frames.push(TrackedFrame {
                t,
                light: lights.at(t),
                stem,
            }),
            None => gaps.push(t),
        }
    }
    unify_anchors(&mut frames);
    Ok(TrackOutput { frames, gaps })
}

/// Translates every stem by minus the mean anchor of the sequence.
pub fn unify_anchors(frames: &mut [TrackedFrame]) {
    if frames.is_empty() {
        return;
    }
    let n = frames.len() as f64;
    let (sx, sy) = frames
        .iter()
        .fold((0.0, 0.0), |(x, y), f| (x + f.stem.anchor().x, y + f.stem.anchor().y));
    let mean = Point2::new(sx / n, sy / n);
    if mean == Point2::ORIGIN {
        return;
    }
    for f in frames {
        f.stem = f.stem.translate(Point2::new(-mean.x, -mean.y));
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes a binary PPM (P6).
pub fn save_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    PnmEncoder::new(writer)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn flat(w: u32, h: u32, g: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([0, g, 0]))
    }

    fn env_from(low: f64, high: f64, rows: usize, cols: usize) -> SetupEnvelope {
        SetupEnvelope {
            low: GreenMatrix::from_values(rows, cols, vec![low; rows * cols]).unwrap(),
            high: GreenMatrix::from_values(rows, cols, vec![high; rows * cols]).unwrap(),
        }
    }

    #[test]
    fn singleton_envelope_is_the_image() {
        let img = flat(4, 3, 51);
        let env = build_envelope(std::slice::from_ref(&img), 1).unwrap();
        assert_eq!(env.low(), env.high());
        assert_eq!(env.low(), &GreenMatrix::from_image(&img, 1));
    }

    #[test]
    fn two_image_envelope() {
        let a = flat(2, 2, 51); // 0.2
        let b = flat(2, 2, 153); // 0.6
        let env = build_envelope(&[a, b], 1).unwrap();
        assert_eq!(env.bounds(1, 1), (0.2, 0.6));
    }

    #[test]
    fn envelope_errors() {
        assert!(matches!(build_envelope(&[], 1), Err(Error::Empty(_))));
        assert!(matches!(
            build_envelope(&[flat(2, 2, 0), flat(3, 2, 0)], 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn setup_image_has_no_plant_pixels() {
        let imgs = vec![flat(8, 8, 40), flat(8, 8, 60)];
        let env = build_envelope(&imgs, 1).unwrap();
        let cfg = TrackerConfig { downsample: 1, ..TrackerConfig::default() };
        assert!(extract_plant_pixels(&imgs[0], &env, &cfg).unwrap().is_empty());
    }

    #[test]
    fn plant_pixel_predicate_hand_values() {
        let env = env_from(0.3, 0.5, 1, 1);
        // 0.9 > 0.5 + 0.2
        let m = GreenMatrix::from_values(1, 1, vec![0.9]).unwrap();
        assert_eq!(plant_pixels_from_matrix(&m, &env, 0.2).unwrap().len(), 1);
        // 0.65 <= 0.7 and 0.65 >= 0.1
        let m = GreenMatrix::from_values(1, 1, vec![0.65]).unwrap();
        assert!(plant_pixels_from_matrix(&m, &env, 0.2).unwrap().is_empty());
    }

    #[test]
    fn plant_pixels_dimension_mismatch() {
        let env = env_from(0.3, 0.5, 2, 2);
        let m = GreenMatrix::from_values(1, 1, vec![0.9]).unwrap();
        assert!(matches!(plant_pixels_from_matrix(&m, &env, 0.2), Err(Error::Dimension(_))));
    }

    #[test]
    fn tip_selection_cases() {
        let a = Point2::ORIGIN;
        let single = [Point2::new(3.0, 4.0)];
        assert_eq!(select_tip(&single, a, a).unwrap(), single[0]);

        // corner (10,0) has the larger |dx|+|dy|, (1,8) the larger |dy|
        let p = [Point2::new(10.0, 0.0), Point2::new(1.0, 8.0)];
        assert_eq!(select_tip(&p, a, Point2::new(1.0, 9.0)).unwrap(), Point2::new(1.0, 8.0));
        assert_eq!(select_tip(&p, a, Point2::new(10.0, 1.0)).unwrap(), Point2::new(10.0, 0.0));
        assert!(select_tip(&[], a, a).is_err());
    }

    #[test]
    fn equal_distance_prefers_high_point() {
        // corner (10,0), high point (0,8); (5,4) is equidistant from both
        let p = [Point2::new(10.0, 0.0), Point2::new(0.0, 8.0)];
        let prev = Point2::new(5.0, 4.0);
        assert_eq!(prev.distance(&p[0]), prev.distance(&p[1]));
        assert_eq!(select_tip(&p, Point2::ORIGIN, prev).unwrap(), p[1]);
    }

    #[test]
    fn vertical_stem_bands() {
        // image rows grow downward: anchor at row 100, tip at row 10
        let pixels: Vec<Point2> = (10..=100).map(|r| Point2::new(50.0, r as f64)).collect();
        let bands = band_averages(&pixels, Point2::new(50.0, 100.0), Point2::new(50.0, 10.0), 30.0).unwrap();
        for b in bands {
            assert_eq!(b.x, 50.0);
        }
        assert_eq!(bands[0].y, 90.0);
    }

    #[test]
    fn two_pixel_band_mean() {
        let pixels = [Point2::new(40.0, 50.0), Point2::new(60.0, 50.0)];
        let bands = band_averages(&pixels, Point2::new(50.0, 90.0), Point2::new(50.0, 0.0), 5.0).unwrap();
        // band 4 sits at row 90 - 40 = 50
        assert_eq!(bands[3], Point2::new(50.0, 50.0));
        // bands below inherit the anchor x; bands above inherit band 4
        assert_eq!(bands[0].x, 50.0);
        assert_eq!(bands[7].x, 50.0);
    }

    #[test]
    fn empty_band_inherits_lower_band() {
        let pixels = [Point2::new(20.0, 80.0)];
        let bands = band_averages(&pixels, Point2::new(0.0, 90.0), Point2::new(0.0, 0.0), 5.0).unwrap();
        assert_eq!(bands[0].x, 20.0);
        for b in &bands[1..] {
            assert_eq!(b.x, 20.0);
        }
    }

    #[test]
    fn all_bands_empty_is_an_error() {
        let pixels = [Point2::new(20.0, 500.0)];
        assert!(band_averages(&pixels, Point2::new(0.0, 90.0), Point2::new(0.0, 0.0), 5.0).is_err());
    }

    #[test]
    fn collinear_stem_is_sia_fixed_point() {
        let s = StemPolyline::straight(Point2::ORIGIN, Point2::new(4.5, 9.0));
        let out = sia_smooth(&s);
        for (a, b) in out.points().iter().zip(s.points()) {
            assert!(a.distance(b) < 1e-12);
        }
    }

    #[test]
    fn sia_zigzag_matches_scripted_passes() {
        let mut pts = *StemPolyline::vertical(9.0).points();
        pts[4].x = 1.0;
        let s = StemPolyline::from_array(pts).unwrap();
        let out = sia_smooth(&s);
        // zero-based x after each pass:
        //   {1,3,5,7}: x3 = x5 = 0.5
        //   {2,4,6,8}: x2 = 0.25, x4 = 0.5, x6 = 0.25
        //   {1,3,5,7}: x1 = 0.125, x3 = 0.375, x5 = 0.375, x7 = 0.125
        let xs: Vec<f64> = out.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.375, 0.25, 0.125, 0.0, 0.0]);
        assert_eq!(out.anchor(), s.anchor());
        assert_eq!(out.tip(), s.tip());
    }

    #[test]
    fn light_log_lookup() {
        let log = LightLog::parse("0 L\n72 R\n# c\n144 L\n".as_bytes()).unwrap();
        assert_eq!(log.at(0), LightCondition::Left);
        assert_eq!(log.at(71), LightCondition::Left);
        assert_eq!(log.at(72), LightCondition::Right);
        assert_eq!(log.at(500), LightCondition::Left);
        let err = LightLog::parse("0 L\n5 X\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
