//! Expansion of tracked sequences into the regression corpus.
//!
//! Sources are noisy copies built from per-tip neighbourhood statistics,
//! micro-translated copies of hand-picked generic frames, and x-mirroring.
//! Consecutive timesteps are then paired, and duplicate and jump pairs are
//! dropped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{Point2, RegressionVector, StemPolyline, TrackedFrame, STEM_POINTS};
use crate::seeds::derive_seed;

/// Axis-aligned region whose frames are dropped before pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExclusionRect {
    pub min: Point2,
    pub max: Point2,
}

impl ExclusionRect {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Neighbour count for tip statistics.
    pub theta3: usize,
    /// Noise scale.
    pub omega: f64,
    pub n_noisy: usize,
    /// Translation magnitudes are `10^λ` cm.
    pub lambda_exponents: Vec<i32>,
    pub jump_factor: f64,
    /// Indices into the concatenated source frames.
    pub generic_indices: Vec<usize>,
    pub exclusions: Vec<ExclusionRect>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            theta3: 100,
            omega: 0.1,
            n_noisy: 3,
            lambda_exponents: vec![-3, -4, -5, -6],
            jump_factor: 20.0,
            generic_indices: Vec::new(),
            exclusions: Vec::new(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta3 == 0 {
            return Err(Error::Invalid("theta3 must be at least 1".into()));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Invalid("omega must be a finite value >= 0".into()));
        }
        if !(self.jump_factor > 0.0) {
            return Err(Error::Invalid("jump_factor must be positive".into()));
        }
        for r in &self.exclusions {
            if !(r.min.x <= r.max.x && r.min.y <= r.max.y) {
                return Err(Error::Invalid(format!("exclusion {r:?} has min above max")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

/// Mean and standard deviation of the `theta3` same-light tips nearest to
/// frame `j`'s tip, excluding `j`. Ties in distance go to the lower index,
/// and sums run in order of increasing distance.
pub fn tip_neighborhood(frames: &[TrackedFrame], j: usize, theta3: usize) -> Result<TipStats> {
    let fj = frames
        .get(j)
        .ok_or_else(|| Error::Dimension(format!("frame {j} out of range ({} frames)", frames.len())))?;
    let tip = fj.stem.tip();
    let mut cand: Vec<(f64, usize)> = frames
        .iter()
        .enumerate()
        .filter(|&(i, f)| i != j && f.light == fj.light)
        .map(|(i, f)| (f.stem.tip().distance(&tip), i))
        .collect();
    if cand.is_empty() {
        return Err(Error::Empty(format!("no other frame shares the light of frame {j}")));
    }
    let k = theta3.min(cand.len());
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_key);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_key);
    let n = k as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(_, i) in &cand {
        let p = frames[i].stem.tip();
        sx += p.x;
        sy += p.y;
    }
    let (mu_x, mu_y) = (sx / n, sy / n);
    let (mut vx, mut vy) = (0.0, 0.0);
    for &(_, i) in &cand {
        let p = frames[i].stem.tip();
        vx += (p.x - mu_x) * (p.x - mu_x);
        vy += (p.y - mu_y) * (p.y - mu_y);
    }
    Ok(TipStats {
        mu_x,
        mu_y,
        sigma_x: (vx / n).sqrt(),
        sigma_y: (vy / n).sqrt(),
    })
}

/// Per intermediate point, the ratio of its coordinate range over the
/// frames to the tip's range. A zero tip range gives 0.
pub fn extent_ratios(frames: &[TrackedFrame]) -> [[f64; 2]; STEM_POINTS] {
    let mut lo = [[f64::INFINITY; 2]; STEM_POINTS];
    let mut hi = [[f64::NEG_INFINITY; 2]; STEM_POINTS];
    for f in frames {
        for (k, p) in f.stem.points().iter().enumerate() {
            for (a, v) in [p.x, p.y].into_iter().enumerate() {
                lo[k][a] = lo[k][a].min(v);
                hi[k][a] = hi[k][a].max(v);
            }
        }
    }
    let tip = STEM_POINTS - 1;
    let mut out = [[0.0; 2]; STEM_POINTS];
    for k in 0..STEM_POINTS {
        for a in 0..2 {
            let tr = hi[tip][a] - lo[tip][a];
            out[k][a] = if tr > 0.0 { (hi[k][a] - lo[k][a]) / tr } else { 0.0 };
        }
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite non-negative deviation").sample(rng)
}

/// Builds one noisy copy of every source sequence. Statistics and extents
/// are taken over all source frames together. Each frame draws from its own
/// stream, seeded from `(seed, global frame index)`.
///
/// The noisy tip is `tip + N(mu - tip, sigma * omega)`. Each intermediate is
/// replaced by `N(mu2, sigma2 * omega)` with `mu2 = p + dtip * omega2` and
/// `sigma2 = sigma * omega * omega2`. The anchor is kept.
pub fn make_noisy_sequences(
    sources: &[Vec<TrackedFrame>],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<Vec<TrackedFrame>>> {
    cfg.validate()?;
    let pool: Vec<TrackedFrame> = sources.iter().flatten().copied().collect();
    let ratios = extent_ratios(&pool);
    let mut out = Vec::with_capacity(sources.len());
    let mut g = 0;
    for seq in sources {
        let mut noisy = Vec::with_capacity(seq.len());
        for f in seq {
            let stats = tip_neighborhood(&pool, g, cfg.theta3)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "frame", g as u64));
            noisy.push(noisy_frame(f, &stats, &ratios, cfg.omega, &mut rng)?);
            g += 1;
        }
        out.push(noisy);
    }
    Ok(out)
}

fn noisy_frame(
    f: &TrackedFrame,
    s: &TipStats,
    ratios: &[[f64; 2]; STEM_POINTS],
    omega: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrackedFrame> {
    let tip = f.stem.tip();
    let nx = tip.x + draw(rng, s.mu_x - tip.x, s.sigma_x * omega);
    let ny = tip.y + draw(rng, s.mu_y - tip.y, s.sigma_y * omega);
    let (dx, dy) = (nx - tip.x, ny - tip.y);
    let mut pts = *f.stem.points();
    for (k, p) in pts.iter_mut().enumerate().take(STEM_POINTS - 1).skip(1) {
        let [wx, wy] = ratios[k];
        let x = draw(rng, p.x + dx * wx, s.sigma_x * omega * wx * omega);
        let y = draw(rng, p.y + dy * wy, s.sigma_y * omega * wy * omega);
        *p = Point2::new(x, y);
    }
    pts[STEM_POINTS - 1] = Point2::new(nx, ny);
    Ok(TrackedFrame {
        t: f.t,
        light: f.light,
        stem: StemPolyline::from_array(pts)?,
    })
}

/// The 64 offsets `(±10^a, ±10^b)` for exponents `a, b`.
pub fn translation_offsets(exponents: &[i32]) -> Vec<Point2> {
    let mags: Vec<f64> = exponents
        .iter()
        .flat_map(|&e| [10f64.powi(e), -(10f64.powi(e))])
        .collect();
    mags.iter()
        .flat_map(|&dx| mags.iter().map(move |&dy| Point2::new(dx, dy)))
        .collect()
}

/// One translated copy of the selected frames per offset. Indices refer to
/// the concatenated sources; each copy keeps source order so runs of
/// consecutive timesteps still pair.
pub fn generic_translations(sources: &[Vec<TrackedFrame>], cfg: &AugmentConfig) -> Result<Vec<Vec<TrackedFrame>>> {
    if cfg.generic_indices.is_empty() {
        return Err(Error::Empty("generic_indices".into()));
    }
    let pool: Vec<&[TrackedFrame]> = sources.iter().map(|s| s.as_slice()).collect();
    let total: usize = pool.iter().map(|s| s.len()).sum();
    let mut idx = cfg.generic_indices.clone();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&bad) = idx.iter().find(|&&i| i >= total) {
        return Err(Error::Dimension(format!("generic index {bad} out of range ({total} frames)")));
    }
    // split selected frames back into per-source runs
    let mut groups: Vec<Vec<TrackedFrame>> = Vec::new();
    let mut start = 0;
    for seq in &pool {
        let sel: Vec<TrackedFrame> = idx
            .iter()
            .filter(|&&i| i >= start && i < start + seq.len())
            .map(|&i| seq[i - start])
            .collect();
        if !sel.is_empty() {
            groups.push(sel);
        }
        start += seq.len();
    }
    let offsets = translation_offsets(&cfg.lambda_exponents);
    let mut out = Vec::with_capacity(offsets.len() * groups.len());
    for off in &offsets {
        for g in &groups {
            out.push(
                g.iter()
                    .map(|f| TrackedFrame {
                        t: f.t,
                        light: f.light,
                        stem: f.stem.translate(*off),
                    })
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Indices of the `count` frames with the smallest tip jerk (third
/// difference), in ascending index order.
pub fn auto_generic_indices(sources: &[Vec<TrackedFrame>], count: usize) -> Vec<usize> {
    let mut scored = Vec::new();
    let mut start = 0;
    for seq in sources {
        for k in 3..seq.len() {
            let p = |i: usize| seq[i].stem.tip();
            let jx = p(k).x - 3.0 * p(k - 1).x + 3.0 * p(k - 2).x - p(k - 3).x;
            let jy = p(k).y - 3.0 * p(k - 1).y + 3.0 * p(k - 2).y - p(k - 3).y;
            scored.push((jx.hypot(jy), start + k));
        }
        start += seq.len();
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = scored.into_iter().take(count).map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// Pairs frame `t` with frame `t + 1` of the same sequence.
pub fn pair_sequence(seq: &[TrackedFrame]) -> Vec<RegressionVector> {
    seq.windows(2)
        .filter(|w| w[1].t == w[0].t + 1)
        .map(|w| RegressionVector {
            current: w[0].stem.coords(),
            next: w[1].stem.coords(),
            light: w[0].light,
        })
        .collect()
}

/// Mirrors, pairs and filters the union of all sequences. Frames whose tip
/// lies in an exclusion rectangle are dropped first. Each sequence
/// contributes its own pairs followed by those of its mirror.
pub fn build_regression_set(
    frames: &[Vec<TrackedFrame>],
    noisy: &[Vec<TrackedFrame>],
    generic: &[Vec<TrackedFrame>],
    cfg: &AugmentConfig,
) -> Result<Vec<RegressionVector>> {
    cfg.validate()?;
    let all: Vec<&Vec<TrackedFrame>> = frames.iter().chain(noisy).chain(generic).collect();
    if all.iter().all(|s| s.len() < 2) {
        return Err(Error::Empty("every sequence has fewer than 2 frames".into()));
    }
    let mut pairs = Vec::new();
    for seq in all {
        let kept: Vec<TrackedFrame> = seq
            .iter()
            .filter(|f| !cfg.exclusions.iter().any(|r| r.contains(f.stem.tip())))
            .copied()
            .collect();
        let mirrored: Vec<TrackedFrame> = kept.iter().map(|f| f.mirrored()).collect();
        pairs.extend(pair_sequence(&kept));
        pairs.extend(pair_sequence(&mirrored));
    }
    pairs.retain(|v| v.current != v.next);
    Ok(jump_filter(pairs, cfg.jump_factor))
}

/// Drops vectors whose mean absolute change exceeds `factor` times the mean
/// over all vectors.
pub fn jump_filter(pairs: Vec<RegressionVector>, factor: f64) -> Vec<RegressionVector> {
    if pairs.is_empty() {
        return pairs;
    }
    let mean = pairs.iter().map(|v| v.mean_abs_change()).sum::<f64>() / pairs.len() as f64;
    let limit = factor * mean;
    pairs.into_iter().filter(|v| v.mean_abs_change() <= limit).collect()
}

/// Full augmentation of tracked source sequences into regression vectors.
pub fn augment(sources: &[Vec<TrackedFrame>], cfg: &AugmentConfig, seed: u64) -> Result<Vec<RegressionVector>> {
    cfg.validate()?;
    let mut noisy = Vec::new();
    for n in 0..cfg.n_noisy {
        noisy.extend(make_noisy_sequences(sources, cfg, derive_seed(seed, "noisy", n as u64))?);
    }
    let generic = if cfg.generic_indices.is_empty() {
        Vec::new()
    } else {
        generic_translations(sources, cfg)?
    };
    build_regression_set(sources, &noisy, &generic, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LightCondition;

    fn frame(t: u64, light: LightCondition, tip: Point2) -> TrackedFrame {
        TrackedFrame {
            t,
            light,
            stem: StemPolyline::straight(Point2::ORIGIN, tip),
        }
    }

    #[test]
    fn identical_neighbours_have_zero_spread() {
        let mut frames: Vec<TrackedFrame> = (0..5).map(|t| frame(t, LightCondition::Left, Point2::new(1.0, 2.0))).collect();
        frames.push(frame(5, LightCondition::Left, Point2::new(4.0, 4.0)));
        let s = tip_neighborhood(&frames, 5, 5).unwrap();
        assert_eq!((s.mu_x, s.mu_y, s.sigma_x, s.sigma_y), (1.0, 2.0, 0.0, 0.0));
    }

    #[test]
    fn two_point_variance() {
        let frames = vec![
            frame(0, LightCondition::Right, Point2::new(1.0, 5.0)),
            frame(1, LightCondition::Right, Point2::new(0.0, 5.0)),
            frame(2, LightCondition::Right, Point2::new(2.0, 5.0)),
            frame(3, LightCondition::Left, Point2::new(1.0, 5.0)),
        ];
        let s = tip_neighborhood(&frames, 0, 2).unwrap();
        assert_eq!(s.mu_x, 1.0);
        assert_eq!(s.sigma_x, 1.0);
        assert_eq!(s.sigma_y, 0.0);
    }

    #[test]
    fn small_pools_use_every_neighbour() {
        let frames = vec![
            frame(0, LightCondition::Left, Point2::new(0.0, 1.0)),
            frame(1, LightCondition::Left, Point2::new(3.0, 1.0)),
        ];
        let s = tip_neighborhood(&frames, 0, 100).unwrap();
        assert_eq!(s.mu_x, 3.0);
        let lonely = vec![frame(0, LightCondition::Left, Point2::new(0.0, 1.0))];
        assert!(matches!(tip_neighborhood(&lonely, 0, 3), Err(Error::Empty(_))));
    }

    #[test]
    fn uniform_tips_shift_by_mean_offset_only() {
        // every other frame shares one tip, so sigma = 0 and the noisy tip
        // lands exactly on the neighbourhood mean
        let frames: Vec<TrackedFrame> = (0..6)
            .map(|t| frame(t, LightCondition::Left, Point2::new(1.0, 3.0)))
            .collect();
        let cfg = AugmentConfig::default();
        let noisy = make_noisy_sequences(&[frames.clone()], &cfg, 1).unwrap();
        assert_eq!(noisy[0], frames);
    }

    #[test]
    fn zero_omega_is_deterministic_displacement() {
        let frames: Vec<TrackedFrame> = (0..8)
            .map(|t| frame(t, LightCondition::Left, Point2::new(t as f64 * 0.5, 2.0 + t as f64)))
            .collect();
        let cfg = AugmentConfig {
            omega: 0.0,
            theta3: 2,
            ..AugmentConfig::default()
        };
        let a = make_noisy_sequences(&[frames.clone()], &cfg, 1).unwrap();
        let b = make_noisy_sequences(&[frames.clone()], &cfg, 2).unwrap();
        assert_eq!(a, b);
        let ratios = extent_ratios(&frames);
        for (f, n) in frames.iter().zip(&a[0]) {
            let dtip = n.stem.tip() - f.stem.tip();
            for k in 1..STEM_POINTS - 1 {
                let p = f.stem.points()[k];
                let q = n.stem.points()[k];
                assert_eq!(q.x, p.x + dtip.x * ratios[k][0]);
                assert_eq!(q.y, p.y + dtip.y * ratios[k][1]);
            }
            assert_eq!(n.stem.anchor(), f.stem.anchor());
        }
    }

    #[test]
    fn noisy_sequences_reproduce() {
        let frames: Vec<TrackedFrame> = (0..30)
            .map(|t| frame(t, if t % 4 < 2 { LightCondition::Left } else { LightCondition::Right }, Point2::new((t as f64).sin(), 1.0 + 0.3 * t as f64)))
            .collect();
        let cfg = AugmentConfig {
            theta3: 5,
            ..AugmentConfig::default()
        };
        let a = make_noisy_sequences(&[frames.clone()], &cfg, 9).unwrap();
        assert_eq!(a, make_noisy_sequences(&[frames.clone()], &cfg, 9).unwrap());
        assert_ne!(a, make_noisy_sequences(&[frames], &cfg, 10).unwrap());
    }

    #[test]
    fn sixty_four_translations() {
        let offs = translation_offsets(&[-3, -4, -5, -6]);
        assert_eq!(offs.len(), 64);
        let mags = [1e-3, 1e-4, 1e-5, 1e-6];
        for o in &offs {
            assert!(mags.contains(&o.x.abs()) && mags.contains(&o.y.abs()));
        }
        let mut uniq: Vec<(u64, u64)> = offs.iter().map(|o| (o.x.to_bits(), o.y.to_bits())).collect();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 64);

        let f = frame(3, LightCondition::Left, Point2::new(2.0, 8.0));
        let cfg = AugmentConfig {
            generic_indices: vec![0],
            ..AugmentConfig::default()
        };
        let out = generic_translations(&[vec![f]], &cfg).unwrap();
        assert_eq!(out.len(), 64);
        for (seq, off) in out.iter().zip(&offs) {
            assert_eq!(seq.len(), 1);
            for (p, q) in f.stem.points().iter().zip(seq[0].stem.points()) {
                assert_eq!(*q, *p + *off);
            }
        }
        assert!(generic_translations(&[vec![f]], &AugmentConfig::default()).is_err());
    }

    #[test]
    fn static_plant_yields_nothing() {
        let frames: Vec<TrackedFrame> = (0..10).map(|t| frame(t, LightCondition::Left, Point2::new(0.0, 4.0))).collect();
        let out = build_regression_set(&[frames], &[], &[], &AugmentConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn outlier_pair_is_dropped_with_its_mirror() {
        let mut frames: Vec<TrackedFrame> = (0..40)
            .map(|t| frame(t, LightCondition::Left, Point2::new(0.01 * t as f64, 2.0 + 0.01 * t as f64)))
            .collect();
        // one step about 28 times the mean change (the mean includes it)
        for f in frames.iter_mut().skip(20) {
            f.stem = f.stem.translate(Point2::new(1.0, 0.0));
        }
        let cfg = AugmentConfig::default();
        let out = build_regression_set(&[frames.clone()], &[], &[], &cfg).unwrap();
        assert_eq!(out.len(), 2 * 38);
        let jump = RegressionVector {
            current: frames[19].stem.coords(),
            next: frames[20].stem.coords(),
            light: LightCondition::Left,
        };
        assert!(!out.contains(&jump));
        assert!(!out.contains(&jump.mirrored()));
        for v in &out {
            assert!(out.contains(&v.mirrored()));
            assert_ne!(v.current, v.next);
        }
    }

    #[test]
    fn gaps_and_exclusions_break_pairs() {
        let frames: Vec<TrackedFrame> = [0u64, 1, 2, 5, 6]
            .iter()
            .map(|&t| frame(t, LightCondition::Right, Point2::new(0.1 * t as f64, 1.0 + t as f64)))
            .collect();
        assert_eq!(pair_sequence(&frames).len(), 3);
        let cfg = AugmentConfig {
            exclusions: vec![ExclusionRect {
                min: Point2::new(0.05, 0.0),
                max: Point2::new(0.15, 10.0),
            }],
            ..AugmentConfig::default()
        };
        let out = build_regression_set(&[frames], &[], &[], &cfg).unwrap();
        // frame t = 1 is excluded, leaving pairs 5->6 only (and its mirror)
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn auto_selection_prefers_smooth_stretches() {
        let frames: Vec<TrackedFrame> = (0..20)
            .map(|t| {
                let wobble = if t >= 10 { 0.5 * (t % 2) as f64 } else { 0.0 };
                frame(t, LightCondition::Left, Point2::new(wobble, 1.0 + 0.1 * t as f64))
            })
            .collect();
        let idx = auto_generic_indices(&[frames], 5);
        assert_eq!(idx.len(), 5);
        assert!(idx.iter().all(|&i| i < 10));
    }
}
