//! Line-oriented text files for frames and regression vectors.
//!
//! Frame records are `t light x0 y0 .. x9 y9`; regression records are
//! `light c1 .. c18 n1 .. n18`. Both start with a `#` header line. Numbers
//! use the shortest decimal form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{LightCondition, Point2, RegressionVector, StemPolyline, TrackedFrame, STEM_COORDS, STEM_POINTS};

pub const FRAMES_HEADER: &str = "# stemflow frames v1: t light x0 y0 x1 y1 x2 y2 x3 y3 x4 y4 x5 y5 x6 y6 x7 y7 x8 y8 x9 y9";
pub const REGRESSION_HEADER: &str = "# stemflow regression v1: light c1..c18 n1..n18";

pub fn serialize_frames(frames: &[TrackedFrame]) -> String {
    let mut out = String::with_capacity(64 + frames.len() * 400);
    out.push_str(FRAMES_HEADER);
    out.push('\n');
    for f in frames {
        write!(out, "{} {}", f.t, f.light).unwrap();
        for p in f.stem.points() {
            write!(out, " {} {}", p.x, p.y).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_frames<W: Write>(mut w: W, frames: &[TrackedFrame]) -> std::io::Result<()> {
    w.write_all(serialize_frames(frames).as_bytes())
}

pub fn parse_frames<R: BufRead>(reader: R) -> Result<Vec<TrackedFrame>> {
    let mut frames: Vec<TrackedFrame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 + 2 * STEM_POINTS {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", 2 + 2 * STEM_POINTS, fields.len()),
            ));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad timestep `{}`", fields[0])))?;
        let light = parse_light(fields[1], lineno)?;
        let mut pts = [Point2::ORIGIN; STEM_POINTS];
        for (k, p) in pts.iter_mut().enumerate() {
            p.x = parse_f64(fields[2 + 2 * k], lineno)?;
            p.y = parse_f64(fields[3 + 2 * k], lineno)?;
        }
        let stem = StemPolyline::from_array(pts).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if let Some(prev) = frames.last() {
            if t <= prev.t {
                return Err(Error::parse(lineno, format!("timestep {t} not after {}", prev.t)));
            }
        }
        frames.push(TrackedFrame { t, light, stem });
    }
    Ok(frames)
}

pub fn deserialize_frames(text: &str) -> Result<Vec<TrackedFrame>> {
    parse_frames(text.as_bytes())
}

pub fn serialize_regression(vectors: &[RegressionVector]) -> String {
    let mut out = String::with_capacity(64 + vectors.len() * 700);
    out.push_str(REGRESSION_HEADER);
    out.push('\n');
    for v in vectors {
        out.push(v.light.symbol());
        for c in v.current.iter().chain(&v.next) {
            write!(out, " {c}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_regression<R: BufRead>(reader: R) -> Result<Vec<RegressionVector>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 1 + 2 * STEM_COORDS {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", 1 + 2 * STEM_COORDS, fields.len()),
            ));
        }
        let light = parse_light(fields[0], lineno)?;
        let mut current = [0.0; STEM_COORDS];
        let mut next = [0.0; STEM_COORDS];
        for k in 0..STEM_COORDS {
            current[k] = parse_f64(fields[1 + k], lineno)?;
            next[k] = parse_f64(fields[1 + STEM_COORDS + k], lineno)?;
        }
        out.push(RegressionVector { current, next, light });
    }
    Ok(out)
}

pub fn read_frames_file(path: &Path) -> Result<Vec<TrackedFrame>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_frames(std::io::BufReader::new(f))
}

pub fn read_regression_file(path: &Path) -> Result<Vec<RegressionVector>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_regression(std::io::BufReader::new(f))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_light(s: &str, line: usize) -> Result<LightCondition> {
    match s {
        "L" => Ok(LightCondition::Left),
        "R" => Ok(LightCondition::Right),
        _ => Err(Error::parse(line, format!("bad light `{s}` (expected L or R)"))),
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite number `{s}`")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_sequence_is_header_only() {
        let text = serialize_frames(&[]);
        assert_eq!(text, format!("{FRAMES_HEADER}\n"));
        assert!(deserialize_frames(&text).unwrap().is_empty());
    }

    #[test]
    fn single_frame_round_trip() {
        let f = TrackedFrame {
            t: 0,
            light: LightCondition::Left,
            stem: StemPolyline::vertical(9.0),
        };
        let text = serialize_frames(&[f]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(deserialize_frames(&text).unwrap(), vec![f]);
    }

    #[test]
    fn malformed_record_reports_line() {
        let mut text = serialize_frames(&[TrackedFrame {
            t: 3,
            light: LightCondition::Right,
            stem: StemPolyline::vertical(2.0),
        }]);
        text.push_str("4 R 0 0 1\n");
        match deserialize_frames(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match deserialize_frames("# h\n1 Q 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_increasing_timestep_rejected() {
        let f = TrackedFrame {
            t: 5,
            light: LightCondition::Left,
            stem: StemPolyline::vertical(1.0),
        };
        let text = serialize_frames(&[f, f]);
        assert!(deserialize_frames(&text).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            -1e3..1e3f64,
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn frames_round_trip_exactly(vals in proptest::collection::vec(finite(), 20), t in 0u64..1_000_000, left in any::<bool>()) {
            let pts: Vec<Point2> = vals.chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
            let f = TrackedFrame {
                t,
                light: if left { LightCondition::Left } else { LightCondition::Right },
                stem: StemPolyline::new(pts).unwrap(),
            };
            let text = serialize_frames(&[f]);
            let back = deserialize_frames(&text).unwrap();
            prop_assert_eq!(&back, &vec![f]);
            prop_assert_eq!(serialize_frames(&back), text);
        }

        #[test]
        fn regression_round_trip_exactly(vals in proptest::collection::vec(finite(), 36)) {
            let mut v = RegressionVector { current: [0.0; 18], next: [0.0; 18], light: LightCondition::Right };
            v.current.copy_from_slice(&vals[..18]);
            v.next.copy_from_slice(&vals[18..]);
            let text = serialize_regression(&[v]);
            prop_assert_eq!(parse_regression(text.as_bytes()).unwrap(), vec![v]);
        }
    }
}
