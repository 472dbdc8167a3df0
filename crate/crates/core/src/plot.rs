//! SVG overlays of stem trajectories, obstacles and targets.

use std::fmt::Write as _;

use crate::geom::{LightCondition, Point2, Scenario, StemPolyline, TrackedFrame};
use crate::task::RolloutTrace;

const PX_PER_CM: f64 = 20.0;
const MARGIN_CM: f64 = 2.0;
const TRACE_COLORS: [&str; 6] = ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#2c3e50"];

/// Plot window in centimetres with y pointing up.
struct Canvas {
    min: Point2,
    max: Point2,
    body: String,
}

impl Canvas {
    fn fit<'a>(points: impl Iterator<Item = &'a Point2>, scenario: Option<&Scenario>) -> Canvas {
        let mut min = Point2::new(-5.0, 0.0);
        let mut max = Point2::new(5.0, 5.0);
        let mut grow = |p: Point2| {
            min = Point2::new(min.x.min(p.x), min.y.min(p.y));
            max = Point2::new(max.x.max(p.x), max.y.max(p.y));
        };
        for p in points {
            grow(*p);
        }
        if let Some(s) = scenario {
            grow(Point2::new(s.target.x - s.target_radius, s.target.y - s.target_radius));
            grow(Point2::new(s.target.x + s.target_radius, s.target.y + s.target_radius));
            for o in &s.obstacles {
                grow(o.min());
                grow(o.max());
            }
        }
        Canvas {
            min: Point2::new(min.x - MARGIN_CM, min.y - MARGIN_CM),
            max: Point2::new(max.x + MARGIN_CM, max.y + MARGIN_CM),
            body: String::new(),
        }
    }

    fn px(&self, p: Point2) -> (f64, f64) {
        ((p.x - self.min.x) * PX_PER_CM, (self.max.y - p.y) * PX_PER_CM)
    }

    fn size(&self) -> (f64, f64) {
        ((self.max.x - self.min.x) * PX_PER_CM, (self.max.y - self.min.y) * PX_PER_CM)
    }

    fn polyline(&mut self, pts: &[Point2], stroke: &str, width: f64, opacity: f64) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}" stroke-linejoin="round"/>"#,
            coords.join(" ")
        )
        .unwrap();
    }

    fn scenario(&mut self, s: &Scenario) {
        for o in &s.obstacles {
            let (x, y) = self.px(Point2::new(o.min().x, o.max().y));
            writeln!(
                self.body,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#7f8c8d" fill-opacity="0.6"/>"##,
                o.width * PX_PER_CM,
                o.height * PX_PER_CM
            )
            .unwrap();
        }
        let (cx, cy) = self.px(s.target);
        writeln!(
            self.body,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="#e67e22" stroke-width="2" stroke-dasharray="6 4"/>"##,
            s.target_radius * PX_PER_CM
        )
        .unwrap();
        writeln!(self.body, r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="#e67e22"/>"##).unwrap();
    }

    fn text(&mut self, row: usize, color: &str, s: &str) {
        writeln!(
            self.body,
            r#"<text x="8" y="{}" font-family="sans-serif" font-size="13" fill="{color}">{}</text>"#,
            18 + 16 * row,
            escape(s)
        )
        .unwrap();
    }

    fn finish(self) -> String {
        let (w, h) = self.size();
        let (_, ground) = self.px(Point2::ORIGIN);
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r##"<line x1="0" y1="{ground:.2}" x2="{w:.2}" y2="{ground:.2}" stroke="#6d4c41" stroke-width="2"/>"##
        )
        .unwrap();
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn snapshots(stems: &[StemPolyline], every: usize) -> impl Iterator<Item = &StemPolyline> {
    stems.iter().step_by(every.max(1))
}

/// Overlays rollouts in one scenario: faint stems every `every` steps,
/// the tip path split by light side, and the final stem.
pub fn traces_svg(traces: &[(&str, &RolloutTrace)], scenario: &Scenario, title: &str, every: usize) -> String {
    let all: Vec<Point2> = traces
        .iter()
        .flat_map(|(_, t)| t.steps.iter().flat_map(|s| s.stem.points().iter().copied()))
        .collect();
    let mut c = Canvas::fit(all.iter(), Some(scenario));
    c.scenario(scenario);
    c.text(0, "#000000", title);
    for (k, (label, trace)) in traces.iter().enumerate() {
        let color = TRACE_COLORS[k % TRACE_COLORS.len()];
        let stems: Vec<StemPolyline> = std::iter::once(trace.initial)
            .chain(trace.steps.iter().map(|s| s.stem))
            .collect();
        for s in snapshots(&stems, every) {
            c.polyline(s.points(), color, 1.0, 0.25);
        }
        // tip path, one polyline per run of equal light
        let tips = trace.tips();
        let mut start = 0;
        for i in 1..=trace.steps.len() {
            let light = trace.steps[i - 1].light;
            let ends = i == trace.steps.len() || trace.steps[i].light != light;
            if ends {
                let opacity = if light == LightCondition::Left { 1.0 } else { 0.55 };
                c.polyline(&tips[start..=i], color, 2.5, opacity);
                start = i;
            }
        }
        c.polyline(stems.last().expect("initial stem").points(), color, 3.0, 1.0);
        c.text(
            k + 1,
            color,
            &format!("{label}: fitness {:.3}, {} steps, {}", trace.fitness, trace.steps.len(), trace.cause.name()),
        );
    }
    c.finish()
}

/// Stems of a frame sequence every `every` frames, coloured by light side.
pub fn frames_svg(frames: &[TrackedFrame], title: &str, every: usize) -> String {
    let all: Vec<Point2> = frames.iter().flat_map(|f| f.stem.points().iter().copied()).collect();
    let mut c = Canvas::fit(all.iter(), None);
    c.text(0, "#000000", title);
    for f in frames.iter().step_by(every.max(1)) {
        let color = match f.light {
            LightCondition::Left => TRACE_COLORS[0],
            LightCondition::Right => TRACE_COLORS[1],
        };
        c.polyline(f.stem.points(), color, 1.2, 0.5);
    }
    let tips: Vec<Point2> = frames.iter().map(|f| f.stem.tip()).collect();
    if tips.len() > 1 {
        c.polyline(&tips, "#000000", 1.5, 0.8);
    }
    c.text(1, TRACE_COLORS[0], "left light");
    c.text(2, TRACE_COLORS[1], "right light");
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Obstacle;
    use crate::task::{TerminalCause, TraceStep};

    fn scenario() -> Scenario {
        Scenario::new(
            Point2::new(-5.0, 18.0),
            2.0,
            vec![Obstacle::new(Point2::new(-6.0, 9.0), 7.0, 3.0).unwrap()],
        )
        .unwrap()
    }

    fn trace() -> RolloutTrace {
        let steps = (1..=20)
            .map(|k| TraceStep {
                light: if k < 10 { LightCondition::Right } else { LightCondition::Left },
                control: 0.5,
                stem: StemPolyline::straight(Point2::ORIGIN, Point2::new(0.1 * k as f64, 1.0 + k as f64)),
            })
            .collect();
        RolloutTrace {
            initial: StemPolyline::vertical(1.0),
            steps,
            cause: TerminalCause::StepCap,
            fitness: 0.5,
        }
    }

    #[test]
    fn svg_has_scenario_and_stems() {
        let svg = traces_svg(&[("run <1>", &trace())], &scenario(), "left:1", 5);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("run &lt;1&gt;"));
        // 5 snapshots, two light runs, final stem
        assert_eq!(svg.matches("<polyline").count(), 5 + 2 + 1);
    }

    #[test]
    fn output_is_deterministic() {
        let a = traces_svg(&[("a", &trace())], &scenario(), "t", 3);
        let b = traces_svg(&[("a", &trace())], &scenario(), "t", 3);
        assert_eq!(a, b);
    }

    #[test]
    fn obstacle_lands_inside_canvas() {
        let svg = traces_svg(&[("a", &trace())], &scenario(), "t", 100);
        let t = trace();
        let pts: Vec<Point2> = t.steps.iter().flat_map(|s| s.stem.points().iter().copied()).collect();
        let c = Canvas::fit(pts.iter(), Some(&scenario()));
        let (w, h) = c.size();
        let (x, y) = c.px(Point2::new(-9.5, 10.5));
        assert!(x >= 0.0 && x <= w && y >= 0.0 && y <= h);
        assert!(svg.contains(&format!(r#"x="{x:.2}" y="{y:.2}""#)));
    }

    #[test]
    fn frames_plot() {
        let frames: Vec<TrackedFrame> = (0..10)
            .map(|t| TrackedFrame {
                t,
                light: if t % 2 == 0 { LightCondition::Left } else { LightCondition::Right },
                stem: StemPolyline::vertical(1.0 + t as f64),
            })
            .collect();
        let svg = frames_svg(&frames, "seq", 2);
        assert_eq!(svg.matches("<polyline").count(), 5 + 1);
    }
}
