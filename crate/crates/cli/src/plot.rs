//! SVG figures: azimuth/elevation trajectories per class, and classwise MAE
//! bars where a class without any correctly localized source is marked with
//! a cross.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use derivdoa::metrics::ClassMae;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    /// (frame, azimuth, elevation) in degrees.
    pub points: Vec<(usize, f64, f64)>,
}

const WIDTH: f64 = 820.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Panel {
    top: f64,
    height: f64,
    lo: f64,
    hi: f64,
    frames: f64,
}

impl Panel {
    fn x(&self, frame: f64) -> f64 {
        LEFT + (WIDTH - LEFT - RIGHT) * frame / self.frames.max(1.0)
    }

    fn y(&self, v: f64) -> f64 {
        self.top + self.height * (self.hi - v) / (self.hi - self.lo)
    }

    fn axes(&self, out: &mut String, label: &str, ticks: &[f64]) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            self.top,
            x1 - x0,
            self.height
        );
        for &t in ticks {
            let y = self.y(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{t}</text>"##,
                x0 - 4.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{label}</text>"#,
            self.top + self.height / 2.0,
            self.top + self.height / 2.0
        );
    }
}

/// Azimuth (top) and elevation (bottom) against label frame.
pub fn trajectory_svg(title: &str, frame_count: usize, series: &[Series]) -> String {
    let mut out = String::new();
    let height = 520.0;
    header(&mut out, height, title);
    let frames = frame_count as f64;
    let az = Panel {
        top: 40.0,
        height: 190.0,
        lo: -180.0,
        hi: 180.0,
        frames,
    };
    let el = Panel {
        top: 260.0,
        height: 190.0,
        lo: -90.0,
        hi: 90.0,
        frames,
    };
    az.axes(
        &mut out,
        "azimuth (deg)",
        &[-180.0, -90.0, 0.0, 90.0, 180.0],
    );
    el.axes(
        &mut out,
        "elevation (deg)",
        &[-90.0, -45.0, 0.0, 45.0, 90.0],
    );
    let step = (frame_count / 10).max(1);
    for f in (0..=frame_count).step_by(step) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{f}</text>"#,
            el.x(f as f64),
            el.top + el.height + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">frame</text>"#,
        WIDTH / 2.0,
        el.top + el.height + 30.0
    );
    for (i, s) in series.iter().enumerate() {
        let r = if i == 0 { 2.0 } else { 1.3 };
        let _ = writeln!(out, r#"<g fill="{}">"#, s.color);
        for &(f, a, e) in &s.points {
            let x = az.x(f as f64);
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="{r}"/><circle cx="{x:.2}" cy="{:.2}" r="{r}"/>"#,
                az.y(a),
                el.y(e)
            );
        }
        let _ = writeln!(out, "</g>");
        let lx = LEFT + 120.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{lx}" cy="{}" r="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            height - 16.0,
            s.color,
            lx + 8.0,
            height - 12.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct MaeSeries<'a> {
    pub name: &'a str,
    pub color: &'static str,
    pub mae: &'a BTreeMap<usize, ClassMae>,
}

/// Grouped bars of classwise MAE; a cross marks NOT_DETECTED.
pub fn mae_bar_svg(title: &str, models: &[MaeSeries]) -> String {
    let classes: BTreeSet<usize> = models.iter().flat_map(|m| m.mae.keys().copied()).collect();
    let max = models
        .iter()
        .flat_map(|m| m.mae.values().filter_map(|v| v.degrees()))
        .fold(1.0f64, f64::max);
    let hi = (max / 5.0).ceil() * 5.0;
    let mut out = String::new();
    let height = 360.0;
    header(&mut out, height, title);
    let panel = Panel {
        top: 40.0,
        height: 250.0,
        lo: 0.0,
        hi,
        frames: classes.len().max(1) as f64,
    };
    let ticks: Vec<f64> = (0..=4).map(|i| hi * i as f64 / 4.0).collect();
    panel.axes(&mut out, "MAE (deg)", &ticks);
    let slot = (WIDTH - LEFT - RIGHT) / classes.len().max(1) as f64;
    let bar = slot * 0.7 / models.len().max(1) as f64;
    let base = panel.y(0.0);
    for (ci, class) in classes.iter().enumerate() {
        let x0 = panel.x(ci as f64) + slot * 0.15;
        for (mi, m) in models.iter().enumerate() {
            let x = x0 + bar * mi as f64;
            match m.mae.get(class) {
                Some(ClassMae::Degrees(v)) => {
                    let y = panel.y(*v);
                    let _ = writeln!(
                        out,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                        base - y,
                        m.color
                    );
                }
                Some(ClassMae::NotDetected) => {
                    let _ = writeln!(
                        out,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="16" fill="{}">&#215;</text>"#,
                        x + bar / 2.0,
                        base - 4.0,
                        m.color
                    );
                }
                None => {}
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{class}</text>"#,
            panel.x(ci as f64) + slot / 2.0,
            base + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">class</text>"#,
        WIDTH / 2.0,
        base + 30.0
    );
    for (i, m) in models.iter().enumerate() {
        let lx = LEFT + 120.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            height - 22.0,
            m.color,
            lx + 14.0,
            height - 13.0,
            escape(m.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_for_undetected_class() {
        let mae: BTreeMap<usize, ClassMae> =
            [(0, ClassMae::Degrees(4.0)), (3, ClassMae::NotDetected)].into();
        let svg = mae_bar_svg(
            "t",
            &[MaeSeries {
                name: "fused",
                color: "#1f77b4",
                mae: &mae,
            }],
        );
        assert_eq!(svg.matches("&#215;").count(), 1);
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn one_marker_pair_per_point() {
        let s = Series {
            name: "truth".into(),
            color: "black",
            points: vec![(0, 10.0, 5.0), (1, 12.0, 5.0)],
        };
        let svg = trajectory_svg("rec class 0", 10, &[s]);
        assert_eq!(svg.matches("<circle").count(), 2 * 2 + 1);
    }
}
