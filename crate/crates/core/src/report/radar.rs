use std::f64::consts::PI;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::profiles::RadarProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarLayout {
    /// Side of one square panel, in pixels.
    pub panel_size: f64,
    pub columns: usize,
    /// Percent values above this are drawn at the cap and marked.
    pub radial_cap_percent: f64,
    /// Grid rings, in percent. The 100% ring is always drawn.
    pub grid_percents: Vec<f64>,
}

impl Default for RadarLayout {
    fn default() -> Self {
        RadarLayout {
            panel_size: 280.0,
            columns: 4,
            radial_cap_percent: 300.0,
            grid_percents: vec![200.0, 300.0],
        }
    }
}

impl RadarLayout {
    pub fn validate(&self) -> Result<()> {
        if !self.panel_size.is_finite() || self.panel_size <= 0.0 || self.columns == 0 {
            return Err(Error::config(
                "report: panel_size and columns must be positive",
            ));
        }
        if !(self.radial_cap_percent > 100.0 && self.radial_cap_percent.is_finite()) {
            return Err(Error::config(
                "report.radial_cap_percent must be a finite value above 100",
            ));
        }
        Ok(())
    }

    fn centre(&self) -> f64 {
        self.panel_size / 2.0
    }

    fn outer_radius(&self) -> f64 {
        self.panel_size * 0.32
    }

    pub fn radius(&self, percent: f64) -> f64 {
        percent.clamp(0.0, self.radial_cap_percent) / self.radial_cap_percent * self.outer_radius()
    }

    /// Panel-local coordinates of `percent` on axis `i` of `m`; axis 0 points up.
    pub fn point(&self, i: usize, m: usize, percent: f64) -> (f64, f64) {
        let angle = -PI / 2.0 + 2.0 * PI * i as f64 / m as f64;
        let r = self.radius(percent);
        (
            self.centre() + r * angle.cos(),
            self.centre() + r * angle.sin(),
        )
    }
}

/// Placement of one profile vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub axis: usize,
    /// `None` for axes whose population mean is zero.
    pub percent: Option<f64>,
    pub radius: f64,
    pub x: f64,
    pub y: f64,
    pub capped: bool,
}

pub fn profile_vertices(profile: &RadarProfile, layout: &RadarLayout) -> Vec<Vertex> {
    let m = profile.axes.len();
    profile
        .axes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let pct = a.percent.unwrap_or(0.0);
            let (x, y) = layout.point(i, m, pct);
            Vertex {
                axis: i,
                percent: a.percent,
                radius: layout.radius(pct),
                x,
                y,
                capped: a.percent.is_some_and(|p| p > layout.radial_cap_percent),
            }
        })
        .collect()
}

fn fmt_points(points: impl Iterator<Item = (f64, f64)>) -> String {
    points
        .map(|(x, y)| format!("{x:.3},{y:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn ring(layout: &RadarLayout, m: usize, percent: f64) -> String {
    fmt_points((0..m).map(|i| layout.point(i, m, percent)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one small-multiple panel per cluster for a single category.
///
/// Output depends only on the inputs: no timestamps, fixed element order,
/// three-decimal coordinates.
pub fn render_radar(profiles: &[RadarProfile], layout: &RadarLayout) -> Result<String> {
    layout.validate()?;
    let Some(first) = profiles.first() else {
        return Err(Error::data("no cluster profiles to render"));
    };
    let m = first.axes.len();
    if m < 3 {
        return Err(Error::data(format!(
            "{}: a radar chart needs at least 3 features, got {m}; \
             plot profiles_{}.csv as a bar chart instead",
            first.category, first.category
        )));
    }
    if profiles
        .iter()
        .any(|p| p.axes.len() != m || p.category != first.category)
    {
        return Err(Error::data("profiles disagree on category or axes"));
    }

    let total: usize = profiles.iter().map(|p| p.size).sum();
    let size = layout.panel_size;
    let cols = layout.columns.min(profiles.len());
    let rows = profiles.len().div_ceil(cols);
    let header = 28.0;
    let (width, height) = (cols as f64 * size, rows as f64 * size + header);

    let mut svg = String::new();
    let w = &mut svg;
    // Writing into a String cannot fail.
    let _ = writeln!(
        w,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"##
    );
    let _ = writeln!(
        w,
        "<style>.grid{{fill:none;stroke:#ccc;stroke-width:0.8}}.ref-ring{{fill:none;stroke:#555;stroke-width:1.2;stroke-dasharray:4 3}}\
         .axis{{stroke:#bbb;stroke-width:0.8}}.profile{{fill:#3a78c2;fill-opacity:0.3;stroke:#1f4e8c;stroke-width:1.6}}\
         .profile.gapped{{fill:none}}.overflow{{fill:#d62728}}.label{{font-size:10px;fill:#333}}.na{{font-size:10px;fill:#999}}\
         .title{{font-size:12px;font-weight:bold;fill:#111}}</style>"
    );
    let _ = writeln!(
        w,
        r##"<text class="title" x="8" y="18">{} clusters: mean as % of population mean (ring = 100%, cap {}%)</text>"##,
        first.category, layout.radial_cap_percent
    );

    for (idx, profile) in profiles.iter().enumerate() {
        let (px, py) = (
            (idx % cols) as f64 * size,
            (idx / cols) as f64 * size + header,
        );
        let share = if total > 0 {
            100.0 * profile.size as f64 / total as f64
        } else {
            0.0
        };
        let _ = writeln!(
            w,
            r##"<g class="panel" id="cluster-{}" transform="translate({px:.3},{py:.3})">"##,
            profile.cluster
        );
        let _ = writeln!(
            w,
            r##"<text class="title" x="{:.3}" y="16" text-anchor="middle">Cluster {} (n={}, {share:.1}%)</text>"##,
            size / 2.0,
            profile.cluster,
            profile.size
        );
        for g in &layout.grid_percents {
            if *g != 100.0 && *g <= layout.radial_cap_percent {
                let _ = writeln!(
                    w,
                    r##"<polygon class="grid" points="{}"/>"##,
                    ring(layout, m, *g)
                );
            }
        }
        let _ = writeln!(
            w,
            r##"<polygon class="ref-ring" points="{}"/>"##,
            ring(layout, m, 100.0)
        );

        for (i, axis) in profile.axes.iter().enumerate() {
            let (cx, cy) = layout.point(i, m, 0.0);
            let (ex, ey) = layout.point(i, m, layout.radial_cap_percent);
            let _ = writeln!(
                w,
                r##"<line class="axis" x1="{cx:.3}" y1="{cy:.3}" x2="{ex:.3}" y2="{ey:.3}"/>"##
            );
            let angle = -PI / 2.0 + 2.0 * PI * i as f64 / m as f64;
            let lr = layout.outer_radius() + 14.0;
            let (lx, ly) = (
                layout.centre() + lr * angle.cos(),
                layout.centre() + lr * angle.sin() + 3.0,
            );
            let anchor = if angle.cos().abs() < 1e-9 {
                "middle"
            } else if angle.cos() > 0.0 {
                "start"
            } else {
                "end"
            };
            match axis.percent {
                Some(p) => {
                    let _ = writeln!(
                        w,
                        r##"<text class="label" x="{lx:.3}" y="{ly:.3}" text-anchor="{anchor}">{} ({p:.0}%)</text>"##,
                        escape(&axis.feature)
                    );
                }
                None => {
                    let _ = writeln!(
                        w,
                        r##"<text class="label na" x="{lx:.3}" y="{ly:.3}" text-anchor="{anchor}">{} (n/a: population mean 0)</text>"##,
                        escape(&axis.feature)
                    );
                }
            }
        }

        let vertices = profile_vertices(profile, layout);
        if vertices.iter().all(|v| v.percent.is_some()) {
            let _ = writeln!(
                w,
                r##"<polygon class="profile" points="{}"/>"##,
                fmt_points(vertices.iter().map(|v| (v.x, v.y)))
            );
        } else {
            // Break the outline at axes without a defined percentage.
            let start = vertices
                .iter()
                .position(|v| v.percent.is_none())
                .unwrap_or(0);
            let mut d = String::new();
            let mut pen_down = false;
            for k in 1..=m {
                let v = &vertices[(start + k) % m];
                if v.percent.is_none() {
                    pen_down = false;
                    continue;
                }
                let _ = write!(
                    d,
                    "{}{:.3},{:.3} ",
                    if pen_down { "L" } else { "M" },
                    v.x,
                    v.y
                );
                pen_down = true;
            }
            let _ = writeln!(
                w,
                r##"<path class="profile gapped" d="{}"/>"##,
                d.trim_end()
            );
        }
        for v in vertices.iter().filter(|v| v.capped) {
            let _ = writeln!(
                w,
                r##"<circle class="overflow" cx="{:.3}" cy="{:.3}" r="4"><title>{}: {:.1}% (beyond {}% cap)</title></circle>"##,
                v.x,
                v.y,
                escape(&profile.axes[v.axis].feature),
                v.percent.unwrap_or(0.0),
                layout.radial_cap_percent
            );
        }
        let _ = writeln!(w, "</g>");
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Category;
    use crate::report::profiles::AxisValue;

    fn profile(cluster: usize, percents: &[Option<f64>]) -> RadarProfile {
        RadarProfile {
            category: Category::Action,
            cluster,
            size: 10,
            axes: percents
                .iter()
                .enumerate()
                .map(|(i, p)| AxisValue {
                    feature: format!("f{i}"),
                    cluster_mean: p.unwrap_or(0.0),
                    population_mean: if p.is_some() { 100.0 } else { 0.0 },
                    percent: *p,
                })
                .collect(),
        }
    }

    fn attr<'a>(svg: &'a str, class: &str, name: &str) -> Vec<&'a str> {
        svg.lines()
            .filter(|l| l.contains(&format!(r##"class="{class}""##)))
            .filter_map(|l| {
                let key = format!(r##"{name}=""##);
                let s = l.find(&key)? + key.len();
                Some(&l[s..s + l[s..].find('"')?])
            })
            .collect()
    }

    #[test]
    fn population_profile_sits_on_reference_ring() {
        let svg = render_radar(&[profile(0, &[Some(100.0); 5])], &RadarLayout::default()).unwrap();
        let ring = attr(&svg, "ref-ring", "points");
        let poly = attr(&svg, "profile", "points");
        assert_eq!(ring.len(), 1);
        assert_eq!(ring, poly);
    }

    #[test]
    fn values_beyond_cap_are_clamped_and_marked() {
        let layout = RadarLayout::default();
        let p = profile(0, &[Some(412.0), Some(50.0), Some(100.0), Some(300.0)]);
        let v = profile_vertices(&p, &layout);
        assert!(v[0].capped && !v[3].capped);
        assert_eq!(v[0].radius, layout.radius(300.0));
        assert!((v[0].radius - 0.32 * 280.0).abs() < 1e-12);
        // Axis 0 points straight up from the panel centre.
        assert!((v[0].x - 140.0).abs() < 1e-9);
        assert!((v[0].y - (140.0 - 0.32 * 280.0)).abs() < 1e-9);
        let svg = render_radar(&[p], &layout).unwrap();
        assert_eq!(svg.matches(r##"class="overflow""##).count(), 1);
        assert!(svg.contains("412.0% (beyond 300% cap)"));
    }

    #[test]
    fn dilated_profiles_scale_radially() {
        let layout = RadarLayout::default();
        let small = profile(0, &[Some(40.0), Some(80.0), Some(60.0), Some(20.0)]);
        let big = profile(1, &[Some(80.0), Some(160.0), Some(120.0), Some(40.0)]);
        let (a, b) = (
            profile_vertices(&small, &layout),
            profile_vertices(&big, &layout),
        );
        for (u, v) in a.iter().zip(&b) {
            assert!((v.radius - 2.0 * u.radius).abs() < 1e-12);
            let c = 140.0;
            assert!(((v.x - c) - 2.0 * (u.x - c)).abs() < 1e-9);
            assert!(((v.y - c) - 2.0 * (u.y - c)).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_axes_break_the_outline() {
        let p = profile(0, &[Some(100.0), None, Some(50.0), Some(120.0)]);
        let svg = render_radar(&[p], &RadarLayout::default()).unwrap();
        assert!(svg.contains(r##"class="profile gapped""##));
        assert!(svg.contains("n/a: population mean 0"));
        let d = attr(&svg, "profile gapped", "d")[0];
        assert_eq!(d.matches('M').count(), 1);
        assert_eq!(d.matches('L').count(), 2);
    }

    #[test]
    fn needs_three_axes() {
        let err = render_radar(
            &[profile(0, &[Some(1.0), Some(2.0)])],
            &RadarLayout::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("bar chart"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let ps = vec![
            profile(0, &[Some(90.0), Some(110.0), Some(100.0)]),
            profile(1, &[Some(130.0), Some(70.0), Some(500.0)]),
        ];
        let layout = RadarLayout::default();
        assert_eq!(
            render_radar(&ps, &layout).unwrap(),
            render_radar(&ps, &layout).unwrap()
        );
        assert_eq!(
            render_radar(&ps, &layout)
                .unwrap()
                .matches(r##"class="panel""##)
                .count(),
            2
        );
    }
}
