use std::fmt::Write;

use crate::clean::Knee;
use crate::ingest::Category;

/// Line plot of explained variance per component, with the chosen
/// dimensionality highlighted.
pub fn render_scree(category: Category, explained_variance: &[f64], knee: &Knee) -> String {
    let (width, height) = (420.0, 280.0);
    let (left, right, top, bottom) = (48.0, 16.0, 30.0, 36.0);
    let m = explained_variance.len().max(1);
    let ymax = explained_variance
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |i: usize| {
        if m == 1 {
            left + (width - left - right) / 2.0
        } else {
            left + (width - left - right) * i as f64 / (m - 1) as f64
        }
    };
    let y = |v: f64| top + (height - top - bottom) * (1.0 - v / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"##
    );
    let _ = writeln!(
        s,
        r##"<text x="{left}" y="18" font-size="12" font-weight="bold">{category} scree: explained variance by component ({} chosen, {:?})</text>"##,
        knee.dims, knee.selection
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#333"/>"##,
        height - bottom,
        width - right,
        height - bottom
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.3}" stroke="#333"/>"##,
        height - bottom
    );
    let _ = writeln!(s, r##"<text x="4" y="{:.3}">{ymax:.3}</text>"##, top + 4.0);
    let _ = writeln!(s, r##"<text x="4" y="{:.3}">0</text>"##, height - bottom);
    let points: Vec<String> = explained_variance
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.3},{:.3}", x(i), y(*v)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f4e8c" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    for (i, v) in explained_variance.iter().enumerate() {
        let chosen = i + 1 == knee.dims;
        let _ = writeln!(
            s,
            r##"<circle cx="{:.3}" cy="{:.3}" r="{}" fill="{}"><title>PC{}: {v}</title></circle>"##,
            x(i),
            y(*v),
            if chosen { 5 } else { 3 },
            if chosen { "#d62728" } else { "#1f4e8c" },
            i + 1
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"##,
            x(i),
            height - bottom + 14.0,
            i + 1
        );
    }
    let _ = writeln!(s, "</svg>");
    s
}
