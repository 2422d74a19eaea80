//! Hand-written SVG: one yield-vs-tenor polyline per rating in each of three
//! panels (truth, observed, reconstruction).

use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::surface::{MaskedSurface, Matrix, RatingGrid, TenorGrid};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 40.0;
const TOP: f64 = 50.0;

/// Colour for rating `i` of `n`: blue (best) through red (worst).
fn colour(i: usize, n: usize) -> String {
    let t = if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let r = (40.0 + 200.0 * t).round() as u8;
    let b = (220.0 - 190.0 * t).round() as u8;
    format!("#{r:02x}50{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Axes {
    x0: f64,
    t_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn x(&self, tenor: f64) -> f64 {
        self.x0 + MARGIN + tenor / self.t_max * (PANEL_W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        TOP + PANEL_H - MARGIN - (v - self.y_min) / span * (PANEL_H - 2.0 * MARGIN)
    }
}

/// Renders the three panels. `masked` panels only draw observed points.
pub fn render_reconstruction(
    truth: &Matrix,
    masked: &MaskedSurface,
    recon: &Matrix,
    ratings: &RatingGrid,
    tenors: &TenorGrid,
    title: &str,
) -> Result<String, HarnessError> {
    let (rows, cols) = truth.shape();
    if masked.values().shape() != (rows, cols)
        || recon.shape() != (rows, cols)
        || ratings.len() != rows
        || tenors.len() != cols
    {
        return Err(HarnessError::Plot(
            "grids of truth, mask and reconstruction differ".into(),
        ));
    }
    let all = truth.as_slice().iter().chain(recon.as_slice());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let t_max = tenors.tenors().last().copied().unwrap_or(1.0);
    let width = 3.0 * PANEL_W;
    let height = TOP + PANEL_H + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );

    let panels: [(&str, Option<&Matrix>); 3] = [
        ("truth", Some(truth)),
        ("observed", None),
        ("reconstruction", Some(recon)),
    ];
    for (p, (name, values)) in panels.iter().enumerate() {
        let ax = Axes {
            x0: p as f64 * PANEL_W,
            t_max,
            y_min: lo,
            y_max: hi,
        };
        let _ = writeln!(s, r#"<g class="panel" id="{name}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
            ax.x0 + PANEL_W / 2.0,
            TOP - 8.0
        );
        let (bx, by) = (ax.x(0.0), ax.y(lo));
        let _ = writeln!(
            s,
            r##"<path d="M{bx:.2},{:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" stroke="#333" fill="none"/>"##,
            ax.y(hi),
            ax.x(t_max)
        );
        let _ = writeln!(
            s,
            r#"<text x="{bx:.2}" y="{:.2}">{:.2}%</text>"#,
            ax.y(hi) - 4.0,
            hi * 100.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{bx:.2}" y="{:.2}">{:.2}%</text>"#,
            by + 14.0,
            lo * 100.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t_max}y</text>"#,
            ax.x(t_max),
            by + 14.0
        );
        for i in 0..rows {
            let pts: Vec<(f64, f64)> = (0..cols)
                .filter(|&j| values.is_some() || masked.is_observed(i, j))
                .map(|j| {
                    let v = values.map_or_else(|| masked.values().get(i, j), |m| m.get(i, j));
                    (ax.x(tenors.tenors()[j]), ax.y(v))
                })
                .collect();
            let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let c = colour(i, rows);
            let _ = writeln!(
                s,
                r#"<polyline data-rating="{}" points="{}" stroke="{c}" fill="none" stroke-width="1.2"/>"#,
                escape(&ratings.labels()[i]),
                list.join(" ")
            );
            if values.is_none() {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{c}"/>"#);
                }
            }
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot_reconstruction(
    truth: &Matrix,
    masked: &MaskedSurface,
    recon: &Matrix,
    ratings: &RatingGrid,
    tenors: &TenorGrid,
    title: &str,
    path: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    let svg = render_reconstruction(truth, masked, recon, ratings, tenors, title)?;
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Matrix, MaskedSurface, Matrix) {
        let truth = Matrix::from_fn(13, 15, |i, j| 0.01 + 0.002 * i as f64 + 0.0005 * j as f64);
        let mask: Vec<bool> = (0..195).map(|k| k % 4 == 0).collect();
        let masked = MaskedSurface::new(&truth, mask).unwrap();
        let recon = truth.map(|v| v * 1.01);
        (truth, masked, recon)
    }

    #[test]
    fn thirteen_polylines_per_panel() {
        let (t, m, r) = fixture();
        let svg = render_reconstruction(
            &t,
            &m,
            &r,
            &RatingGrid::default(),
            &TenorGrid::default(),
            "a <b>",
        )
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 39);
        for panel in svg.split("<g class=\"panel\"").skip(1) {
            assert_eq!(panel.matches("<polyline").count(), 13);
        }
        assert!(svg.contains("a &lt;b&gt;"));
    }

    #[test]
    fn observed_panel_omits_masked_points() {
        let (t, m, r) = fixture();
        let svg = render_reconstruction(
            &t,
            &m,
            &r,
            &RatingGrid::default(),
            &TenorGrid::default(),
            "x",
        )
        .unwrap();
        let observed = svg
            .split("id=\"observed\"")
            .nth(1)
            .unwrap()
            .split("</g>")
            .next()
            .unwrap();
        assert_eq!(observed.matches("<circle").count(), m.observed_count());
        let points: usize = observed
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                l.split("points=\"")
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap()
                    .split_whitespace()
                    .count()
            })
            .sum();
        assert_eq!(points, m.observed_count());
    }

    #[test]
    fn bytes_are_deterministic() {
        let (t, m, r) = fixture();
        let a = render_reconstruction(
            &t,
            &m,
            &r,
            &RatingGrid::default(),
            &TenorGrid::default(),
            "x",
        )
        .unwrap();
        let b = render_reconstruction(
            &t,
            &m,
            &r,
            &RatingGrid::default(),
            &TenorGrid::default(),
            "x",
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let (t, m, r) = fixture();
        let err = plot_reconstruction(
            &t,
            &m,
            &r,
            &RatingGrid::default(),
            &TenorGrid::default(),
            "x",
            "/nonexistent/dir/p.svg",
        );
        assert!(err.is_err());
    }
}
