//! Minimal self-contained SVG line plots.
//!
//! Just enough plotting for the figures this crate emits (weight-policy
//! curves, training trajectories, rate/SNR sweeps): multiple labeled series,
//! linear axes with ticks, a legend. No external renderer; the output is a
//! plain SVG file.

use std::path::Path;

use crate::error::{Error, Result};

/// One labeled line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points }
    }
}

/// Titles and axis labels.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl PlotSpec {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        PlotSpec { title: title.into(), x_label: x_label.into(), y_label: y_label.into() }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 54.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Format a tick value compactly.
fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Render labeled series to an SVG file. Non-finite points are dropped; at
/// least one finite point must remain.
pub fn line_plot(path: &Path, spec: &PlotSpec, series: &[Series]) -> Result<()> {
    let clean: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            (
                s.label.as_str(),
                s.points
                    .iter()
                    .copied()
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let n_points: usize = clean.iter().map(|(_, p)| p.len()).sum();
    if n_points == 0 {
        return Err(Error::Eval(format!("nothing to plot for {}", spec.title)));
    }

    let (mut x0, mut x1) = (f64::MAX, f64::MIN);
    let (mut y0, mut y1) = (f64::MAX, f64::MIN);
    for (_, pts) in &clean {
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    // Expand degenerate or tight ranges so lines never sit on the frame.
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = *hi - *lo;
        let margin = if span > 0.0 { span * 0.06 } else { lo.abs().max(1.0) * 0.1 };
        *lo -= margin;
        *hi += margin;
    };
    pad(&mut x0, &mut x1);
    pad(&mut y0, &mut y1);

    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        esc(&spec.title)
    ));

    // Grid and ticks: six divisions per axis.
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let gx = px(fx);
        let gy = py(fy);
        svg.push_str(&format!(
            "<line x1=\"{gx:.1}\" y1=\"{}\" x2=\"{gx:.1}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            py(y1),
            py(y0)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{gy:.1}\" x2=\"{}\" y2=\"{gy:.1}\" stroke=\"#ddd\"/>\n",
            px(x0),
            px(x1)
        ));
        svg.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            tick(fx)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            gy + 4.0,
            tick(fy)
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        MARGIN_L,
        MARGIN_T,
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        esc(&spec.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        esc(&spec.y_label)
    ));

    for (i, (label, pts)) in clean.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            coords.join(" ")
        ));
        for &(x, y) in pts {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            ));
        }
        // Legend entry, top-right inside the frame.
        let ly = MARGIN_T + 16.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_R - 150.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            lx + 22.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            lx + 28.0,
            ly + 4.0,
            esc(label)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_renders_every_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let series = vec![
            Series::new("one", vec![(1.0, 2.0), (2.0, 3.0), (3.0, 2.5)]),
            Series::new("two & <b>", vec![(1.0, 1.0), (3.0, 4.0)]),
        ];
        line_plot(&path, &PlotSpec::new("t", "x", "y [dB]"), &series).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("two &amp; &lt;b&gt;"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn degenerate_and_nonfinite_points_are_handled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.svg");
        // A single repeated point still renders (padded axes), NaNs are
        // dropped.
        let series = vec![Series::new(
            "flat",
            vec![(2.0, 5.0), (2.0, 5.0), (f64::NAN, 1.0), (1.0, f64::INFINITY)],
        )];
        line_plot(&path, &PlotSpec::new("flat", "x", "y"), &series).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(!svg.contains("NaN") && !svg.contains("inf"));

        let empty = vec![Series::new("none", vec![(f64::NAN, f64::NAN)])];
        assert!(line_plot(&dir.path().join("e.svg"), &PlotSpec::new("e", "x", "y"), &empty)
            .is_err());
    }
}
