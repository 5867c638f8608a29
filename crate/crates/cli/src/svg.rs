//! SVG renderings: diverging residual maps, line charts and histograms.
//!
//! Output is plain text with fixed number formatting, so identical input
//! gives byte-identical files.

use std::fmt::Write as _;

use serde_json::Value;

use crate::CliError;

const WIDTH: f64 = 640.0;
const MARGIN: f64 = 50.0;

/// Positive values are blue, negative red, zero white.
const BLUE: (u8, u8, u8) = (0, 0, 255);
const RED: (u8, u8, u8) = (255, 0, 0);

#[derive(Debug, Clone, PartialEq)]
pub struct MapCell {
    pub ring: Vec<(f64, f64)>,
    pub value: Option<f64>,
    pub flagged: bool,
}

/// Linear diverging scale clipped at `±bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergingScale {
    pub bound: f64,
}

impl DivergingScale {
    /// Symmetric bound at max |value| over finite values (1 if all are 0).
    pub fn fit(cells: &[MapCell]) -> Self {
        let m = cells
            .iter()
            .filter_map(|c| c.value)
            .filter(|v| v.is_finite())
            .fold(0.0, |a: f64, v| a.max(v.abs()));
        Self {
            bound: if m > 0.0 { m } else { 1.0 },
        }
    }

    pub fn color(&self, v: f64) -> (u8, u8, u8) {
        let t = (v / self.bound).clamp(-1.0, 1.0);
        let (target, s) = if t >= 0.0 { (BLUE, t) } else { (RED, -t) };
        let mix = |c: u8| (255.0 + (c as f64 - 255.0) * s).round() as u8;
        (mix(target.0), mix(target.1), mix(target.2))
    }
}

fn hex((r, g, b): (u8, u8, u8)) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn num(v: f64) -> String {
    format!("{v:.3}")
}

/// Reads cells from a GeoJSON FeatureCollection whose features carry
/// `value` (number or null) and `flag` properties.
pub fn cells_from_geojson(text: &str) -> Result<Vec<MapCell>, CliError> {
    let bad = |m: &str| CliError::Data(format!("GeoJSON: {m}"));
    let doc: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
    let features = doc["features"].as_array().ok_or_else(|| bad("no features"))?;
    features
        .iter()
        .map(|f| {
            let coords = f["geometry"]["coordinates"][0]
                .as_array()
                .ok_or_else(|| bad("polygon without outer ring"))?;
            let mut ring = coords
                .iter()
                .map(|p| match (p[0].as_f64(), p[1].as_f64()) {
                    (Some(x), Some(y)) => Ok((x, y)),
                    _ => Err(bad("non-numeric coordinate")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            Ok(MapCell {
                ring,
                value: f["properties"]["value"].as_f64(),
                flagged: f["properties"]["flag"].as_bool().unwrap_or(false),
            })
        })
        .collect()
}

/// Choropleth of residual cells with a legend bar. Flagged or valueless
/// cells are hatched.
pub fn render_map(cells: &[MapCell], scale: &DivergingScale, title: &str) -> Result<String, CliError> {
    let pts = cells.iter().flat_map(|c| c.ring.iter());
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for &(x, y) in pts {
        b = [b[0].min(x), b[1].max(x), b[2].min(y), b[3].max(y)];
    }
    if cells.is_empty() || !b[0].is_finite() {
        return Err(CliError::Data("nothing to render: empty cell set".into()));
    }
    let aspect = (0.5 * (b[2] + b[3])).to_radians().cos().max(0.05);
    let span_x = ((b[1] - b[0]) * aspect).max(1e-12);
    let span_y = (b[3] - b[2]).max(1e-12);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let k = plot_w / span_x.max(span_y);
    let plot_h = span_y * k;
    let height = plot_h + 2.0 * MARGIN + 40.0;
    let tx = |x: f64| MARGIN + (x - b[0]) * aspect * k;
    let ty = |y: f64| MARGIN + (b[3] - y) * k;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        num(WIDTH),
        num(height),
        num(WIDTH),
        num(height)
    );
    s.push_str(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" \
         patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>\
         <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#777777\" stroke-width=\"2\"/></pattern>\
         <linearGradient id=\"legend\"><stop offset=\"0\" stop-color=\"#ff0000\"/>\
         <stop offset=\"0.5\" stop-color=\"#ffffff\"/><stop offset=\"1\" stop-color=\"#0000ff\"/>\
         </linearGradient></defs>\n",
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" font-size=\"14\">{}</text>", num(MARGIN), escape(title));
    for (i, c) in cells.iter().enumerate() {
        if c.ring.len() < 3 {
            continue;
        }
        let fill = match c.value {
            Some(v) if v.is_finite() && !c.flagged => hex(scale.color(v)),
            _ => "url(#hatch)".into(),
        };
        let points: Vec<String> = c
            .ring
            .iter()
            .map(|&(x, y)| format!("{},{}", num(tx(x)), num(ty(y))))
            .collect();
        let _ = writeln!(
            s,
            "<polygon data-cell=\"{i}\" points=\"{}\" fill=\"{fill}\" stroke=\"#444444\" stroke-width=\"0.3\"/>",
            points.join(" ")
        );
    }
    let ly = MARGIN + plot_h + 15.0;
    let _ = writeln!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"10\" fill=\"url(#legend)\" stroke=\"#444444\"/>",
        num(MARGIN),
        num(ly),
        num(plot_w)
    );
    for (x, label) in [
        (MARGIN, -scale.bound),
        (MARGIN + 0.5 * plot_w, 0.0),
        (MARGIN + plot_w, scale.bound),
    ] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            num(x),
            num(ly + 22.0),
            num(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
    /// Draw as a step function (horizontal then vertical).
    pub step: bool,
}

/// Line chart on linear axes fitted to all finite points.
pub fn render_lines(series: &[Series], title: &str, x_label: &str, y_label: &str) -> Result<String, CliError> {
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for &(x, y) in finite {
        b = [b[0].min(x), b[1].max(x), b[2].min(y), b[3].max(y)];
    }
    if !b[0].is_finite() {
        return Err(CliError::Data("nothing to plot".into()));
    }
    if b[1] == b[0] {
        b[1] = b[0] + 1.0;
    }
    if b[3] == b[2] {
        b[3] = b[2] + 1.0;
    }
    let height = 480.0;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, height - 2.0 * MARGIN);
    let tx = |x: f64| MARGIN + (x - b[0]) / (b[1] - b[0]) * pw;
    let ty = |y: f64| MARGIN + (b[3] - y) / (b[3] - b[2]) * ph;
    let mut s = svg_open(height, title);
    axes(&mut s, &b, height, x_label, y_label);
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = ser
            .points
            .iter()
            .copied()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let mut path = Vec::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            if ser.step && i > 0 {
                path.push(format!("{},{}", num(tx(x)), num(ty(pts[i - 1].1))));
            }
            path.push(format!("{},{}", num(tx(x)), num(ty(y))));
        }
        let dash = if ser.dashed { " stroke-dasharray=\"5,3\"" } else { "" };
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>",
            path.join(" "),
            ser.color
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{}\">{}</text>",
            num(MARGIN + 10.0),
            num(MARGIN + 14.0 + 14.0 * k as f64),
            ser.color,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Histogram of simulated statistics with the observed value marked.
pub fn render_histogram(sims: &[f64], observed: f64, title: &str, bins: usize) -> Result<String, CliError> {
    let vals: Vec<f64> = sims.iter().copied().filter(|v| v.is_finite()).collect();
    if vals.is_empty() {
        return Err(CliError::Data("no finite simulated statistics".into()));
    }
    let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if observed.is_finite() {
        lo = lo.min(observed);
        hi = hi.max(observed);
    }
    if hi == lo {
        hi = lo + 1.0;
    }
    let nb = bins.max(1);
    let width = (hi - lo) / nb as f64;
    let mut counts = vec![0usize; nb];
    for v in &vals {
        counts[(((v - lo) / width) as usize).min(nb - 1)] += 1;
    }
    let top = *counts.iter().max().unwrap_or(&1) as f64;
    let b = [lo, hi, 0.0, top];
    let height = 400.0;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, height - 2.0 * MARGIN);
    let mut s = svg_open(height, title);
    axes(&mut s, &b, height, "statistic", "count");
    for (i, &c) in counts.iter().enumerate() {
        let h = c as f64 / top * ph;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\"/>",
            num(MARGIN + i as f64 * pw / nb as f64),
            num(MARGIN + ph - h),
            num(pw / nb as f64),
            num(h)
        );
    }
    if observed.is_finite() {
        let x = MARGIN + (observed - lo) / (hi - lo) * pw;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ff0000\" stroke-width=\"2\"/>",
            num(x),
            num(MARGIN),
            num(x),
            num(MARGIN + ph)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn svg_open(height: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        num(WIDTH),
        num(height),
        num(WIDTH),
        num(height)
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" font-size=\"14\">{}</text>", num(MARGIN), escape(title));
    s
}

fn axes(s: &mut String, b: &[f64; 4], height: f64, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, height - MARGIN);
    let _ = writeln!(
        s,
        "<polyline points=\"{},{} {},{} {},{}\" fill=\"none\" stroke=\"#000000\"/>",
        num(x0),
        num(y0),
        num(x0),
        num(y1),
        num(x1),
        num(y1)
    );
    for (x, y, anchor, text) in [
        (x0, y1 + 14.0, "start", num(b[0])),
        (x1, y1 + 14.0, "end", num(b[1])),
        (x0 - 4.0, y1, "end", num(b[2])),
        (x0 - 4.0, y0 + 4.0, "end", num(b[3])),
        (0.5 * (x0 + x1), y1 + 30.0, "middle", escape(x_label)),
    ] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"{anchor}\">{text}</text>",
            num(x),
            num(y)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"12\" y=\"{}\" font-size=\"10\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{}</text>",
        num(0.5 * (y0 + y1)),
        num(0.5 * (y0 + y1)),
        escape(y_label)
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, v: Option<f64>) -> MapCell {
        MapCell {
            ring: vec![(x, 0.0), (x + 1.0, 0.0), (x + 1.0, 1.0), (x, 1.0)],
            value: v,
            flagged: v.is_none(),
        }
    }

    #[test]
    fn zero_is_white_and_bounds_saturate() {
        let sc = DivergingScale { bound: 1.0 };
        assert_eq!(hex(sc.color(0.0)), "#ffffff");
        assert_eq!(hex(sc.color(1.0)), "#0000ff");
        assert_eq!(hex(sc.color(-1.0)), "#ff0000");
        assert_eq!(hex(sc.color(-5.0)), "#ff0000");
        let svg = render_map(&[square(0.0, Some(0.0))], &DivergingScale { bound: 1.0 }, "t").unwrap();
        assert!(svg.contains("fill=\"#ffffff\""));
    }

    #[test]
    fn flagged_cells_are_hatched_and_empty_input_errors() {
        let cells = [square(0.0, Some(-1.0)), square(1.0, Some(1.0)), square(2.0, None)];
        let svg = render_map(&cells, &DivergingScale::fit(&cells), "map").unwrap();
        assert!(svg.contains("fill=\"#ff0000\""));
        assert!(svg.contains("fill=\"#0000ff\""));
        assert!(svg.contains("fill=\"url(#hatch)\""));
        assert_eq!(svg, render_map(&cells, &DivergingScale::fit(&cells), "map").unwrap());
        assert!(render_map(&[], &DivergingScale { bound: 1.0 }, "x").is_err());
    }

    #[test]
    fn geojson_round_trip() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]},"properties":{"cell_id":0,"value":null,"flag":true}}]}"#;
        let cells = cells_from_geojson(text).unwrap();
        assert_eq!(cells[0].ring.len(), 3);
        assert_eq!(cells[0].value, None);
        assert!(cells[0].flagged);
    }

    #[test]
    fn charts_render() {
        let s = Series {
            label: "a".into(),
            points: vec![(0.0, 1.0), (1.0, 0.0)],
            color: "#000000",
            dashed: false,
            step: true,
        };
        assert!(render_lines(&[s], "t", "x", "y").unwrap().contains("<polyline"));
        assert!(render_histogram(&[1.0, 2.0, 2.5], 1.5, "h", 5).unwrap().contains("#ff0000"));
        assert!(render_histogram(&[f64::NAN], 0.0, "h", 5).is_err());
    }
}
