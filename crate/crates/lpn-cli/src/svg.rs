//! Minimal SVG rendering for report figures.
//!
//! Pure functions of their inputs — no clocks, no randomness, fixed float
//! formatting — so the same data always produces the same bytes. Charts
//! carry their numbers as visible text, making the figures readable
//! without any external tooling.

/// Escapes XML-significant characters in text content.
fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Formats a value with six decimals, trimming trailing zeros (`0.3`,
/// `0.333333`, `2`). Deterministic for all finite inputs.
fn fmt(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Pixel coordinate with two decimals.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

const PALETTE: [&str; 6] = [
    "#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed", "#0891b2",
];

/// Horizontal bar chart for non-negative scores (relevance rankings, gap
/// profiles). Items are drawn top to bottom in the order given, each bar
/// labelled with its exact value.
pub fn bar_chart(title: &str, value_label: &str, items: &[(String, f64)]) -> String {
    let label_col = 230.0;
    let bar_area = 520.0;
    let row_h = 22.0;
    let top = 56.0;
    let width = label_col + bar_area + 150.0;
    let height = top + row_h * items.len() as f64 + 30.0;
    let max = items
        .iter()
        .map(|&(_, v)| if v.is_finite() { v.max(0.0) } else { 0.0 })
        .fold(0.0_f64, f64::max)
        .max(1e-300);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         font-family=\"monospace\" font-size=\"12\">\n",
        px(width),
        px(height)
    ));
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        px(width),
        px(height)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        esc(title)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"42\" fill=\"#555555\">{}</text>\n",
        esc(value_label)
    ));
    for (i, (label, value)) in items.iter().enumerate() {
        let y = top + row_h * i as f64;
        let v = if value.is_finite() { value.max(0.0) } else { 0.0 };
        let w = bar_area * v / max;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            px(label_col - 8.0),
            px(y + 15.0),
            esc(label)
        ));
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            px(label_col),
            px(y + 3.0),
            px(w),
            px(row_h - 8.0),
            PALETTE[0]
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            px(label_col + w + 6.0),
            px(y + 15.0),
            fmt(*value)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// One named line in a [`line_plot`].
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with axes, ticks, legend, and per-point markers, plus an
/// optional data table rendered under the plot (headers, then one row of
/// strings per line). Non-finite points are skipped.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    table: Option<(&[&str], &[Vec<String>])>,
) -> String {
    let width = 760.0;
    let plot_height = 440.0;
    let table_rows = table.map(|(_, rows)| rows.len() + 1).unwrap_or(0);
    let height = plot_height + if table_rows > 0 { 20.0 + 16.0 * table_rows as f64 } else { 0.0 };
    let left = 80.0;
    let right = width - 30.0;
    let top = 60.0;
    let bottom = plot_height - 56.0;

    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x.is_finite() && y.is_finite())
        .collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         font-family=\"monospace\" font-size=\"12\">\n",
        px(width),
        px(height)
    ));
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        px(width),
        px(height)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"24\" font-size=\"15\" font-weight=\"bold\">{}</text>\n",
        esc(title)
    ));
    if finite.is_empty() {
        svg.push_str("<text x=\"16\" y=\"48\" fill=\"#555555\">no data</text>\n</svg>\n");
        return svg;
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max - x_min < 1e-300 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-300 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    let sx = |x: f64| left + (right - left) * (x - x_min) / (x_max - x_min);
    let sy = |y: f64| bottom - (bottom - top) * (y - y_min) / (y_max - y_min);

    // Axes, ticks, grid.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        px(left),
        px(bottom),
        px(right),
        px(bottom)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
        px(left),
        px(top),
        px(left),
        px(bottom)
    ));
    let ticks = 5usize;
    for i in 0..=ticks {
        let f = i as f64 / ticks as f64;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let xp = sx(xv);
        let yp = sy(yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            px(xp),
            px(top),
            px(xp),
            px(bottom)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            px(left),
            px(yp),
            px(right),
            px(yp)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            px(xp),
            px(bottom + 18.0),
            fmt(xv)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            px(left - 6.0),
            px(yp + 4.0),
            fmt(yv)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        px((left + right) / 2.0),
        px(plot_height - 16.0),
        esc(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\">{}</text>\n",
        px((top + bottom) / 2.0),
        px((top + bottom) / 2.0),
        esc(y_label)
    ));

    // Series polylines, markers, legend.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|&(x, y)| x.is_finite() && y.is_finite())
            .collect();
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            path.join(" "),
            color
        ));
        for &(x, y) in &pts {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{}\"/>\n",
                px(sx(x)),
                px(sy(y)),
                color
            ));
        }
        let ly = 40.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{}\"/>\n",
            px(right - 180.0),
            px(ly - 4.0),
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            px(right - 162.0),
            px(ly),
            esc(&s.name)
        ));
    }

    // Embedded data table under the plot.
    if let Some((headers, rows)) = table {
        let col_w = (width - 2.0 * left.min(40.0) - 32.0) / headers.len().max(1) as f64;
        let mut ty = plot_height + 16.0;
        svg.push_str(&format!(
            "<line x1=\"16\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>\n",
            px(plot_height + 2.0),
            px(width - 16.0),
            px(plot_height + 2.0)
        ));
        for (c, head) in headers.iter().enumerate() {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-weight=\"bold\">{}</text>\n",
                px(16.0 + col_w * c as f64),
                px(ty),
                esc(head)
            ));
        }
        for row in rows {
            ty += 16.0;
            for (c, cell) in row.iter().enumerate() {
                svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\">{}</text>\n",
                    px(16.0 + col_w * c as f64),
                    px(ty),
                    esc(cell)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting_is_trimmed_and_stable() {
        assert_eq!(fmt(0.3), "0.3");
        assert_eq!(fmt(1.0 / 3.0), "0.333333");
        assert_eq!(fmt(2.0), "2");
        assert_eq!(fmt(-0.0000001), "0");
        assert_eq!(fmt(-1.25), "-1.25");
    }

    #[test]
    fn bar_chart_carries_labels_and_values() {
        let items = vec![
            ("alpha".to_string(), 0.5),
            ("beta<&>".to_string(), 0.25),
            ("gamma".to_string(), 0.0),
        ];
        let svg = bar_chart("Ranking", "score", &items);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains(">alpha</text>"));
        assert!(svg.contains("beta&lt;&amp;&gt;"));
        assert!(svg.contains(">0.5</text>"));
        assert!(svg.contains(">0.25</text>"));
        // The largest bar spans the full bar area.
        assert!(svg.contains("width=\"520.00\""));
        assert_eq!(svg, bar_chart("Ranking", "score", &items));
    }

    #[test]
    fn line_plot_draws_each_series_once() {
        let series = vec![
            Series {
                name: "train".into(),
                points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)],
            },
            Series {
                name: "val".into(),
                points: vec![(0.0, 1.2), (1.0, 0.7), (2.0, f64::NAN)],
            },
        ];
        let svg = line_plot("Loss", "epoch", "loss", &series, None);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">train</text>"));
        assert!(svg.contains(">val</text>"));
        assert_eq!(svg, line_plot("Loss", "epoch", "loss", &series, None));
    }

    #[test]
    fn line_plot_embeds_data_table() {
        let series = vec![Series { name: "r2".into(), points: vec![(0.0, 0.8), (1.0, 0.4)] }];
        let rows = vec![
            vec!["0".to_string(), "-".to_string(), "0.8".to_string()],
            vec!["1".to_string(), "x1".to_string(), "0.4".to_string()],
        ];
        let svg = line_plot("Sweep", "m", "R2", &series, Some((&["m", "masked", "R2"], &rows)));
        assert!(svg.contains(">masked</text>"));
        assert!(svg.contains(">x1</text>"));
        assert!(svg.contains(">0.4</text>"));
    }

    #[test]
    fn empty_plot_degrades_gracefully() {
        let svg = line_plot("Nothing", "x", "y", &[], None);
        assert!(svg.contains("no data"));
    }
}
