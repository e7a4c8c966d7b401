//! CSV and SVG emission. CSVs are UTF-8, comma-separated, "." decimal
//! point, with the schema version embedded as the trailing header cell
//! (data rows carry a matching empty trailing field). Charts are a pure
//! function of the CSV text.

use crate::error::{Error, Result};

/// Shortest round-trip decimal formatting; locale-independent.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Render a CSV with the schema tag appended to the header row.
pub fn render_csv(columns: &[&str], schema: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
    header.push(format!("schema={schema}"));
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len(), "csv row width mismatch");
        out.push_str(&row.join(","));
        out.push(',');
        out.push('\n');
    }
    out
}

/// Parse a CSV produced by [`render_csv`]: column names (schema cell
/// dropped) plus per-column optional values (empty cells are `None`).
pub fn parse_numeric_csv(csv: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty csv"))?;
    let mut names: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    if names.last().map(|s| s.starts_with("schema=")) == Some(true) {
        names.pop();
    }
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = cells.get(c).copied().unwrap_or("");
            if cell.is_empty() {
                col.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::invalid(format!("row {}: '{cell}' is not numeric", lineno + 2))
                })?;
                col.push(Some(v));
            }
        }
    }
    Ok((names, columns))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Line chart of every numeric column (except the first, used as the x
/// axis) with min-max normalization per series and a legend.
pub fn render_chart_from_csv(csv: &str, title: &str) -> Result<String> {
    let (names, columns) = parse_numeric_csv(csv)?;
    if names.len() < 2 {
        return Err(Error::invalid("chart needs at least two columns"));
    }
    let n_rows = columns[0].len();
    let (w, h) = (860.0, 420.0);
    let (ml, mr, mt, mb) = (50.0, 190.0, 40.0, 30.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\">{title}</text>\n",
        ml
    ));
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));

    for (s, name) in names.iter().enumerate().skip(1) {
        let series = &columns[s];
        let present: Vec<(usize, f64)> = series
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .collect();
        let color = PALETTE[(s - 1) % PALETTE.len()];
        let legend_y = mt + 16.0 * (s as f64);
        if present.len() >= 2 {
            let lo = present.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
            let hi = present.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let points: Vec<String> = present
                .iter()
                .map(|&(i, v)| {
                    let x = ml + plot_w * i as f64 / (n_rows.max(2) - 1) as f64;
                    let y = mt + plot_h * (1.0 - (v - lo) / span);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                points.join(" ")
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{legend_y}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{name} [{lo:.4}, {hi:.4}]</text>\n",
                w - mr + 8.0
            ));
        } else {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{legend_y}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{name} (no data)</text>\n",
                w - mr + 8.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_schema_tail() {
        let rows = vec![
            vec!["1".to_string(), "0.5".to_string(), String::new()],
            vec!["2".to_string(), "0.25".to_string(), "7".to_string()],
        ];
        let csv = render_csv(&["step", "loss", "acc"], "test.v1", &rows);
        let first_line = csv.lines().next().unwrap();
        assert_eq!(first_line, "step,loss,acc,schema=test.v1");
        let (names, cols) = parse_numeric_csv(&csv).unwrap();
        assert_eq!(names, vec!["step", "loss", "acc"]);
        assert_eq!(cols[0], vec![Some(1.0), Some(2.0)]);
        assert_eq!(cols[2], vec![None, Some(7.0)]);
    }

    #[test]
    fn fmt_num_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-17, -42.5, 0.0] {
            let s = fmt_num(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits());
            assert!(!s.contains(','), "no locale separators");
        }
    }

    #[test]
    fn chart_is_pure_function_of_csv() {
        let rows: Vec<Vec<String>> = (0..10)
            .map(|i| {
                vec![
                    i.to_string(),
                    fmt_num((i as f64 * 0.7).sin()),
                    fmt_num(i as f64 * 0.1),
                ]
            })
            .collect();
        let csv = render_csv(&["step", "a", "b"], "test.v1", &rows);
        let s1 = render_chart_from_csv(&csv, "t").unwrap();
        let s2 = render_chart_from_csv(&csv, "t").unwrap();
        assert_eq!(s1, s2);
        assert!(s1.starts_with("<svg"));
        assert!(s1.contains("polyline"));
    }
}
