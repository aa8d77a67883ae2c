//! CSV and SVG writers for experiment output.
//!
//! Every CSV starts with a single header line naming the columns. Floats are
//! printed with Rust's shortest round-trip formatting so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Result;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Formats one CSV field.
pub fn field(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Numeric table.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|&x| field(x)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    ensure_parent(path)?;
    fs::write(path, s)?;
    Ok(())
}

/// Table whose cells are already formatted.
pub fn write_text_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    ensure_parent(path)?;
    fs::write(path, s)?;
    Ok(())
}

/// Dense grid: first column holds `row_values`, remaining columns are labelled by `col_values`.
pub fn write_grid(
    path: &Path,
    corner: &str,
    row_values: &[f64],
    col_prefix: &str,
    col_values: &[f64],
    grid: &DMatrix<f64>,
) -> Result<()> {
    let mut header = vec![corner.to_string()];
    header.extend(col_values.iter().map(|c| format!("{col_prefix}{}", field(*c))));
    let rows: Vec<Vec<String>> = row_values
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = vec![field(*r)];
            v.extend(grid.row(i).iter().map(|&x| field(x)));
            v
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_text_csv(path, &h, &rows)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal line chart.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], y_floor: Option<f64>) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let y = y_floor.map_or(y, |f| y.max(f));
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * m, h - 2.0 * m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label} [{:.3}, {:.3}]</text>"#, w / 2.0, h - 12.0, x0, x1);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{y_label} [{:.3}, {:.3}]</text>"#, h / 2.0, h / 2.0, y0, y1);
    for (i, ser) in series.iter().enumerate() {
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y_floor.map_or(y, |f| y.max(f)))))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, path.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, w - m + 4.0, m + 14.0 * i as f64, ser.name);
    }
    s.push_str("</svg>\n");
    s
}

/// Grayscale heat map of a matrix; rows run bottom to top.
pub fn heatmap_svg(title: &str, grid: &DMatrix<f64>) -> String {
    let (nr, nc) = grid.shape();
    let cell = 6.0;
    let (w, h) = (nc as f64 * cell + 20.0, nr as f64 * cell + 40.0);
    let (lo, hi) = (grid.min(), grid.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="10" y="16">{title}</text>"#);
    for i in 0..nr {
        for j in 0..nc {
            let v = ((grid[(i, j)] - lo) / span * 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({v},{v},{v})"/>"#,
                10.0 + j as f64 * cell,
                30.0 + (nr - 1 - i) as f64 * cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        write_csv(&p, &["x", "y"], &[vec![1.0, 0.1], vec![f64::NEG_INFINITY, 2.5e-12]]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x,y\n1,0.1\n-inf,0.0000000000025\n");
    }

    #[test]
    fn svg_is_closed() {
        let s = line_plot_svg("t", "x", "y", &[Series { name: "a", points: vec![(0.0, 1.0), (1.0, 2.0)] }], None);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        let g = heatmap_svg("m", &DMatrix::from_element(2, 3, 1.0));
        assert_eq!(g.matches("<rect").count(), 6);
    }
}
