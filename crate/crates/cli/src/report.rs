use std::fmt::Write as _;

use socnav_core::compliance::CdfCurve;
use socnav_core::geometry::Pose2D;
use socnav_core::sim::WorldMap;

use crate::error::CliResult;

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// Rows of string cells to CSV text.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Failure::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Shortest text that parses back to the same float.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// A labeled CDF curve for plotting.
pub struct Series<'a> {
    pub label: String,
    pub curve: &'a CdfCurve,
}

/// Step-function CDF plot, one polyline per series.
pub fn cdf_svg(title: &str, x_label: &str, series: &[Series<'_>]) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let x_max = series.iter().filter_map(|s| s.curve.thresholds.last().copied()).fold(0.0, f64::max).max(1e-9);
    let sx = |x: f64| m + (w - 2.0 * m) * x / x_max;
    let sy = |y: f64| h - m - (h - 2.0 * m) * y;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{:.1} {:.1} L{:.1} {:.1} L{:.1} {:.1}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(1.0),
        sx(0.0),
        sy(0.0),
        sx(x_max),
        sy(0.0)
    );
    for k in 0..=5 {
        let x = x_max * k as f64 / 5.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.1}</text>"#, sx(x), sy(0.0) + 16.0, x);
        let y = k as f64 / 5.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.1}</text>"#, sx(0.0) - 6.0, sy(y) + 4.0, y);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dash = if i % 2 == 1 { r#" stroke-dasharray="6 3""# } else { "" };
        let mut pts = String::new();
        let mut prev = 0.0;
        for (t, f) in s.curve.thresholds.iter().zip(&s.curve.fractions) {
            let _ = write!(pts, "{:.2},{:.2} {:.2},{:.2} ", sx(*t), sy(prev), sx(*t), sy(*f));
            prev = *f;
        }
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, pts.trim_end());
        let ly = m + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}" text-anchor="end">{}</text>"#,
            w - m,
            ly + 10.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Top-down snapshot: occupied cells, then labeled trajectories.
pub fn trajectory_svg(map: &WorldMap, tracks: &[(&str, &[Pose2D])]) -> String {
    let scale = 30.0;
    let (wm, hm) = (map.width as f64 * map.resolution, map.height as f64 * map.resolution);
    let (w, h) = (wm * scale, hm * scale);
    let px = |x: f64| (x - map.origin.x) * scale;
    let py = |y: f64| h - (y - map.origin.y) * scale;
    let cell = map.resolution * scale;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    let mut d = String::new();
    for row in 0..map.height {
        // run-length encode each row to keep the file small
        let mut col = 0;
        while col < map.width {
            if !map.occupied(col, row) {
                col += 1;
                continue;
            }
            let start = col;
            while col < map.width && map.occupied(col, row) {
                col += 1;
            }
            let c = map.cell_center(start, row);
            let x = px(c.x - map.resolution / 2.0);
            let y = py(c.y + map.resolution / 2.0);
            let _ = write!(d, "M{x:.1} {y:.1}h{:.1}v{cell:.1}h{:.1}z", (col - start) as f64 * cell, -((col - start) as f64 * cell));
        }
    }
    let _ = writeln!(out, r##"<path d="{d}" fill="#444"/>"##);
    for (i, (label, poses)) in tracks.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = poses.iter().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(out, r#"<text x="10" y="{}" font-size="14" fill="{color}">{}</text>"#, 20 + 18 * i, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use socnav_core::geometry::Point;

    #[test]
    fn one_polyline_per_series() {
        let c = CdfCurve { thresholds: vec![0.0, 1.0, 2.0], fractions: vec![0.1, 0.5, 1.0] };
        let series: Vec<Series<'_>> = (0..6).map(|i| Series { label: format!("s{i}"), curve: &c }).collect();
        let svg = cdf_svg("t", "d", &series);
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn csv_quotes_and_header() {
        let t = csv_text(&["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(t, "a,b\n1,\"x,y\"\n");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(3.0), "3");
    }

    #[test]
    fn trajectory_snapshot_draws_each_track() {
        let map = WorldMap::closed_room(20, 10, 0.5, Point::default());
        let a = [Pose2D::new(1.0, 1.0, 0.0), Pose2D::new(2.0, 2.0, 0.0)];
        let svg = trajectory_svg(&map, &[("demo", &a), ("run", &a)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("<path d=\"M"));
    }
}
