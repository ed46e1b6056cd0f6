use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::Result;

use super::{CostReport, ErfMap, MiouReport};

/// Something that can be written as a CSV table plus a self-contained SVG figure.
pub trait Report {
    fn csv(&self) -> String;
    fn svg(&self) -> String;
}

/// Writes `<stem>.csv` and `<stem>.svg`; returns both paths.
pub fn emit_report(report: &impl Report, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    std::fs::write(&csv, report.csv())?;
    std::fs::write(&svg, report.svg())?;
    Ok((csv, svg))
}

const W: f64 = 640.0;
const H: f64 = 360.0;

fn bar_chart(title: &str, bars: &[(String, Vec<f64>)], legend: &[&str]) -> String {
    const COLORS: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];
    let max = bars.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0f64, f64::max);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    );
    for (k, name) in legend.iter().enumerate() {
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"30\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"39\" font-family=\"sans-serif\" font-size=\"10\">{name}</text>",
            10 + k * 110,
            COLORS[k % 3],
            24 + k * 110
        );
    }
    let (top, bottom) = (50.0, H - 60.0);
    let slot = (W - 20.0) / bars.len().max(1) as f64;
    for (i, (label, values)) in bars.iter().enumerate() {
        let bw = slot * 0.8 / values.len().max(1) as f64;
        for (k, v) in values.iter().enumerate() {
            let h = if max > 0.0 { v / max * (bottom - top) } else { 0.0 };
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                10.0 + i as f64 * slot + k as f64 * bw,
                bottom - h,
                bw,
                h,
                COLORS[k % 3]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" transform=\"rotate(45 {:.2} {:.2})\">{label}</text>",
            10.0 + i as f64 * slot,
            bottom + 12.0,
            10.0 + i as f64 * slot,
            bottom + 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}

impl Report for CostReport {
    fn csv(&self) -> String {
        let mut s = String::from("layer,dense_params,nnz_params,flops\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{},{}", l.name, l.dense_params, l.nnz_params, l.flops);
        }
        s
    }

    fn svg(&self) -> String {
        let bars: Vec<(String, Vec<f64>)> =
            self.layers.iter().map(|l| (l.name.clone(), vec![l.dense_params as f64, l.nnz_params as f64])).collect();
        bar_chart("parameters per layer", &bars, &["dense", "nonzero"])
    }
}

impl Report for MiouReport {
    fn csv(&self) -> String {
        let mut s = String::from("class,iou\n");
        for (c, iou) in self.per_class.iter().enumerate() {
            match iou {
                Some(v) => writeln!(s, "{c},{v}"),
                None => writeln!(s, "{c},"),
            }
            .unwrap();
        }
        let _ = writeln!(s, "mean,{}", self.mean);
        s
    }

    fn svg(&self) -> String {
        let bars: Vec<(String, Vec<f64>)> =
            self.per_class.iter().enumerate().map(|(c, v)| (format!("class {c}"), vec![v.unwrap_or(0.0)])).collect();
        bar_chart(&format!("IoU per class, mean {:.4}", self.mean), &bars, &["IoU"])
    }
}

impl Report for ErfMap {
    fn csv(&self) -> String {
        let mut s = String::from("x,y,z,magnitude\n");
        for (c, m) in self.coords.iter().zip(&self.magnitude) {
            let _ = writeln!(s, "{},{},{},{}", c.x, c.y, c.z, m);
        }
        s
    }

    /// Heatmap of the z-slice through the center, log-scaled.
    fn svg(&self) -> String {
        let cells: Vec<_> =
            self.coords.iter().zip(&self.magnitude).filter(|(c, _)| c.z == self.center.z).collect();
        let (x0, x1) = cells.iter().fold((i32::MAX, i32::MIN), |(a, b), (c, _)| (a.min(c.x), b.max(c.x)));
        let (y0, y1) = cells.iter().fold((i32::MAX, i32::MIN), |(a, b), (c, _)| (a.min(c.y), b.max(c.y)));
        let nx = (x1 - x0 + 1).max(1) as f64;
        let ny = (y1 - y0 + 1).max(1) as f64;
        let cell = ((H - 40.0) / nx.max(ny)).min(24.0);
        let max = cells.iter().map(|(_, &m)| m).fold(0.0f64, f64::max);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n\
             <text x=\"10\" y=\"20\" fill=\"white\" font-family=\"sans-serif\" font-size=\"14\">ERF at ({}, {}, {}), z slice</text>\n",
            self.center.x, self.center.y, self.center.z
        );
        for (c, &m) in cells {
            let t = if max > 0.0 && m > 0.0 { (1.0 + (m / max).log10() / 6.0).clamp(0.0, 1.0) } else { 0.0 };
            let v = (t * 255.0).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"#{v:02x}{:02x}{:02x}\"/>",
                10.0 + (c.x - x0) as f64 * cell,
                30.0 + (c.y - y0) as f64 * cell,
                v / 2,
                255 - v
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LayerCost;
    use crate::voxel::Coord3;

    #[test]
    fn empty_cost_report_is_header_only() {
        assert_eq!(CostReport::default().csv(), "layer,dense_params,nnz_params,flops\n");
    }

    #[test]
    fn erf_rows_and_exact_numbers() {
        let coords: Vec<Coord3> = (0..10).map(|i| Coord3::new(i, 0, 0)).collect();
        let magnitude: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 + 1e-17).collect();
        let erf = ErfMap { center: Coord3::new(3, 0, 0), coords, magnitude: magnitude.clone() };
        let csv = erf.csv();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 10);
        for (r, m) in rows.iter().zip(&magnitude) {
            let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(v, *m);
        }
    }

    #[test]
    fn re_emission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = CostReport {
            layers: vec![LayerCost { name: "a".into(), dense_params: 10, nnz_params: 6, flops: 120 }],
        };
        let (c1, s1) = emit_report(&r, &dir.path().join("one")).unwrap();
        let (c2, s2) = emit_report(&r, &dir.path().join("two")).unwrap();
        assert_eq!(std::fs::read(c1).unwrap(), std::fs::read(c2).unwrap());
        assert_eq!(std::fs::read(s1).unwrap(), std::fs::read(s2).unwrap());
        assert!(emit_report(&r, Path::new("/nonexistent/dir/x")).is_err());
    }
}
