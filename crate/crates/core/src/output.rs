//! Power-plot tables and their CSV, JSON and SVG renderings.
//!
//! CSV columns, in order:
//! `layer,p1,p1_std,p2,p2_std,p3,p3_std,p4,p4_std,rho,rho_std,linearity_residual,linearity_residual_std`.
//! Each value is the mean over seeds of a layer-level quantity (itself the
//! mean over channels), and each `_std` column is the population standard
//! deviation over seeds. Floats use the shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomnet::LayerTrace;
use crate::stats::Moments;

pub const CSV_HEADER: &str =
    "layer,p1,p1_std,p2,p2_std,p3,p3_std,p4,p4_std,rho,rho_std,linearity_residual,linearity_residual_std";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: impl IntoIterator<Item = f64>) -> MeanStd {
        let mut m = Moments::default();
        for x in xs {
            m.push(x);
        }
        MeanStd {
            mean: m.mean,
            std: m.std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerplotRow {
    pub layer: usize,
    pub p1: MeanStd,
    pub p2: MeanStd,
    pub p3: MeanStd,
    pub p4: MeanStd,
    pub rho: MeanStd,
    pub linearity_residual: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Powerplot {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<PowerplotRow>,
}

impl Powerplot {
    /// Aggregates per-seed traces of equal depth into one row per layer.
    pub fn aggregate(variant: &str, seeds: &[u64], traces: &[Vec<LayerTrace>]) -> Result<Powerplot> {
        let depth = traces.first().map_or(0, |t| t.len());
        if traces.is_empty() || depth == 0 || traces.iter().any(|t| t.len() != depth) {
            return Err(Error::Shape("power plot needs non-empty traces of equal depth".into()));
        }
        let rows = (0..depth)
            .map(|l| {
                let col = |f: &dyn Fn(&LayerTrace) -> f64| MeanStd::of(traces.iter().map(|t| f(&t[l])));
                PowerplotRow {
                    layer: traces[0][l].layer_index,
                    p1: col(&|t| t.decomp_y.layer.p1),
                    p2: col(&|t| t.decomp_y.layer.p2),
                    p3: col(&|t| t.decomp_y.layer.p3),
                    p4: col(&|t| t.decomp_y.layer.p4),
                    rho: col(&|t| t.decomp_y.rho_ratio),
                    linearity_residual: col(&|t| t.linearity.residual_ratio),
                }
            })
            .collect();
        Ok(Powerplot {
            variant: variant.to_string(),
            seeds: seeds.to_vec(),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            write!(s, "{}", r.layer).unwrap();
            for m in [r.p1, r.p2, r.p3, r.p4, r.rho, r.linearity_residual] {
                write!(s, ",{:?},{:?}", m.mean, m.std).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("power plot serializes")
    }

    /// Stacked areas of the four power terms against depth with the
    /// collapse ratio drawn on top.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const LEFT: f64 = 60.0;
        const RIGHT: f64 = 140.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 50.0;
        let colors = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];
        let names = ["P1", "P2", "P3", "P4"];

        let n = self.rows.len();
        let stacks: Vec<[f64; 4]> = self
            .rows
            .iter()
            .map(|r| {
                let v = [r.p1.mean, r.p2.mean, r.p3.mean, r.p4.mean].map(|x| x.max(0.0));
                [v[0], v[0] + v[1], v[0] + v[1] + v[2], v[0] + v[1] + v[2] + v[3]]
            })
            .collect();
        let y_max = stacks.iter().map(|s| s[3]).fold(1.0f64, f64::max);
        let x_of = |i: usize| {
            let span = (n.max(2) - 1) as f64;
            LEFT + (W - LEFT - RIGHT) * i as f64 / span
        };
        let y_of = |v: f64| H - BOTTOM - (H - TOP - BOTTOM) * v / y_max;

        let mut s = String::new();
        writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (W - RIGHT + LEFT) / 2.0, xml_escape(&self.variant)).unwrap();

        for k in 0..4 {
            let mut pts: Vec<String> = (0..n).map(|i| format!("{:.2},{:.2}", x_of(i), y_of(stacks[i][k]))).collect();
            for i in (0..n).rev() {
                let below = if k == 0 { 0.0 } else { stacks[i][k - 1] };
                pts.push(format!("{:.2},{:.2}", x_of(i), y_of(below)));
            }
            writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.85" stroke="none"/>"#, pts.join(" "), colors[k]).unwrap();
        }
        let rho: Vec<String> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", x_of(i), y_of(r.rho.mean)))
            .collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#, rho.join(" ")).unwrap();

        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, y_of(0.0), y_of(y_max));
        writeln!(s, r#"<line x1="{x0}" y1="{y0:.2}" x2="{x1}" y2="{y0:.2}" stroke="black"/>"#).unwrap();
        writeln!(s, r#"<line x1="{x0}" y1="{y0:.2}" x2="{x0}" y2="{y1:.2}" stroke="black"/>"#).unwrap();
        for t in 0..=4 {
            let v = y_max * t as f64 / 4.0;
            let y = y_of(v);
            writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0).unwrap();
            writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.2}</text>"#, x0 - 7.0, y + 4.0, v).unwrap();
        }
        let step = (n / 5).max(1);
        for i in (0..n).step_by(step) {
            let x = x_of(i);
            writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0).unwrap();
            writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 18.0, self.rows[i].layer).unwrap();
        }
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">layer</text>"#, (x0 + x1) / 2.0, H - 10.0).unwrap();
        writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">power</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0).unwrap();

        let lx = W - RIGHT + 20.0;
        for (k, name) in names.iter().enumerate().rev() {
            let ly = TOP + 10.0 + 22.0 * (3 - k) as f64;
            writeln!(s, r#"<rect x="{lx}" y="{ly}" width="14" height="14" fill="{}"/>"#, colors[k]).unwrap();
            writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 20.0, ly + 11.0).unwrap();
        }
        let ly = TOP + 10.0 + 22.0 * 4.0 + 7.0;
        writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-width="2"/>"#, lx + 14.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">(P−P1)/P</text>"#, lx + 20.0, ly + 4.0).unwrap();
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{LinearFitReport, PowerDecomposition, PowerTerms};

    fn trace(layer: usize, p: [f64; 4]) -> LayerTrace {
        let terms = PowerTerms {
            p_total: p.iter().sum(),
            p1: p[0],
            p2: p[1],
            p3: p[2],
            p4: p[3],
        };
        let d = PowerDecomposition {
            per_channel: vec![terms],
            layer: terms,
            rho_ratio: terms.rho(),
        };
        LayerTrace {
            layer_index: layer,
            decomp_y: d.clone(),
            decomp_z: d,
            linearity: LinearFitReport {
                lambda: vec![1.0],
                channel_residual: vec![0.0],
                residual_ratio: 0.5,
            },
        }
    }

    #[test]
    fn aggregate_mean_and_std() {
        let a = vec![trace(1, [0.0, 0.0, 1.0, 0.0]), trace(2, [0.2, 0.0, 0.8, 0.0])];
        let b = vec![trace(1, [0.0, 0.0, 1.0, 0.0]), trace(2, [0.4, 0.0, 0.6, 0.0])];
        let p = Powerplot::aggregate("ln", &[0, 1], &[a, b]).unwrap();
        assert_eq!(p.rows.len(), 2);
        assert!((p.rows[1].p1.mean - 0.3).abs() < 1e-15);
        assert!((p.rows[1].p1.std - 0.1).abs() < 1e-15);
        assert_eq!(p.rows[0].p3.std, 0.0);
        let csv = p.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 13);
        assert!(lines[2].starts_with("2,"));
    }

    #[test]
    fn unequal_depths_rejected() {
        let a = vec![trace(1, [0.0, 0.0, 1.0, 0.0])];
        assert!(Powerplot::aggregate("ln", &[0, 1], &[a, vec![]]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let a = vec![trace(1, [0.1, 0.2, 0.6, 0.1]), trace(2, [0.3, 0.1, 0.5, 0.1])];
        let svg = Powerplot::aggregate("ln+pn", &[0], &[a]).unwrap().to_svg();
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
