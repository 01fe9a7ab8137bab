use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::RunRecord;
use crate::error::{Error, Result};

/// One measured cell of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub setting: String,
    /// Numeric position on the chart's x axis.
    pub x: f64,
    pub mean: f64,
    /// Half-width of the confidence interval at `ResultTable::confidence`.
    pub ci: f64,
    /// The run behind this cell diverged; `mean` and `ci` are not meaningful.
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    /// Confidence level of the `ci` column, e.g. 0.95.
    pub confidence: f64,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(name: &str, x_label: &str, confidence: f64) -> Self {
        ResultTable {
            name: name.into(),
            x_label: x_label.into(),
            y_label: "accuracy".into(),
            confidence,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, strategy: impl Into<String>, setting: impl Into<String>, x: f64, mean: f64, ci: f64) {
        self.rows.push(ResultRow { strategy: strategy.into(), setting: setting.into(), x, mean, ci, failed: false });
    }

    pub fn push_failed(&mut self, strategy: impl Into<String>, setting: impl Into<String>, x: f64) {
        self.rows.push(ResultRow { strategy: strategy.into(), setting: setting.into(), x, mean: 0.0, ci: 0.0, failed: true });
    }

    pub fn find(&self, strategy: &str, setting: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.setting == setting)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,strategy,setting,x,mean,ci,confidence,failed\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&self.name),
                csv_field(&r.strategy),
                csv_field(&r.setting),
                r.x,
                r.mean,
                r.ci,
                self.confidence,
                r.failed
            );
        }
        out
    }

    /// Point chart with one `<circle>` per non-failed row, CI whiskers and one
    /// polyline per strategy.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const L: f64 = 60.0;
        const R: f64 = 140.0;
        const T: f64 = 30.0;
        const B: f64 = 50.0;
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let plotted: Vec<&ResultRow> = self.rows.iter().filter(|r| !r.failed).collect();
        for r in &plotted {
            x_lo = x_lo.min(r.x);
            x_hi = x_hi.max(r.x);
            y_lo = y_lo.min(r.mean - r.ci);
            y_hi = y_hi.max(r.mean + r.ci);
        }
        if plotted.is_empty() {
            (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_hi - x_lo < 1e-12 {
            x_lo -= 1.0;
            x_hi += 1.0;
        }
        if y_hi - y_lo < 1e-12 {
            y_lo -= 0.05;
            y_hi += 0.05;
        }
        let px = |x: f64| L + (x - x_lo) / (x_hi - x_lo) * (W - L - R);
        let py = |y: f64| H - B - (y - y_lo) / (y_hi - y_lo) * (H - T - B);

        let mut series: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
        for r in plotted {
            series.entry(r.strategy.as_str()).or_default().push(r);
        }

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(&self.name));
        let _ = writeln!(
            s,
            r##"<g stroke="#444" stroke-width="1"><line x1="{L}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}"/><line x1="{L}" y1="{T}" x2="{L}" y2="{0:.2}"/></g>"##,
            H - B,
            W - R
        );
        for (v, y) in [(y_lo, H - B), (y_hi, T)] {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v:.3}</text>"#, L - 4.0, y + 3.0);
        }
        for (v, x) in [(x_lo, L), (x_hi, W - R)] {
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{v}</text>"#, H - B + 14.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            (L + W - R) / 2.0,
            H - 10.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
            H / 2.0,
            H / 2.0,
            xml_escape(&self.y_label)
        );
        for (i, (name, rows)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut sorted = rows.clone();
            sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
            if sorted.len() > 1 {
                let pts: Vec<String> = sorted.iter().map(|r| format!("{:.2},{:.2}", px(r.x), py(r.mean))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            for r in rows {
                let (cx, cy) = (px(r.x), py(r.mean));
                let _ = writeln!(
                    s,
                    r#"<line class="whisker" stroke="{color}" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}"/>"#,
                    py(r.mean - r.ci),
                    py(r.mean + r.ci)
                );
                let _ = writeln!(
                    s,
                    r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3.5" fill="{color}"><title>{} {}: {:.4} ± {:.4}</title></circle>"#,
                    xml_escape(&r.strategy),
                    xml_escape(&r.setting),
                    r.mean,
                    r.ci
                );
            }
            let ly = T + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{ly:.2}" font-size="11" fill="{color}">{}</text>"#,
                W - R + 10.0,
                xml_escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Everything an experiment produced. Serialized as `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub tables: Vec<ResultTable>,
    pub runs: Vec<RunRecord>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report { experiment: experiment.into(), tables: Vec::new(), runs: Vec::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes `results.json`, `results.csv` and `charts/<table>.svg` under
/// `out_dir`. Output bytes depend only on the report contents.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<()> {
    let charts = out_dir.join("charts");
    std::fs::create_dir_all(&charts).map_err(|e| Error::io(&charts, e))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write(&out_dir.join("results.json"), json.as_bytes())?;

    let mut csv = String::from("table,strategy,setting,x,mean,ci,confidence,failed\n");
    for t in &report.tables {
        csv.extend(t.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
    }
    write(&out_dir.join("results.csv"), csv.as_bytes())?;

    for t in &report.tables {
        write(&charts.join(format!("{}.svg", file_stem(&t.name))), t.to_svg().as_bytes())?;
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
