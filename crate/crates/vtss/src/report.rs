//! Result persistence (CSV + JSON), run manifests, and SVG trend plots.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::ResultRecord;

pub const CSV_HEADER: &[&str] = &[
    "experiment",
    "row-id",
    "dataset",
    "task",
    "injection",
    "pretext_acc",
    "semisup_acc",
    "seed",
    "runtime_s",
    "fingerprint",
];

/// Write records with a fixed column order and fixed float formatting, so
/// reruns produce byte-identical rows (runtime aside).
pub fn write_records_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment.as_str(),
            r.row_id.as_str(),
            r.dataset.as_str(),
            r.task.as_str(),
            r.injection.as_str(),
            &format!("{:.4}", r.pretext_acc),
            &format!("{:.4}", r.semisup_acc),
            &r.seed.to_string(),
            &format!("{:.2}", r.runtime_s),
            r.fingerprint.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let get = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::Parse(format!("missing column {i} in {}", path.display())))
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?
                .parse()
                .map_err(|e| Error::Parse(format!("column {i}: {e}")))
        };
        out.push(ResultRecord {
            experiment: get(0)?.to_string(),
            row_id: get(1)?.to_string(),
            dataset: get(2)?.to_string(),
            task: get(3)?.to_string(),
            injection: get(4)?.to_string(),
            pretext_acc: num(5)?,
            semisup_acc: num(6)?,
            seed: get(7)?
                .parse()
                .map_err(|e| Error::Parse(format!("seed: {e}")))?,
            runtime_s: num(8)?,
            fingerprint: get(9)?.to_string(),
        });
    }
    Ok(out)
}

pub fn write_records_json(records: &[ResultRecord], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Provenance sidecar emitted next to every result file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub output_dir: PathBuf,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, output_dir: &Path, seed: u64) -> Result<Self> {
        let config_hash = match config_path {
            Some(p) => {
                let bytes = std::fs::read(p)?;
                let d = Sha256::digest(&bytes);
                Some(d.iter().map(|b| format!("{b:02x}")).collect())
            }
            None => None,
        };
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: config_path.map(|p| p.to_path_buf()),
            config_hash,
            output_dir: output_dir.to_path_buf(),
            outputs: Vec::new(),
            seed,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One plotted series: a name and (x, y) points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_B: f64 = 50.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_R: f64 = 20.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal line chart with axes, tick labels and a legend.
pub fn render_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    x_ticks: &[(f64, String)],
    series: &[Series],
    path: &Path,
) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Consistency("nothing to plot".into()));
    }
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let (x_min, x_max) = bounds(&xs);
    let (mut y_min, mut y_max) = bounds(&ys);
    if (y_max - y_min).abs() < 1e-9 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min).max(1e-12) * (PLOT_W - MARGIN_L - MARGIN_R);
    let sy = |y: f64| PLOT_H - MARGIN_B - (y - y_min) / (y_max - y_min) * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        PLOT_W / 2.0,
        escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = PLOT_W - MARGIN_R,
        t = MARGIN_T,
        b = PLOT_H - MARGIN_B
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        escape(y_label)
    ));
    for (x, label) in x_ticks {
        let px = sx(*x);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{b}\" x2=\"{px}\" y2=\"{b2}\" stroke=\"black\"/>\n\
             <text x=\"{px}\" y=\"{ty}\" text-anchor=\"middle\">{}</text>\n",
            escape(label),
            b = PLOT_H - MARGIN_B,
            b2 = PLOT_H - MARGIN_B + 5.0,
            ty = PLOT_H - MARGIN_B + 18.0
        ));
    }
    for i in 0..=4 {
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = sy(y);
        svg.push_str(&format!(
            "<line x1=\"{l2}\" y1=\"{py}\" x2=\"{l}\" y2=\"{py}\" stroke=\"black\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\">{y:.1}</text>\n",
            l = MARGIN_L,
            l2 = MARGIN_L - 5.0,
            tx = MARGIN_L - 8.0,
            ty = py + 4.0
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{lx2}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\">{}</text>\n",
            escape(&s.name),
            lx = PLOT_W - MARGIN_R - 130.0,
            lx2 = PLOT_W - MARGIN_R - 110.0,
            tx = PLOT_W - MARGIN_R - 104.0,
            ty = ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn rec(row: &str, c: f64) -> ResultRecord {
        ResultRecord {
            experiment: "exp1".into(),
            row_id: row.into(),
            dataset: "synth".into(),
            task: "rotation".into(),
            injection: "none".into(),
            pretext_acc: 80.0,
            semisup_acc: c,
            seed: 1,
            runtime_s: 2.5,
            fingerprint: "abcd".into(),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![rec("run1", 55.1234), rec("run2", 44.0)];
        write_records_csv(&records, &path).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].row_id, "run1");
        assert!((back[0].semisup_acc - 55.1234).abs() < 1e-9);
        assert_eq!(back[1].fingerprint, "abcd");
    }

    #[test]
    fn csv_rows_are_byte_stable() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let records = vec![rec("run1", 1.0 / 3.0 * 100.0)];
        write_records_csv(&records, &p1).unwrap();
        write_records_csv(&records, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn svg_chart_renders() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        let series = vec![Series {
            name: "C".into(),
            points: vec![(0.0, 60.0), (1.0, 58.0), (2.0, 40.0), (3.0, 12.0)],
        }];
        let ticks: Vec<(f64, String)> = (0..4).map(|i| (i as f64, format!("run{}", i + 1))).collect();
        render_line_chart("trend", "injection run", "accuracy", &ticks, &series, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, "{}").unwrap();
        let mut m = RunManifest::new("exp1", Some(&cfg), dir.path(), 7).unwrap();
        m.record_output(&dir.path().join("out.csv"));
        let mp = dir.path().join("manifest.json");
        m.write(&mp).unwrap();
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(&mp).unwrap()).unwrap();
        assert_eq!(back.command, "exp1");
        assert_eq!(back.seed, 7);
        assert!(back.config_hash.is_some());
        assert_eq!(back.outputs.len(), 1);
    }
}
