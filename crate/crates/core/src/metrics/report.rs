use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::Metric;
use crate::data::load_gray;
use crate::error::{Error, Result};

/// Conventions behind the numbers, written at the top of every report.
pub const VARIANT_NOTE: &str = "intensity scale 0-255; MI natural log, 256 bins; \
VIF pixel-domain 4-scale, sigma_n^2=2, pooled over both sources; \
Qabf Sobel with replicated borders, Tg=0.9994 kg=-15 Dg=0.5 Ta=0.9879 ka=-22 Da=0.8; \
LIQE/TOPIQ not computed";

const RESERVED: [&str; 2] = ["LIQE", "TOPIQ"];

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<Evaluation>,
    /// Files that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// Arithmetic mean per metric, in column order.
    pub fn means(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        (0..self.metrics.len())
            .map(|j| self.rows.iter().map(|r| r.values[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["image_id".to_string()];
        header.extend(self.metrics.iter().map(|m| m.name().to_string()));
        header.extend(RESERVED.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        let blanks = || RESERVED.iter().map(|_| String::new());
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            rec.extend(blanks());
            w.write_record(&rec)?;
        }
        let mut rec = vec!["mean".to_string()];
        rec.extend(self.means().iter().map(|v| v.to_string()));
        rec.extend(blanks());
        w.write_record(&rec)?;
        let body =
            String::from_utf8(w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?).expect("csv output is UTF-8");
        Ok(format!("# {VARIANT_NOTE}\n{body}"))
    }

    /// Fixed-width console table with a mean row.
    pub fn to_table(&self) -> String {
        let id_w = self.rows.iter().map(|r| r.id.len()).chain([8]).max().unwrap_or(8);
        let mut s = String::new();
        let _ = write!(s, "{:<id_w$}", "image");
        for m in &self.metrics {
            let _ = write!(s, " {:>10}", m.name());
        }
        s.push('\n');
        let mut line = |id: &str, vals: &[f64]| {
            let _ = write!(s, "{id:<id_w$}");
            for v in vals {
                let _ = write!(s, " {v:>10.4}");
            }
            s.push('\n');
        };
        for r in &self.rows {
            line(&r.id, &r.values);
        }
        line("mean", &self.means());
        s
    }
}

fn load_255(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let t = load_gray::<f64>(path)?;
    let (_, _, h, w) = t.dims4();
    Ok((t.into_data().into_iter().map(|v| v * 255.0).collect(), h, w))
}

/// Metrics of one fused image against its sources.
pub fn evaluate_pair(fused: &Path, ir: &Path, vis: &Path, metrics: &[Metric]) -> Result<Vec<f64>> {
    let (f, h, w) = load_255(fused)?;
    let (a, ha, wa) = load_255(ir)?;
    let (b, hb, wb) = load_255(vis)?;
    if (ha, wa) != (h, w) || (hb, wb) != (h, w) {
        return Err(Error::Dataset(format!(
            "{}: fused {h}x{w}, infrared {ha}x{wa}, visible {hb}x{wb}",
            fused.display()
        )));
    }
    let values: Vec<f64> = metrics.iter().map(|m| m.compute(&f, &a, &b, h, w)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Dataset(format!(
            "{}: {} is not finite",
            fused.display(),
            metrics[i].name()
        )));
    }
    Ok(values)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Evaluates every image in `fused_dir` against same-named sources. Pairs
/// with a missing counterpart or an error are listed in `skipped`.
pub fn evaluate_directory(fused_dir: &Path, ir_dir: &Path, vis_dir: &Path, metrics: &[Metric]) -> Result<MetricReport> {
    let files = image_files(fused_dir)?;
    if files.is_empty() {
        return Err(Error::Empty(format!("no images in {}", fused_dir.display())));
    }
    let results: Vec<std::result::Result<Evaluation, String>> = files
        .par_iter()
        .map(|f| {
            let name = f.file_name().expect("listed files have names");
            let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let (ir, vis) = (ir_dir.join(name), vis_dir.join(name));
            for p in [&ir, &vis] {
                if !p.is_file() {
                    return Err(format!("{id}: missing {}", p.display()));
                }
            }
            evaluate_pair(f, &ir, &vis, metrics)
                .map(|values| Evaluation { id: id.clone(), values })
                .map_err(|e| format!("{id}: {e}"))
        })
        .collect();
    let mut report = MetricReport {
        metrics: metrics.to_vec(),
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(e) => report.rows.push(e),
            Err(msg) => {
                log::warn!("skipping {msg}");
                report.skipped.push(msg);
            }
        }
    }
    if report.rows.is_empty() {
        return Err(Error::Dataset(format!(
            "no fused image in {} could be evaluated:\n  {}",
            fused_dir.display(),
            report.skipped.join("\n  ")
        )));
    }
    Ok(report)
}
