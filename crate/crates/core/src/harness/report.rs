//! Report documents, their CSV dumps, and paper-style text tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::protocols::{CrossResMatrix, DetPoint, RocPoint};

pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const VERIFICATION: &str = "verification";
pub const CMC: &str = "cmc";
pub const OPEN_SET: &str = "open_set";
pub const RETRIEVAL: &str = "retrieval";
pub const CROSSRES: &str = "crossres";
pub const SUMMARY: &str = "summary";

/// Same-resolution 1:1 verification at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub resolution: String,
    pub tar: f64,
    pub far: f64,
    pub threshold: f64,
    pub far_unreachable: bool,
    pub genuine_accepts: usize,
    pub impostor_accepts: usize,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub accuracy: f64,
    pub accuracy_threshold: f64,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub report: String,
    pub format_version: u32,
    pub model: String,
    pub far_target: f64,
    pub rows: Vec<VerificationRow>,
}

/// Closed-set identification of probes at one resolution against the
/// full-resolution gallery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcRow {
    pub probe_resolution: String,
    pub rank1: f64,
    pub rank5: f64,
    pub probe_count: usize,
    pub hits_at_rank: Vec<f64>,
    pub hit_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcReport {
    pub report: String,
    pub format_version: u32,
    pub model: String,
    pub gallery_resolution: String,
    pub gallery_size: usize,
    pub rows: Vec<CmcRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetRow {
    pub probe_resolution: String,
    pub auc: f64,
    pub fpir_target: f64,
    pub tpir: f64,
    pub fnir: f64,
    pub fpir: f64,
    pub threshold: f64,
    pub mated_count: usize,
    pub unmated_count: usize,
    pub det: Vec<DetPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetReport {
    pub report: String,
    pub format_version: u32,
    pub model: String,
    pub gallery_resolution: String,
    pub enrolled_subjects: Vec<u32>,
    pub rows: Vec<OpenSetRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub probe_resolution: String,
    pub map: f64,
    /// Fraction of queries whose first retrieved item is relevant.
    pub top1: f64,
    pub query_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub report: String,
    pub format_version: u32,
    pub model: String,
    pub gallery_resolution: String,
    pub gallery_items: usize,
    pub rows: Vec<RetrievalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossResReport {
    pub report: String,
    pub format_version: u32,
    pub model: String,
    pub matrix: CrossResMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarRow {
    pub model: String,
    pub tar: Vec<f64>,
}

/// Cross-model tables: TAR per resolution for every model, and the
/// cross-resolution matrices of each student next to the teacher's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub report: String,
    pub format_version: u32,
    pub far_target: f64,
    pub resolutions: Vec<String>,
    pub tar_table: Vec<TarRow>,
    pub crossres: Vec<CrossResReport>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_csv<F>(path: &Path, header: &[&str], fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<fs::File>) -> std::result::Result<(), csv::Error>,
{
    let file = fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    fill(&mut w)?;
    w.flush().at(path)
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_verification_csv(path: &Path, report: &VerificationReport) -> Result<()> {
    write_csv(
        path,
        &["resolution", "threshold", "far", "tar", "impostor_accepts", "genuine_accepts"],
        |w| {
            for row in &report.rows {
                for p in &row.roc {
                    w.write_record([
                        row.resolution.clone(),
                        num(p.threshold),
                        num(p.far),
                        num(p.tar),
                        p.impostor_accepts.to_string(),
                        p.genuine_accepts.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn write_cmc_csv(path: &Path, report: &CmcReport) -> Result<()> {
    write_csv(path, &["probe_resolution", "rank", "hit_rate", "hits"], |w| {
        for row in &report.rows {
            for (r, (rate, hits)) in row.hits_at_rank.iter().zip(&row.hit_counts).enumerate() {
                w.write_record([
                    row.probe_resolution.clone(),
                    (r + 1).to_string(),
                    num(*rate),
                    hits.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn write_open_set_csv(path: &Path, report: &OpenSetReport) -> Result<()> {
    write_csv(
        path,
        &["probe_resolution", "threshold", "fpir", "fnir", "tpir", "false_positives", "false_negatives"],
        |w| {
            for row in &report.rows {
                for p in &row.det {
                    w.write_record([
                        row.probe_resolution.clone(),
                        num(p.threshold),
                        num(p.fpir),
                        num(p.fnir),
                        num(p.tpir),
                        p.false_positives.to_string(),
                        p.false_negatives.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn write_retrieval_csv(path: &Path, report: &RetrievalReport) -> Result<()> {
    write_csv(path, &["probe_resolution", "map", "top1", "query_count"], |w| {
        for row in &report.rows {
            w.write_record([
                row.probe_resolution.clone(),
                num(row.map),
                num(row.top1),
                row.query_count.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_crossres_csv(path: &Path, report: &CrossResReport) -> Result<()> {
    write_csv(
        path,
        &[
            "gallery_resolution",
            "probe_resolution",
            "tar",
            "far",
            "threshold",
            "far_unreachable",
            "genuine_count",
            "impostor_count",
        ],
        |w| {
            for row in &report.matrix.rows {
                for c in row {
                    let op = &c.operating_point;
                    w.write_record([
                        c.gallery_resolution.clone(),
                        c.probe_resolution.clone(),
                        num(op.tar),
                        num(op.far),
                        num(op.threshold),
                        op.far_unreachable.to_string(),
                        c.genuine_count.to_string(),
                        c.impostor_count.to_string(),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

pub fn write_summary_csv(path: &Path, summary: &SummaryReport) -> Result<()> {
    let mut header = vec!["model"];
    header.extend(summary.resolutions.iter().map(String::as_str));
    write_csv(path, &header, |w| {
        for row in &summary.tar_table {
            let mut rec = vec![row.model.clone()];
            rec.extend(row.tar.iter().map(|&t| format!("{t:.3}")));
            w.write_record(rec)?;
        }
        Ok(())
    })
}

fn percent(tar: f64) -> String {
    format!("{:.1}", tar * 100.0)
}

/// Markdown table of TAR per resolution, one row per model, three decimals.
pub fn tar_table_markdown(far_target: f64, resolutions: &[String], rows: &[TarRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "TAR@FAR={far_target:e} per input resolution (pixels)\n");
    let _ = writeln!(s, "| Model | {} |", resolutions.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(resolutions.len()));
    for row in rows {
        let cells: Vec<String> = row.tar.iter().map(|t| format!("{t:.3}")).collect();
        let _ = writeln!(s, "| {} | {} |", row.model, cells.join(" | "));
    }
    s
}

/// Lower-triangular markdown table of TAR in percent with one decimal. Row
/// labels are gallery resolutions and column labels probe resolutions; when
/// a reference matrix is given its value follows in brackets.
pub fn crossres_markdown(matrix: &CrossResMatrix, reference: Option<(&str, &CrossResMatrix)>) -> String {
    let n = matrix.resolutions.len();
    let mut s = String::new();
    let _ = write!(s, "TAR@FAR={:e} for cross-resolution verification", matrix.far_target);
    if let Some((name, _)) = reference {
        let _ = write!(s, "; bracketed values from {name}");
    }
    s.push_str("\n\n");
    let _ = writeln!(s, "| | {} |", matrix.resolutions.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(n));
    for (i, label) in matrix.resolutions.iter().enumerate() {
        let mut cells = Vec::with_capacity(n);
        for j in 0..n {
            let cell = match matrix.tar(i, j) {
                Some(t) if j <= i => match reference.and_then(|(_, r)| r.tar(i, j)) {
                    Some(rt) => format!("{} ({})", percent(t), percent(rt)),
                    None => percent(t),
                },
                _ => String::new(),
            };
            cells.push(cell);
        }
        let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{CrossResCell, OperatingPoint};

    fn matrix(labels: &[&str], tar: impl Fn(usize, usize) -> f64) -> CrossResMatrix {
        CrossResMatrix {
            resolutions: labels.iter().map(|s| s.to_string()).collect(),
            far_target: 0.001,
            rows: (0..labels.len())
                .map(|i| {
                    (0..=i)
                        .map(|j| CrossResCell {
                            probe_resolution: labels[j].to_string(),
                            gallery_resolution: labels[i].to_string(),
                            operating_point: OperatingPoint {
                                far_target: 0.001,
                                tar: tar(i, j),
                                far: 0.0,
                                threshold: 0.5,
                                genuine_accepts: 0,
                                impostor_accepts: 0,
                                far_unreachable: false,
                            },
                            genuine_count: 1,
                            impostor_count: 1,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn crossres_table_layout() {
        let m = matrix(&["8", "16", "full"], |i, j| 0.1 * (i + j) as f64 + 0.42);
        let r = matrix(&["8", "16", "full"], |_, _| 0.048);
        let text = crossres_markdown(&m, Some(("teacher", &r)));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], "| | 8 | 16 | full |");
        assert_eq!(lines[4], "| 8 | 42.0 (4.8) |  |  |");
        assert_eq!(lines[5], "| 16 | 52.0 (4.8) | 62.0 (4.8) |  |");
        assert_eq!(lines[6], "| full | 62.0 (4.8) | 72.0 (4.8) | 82.0 (4.8) |");
        assert!(!crossres_markdown(&m, None).contains('('));
    }

    #[test]
    fn tar_table_layout() {
        let rows = vec![TarRow {
            model: "T-C".into(),
            tar: vec![0.42, 0.854],
        }];
        let text = tar_table_markdown(1e-3, &["8".into(), "full".into()], &rows);
        assert!(text.contains("| Model | 8 | full |"));
        assert!(text.contains("| T-C | 0.420 | 0.854 |"));
    }
}
