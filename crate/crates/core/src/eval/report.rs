use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, confusion_metrics, MetricsReport};
use super::slices::{discover_slices, subgroup_accuracy, SliceReport, SubgroupTable};
use super::svg::{grouped_bars, Panel};
use crate::data::EncodedDataset;
use crate::ensemble::Predictions;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Everything measured for one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub report_version: u32,
    pub method: String,
    pub split: String,
    pub metrics: MetricsReport,
    /// One table per true class present in the split.
    pub subgroups: Vec<SubgroupTable>,
    pub slices: Vec<SliceReport>,
}

impl MethodReport {
    pub fn build(
        method: &str,
        split: &str,
        preds: &Predictions,
        ds: &EncodedDataset,
        delta: f64,
        min_support: usize,
    ) -> Result<Self> {
        if preds.row_ids != ds.row_ids {
            return Err(Error::shape("predictions are not aligned with the dataset rows"));
        }
        let mut metrics = confusion_metrics(&preds.labels, &ds.labels)?;
        metrics.auroc = Some(auroc(&preds.scores, &ds.labels)?);
        // subgroup tables cover positive rows only; slices are searched per class
        let mut subgroups = Vec::new();
        if ds.labels.contains(&1) {
            subgroups.push(subgroup_accuracy(&preds.labels, ds, 1)?);
        }
        let mut slices = Vec::new();
        for class in [1u8, 0] {
            if ds.labels.contains(&class) {
                slices.push(discover_slices(&preds.labels, ds, class, delta, min_support)?);
            }
        }
        Ok(Self {
            report_version: REPORT_VERSION,
            method: method.into(),
            split: split.into(),
            metrics,
            subgroups,
            slices,
        })
    }

    pub fn subgroup(&self, class: u8) -> Option<&SubgroupTable> {
        self.subgroups.iter().find(|t| t.target_class == class)
    }

    pub fn slice_report(&self, class: u8) -> Option<&SliceReport> {
        self.slices.iter().find(|t| t.target_class == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    report_version: u32,
    reports: Vec<MethodReport>,
}

fn csv_bytes<const N: usize>(header: [&str; N], rows: Vec<[String; N]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the requested formats into `out_dir` and returns the paths written.
///
/// Files: `report.json`; `metrics.csv`, `subgroups.csv`, `slices.csv`;
/// `subgroups_y1.svg` (one panel per categorical feature, one bar per
/// method) and `metrics.svg`.
pub fn emit_report(reports: &[MethodReport], out_dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let formats: BTreeSet<ReportFormat> = formats.iter().copied().collect();
    if formats.is_empty() {
        log::warn!("no report formats requested; nothing written");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = out_dir.join(name);
        crate::util::write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    if formats.contains(&ReportFormat::Json) {
        let file = ReportFile {
            report_version: REPORT_VERSION,
            reports: reports.to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        put("report.json", text.as_bytes())?;
    }
    if formats.contains(&ReportFormat::Csv) {
        let metrics = reports
            .iter()
            .map(|r| {
                let m = &r.metrics;
                [
                    r.method.clone(),
                    r.split.clone(),
                    m.n.to_string(),
                    m.tp.to_string(),
                    m.fp.to_string(),
                    m.tn.to_string(),
                    m.fn_.to_string(),
                    m.accuracy.to_string(),
                    m.precision.to_string(),
                    m.recall.to_string(),
                    m.f1.to_string(),
                    opt(m.auroc),
                ]
            })
            .collect();
        put(
            "metrics.csv",
            &csv_bytes(
                ["method", "split", "n", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1", "auroc"],
                metrics,
            )?,
        )?;
        let mut sub = Vec::new();
        let mut sl = Vec::new();
        for r in reports {
            for t in &r.subgroups {
                for c in &t.cells {
                    sub.push([
                        r.method.clone(),
                        r.split.clone(),
                        t.target_class.to_string(),
                        c.feature.clone(),
                        c.category.clone(),
                        c.n.to_string(),
                        c.accuracy.to_string(),
                    ]);
                }
            }
            for t in &r.slices {
                for s in &t.slices {
                    sl.push([
                        r.method.clone(),
                        r.split.clone(),
                        t.target_class.to_string(),
                        s.feature.clone(),
                        s.category.clone(),
                        s.n.to_string(),
                        s.error_rate.to_string(),
                        t.overall_error.to_string(),
                        s.flagged.to_string(),
                    ]);
                }
            }
        }
        put(
            "subgroups.csv",
            &csv_bytes(["method", "split", "target_class", "feature", "category", "n", "accuracy"], sub)?,
        )?;
        put(
            "slices.csv",
            &csv_bytes(
                [
                    "method",
                    "split",
                    "target_class",
                    "feature",
                    "category",
                    "n",
                    "error_rate",
                    "overall_error",
                    "flagged",
                ],
                sl,
            )?,
        )?;
    }
    if formats.contains(&ReportFormat::Svg) && !reports.is_empty() {
        let series: Vec<String> = reports.iter().map(|r| r.method.clone()).collect();
        put("subgroups_y1.svg", subgroup_svg(reports, &series).as_bytes())?;
        let names = ["accuracy", "precision", "recall", "f1", "auroc"];
        let values = names
            .iter()
            .map(|&n| {
                reports
                    .iter()
                    .map(|r| {
                        let m = &r.metrics;
                        Some(match n {
                            "accuracy" => m.accuracy,
                            "precision" => m.precision,
                            "recall" => m.recall,
                            "f1" => m.f1,
                            _ => return m.auroc,
                        })
                    })
                    .collect()
            })
            .collect();
        let panel = Panel {
            title: format!("{} split", reports[0].split),
            groups: names.iter().map(|s| s.to_string()).collect(),
            values,
        };
        put("metrics.svg", grouped_bars("Metrics by method", &series, &[panel]).as_bytes())?;
    }
    Ok(written)
}

fn subgroup_svg(reports: &[MethodReport], series: &[String]) -> String {
    // feature order and category order from the first report that has them
    let mut panels: Vec<Panel> = Vec::new();
    let mut layout: Vec<(usize, String, Vec<String>)> = Vec::new();
    for r in reports {
        if let Some(t) = r.subgroup(1) {
            for c in &t.cells {
                match layout.iter_mut().find(|(j, _, _)| *j == c.feature_index) {
                    Some((_, _, cats)) => {
                        if !cats.contains(&c.category) {
                            cats.push(c.category.clone());
                        }
                    }
                    None => layout.push((c.feature_index, c.feature.clone(), vec![c.category.clone()])),
                }
            }
        }
    }
    layout.sort_by_key(|(j, _, _)| *j);
    for (j, name, cats) in layout {
        let values = cats
            .iter()
            .map(|cat| {
                reports
                    .iter()
                    .map(|r| {
                        r.subgroup(1).and_then(|t| {
                            t.cells
                                .iter()
                                .find(|c| c.feature_index == j && &c.category == cat)
                                .map(|c| c.accuracy)
                        })
                    })
                    .collect()
            })
            .collect();
        panels.push(Panel {
            title: name,
            groups: cats,
            values,
        });
    }
    grouped_bars("Accuracy on positively labeled rows", series, &panels)
}

/// Parses a `report.json` written by [`emit_report`].
pub fn read_reports(path: &Path) -> Result<Vec<MethodReport>> {
    let file: ReportFile = crate::util::read_json(path)?;
    if file.report_version != REPORT_VERSION {
        return Err(Error::artifact(path, format!("unsupported report_version {}", file.report_version)));
    }
    Ok(file.reports)
}
