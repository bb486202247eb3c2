use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::ConfusionMatrix;
use super::training::TrainingLog;
use crate::audio_io::Snr;
use crate::corpus::ShoutClass;
use crate::error::{Error, Result};
use crate::models::TaskHead;

/// Bumped whenever a report field changes meaning.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrMetrics {
    pub snr: Snr,
    /// Clips or blocks scored.
    pub units: usize,
    pub f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub rmse: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    /// (actual, predicted) intensity pairs.
    pub scatter: Vec<(f64, f64)>,
    /// Four-class decisions resolved by the lowest-index tie rule.
    pub ties: usize,
}

impl SnrMetrics {
    /// The task's headline number.
    pub fn score(&self) -> f64 {
        self.f1.or(self.weighted_f1).or(self.rmse).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSeeds {
    pub validation: u64,
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldReport {
    pub fold: usize,
    pub train_speakers: Vec<String>,
    pub validation_speakers: Vec<String>,
    pub test_speakers: Vec<String>,
    pub seeds: FoldSeeds,
    pub training: Vec<TrainingLog>,
    pub metrics: Vec<SnrMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrAverage {
    pub snr: Snr,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub label: String,
    pub model: String,
    /// `f1`, `weighted-f1` or `rmse`.
    pub metric: String,
    pub config: ExperimentConfig,
    pub fold_seed: u64,
    pub paper_split: bool,
    pub folds: Vec<FoldReport>,
    /// Cross-fold mean per SNR.
    pub averages: Vec<SnrAverage>,
    /// Mean of `averages`.
    pub overall: f64,
}

pub fn metric_name(task: TaskHead) -> &'static str {
    match task {
        TaskHead::Binary => "f1",
        TaskHead::FourClass => "weighted-f1",
        TaskHead::Regression => "rmse",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellReport {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub exit_code: Option<i32>,
    pub report: Option<ExperimentReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub cells: Vec<CellReport>,
    pub failures: usize,
}

impl SuiteReport {
    /// Exit code of the first failed cell, or 0.
    pub fn exit_code(&self) -> i32 {
        self.cells.iter().find_map(|c| c.exit_code).unwrap_or(0)
    }

    pub fn reports(&self) -> impl Iterator<Item = &ExperimentReport> {
        self.cells.iter().filter_map(|c| c.report.as_ref())
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "report schema version {v}, this build reads {REPORT_SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

/// A report file holds either one experiment or a suite.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportFile {
    Experiment(ExperimentReport),
    Suite(SuiteReport),
}

impl ReportFile {
    /// Parses strictly: unknown fields or another schema version are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let parsed = if value.get("cells").is_some() {
            ReportFile::Suite(serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?)
        } else {
            ReportFile::Experiment(serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?)
        };
        match &parsed {
            ReportFile::Experiment(r) => check_version(r.schema_version)?,
            ReportFile::Suite(s) => {
                check_version(s.schema_version)?;
                for r in s.reports() {
                    check_version(r.schema_version)?;
                }
            }
        }
        Ok(parsed)
    }

    pub fn experiments(&self) -> Vec<&ExperimentReport> {
        match self {
            ReportFile::Experiment(r) => vec![r],
            ReportFile::Suite(s) => s.reports().collect(),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One row per experiment: label, metric, cross-fold score per SNR, `Avg`.
/// SNR columns follow the first report; others must share them.
pub fn write_score_table<W: Write>(w: W, reports: &[&ExperimentReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = reports.first() else {
        return Err(Error::Config("no reports to tabulate".into()));
    };
    let snrs: Vec<Snr> = first.averages.iter().map(|a| a.snr).collect();
    let mut header = vec!["model".to_string(), "metric".to_string()];
    header.extend(snrs.iter().map(|s| s.label()));
    header.push("Avg".into());
    out.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let own: Vec<Snr> = r.averages.iter().map(|a| a.snr).collect();
        if own != snrs {
            return Err(Error::Config(format!("{} uses a different SNR list", r.label)));
        }
        let mut row = vec![r.label.clone(), r.metric.clone()];
        row.extend(r.averages.iter().map(|a| format!("{:.4}", a.score)));
        row.push(format!("{:.4}", r.overall));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Long-form confusion counts summed over folds:
/// `model,snr,true_class,predicted_class,count,row_percent`.
pub fn write_confusion_csv<W: Write>(w: W, reports: &[&ExperimentReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "snr", "true_class", "predicted_class", "count", "row_percent"])
        .map_err(csv_err)?;
    for r in reports {
        for avg in &r.averages {
            let mut total = vec![vec![0usize; 4]; 4];
            let mut any = false;
            for fold in &r.folds {
                for m in fold.metrics.iter().filter(|m| m.snr == avg.snr) {
                    if let Some(cm) = &m.confusion {
                        any = true;
                        for (i, row) in cm.counts.iter().enumerate() {
                            for (j, c) in row.iter().enumerate() {
                                total[i][j] += c;
                            }
                        }
                    }
                }
            }
            if !any {
                continue;
            }
            for (i, row) in total.iter().enumerate() {
                let n: usize = row.iter().sum();
                for (j, &c) in row.iter().enumerate() {
                    let pct = if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
                    out.write_record([
                        r.label.clone(),
                        avg.snr.label(),
                        class_name(i),
                        class_name(j),
                        c.to_string(),
                        format!("{pct:.2}"),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

fn class_name(i: usize) -> String {
    ShoutClass::from_index(i).map_or_else(|_| i.to_string(), |c| c.label().to_string())
}

/// `model,fold,snr,actual,predicted` for regression reports.
pub fn write_scatter_csv<W: Write>(w: W, reports: &[&ExperimentReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "fold", "snr", "actual", "predicted"])
        .map_err(csv_err)?;
    for r in reports {
        for fold in &r.folds {
            for m in &fold.metrics {
                for (a, p) in &m.scatter {
                    out.write_record([
                        r.label.clone(),
                        fold.fold.to_string(),
                        m.snr.label(),
                        a.to_string(),
                        p.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// `model,stage,fold,epoch,train_loss,validation_loss`.
pub fn write_training_csv<W: Write>(w: W, reports: &[&ExperimentReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "stage", "fold", "epoch", "train_loss", "validation_loss"])
        .map_err(csv_err)?;
    for r in reports {
        for fold in &r.folds {
            for log in &fold.training {
                for e in &log.epochs {
                    out.write_record([
                        r.label.clone(),
                        log.stage.clone(),
                        fold.fold.to_string(),
                        e.epoch.to_string(),
                        e.train_loss.to_string(),
                        e.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}
