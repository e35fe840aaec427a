//! Machine-readable run reports: per-run and aggregate JSON documents
//! and CSV renderings for sweeps and Gram matrices.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::metrics::MetricReport;

pub const SCHEMA_VERSION: u32 = 1;

/// The three loss components and their weighted total for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub cluster: f64,
    pub contrastive: f64,
    pub similarity: f64,
    pub total: f64,
}

/// Everything one training run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub library_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: MetricReport,
    pub loss_trace: Vec<EpochLoss>,
    pub wall_seconds: f64,
    pub timestamp_unix: u64,
}

/// Mean and sample standard deviation (n - 1 denominator) of one metric
/// across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStats { mean, std }
}

/// Aggregate over the runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub library_version: String,
    pub config_hash: String,
    pub config: BTreeMap<String, Value>,
    pub runs: Vec<RunReport>,
    pub acc: MetricStats,
    pub nmi: MetricStats,
    pub ari: MetricStats,
    pub f1: MetricStats,
    pub wall_seconds: MetricStats,
    /// False when there is a single run: the std fields then hold 0 by
    /// convention but carry no information.
    pub std_defined: bool,
    pub timestamp_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl AggregateReport {
    pub fn from_runs(config: &RunConfig, runs: Vec<RunReport>) -> Self {
        let pick = |f: fn(&MetricReport) -> f64| -> Vec<f64> {
            runs.iter().map(|r| f(&r.metrics)).collect()
        };
        let wall: Vec<f64> = runs.iter().map(|r| r.wall_seconds).collect();
        AggregateReport {
            schema_version: SCHEMA_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: config.raw_map().clone(),
            std_defined: runs.len() > 1,
            acc: stats(&pick(|m| m.acc)),
            nmi: stats(&pick(|m| m.nmi)),
            ari: stats(&pick(|m| m.ari)),
            f1: stats(&pick(|m| m.f1)),
            wall_seconds: stats(&wall),
            runs,
            timestamp_unix: unix_now(),
        }
    }
}

/// Render a matrix as CSV with 17 significant decimal digits, enough to
/// round-trip every f64 exactly.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// CSV summary of labeled aggregate reports, one row per configuration.
pub fn sweep_to_csv(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from(
        "label,runs,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,f1_mean,f1_std,wall_mean_s\n",
    );
    for (label, report) in rows {
        out.push_str(&format!(
            "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            report.runs.len(),
            report.acc.mean,
            report.acc.std,
            report.nmi.mean,
            report.nmi.std,
            report.ari.mean,
            report.ari.std,
            report.f1.mean,
            report.f1.std,
            report.wall_seconds.mean,
        ));
    }
    out
}
