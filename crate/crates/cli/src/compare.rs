//! Method comparison: run (or reuse) a set of fine-tuning configs and
//! merge their metric reports into one table.
//!
//! A run is reused when its output directory already holds a checkpoint,
//! metrics, and a config hash matching the requested configuration;
//! otherwise it is trained now. A config that fails still produces a table
//! row carrying its error, so one broken run never hides the others.

use std::path::{Path, PathBuf};

use wpft_core::error::{Error, Result};

use crate::artifacts::{read_csv, write_csv};
use crate::config::ExperimentConfig;
use crate::eval::{read_metric_rows, MetricRow};
use crate::train::finetune;

pub const COMPARE_HEADER: [&str; 9] = [
    "method",
    "task",
    "seed",
    "trainable_params_backbone",
    "trainable_params_total",
    "variable",
    "metric",
    "value",
    "status",
];

struct RunResult {
    rows: Vec<MetricRow>,
    backbone_params: String,
    total_params: String,
}

/// Trains the config unless its artifacts already match its hash, then
/// loads the run's metric rows and parameter counts.
fn run_or_load(cfg: &ExperimentConfig) -> Result<RunResult> {
    let hash_file = cfg.out_dir.join("config_hash.txt");
    let metrics_file = cfg.out_dir.join("metrics.csv");
    let checkpoint = cfg.out_dir.join("model.wpck");
    let cached = hash_file.exists()
        && metrics_file.exists()
        && checkpoint.exists()
        && std::fs::read_to_string(&hash_file)? == cfg.hash();
    if !cached {
        finetune(cfg)?;
    }
    let rows = read_metric_rows(&metrics_file)?;
    let (header, records) = read_csv(&cfg.out_dir.join("result.csv"))?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let record = records
        .first()
        .ok_or_else(|| Error::format(0, "result.csv is empty".to_string()))?;
    let backbone_params = col("trainable_params_backbone")
        .map(|i| record[i].clone())
        .unwrap_or_default();
    let total_params = col("trainable_params_total")
        .map(|i| record[i].clone())
        .unwrap_or_default();
    Ok(RunResult { rows, backbone_params, total_params })
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub table_path: PathBuf,
    pub succeeded: usize,
    pub failed: usize,
}

/// Runs every config and writes the merged table, sorted by method. Errors
/// in individual runs become per-row reports, not failures of the whole
/// comparison.
pub fn compare(config_paths: &[PathBuf], out_path: &Path) -> Result<CompareOutcome> {
    if config_paths.len() < 2 {
        return Err(Error::config("comparison needs at least two configs"));
    }
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut succeeded = 0;
    let mut failed = 0;
    for path in config_paths {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let attempt = ExperimentConfig::from_file(path).and_then(|cfg| {
            let run = run_or_load(&cfg)?;
            Ok((cfg, run))
        });
        match attempt {
            Ok((cfg, run)) => {
                succeeded += 1;
                for r in run.rows {
                    table.push(vec![
                        cfg.method.id().to_string(),
                        cfg.task.id().to_string(),
                        cfg.seed.to_string(),
                        run.backbone_params.clone(),
                        run.total_params.clone(),
                        r.variable,
                        r.metric,
                        r.value.to_string(),
                        "ok".to_string(),
                    ]);
                }
            }
            Err(e) => {
                failed += 1;
                table.push(vec![
                    label,
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("error: {}", e.to_string().replace(',', ";")),
                ]);
            }
        }
    }
    table.sort();
    write_csv(out_path, &COMPARE_HEADER, &table)?;
    Ok(CompareOutcome {
        table_path: out_path.to_path_buf(),
        succeeded,
        failed,
    })
}
