//! Evaluation: runs a model over a dataset split and computes the task's
//! metric set.
//!
//! Detail restoration reports latitude-weighted RMSE and mean bias per
//! variable; ensemble correction reports CRPS and extreme-weighted CRPS of
//! the corrected Gaussian; precipitation reports SEEPS, anomaly
//! correlation, and RMSE per lead plus threat scores at the median and
//! upper-quartile climatological thresholds. Climatological references come
//! from the dataset's own training split, never from evaluation data.

use std::path::Path;

use wpft_core::error::{Error, Result};
use wpft_core::metrics::{
    acc, crps_gaussian_field, eecrps, mean_bias, rmse_latweighted, seeps, threat_score,
    Climatology,
};
use wpft_core::peft::{Method, Model};
use wpft_core::tasks::{gaussian_correction, GridDataset, Split, TaskId};
use wpft_core::{GradientSession, ModelGraph, ParamStore, Tensor};

/// One line of the metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub task: String,
    pub variable: String,
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub const METRICS_HEADER: [&str; 7] =
    ["method", "task", "variable", "metric", "value", "n_samples", "seed"];

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.task.clone(),
                r.variable.clone(),
                r.metric.clone(),
                r.value.to_string(),
                r.n_samples.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    crate::artifacts::write_csv(path, &METRICS_HEADER, &records)
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let (header, records) = crate::artifacts::read_csv(path)?;
    if header != METRICS_HEADER {
        return Err(Error::format(0, format!("{} has an unexpected header", path.display())));
    }
    records
        .into_iter()
        .map(|r| {
            Ok(MetricRow {
                method: r[0].clone(),
                task: r[1].clone(),
                variable: r[2].clone(),
                metric: r[3].clone(),
                value: r[4]
                    .parse()
                    .map_err(|_| Error::format(0, format!("bad metric value '{}'", r[4])))?,
                n_samples: r[5]
                    .parse()
                    .map_err(|_| Error::format(0, format!("bad sample count '{}'", r[5])))?,
                seed: r[6]
                    .parse()
                    .map_err(|_| Error::format(0, format!("bad seed '{}'", r[6])))?,
            })
        })
        .collect()
}

/// Model outputs over a split, stacked as `[N, V_out, H, W]`.
pub fn predictions(
    model: &Model,
    store: &ParamStore,
    data: &GridDataset,
    split: Split,
) -> Result<Tensor> {
    let range = data.splits.range(split);
    let n = range.len();
    let mut out = Vec::new();
    let mut shape = Vec::new();
    for i in range {
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, store);
        let y = model.forward(&mut g, &data.normalized_input(i))?;
        let t = g.session.value(y);
        if shape.is_empty() {
            shape = t.shape().to_vec();
        }
        out.extend_from_slice(t.data());
    }
    let mut full = vec![n];
    full.extend_from_slice(&shape);
    Tensor::new(full, out)
}

/// Channel `v` of an `[N, V, H, W]` stack as `[N, H, W]`, restricted to a
/// sample range.
fn channel_stack(t: &Tensor, v: usize, samples: std::ops::Range<usize>) -> Tensor {
    let s = t.shape();
    let (vars, hw) = (s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(samples.len() * hw);
    for i in samples.clone() {
        let base = (i * vars + v) * hw;
        data.extend_from_slice(&t.data()[base..base + hw]);
    }
    Tensor::new(vec![samples.len(), s[2], s[3]], data).expect("slice of a validated tensor")
}

/// An `[N, H, W]` side field restricted to a sample range.
fn field_stack(t: &Tensor, samples: std::ops::Range<usize>) -> Tensor {
    let s = t.shape();
    let hw = s[1] * s[2];
    let data = t.data()[samples.start * hw..samples.end * hw].to_vec();
    Tensor::new(vec![samples.len(), s[1], s[2]], data).expect("slice of a validated tensor")
}

/// Computes the task's metric set for one trained model over a split.
/// Evaluation never mutates the store.
pub fn evaluate_model(
    model: &Model,
    store: &ParamStore,
    data: &GridDataset,
    split: Split,
    method: Method,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let preds = predictions(model, store, data, split)?;
    let range = data.splits.range(split);
    let n = range.len();
    let weights = data.grid.latitude_weights()?;
    let row = |variable: &str, metric: &str, value: f64| MetricRow {
        method: method.id().to_string(),
        task: data.task.id().to_string(),
        variable: variable.to_string(),
        metric: metric.to_string(),
        value,
        n_samples: n,
        seed,
    };
    let mut rows = Vec::new();
    match data.task {
        TaskId::Downscale => {
            for (v, name) in data.target_names.iter().enumerate() {
                let pred = channel_stack(&preds, v, 0..n);
                let truth = channel_stack(&data.targets, v, range.clone());
                rows.push(row(name, "rmse", rmse_latweighted(&pred, &truth, &weights)?));
                rows.push(row(name, "bias", mean_bias(&pred, &truth)?));
            }
        }
        TaskId::Ensemble => {
            let mu_e = field_stack(
                data.ens_mean.as_ref().ok_or_else(|| Error::contract("missing member mean"))?,
                range.clone(),
            );
            let sig_e = field_stack(
                data.ens_std.as_ref().ok_or_else(|| Error::contract("missing member spread"))?,
                range.clone(),
            );
            let efi = field_stack(
                data.efi.as_ref().ok_or_else(|| Error::contract("missing weight field"))?,
                range.clone(),
            );
            let out1 = channel_stack(&preds, 0, 0..n);
            let out2 = channel_stack(&preds, 1, 0..n);
            let (mu, sigma) = gaussian_correction(&out1, &out2, &mu_e, &sig_e)?;
            let truth = channel_stack(&data.targets, 0, range.clone());
            let crps_field = crps_gaussian_field(&mu, &sigma, &truth)?;
            let crps = crps_field.mean_all();
            let name = &data.target_names[0];
            rows.push(row(name, "crps", crps));
            rows.push(row(name, "eecrps", eecrps(&crps_field, &efi)?));
        }
        TaskId::Precip => {
            let train = data.splits.range(Split::Train);
            for (l, name) in data.target_names.iter().enumerate() {
                let pred = channel_stack(&preds, l, 0..n);
                let obs = channel_stack(&data.targets, l, range.clone());
                let reference = channel_stack(&data.targets, l, train.clone());
                let clim = Climatology::from_reference(&reference, 0.1)?;
                rows.push(row(name, "seeps", seeps(&pred, &obs, &clim, &weights)?));
                rows.push(row(name, "acc", acc(&pred, &obs, &clim.mean, &weights)?));
                rows.push(row(name, "rmse", rmse_latweighted(&pred, &obs, &weights)?));
                rows.push(row(name, "threat_50", threat_score(&pred, &obs, &clim.q50)?));
                rows.push(row(name, "threat_75", threat_score(&pred, &obs, &clim.q75)?));
            }
        }
    }
    Ok(rows)
}
