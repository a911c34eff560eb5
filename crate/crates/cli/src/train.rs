//! Training loops: full pretraining on the source regime and policy-driven
//! fine-tuning on the target regime.
//!
//! One step builds a fresh gradient tape, runs every batch sample through
//! the model (prompts are generated once per batch), averages the
//! per-sample losses, and takes one optimizer step over the flattened
//! trainable parameters. Fisher-masked methods additionally run one
//! backward pass per sample to estimate the squared-gradient signal that
//! drives coordinate selection; the gradient used for the update itself is
//! always the batch backward pass, so a full-selection run is bit-identical
//! to plain AdamW.
//!
//! Losses follow the task: squared error for detail restoration, the
//! closed-form Gaussian CRPS (built from tape operations so it
//! differentiates) for ensemble correction, absolute error for
//! precipitation.

use std::path::PathBuf;
use std::time::Instant;

use wpft_core::autodiff::ValueId;
use wpft_core::backbone::BackboneConfig;
use wpft_core::error::{Error, Result};
use wpft_core::optim::AdamWConfig;
use wpft_core::params::{FlatLayout, ParamGroup};
use wpft_core::peft::{apply_policy, attach_for_method, Method, MethodSpec, Model};
use wpft_core::rng::StreamRng;
use wpft_core::sfas::{fisher_per_sample, FisherMode, MaskStats, SelectiveOptimizer, SfasConfig};
use wpft_core::tasks::{load_dataset, GridDataset, Regime, Split, TaskId};
use wpft_core::{AdamW, GradientSession, Gradients, ModelGraph, ParamStore, Tensor};

use crate::artifacts::{save_model, write_csv, ModelMeta};
use crate::config::ExperimentConfig;
use crate::eval::{evaluate_model, write_metric_rows};
use crate::schedule::cosine_warmup_lr;

/// Everything one training run reports besides its checkpoint.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_time_s: f64,
    pub mask_stats: Vec<MaskStats>,
    /// True when frozen parameters (and, for masked methods, never-selected
    /// backbone coordinates) are bit-identical to their pre-training values.
    pub freeze_audit_pass: bool,
    pub trainable_backbone: usize,
    pub trainable_total: usize,
}

/// Backbone dimensions implied by a dataset plus the configured model size.
/// The ensemble task predicts a two-channel Gaussian correction regardless
/// of its single target variable.
pub fn backbone_config(cfg: &ExperimentConfig, data: &GridDataset) -> BackboneConfig {
    let output_vars = match data.task {
        TaskId::Ensemble => 2,
        _ => data.target_vars(),
    };
    BackboneConfig {
        input_vars: data.input_vars(),
        output_vars,
        grid_h: data.grid.h,
        grid_w: data.grid.w,
        patch_h: cfg.model.patch,
        patch_w: cfg.model.patch,
        dim: cfg.model.dim,
        depth: cfg.model.depth,
        n_heads: cfg.model.heads,
        mlp_ratio: 4,
    }
}

/// One sample's tensors, ready to feed a tape.
struct SampleData {
    /// Normalized input `[V, H, W]`.
    x: Tensor,
    /// Raw target `[V_out, H, W]`.
    target: Tensor,
    /// Ensemble only: raw member mean and spread as `[1, H*W]` rows.
    mu: Option<Tensor>,
    sigma: Option<Tensor>,
}

fn collect_sample(data: &GridDataset, i: usize) -> SampleData {
    let (mu, sigma) = match (&data.ens_mean, &data.ens_std) {
        (Some(m), Some(s)) => {
            let hw = data.grid.h * data.grid.w;
            let mp = GridDataset::plane(m, i);
            let sp = GridDataset::plane(s, i);
            (
                Some(mp.reshape(&[1, hw]).expect("plane numel")),
                Some(sp.reshape(&[1, hw]).expect("plane numel")),
            )
        }
        _ => (None, None),
    };
    SampleData {
        x: data.normalized_input(i),
        target: data.target(i),
        mu,
        sigma,
    }
}

/// Mean of a `[V, H, W]` per-point loss with an optional extra weight on
/// the first channel. With weight 1 this is a plain mean.
fn weighted_channel_mean(
    g: &mut ModelGraph<'_, '_>,
    per_point: ValueId,
    first_weight: f64,
) -> Result<ValueId> {
    if first_weight == 1.0 {
        return g.session.mean(per_point);
    }
    let shape = g.session.value(per_point).shape().to_vec();
    let (v, hw) = (shape[0], shape[1] * shape[2]);
    let flat = g.session.reshape(per_point, &[v, hw])?;
    let first = g.session.narrow_first(flat, 0, 1)?;
    let m0 = g.session.mean(first)?;
    let m0w = g.session.mul_scalar(m0, first_weight)?;
    if v == 1 {
        // A single channel renormalizes back to the plain mean.
        return g.session.mul_scalar(m0w, 1.0 / first_weight);
    }
    let rest = g.session.narrow_first(flat, 1, v - 1)?;
    let mr = g.session.mean(rest)?;
    let mrw = g.session.mul_scalar(mr, (v - 1) as f64)?;
    let sum = g.session.add(m0w, mrw)?;
    g.session.mul_scalar(sum, 1.0 / (first_weight + (v - 1) as f64))
}

/// Differentiable closed-form CRPS of the Gaussian correction implied by a
/// two-channel output: `mu = y1 * sigma_ens + mu_ens`,
/// `sigma = exp(y2) * sigma_ens`.
fn crps_loss(g: &mut ModelGraph<'_, '_>, y: ValueId, s: &SampleData) -> Result<ValueId> {
    let shape = g.session.value(y).shape().to_vec();
    if shape[0] != 2 {
        return Err(Error::shape(
            "crps_loss",
            "[2, H, W] output",
            format!("{shape:?}"),
        ));
    }
    let hw = shape[1] * shape[2];
    let y2 = g.session.reshape(y, &[2, hw])?;
    let out1 = g.session.narrow_first(y2, 0, 1)?;
    let out2 = g.session.narrow_first(y2, 1, 1)?;
    let mu_e = g.input(s.mu.clone().expect("ensemble sample carries the member mean"));
    let sig_e = g.input(s.sigma.clone().expect("ensemble sample carries the member spread"));
    let x = g.input(s.target.reshape(&[1, hw])?);
    let scaled = g.session.mul(out1, sig_e)?;
    let mu = g.session.add(scaled, mu_e)?;
    let spread = g.session.exp(out2)?;
    let sigma = g.session.mul(spread, sig_e)?;
    let diff = g.session.sub(x, mu)?;
    let z = g.session.div(diff, sigma)?;
    let z2 = g.session.square(z)?;
    let z2h = g.session.mul_scalar(z2, -0.5)?;
    let expz = g.session.exp(z2h)?;
    let pdf2 = g.session.mul_scalar(expz, 2.0 / (2.0 * std::f64::consts::PI).sqrt())?;
    let cdf = g.session.norm_cdf(z)?;
    let cdf2 = g.session.mul_scalar(cdf, 2.0)?;
    let cdf2m1 = g.session.add_scalar(cdf2, -1.0)?;
    let zterm = g.session.mul(z, cdf2m1)?;
    let bracket = g.session.add(pdf2, zterm)?;
    let bracket = g.session.add_scalar(bracket, -1.0 / std::f64::consts::PI.sqrt())?;
    let crps = g.session.mul(sigma, bracket)?;
    g.session.mean(crps)
}

/// Per-sample scalar training loss for the task.
fn sample_loss(
    g: &mut ModelGraph<'_, '_>,
    task: TaskId,
    y: ValueId,
    s: &SampleData,
    surface_weight: f64,
) -> Result<ValueId> {
    match task {
        TaskId::Downscale => {
            let t = g.input(s.target.clone());
            let d = g.session.sub(y, t)?;
            let sq = g.session.square(d)?;
            weighted_channel_mean(g, sq, surface_weight)
        }
        TaskId::Precip => {
            let t = g.input(s.target.clone());
            let d = g.session.sub(y, t)?;
            let a = g.session.abs(d)?;
            weighted_channel_mean(g, a, surface_weight)
        }
        TaskId::Ensemble => crps_loss(g, y, s),
    }
}

/// Prompts for one batch graph: generated rows, learned rows, or none.
fn batch_prompts(model: &Model, g: &mut ModelGraph<'_, '_>) -> Result<Option<ValueId>> {
    if let Some(gen) = model.prompt_generator() {
        Ok(Some(gen.generate(g)?))
    } else if model.method() == Method::Vpt {
        Ok(Some(g.param("vpt.prompts")?))
    } else {
        Ok(None)
    }
}

fn flatten_grads(
    g: &ModelGraph<'_, '_>,
    grads: &Gradients,
    layout: &FlatLayout,
) -> Vec<f64> {
    let mut flat = vec![0.0; layout.total()];
    for (name, start, end) in layout.spans() {
        if let Some(t) = g.grad_of(grads, name) {
            flat[start..end].copy_from_slice(t.data());
        }
    }
    flat
}

struct StepOutput {
    loss: f64,
    grad: Vec<f64>,
    per_sample: Option<Vec<Vec<f64>>>,
}

fn batch_pass(
    model: &Model,
    store: &ParamStore,
    layout: &FlatLayout,
    task: TaskId,
    samples: &[SampleData],
    surface_weight: f64,
    want_per_sample: bool,
) -> Result<StepOutput> {
    let mut session = GradientSession::new();
    let mut g = ModelGraph::training(&mut session, store);
    let prompts = batch_prompts(model, &mut g)?;
    let mut losses = Vec::with_capacity(samples.len());
    for s in samples {
        let y = model
            .backbone()
            .forward(&mut g, &s.x, prompts, model.attachments())?;
        losses.push(sample_loss(&mut g, task, y, s, surface_weight)?);
    }
    let mut acc = losses[0];
    for &l in &losses[1..] {
        acc = g.session.add(acc, l)?;
    }
    let batch = g.session.mul_scalar(acc, 1.0 / losses.len() as f64)?;
    let loss = g.session.value(batch).item()?;
    let grads = g.session.backward(batch)?;
    let grad = flatten_grads(&g, &grads, layout);
    let per_sample = if want_per_sample {
        let mut all = Vec::with_capacity(losses.len());
        for &l in &losses {
            let gs = g.session.backward(l)?;
            all.push(flatten_grads(&g, &gs, layout));
        }
        Some(all)
    } else {
        None
    };
    Ok(StepOutput { loss, grad, per_sample })
}

/// Flat indices of backbone-group coordinates within a trainable layout.
fn backbone_domain(store: &ParamStore, layout: &FlatLayout) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for (name, start, end) in layout.spans() {
        if store.entry(name)?.group == ParamGroup::Backbone {
            idx.extend(start..end);
        }
    }
    Ok(idx)
}

/// Runs the optimizer loop over the dataset's training split, mutating the
/// store in place.
pub fn train_model(
    cfg: &ExperimentConfig,
    store: &mut ParamStore,
    model: &Model,
    data: &GridDataset,
) -> Result<TrainReport> {
    let layout = FlatLayout::of_trainable(store);
    if layout.total() == 0 {
        return Err(Error::config("nothing is trainable under this policy"));
    }
    let train_idx: Vec<usize> = data.splits.range(Split::Train).collect();
    if train_idx.is_empty() {
        return Err(Error::config("empty training split"));
    }
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;

    let opt_cfg = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let use_sfas = model.method().uses_sfas();
    let domain = backbone_domain(store, &layout)?;

    // Freeze-audit baselines: every frozen tensor, and for masked methods
    // the full masked domain.
    let frozen_before: Vec<(String, Tensor)> = store
        .entries()
        .iter()
        .filter(|e| !e.trainable)
        .map(|e| (e.name.clone(), e.tensor.clone()))
        .collect();
    let mut flat = layout.flatten(store);
    let domain_before: Vec<u64> = domain.iter().map(|&i| flat[i].to_bits()).collect();

    let mut plain = if use_sfas {
        None
    } else {
        Some(AdamW::new(layout.total(), opt_cfg))
    };
    let mut selective = if use_sfas {
        Some(SelectiveOptimizer::new(
            layout.total(),
            domain.clone(),
            opt_cfg,
            SfasConfig {
                k: cfg.sfas_k,
                gamma: cfg.sfas_gamma,
                total_steps,
                mode: FisherMode::PerSample,
                seed: cfg.seed,
            },
        )?)
    } else {
        None
    };

    let mut mask_stats = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let start = Instant::now();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        StreamRng::new(cfg.seed, "train.shuffle", epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<SampleData> =
                chunk.iter().map(|&i| collect_sample(data, i)).collect();
            let out = batch_pass(
                model,
                store,
                &layout,
                cfg.task,
                &samples,
                cfg.surface_weight,
                use_sfas,
            )?;
            if step == 0 {
                initial_loss = out.loss;
            }
            final_loss = out.loss;
            let lr = cosine_warmup_lr(step, total_steps, warmup_steps, cfg.base_lr)?;
            if let Some(sel) = selective.as_mut() {
                let per = out.per_sample.expect("per-sample grads requested");
                let per_domain: Vec<Vec<f64>> = per
                    .iter()
                    .map(|g| domain.iter().map(|&i| g[i]).collect())
                    .collect();
                let f_hat = fisher_per_sample(&per_domain)?;
                let stats = sel.step(&mut flat, &out.grad, &f_hat, lr)?;
                mask_stats.push(stats);
            } else {
                plain.as_mut().expect("plain optimizer").step(&mut flat, &out.grad, lr)?;
            }
            layout.unflatten(store, &flat)?;
            step += 1;
        }
    }
    let wall_time_s = start.elapsed().as_secs_f64();

    let mut freeze_audit_pass = true;
    for (name, before) in &frozen_before {
        freeze_audit_pass &= store.tensor(name)?.bit_eq(before);
    }
    if let Some(sel) = &selective {
        let flat_now = layout.flatten(store);
        for (j, &i) in domain.iter().enumerate() {
            if !sel.ever_selected()[j] {
                freeze_audit_pass &= flat_now[i].to_bits() == domain_before[j];
            }
        }
    }

    Ok(TrainReport {
        initial_loss,
        final_loss,
        wall_time_s,
        mask_stats,
        freeze_audit_pass,
        trainable_backbone: store.trainable_size(ParamGroup::Backbone),
        trainable_total: store.trainable_total(),
    })
}

/// Trains the backbone fully on the source-regime dataset and writes
/// `pretrained.wpck` into the output directory.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<(PathBuf, TrainReport)> {
    let data = load_dataset(&cfg.dataset_dir(Regime::Source))?;
    if data.task != cfg.task {
        return Err(Error::config(format!(
            "dataset is {} but config says {}",
            data.task.id(),
            cfg.task.id()
        )));
    }
    let bcfg = backbone_config(cfg, &data);
    let backbone = wpft_core::backbone::Backbone::new(bcfg)?;
    let mut store = ParamStore::new();
    backbone.init_params(&mut store, cfg.seed)?;
    let spec = MethodSpec::new(Method::Full, cfg.tadp_prompt_len);
    apply_policy(&mut store, Method::Full)?;
    let model = Model::assemble(bcfg, &spec, &store)?;
    let report = train_model(cfg, &mut store, &model, &data)?;
    let meta = ModelMeta {
        task: cfg.task,
        method: Method::Full,
        seed: cfg.seed,
        cfg: bcfg,
        lora_alpha: cfg.lora_alpha,
    };
    let path = cfg.out_dir.join("pretrained.wpck");
    save_model(&path, &store, &meta)?;
    write_result_csv(cfg, Method::Full, &report)?;
    Ok((path, report))
}

/// A completed fine-tuning run and its on-disk artifacts.
#[derive(Debug)]
pub struct FinetunedRun {
    pub checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub report: TrainReport,
}

fn write_result_csv(cfg: &ExperimentConfig, method: Method, report: &TrainReport) -> Result<()> {
    let header = [
        "method",
        "task",
        "seed",
        "trainable_params_backbone",
        "trainable_params_total",
        "wall_time_s",
        "freeze_audit",
        "initial_loss",
        "final_loss",
    ];
    let row = vec![
        method.id().to_string(),
        cfg.task.id().to_string(),
        cfg.seed.to_string(),
        report.trainable_backbone.to_string(),
        report.trainable_total.to_string(),
        format!("{:.3}", report.wall_time_s),
        if report.freeze_audit_pass { "pass" } else { "fail" }.to_string(),
        report.initial_loss.to_string(),
        report.final_loss.to_string(),
    ];
    write_csv(&cfg.out_dir.join("result.csv"), &header, &[row])
}

fn write_mask_stats_csv(cfg: &ExperimentConfig, stats: &[MaskStats]) -> Result<()> {
    let header = [
        "step",
        "selected_count",
        "overlap_with_prev",
        "noise_scale",
        "max_F",
        "median_F",
    ];
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.selected_count.to_string(),
                s.overlap_with_prev.to_string(),
                s.noise_scale.to_string(),
                s.max_f.to_string(),
                s.median_f.to_string(),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir.join("mask_stats.csv"), &header, &rows)
}

/// Loads the pretrained checkpoint, attaches and freezes per the method,
/// trains on the target regime, evaluates the test split, and writes the
/// run's artifacts (checkpoint, metrics.csv, result.csv, mask_stats.csv,
/// config_hash.txt).
pub fn finetune(cfg: &ExperimentConfig) -> Result<FinetunedRun> {
    let pre_path = cfg
        .pretrained
        .clone()
        .ok_or_else(|| Error::config("fine-tuning requires 'pretrained = <checkpoint>'"))?;
    let (mut store, pre_meta) = crate::artifacts::load_model(&pre_path)?;
    let data = load_dataset(&cfg.dataset_dir(Regime::Target))?;
    if data.task != cfg.task || pre_meta.task != cfg.task {
        return Err(Error::config(format!(
            "task mismatch: config {} vs dataset {} vs checkpoint {}",
            cfg.task.id(),
            data.task.id(),
            pre_meta.task.id()
        )));
    }
    let bcfg = backbone_config(cfg, &data);
    if pre_meta.cfg != bcfg {
        return Err(Error::config(
            "pretrained checkpoint dimensions do not match this run's model",
        ));
    }
    let mut spec = MethodSpec::new(cfg.method, cfg.tadp_prompt_len);
    spec.lora_rank = cfg.lora_rank;
    spec.lora_alpha = cfg.lora_alpha;
    spec.vpt_len = cfg.vpt_len;
    spec.adapter_ratio = cfg.adapter_ratio;
    attach_for_method(&mut store, &bcfg, &spec, cfg.seed)?;
    apply_policy(&mut store, cfg.method)?;
    let model = Model::assemble(bcfg, &spec, &store)?;
    let report = train_model(cfg, &mut store, &model, &data)?;

    let meta = ModelMeta {
        task: cfg.task,
        method: cfg.method,
        seed: cfg.seed,
        cfg: bcfg,
        lora_alpha: cfg.lora_alpha,
    };
    let checkpoint = cfg.out_dir.join("model.wpck");
    save_model(&checkpoint, &store, &meta)?;
    let rows = evaluate_model(&model, &store, &data, Split::Test, cfg.method, cfg.seed)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    write_metric_rows(&metrics_path, &rows)?;
    write_result_csv(cfg, cfg.method, &report)?;
    if model.method().uses_sfas() {
        write_mask_stats_csv(cfg, &report.mask_stats)?;
    }
    std::fs::write(cfg.out_dir.join("config_hash.txt"), cfg.hash())?;
    Ok(FinetunedRun {
        checkpoint,
        metrics_path,
        report,
    })
}
