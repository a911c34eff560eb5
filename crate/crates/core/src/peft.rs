//! Fine-tuning strategies over a pretrained backbone.
//!
//! A [`Method`] names what gets trained; [`attach_for_method`] inserts any
//! auxiliary parameters the method needs (low-rank adapters, scale-shift
//! vectors, parallel adapters, prompt rows, the prompt generator), and
//! [`apply_policy`] sets the trainable flags. [`Model`] bundles the backbone
//! with whichever structure is active so callers get one `forward`.
//!
//! Every auxiliary structure initializes to an exact no-op (zero low-rank
//! second factor, unit scale / zero shift, zero adapter up-projection), so a
//! freshly configured model reproduces the pretrained outputs. Learned
//! prompt rows are the exception: injecting rows changes attention, so their
//! no-op form is simply not injecting them.

use crate::autodiff::ValueId;
use crate::backbone::{
    AdapterSpec, Attachments, Backbone, BackboneConfig, LoraSpec, INIT_STD, LORA_POINTS,
    SSF_POINTS,
};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::params::{ParamGroup, ParamStore};
use crate::rng::StreamRng;
use crate::tadp::{PromptGenerator, TadpConfig};
use crate::tensor::{ops, TensorBase};
use crate::Tensor;

pub const DEFAULT_LORA_RANK: usize = 8;
pub const DEFAULT_LORA_ALPHA: f64 = 1.0;
pub const DEFAULT_VPT_LEN: usize = 50;
pub const DEFAULT_ADAPTER_RATIO: f64 = 0.25;

/// Fine-tuning strategy identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Full,
    LinearProbe,
    BiasOnly,
    Lora,
    Ssf,
    Vpt,
    Adaptformer,
    TadpOnly,
    SfasOnly,
    Weatherpeft,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Full,
        Method::LinearProbe,
        Method::BiasOnly,
        Method::Lora,
        Method::Ssf,
        Method::Vpt,
        Method::Adaptformer,
        Method::TadpOnly,
        Method::SfasOnly,
        Method::Weatherpeft,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::LinearProbe => "linear_probe",
            Method::BiasOnly => "bias_only",
            Method::Lora => "lora",
            Method::Ssf => "ssf",
            Method::Vpt => "vpt",
            Method::Adaptformer => "adaptformer",
            Method::TadpOnly => "tadp_only",
            Method::SfasOnly => "sfas_only",
            Method::Weatherpeft => "weatherpeft",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method '{s}' (expected one of: {})",
                    Method::ALL.map(Method::id).join(", ")
                ))
            })
    }

    /// Generates prompts from the embedding weights each forward pass.
    pub fn uses_tadp(self) -> bool {
        matches!(self, Method::TadpOnly | Method::Weatherpeft)
    }

    /// Backbone updates go through Fisher-masked selection.
    pub fn uses_sfas(self) -> bool {
        matches!(self, Method::SfasOnly | Method::Weatherpeft)
    }
}

/// Method plus the hyperparameters that shape its auxiliary structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub vpt_len: usize,
    pub adapter_ratio: f64,
    pub tadp_prompt_len: usize,
}

impl MethodSpec {
    pub fn new(method: Method, tadp_prompt_len: usize) -> Self {
        MethodSpec {
            method,
            lora_rank: DEFAULT_LORA_RANK,
            lora_alpha: DEFAULT_LORA_ALPHA,
            vpt_len: DEFAULT_VPT_LEN,
            adapter_ratio: DEFAULT_ADAPTER_RATIO,
            tadp_prompt_len,
        }
    }
}

/// Parameter group for a checkpoint entry name.
pub fn group_for_name(name: &str) -> Result<ParamGroup> {
    if name.starts_with("embed.") {
        return Ok(ParamGroup::Embedding);
    }
    if name.starts_with("head.") {
        return Ok(ParamGroup::Head);
    }
    if name.starts_with("tadp.") {
        return Ok(ParamGroup::Tadp);
    }
    if name.starts_with("vpt.") {
        return Ok(ParamGroup::Aux);
    }
    if name.starts_with("blocks.") {
        let aux = name.contains(".lora_") || name.contains(".ssf.") || name.contains(".adapter.");
        return Ok(if aux { ParamGroup::Aux } else { ParamGroup::Backbone });
    }
    Err(Error::contract(format!(
        "parameter name '{name}' does not belong to any known group"
    )))
}

fn trunc_normal_tensor(rng: &mut StreamRng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.trunc_normal(std)).collect();
    TensorBase::from_op(shape.to_vec(), data)
}

/// Inserts low-rank adapter factors at the attention q/v projections of every
/// block: the first factor is random, the second starts at zero so the
/// adapter contributes nothing until trained.
pub fn attach_lora(
    store: &mut ParamStore<f64>,
    cfg: &BackboneConfig,
    rank: usize,
    seed: u64,
) -> Result<()> {
    if rank == 0 || rank > cfg.dim {
        return Err(Error::config(format!(
            "low-rank factor rank {rank} invalid for width {}",
            cfg.dim
        )));
    }
    let mut rng = StreamRng::new(seed, "init.lora", 0);
    for i in 0..cfg.depth {
        for point in LORA_POINTS {
            store.insert(
                format!("blocks.{i}.{point}.lora_a"),
                ParamGroup::Aux,
                trunc_normal_tensor(&mut rng, &[cfg.dim, rank], INIT_STD),
            )?;
            store.insert(
                format!("blocks.{i}.{point}.lora_b"),
                ParamGroup::Aux,
                Tensor::zeros(&[rank, cfg.dim]),
            )?;
        }
    }
    Ok(())
}

/// Feature width entering each scale-shift point.
fn ssf_width(cfg: &BackboneConfig, point: &str) -> usize {
    if point == "mlp.fc1" {
        cfg.mlp_ratio * cfg.dim
    } else {
        cfg.dim
    }
}

/// Inserts identity scale-shift vectors (scale 1, shift 0) at every
/// modulation point of every block.
pub fn attach_ssf(store: &mut ParamStore<f64>, cfg: &BackboneConfig) -> Result<()> {
    for i in 0..cfg.depth {
        for point in SSF_POINTS {
            let w = ssf_width(cfg, point);
            store.insert(
                format!("blocks.{i}.ssf.{point}.scale"),
                ParamGroup::Aux,
                Tensor::ones(&[w]),
            )?;
            store.insert(
                format!("blocks.{i}.ssf.{point}.shift"),
                ParamGroup::Aux,
                Tensor::zeros(&[w]),
            )?;
        }
    }
    Ok(())
}

/// Bottleneck width for the parallel MLP adapter: `ratio` of the embedding
/// width, at least 1.
pub fn adapter_hidden(cfg: &BackboneConfig, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!(
            "down-sample ratio must be in (0, 1], got {ratio}"
        )));
    }
    Ok(((ratio * cfg.dim as f64).round() as usize).max(1))
}

/// Inserts a parallel bottleneck adapter per block with a zero up-projection,
/// so each block's output is unchanged until training moves it.
pub fn attach_adaptformer(
    store: &mut ParamStore<f64>,
    cfg: &BackboneConfig,
    ratio: f64,
    seed: u64,
) -> Result<()> {
    let hidden = adapter_hidden(cfg, ratio)?;
    let mut rng = StreamRng::new(seed, "init.adapter", 0);
    for i in 0..cfg.depth {
        store.insert(
            format!("blocks.{i}.adapter.down.weight"),
            ParamGroup::Aux,
            trunc_normal_tensor(&mut rng, &[cfg.dim, hidden], INIT_STD),
        )?;
        store.insert(
            format!("blocks.{i}.adapter.down.bias"),
            ParamGroup::Aux,
            Tensor::zeros(&[hidden]),
        )?;
        store.insert(
            format!("blocks.{i}.adapter.up.weight"),
            ParamGroup::Aux,
            Tensor::zeros(&[hidden, cfg.dim]),
        )?;
        store.insert(
            format!("blocks.{i}.adapter.up.bias"),
            ParamGroup::Aux,
            Tensor::zeros(&[cfg.dim]),
        )?;
    }
    Ok(())
}

/// Inserts one shared stack of learnable prompt rows, injected before every
/// block and stripped before the head.
pub fn attach_vpt(
    store: &mut ParamStore<f64>,
    cfg: &BackboneConfig,
    len: usize,
    seed: u64,
) -> Result<()> {
    if len == 0 {
        return Err(Error::config("prompt length must be positive"));
    }
    let mut rng = StreamRng::new(seed, "init.vpt", 0);
    store.insert(
        "vpt.prompts",
        ParamGroup::Aux,
        trunc_normal_tensor(&mut rng, &[len, cfg.dim], INIT_STD),
    )?;
    Ok(())
}

/// Inserts whatever auxiliary parameters the method needs. Idempotent per
/// store only in the sense that re-attachment is an error (names collide).
pub fn attach_for_method(
    store: &mut ParamStore<f64>,
    cfg: &BackboneConfig,
    spec: &MethodSpec,
    seed: u64,
) -> Result<()> {
    match spec.method {
        Method::Lora => attach_lora(store, cfg, spec.lora_rank, seed),
        Method::Ssf => attach_ssf(store, cfg),
        Method::Adaptformer => attach_adaptformer(store, cfg, spec.adapter_ratio, seed),
        Method::Vpt => attach_vpt(store, cfg, spec.vpt_len, seed),
        Method::TadpOnly | Method::Weatherpeft => {
            let gen = PromptGenerator::new(TadpConfig::for_backbone(cfg, spec.tadp_prompt_len))?;
            gen.init_params(store, seed)
        }
        Method::Full | Method::LinearProbe | Method::BiasOnly | Method::SfasOnly => Ok(()),
    }
}

/// Sets trainable flags for a method over a fully attached store. The head
/// always trains; the embedding trains only under full tuning; selective
/// methods mark the whole backbone trainable and rely on per-step masks.
pub fn apply_policy(store: &mut ParamStore<f64>, method: Method) -> Result<()> {
    store.set_all_trainable(false);
    store.set_group_trainable(ParamGroup::Head, true);
    match method {
        Method::Full => store.set_all_trainable(true),
        Method::LinearProbe => {}
        Method::BiasOnly => {
            let names: Vec<String> = store
                .entries()
                .iter()
                .filter(|e| e.name.ends_with(".bias"))
                .map(|e| e.name.clone())
                .collect();
            for name in names {
                store.set_trainable(&name, true)?;
            }
        }
        Method::Lora | Method::Ssf | Method::Vpt | Method::Adaptformer => {
            store.set_group_trainable(ParamGroup::Aux, true);
        }
        Method::TadpOnly => {
            store.set_group_trainable(ParamGroup::Tadp, true);
        }
        Method::SfasOnly => {
            store.set_group_trainable(ParamGroup::Backbone, true);
        }
        Method::Weatherpeft => {
            store.set_group_trainable(ParamGroup::Tadp, true);
            store.set_group_trainable(ParamGroup::Backbone, true);
        }
    }
    Ok(())
}

/// Trainable-parameter counts by group label, skipping empty groups.
pub fn trainable_report(store: &ParamStore<f64>) -> Vec<(&'static str, usize)> {
    [
        ParamGroup::Embedding,
        ParamGroup::Backbone,
        ParamGroup::Head,
        ParamGroup::Tadp,
        ParamGroup::Aux,
    ]
    .into_iter()
    .map(|g| (g.label(), store.trainable_size(g)))
    .filter(|&(_, n)| n > 0)
    .collect()
}

/// A backbone plus whatever auxiliary structure the method activates.
#[derive(Debug, Clone)]
pub struct Model {
    backbone: Backbone,
    attachments: Attachments,
    prompt_gen: Option<PromptGenerator>,
    uses_vpt: bool,
    method: Method,
}

impl Model {
    /// Builds the forward configuration for a method against an already
    /// attached store (validates that the expected entries exist).
    pub fn assemble(
        cfg: BackboneConfig,
        spec: &MethodSpec,
        store: &ParamStore<f64>,
    ) -> Result<Model> {
        let backbone = Backbone::new(cfg)?;
        let mut attachments = Attachments::default();
        let mut prompt_gen = None;
        let mut uses_vpt = false;
        match spec.method {
            Method::Lora => {
                store.entry("blocks.0.attn.q.lora_a")?;
                attachments.lora = Some(LoraSpec {
                    rank: spec.lora_rank,
                    alpha: spec.lora_alpha,
                });
            }
            Method::Ssf => {
                store.entry("blocks.0.ssf.ln1.scale")?;
                attachments.ssf = true;
            }
            Method::Adaptformer => {
                store.entry("blocks.0.adapter.down.weight")?;
                attachments.adapter = Some(AdapterSpec {
                    hidden: adapter_hidden(&cfg, spec.adapter_ratio)?,
                });
            }
            Method::Vpt => {
                store.entry("vpt.prompts")?;
                uses_vpt = true;
            }
            Method::TadpOnly | Method::Weatherpeft => {
                store.entry("tadp.attn.q.weight")?;
                prompt_gen = Some(PromptGenerator::new(TadpConfig::for_backbone(
                    &cfg,
                    spec.tadp_prompt_len,
                ))?);
            }
            Method::Full | Method::LinearProbe | Method::BiasOnly | Method::SfasOnly => {}
        }
        Ok(Model {
            backbone,
            attachments,
            prompt_gen,
            uses_vpt,
            method: spec.method,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn attachments(&self) -> &Attachments {
        &self.attachments
    }

    pub fn prompt_generator(&self) -> Option<&PromptGenerator> {
        self.prompt_gen.as_ref()
    }

    /// Forward pass with the method's structure active.
    pub fn forward(&self, g: &mut ModelGraph<'_, '_, f64>, x: &Tensor) -> Result<ValueId> {
        let prompts = if let Some(gen) = &self.prompt_gen {
            Some(gen.generate(g)?)
        } else if self.uses_vpt {
            Some(g.param("vpt.prompts")?)
        } else {
            None
        };
        self.backbone.forward(g, x, prompts, &self.attachments)
    }

    /// Forward pass with prompt rows withheld: what the model computes when
    /// learned or generated rows are excluded from the token stack. For
    /// methods without prompts this is identical to [`Model::forward`].
    pub fn forward_without_prompts(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        x: &Tensor,
    ) -> Result<ValueId> {
        self.backbone.forward(g, x, None, &self.attachments)
    }
}

/// Original weights cached by [`lora_merge`], for exact restoration.
pub struct LoraOriginals {
    entries: Vec<(String, Tensor)>,
}

/// Folds every low-rank adapter into its base weight
/// (`W += alpha/rank * A @ B`) and returns the cached originals.
pub fn lora_merge(
    store: &mut ParamStore<f64>,
    cfg: &BackboneConfig,
    rank: usize,
    alpha: f64,
) -> Result<LoraOriginals> {
    let mut entries = Vec::new();
    for i in 0..cfg.depth {
        for point in LORA_POINTS {
            let base = format!("blocks.{i}.{point}.weight");
            let a = store.tensor(&format!("blocks.{i}.{point}.lora_a"))?;
            let b = store.tensor(&format!("blocks.{i}.{point}.lora_b"))?;
            if a.shape()[1] != rank {
                return Err(Error::contract(format!(
                    "stored factor rank {} does not match requested {rank}",
                    a.shape()[1]
                )));
            }
            let delta = ops::matmul(a, b)?.mul_scalar(alpha / rank as f64);
            let w = store.tensor(&base)?.clone();
            entries.push((base.clone(), w.clone()));
            store.set_tensor(&base, w.add(&delta)?)?;
        }
    }
    Ok(LoraOriginals { entries })
}

/// Restores the exact pre-merge base weights.
pub fn lora_unmerge(store: &mut ParamStore<f64>, originals: LoraOriginals) -> Result<()> {
    for (name, w) in originals.entries {
        store.set_tensor(&name, w)?;
    }
    Ok(())
}
