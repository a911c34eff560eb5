//! Toy pre-norm vision transformer over gridded fields.
//!
//! Input `[V, H, W]` is cut into non-overlapping patches, linearly embedded,
//! tagged with a fixed sinusoidal position table, pushed through `depth`
//! pre-norm blocks, and decoded by a linear head back to `[V_out, H, W]`.
//!
//! The forward pass optionally weaves in auxiliary fine-tuning structure
//! described by [`Attachments`] (low-rank adapters on the attention q/v
//! projections, scale-shift modulation, a parallel MLP adapter) and
//! deep prompt tokens: fresh prompt rows replace the previous ones before
//! every block and are dropped before the head.

use crate::autodiff::ValueId;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::params::{ParamGroup, ParamStore};
use crate::rng::StreamRng;
use crate::tensor::TensorBase;
use crate::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_vars: usize,
    pub output_vars: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.depth == 0 || self.n_heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("backbone dims must be positive"));
        }
        if self.dim % self.n_heads != 0 {
            return Err(Error::config(format!(
                "dim {} not divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.patch_h == 0
            || self.patch_w == 0
            || self.grid_h % self.patch_h != 0
            || self.grid_w % self.patch_w != 0
        {
            return Err(Error::config(format!(
                "grid {}x{} not divisible by patch {}x{}",
                self.grid_h, self.grid_w, self.patch_h, self.patch_w
            )));
        }
        if self.input_vars == 0 || self.output_vars == 0 {
            return Err(Error::config("variable counts must be positive"));
        }
        Ok(())
    }

    /// Number of tokens M.
    pub fn tokens(&self) -> usize {
        (self.grid_h / self.patch_h) * (self.grid_w / self.patch_w)
    }

    pub fn patch_numel(&self) -> usize {
        self.input_vars * self.patch_h * self.patch_w
    }

    pub fn head_cols(&self) -> usize {
        self.output_vars * self.patch_h * self.patch_w
    }
}

/// Low-rank adapter settings for the attention q and v projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

/// AdaptFormer-style parallel MLP adapter settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterSpec {
    pub hidden: usize,
}

/// Which auxiliary structure participates in the forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Attachments {
    pub lora: Option<LoraSpec>,
    pub ssf: bool,
    pub adapter: Option<AdapterSpec>,
}

/// Projection points that receive scale-shift modulation, in forward order.
pub const SSF_POINTS: [&str; 8] = [
    "ln1", "attn.q", "attn.k", "attn.v", "attn.out", "ln2", "mlp.fc1", "mlp.fc2",
];

/// Base projections wrapped by the low-rank adapter.
pub const LORA_POINTS: [&str; 2] = ["attn.q", "attn.v"];

#[derive(Debug, Clone)]
pub struct Backbone {
    cfg: BackboneConfig,
    posenc: Tensor,
}

/// Fixed sinusoidal position table `[M, D]`.
fn position_encoding(m: usize, d: usize) -> Tensor {
    let mut data = vec![0.0f64; m * d];
    for pos in 0..m {
        for j in 0..d {
            let k = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    TensorBase::from_op(vec![m, d], data)
}

fn trunc_normal_tensor(rng: &mut StreamRng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.trunc_normal(std)).collect();
    TensorBase::from_op(shape.to_vec(), data)
}

impl Backbone {
    pub fn new(cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Backbone {
            posenc: position_encoding(cfg.tokens(), cfg.dim),
            cfg,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Inserts freshly initialized backbone parameters: truncated-normal
    /// weights (std 0.02), zero biases, identity LayerNorms.
    pub fn init_params(&self, store: &mut ParamStore<f64>, seed: u64) -> Result<()> {
        let c = &self.cfg;
        let mut rng = StreamRng::new(seed, "init.backbone", 0);
        store.insert(
            "embed.weight",
            ParamGroup::Embedding,
            trunc_normal_tensor(&mut rng, &[c.dim, c.input_vars, c.patch_h, c.patch_w], INIT_STD),
        )?;
        store.insert("embed.bias", ParamGroup::Embedding, Tensor::zeros(&[c.dim]))?;
        for i in 0..c.depth {
            let p = |s: &str| format!("blocks.{i}.{s}");
            store.insert(p("ln1.weight"), ParamGroup::Backbone, Tensor::ones(&[c.dim]))?;
            store.insert(p("ln1.bias"), ParamGroup::Backbone, Tensor::zeros(&[c.dim]))?;
            for proj in ["attn.q", "attn.k", "attn.v", "attn.out"] {
                store.insert(
                    p(&format!("{proj}.weight")),
                    ParamGroup::Backbone,
                    trunc_normal_tensor(&mut rng, &[c.dim, c.dim], INIT_STD),
                )?;
                store.insert(
                    p(&format!("{proj}.bias")),
                    ParamGroup::Backbone,
                    Tensor::zeros(&[c.dim]),
                )?;
            }
            store.insert(p("ln2.weight"), ParamGroup::Backbone, Tensor::ones(&[c.dim]))?;
            store.insert(p("ln2.bias"), ParamGroup::Backbone, Tensor::zeros(&[c.dim]))?;
            let hidden = c.mlp_ratio * c.dim;
            store.insert(
                p("mlp.fc1.weight"),
                ParamGroup::Backbone,
                trunc_normal_tensor(&mut rng, &[c.dim, hidden], INIT_STD),
            )?;
            store.insert(p("mlp.fc1.bias"), ParamGroup::Backbone, Tensor::zeros(&[hidden]))?;
            store.insert(
                p("mlp.fc2.weight"),
                ParamGroup::Backbone,
                trunc_normal_tensor(&mut rng, &[hidden, c.dim], INIT_STD),
            )?;
            store.insert(p("mlp.fc2.bias"), ParamGroup::Backbone, Tensor::zeros(&[c.dim]))?;
        }
        store.insert(
            "head.weight",
            ParamGroup::Head,
            trunc_normal_tensor(&mut rng, &[c.dim, c.head_cols()], INIT_STD),
        )?;
        store.insert("head.bias", ParamGroup::Head, Tensor::zeros(&[c.head_cols()]))?;
        Ok(())
    }

    /// Scalar parameters per block as a closed form; used as an invariant on
    /// the actual store contents.
    pub fn params_per_block(&self) -> usize {
        let d = self.cfg.dim;
        let r = self.cfg.mlp_ratio;
        4 * d * d + 4 * d + 2 * r * d * d + (r + 1) * d + 4 * d
    }

    fn ssf(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        x: ValueId,
        block: usize,
        point: &str,
        att: &Attachments,
    ) -> Result<ValueId> {
        if !att.ssf {
            return Ok(x);
        }
        let scale = g.param(&format!("blocks.{block}.ssf.{point}.scale"))?;
        let shift = g.param(&format!("blocks.{block}.ssf.{point}.shift"))?;
        let y = g.session.mul_bias(x, scale)?;
        g.session.add_bias(y, shift)
    }

    /// `x @ W + b`, with the low-rank bypass when attached at this point.
    fn linear(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        x: ValueId,
        base: &str,
        att: &Attachments,
        point: &str,
    ) -> Result<ValueId> {
        let w = g.param(&format!("{base}.weight"))?;
        let b = g.param(&format!("{base}.bias"))?;
        let mut y = g.session.matmul(x, w)?;
        y = g.session.add_bias(y, b)?;
        if let Some(lora) = att.lora {
            if LORA_POINTS.contains(&point) {
                let a = g.param(&format!("{base}.lora_a"))?;
                let bmat = g.param(&format!("{base}.lora_b"))?;
                let xa = g.session.matmul(x, a)?;
                let xab = g.session.matmul(xa, bmat)?;
                let scaled = g
                    .session
                    .mul_scalar(xab, lora.alpha / lora.rank as f64)?;
                y = g.session.add(y, scaled)?;
            }
        }
        Ok(y)
    }

    fn layernorm(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        x: ValueId,
        base: &str,
    ) -> Result<ValueId> {
        let gamma = g.param(&format!("{base}.weight"))?;
        let beta = g.param(&format!("{base}.bias"))?;
        g.session.layernorm_lastdim(x, gamma, beta)
    }

    fn block(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        i: usize,
        t: ValueId,
        att: &Attachments,
    ) -> Result<ValueId> {
        let c = &self.cfg;
        let pre = |s: &str| format!("blocks.{i}.{s}");

        let mut h = self.layernorm(g, t, &pre("ln1"))?;
        h = self.ssf(g, h, i, "ln1", att)?;
        let mut q = self.linear(g, h, &pre("attn.q"), att, "attn.q")?;
        q = self.ssf(g, q, i, "attn.q", att)?;
        let mut k = self.linear(g, h, &pre("attn.k"), att, "attn.k")?;
        k = self.ssf(g, k, i, "attn.k", att)?;
        let mut v = self.linear(g, h, &pre("attn.v"), att, "attn.v")?;
        v = self.ssf(g, v, i, "attn.v", att)?;
        let mixed = mha(g, q, k, v, c.n_heads)?;
        let mut o = self.linear(g, mixed, &pre("attn.out"), att, "attn.out")?;
        o = self.ssf(g, o, i, "attn.out", att)?;
        let t = g.session.add(t, o)?;

        let mut h2 = self.layernorm(g, t, &pre("ln2"))?;
        h2 = self.ssf(g, h2, i, "ln2", att)?;
        let mut f1 = self.linear(g, h2, &pre("mlp.fc1"), att, "mlp.fc1")?;
        f1 = self.ssf(g, f1, i, "mlp.fc1", att)?;
        let a = g.session.gelu(f1)?;
        let mut f2 = self.linear(g, a, &pre("mlp.fc2"), att, "mlp.fc2")?;
        f2 = self.ssf(g, f2, i, "mlp.fc2", att)?;
        let mut mlp_out = f2;
        if let Some(spec) = att.adapter {
            let down_w = g.param(&format!("blocks.{i}.adapter.down.weight"))?;
            let down_b = g.param(&format!("blocks.{i}.adapter.down.bias"))?;
            let up_w = g.param(&format!("blocks.{i}.adapter.up.weight"))?;
            let up_b = g.param(&format!("blocks.{i}.adapter.up.bias"))?;
            debug_assert!(spec.hidden > 0);
            let mut branch = g.session.matmul(h2, down_w)?;
            branch = g.session.add_bias(branch, down_b)?;
            branch = g.session.gelu(branch)?;
            branch = g.session.matmul(branch, up_w)?;
            branch = g.session.add_bias(branch, up_b)?;
            mlp_out = g.session.add(mlp_out, branch)?;
        }
        g.session.add(t, mlp_out)
    }

    /// Embeds the raw field into position-tagged tokens `[M, D]`.
    pub fn embed(&self, g: &mut ModelGraph<'_, '_, f64>, x: &Tensor) -> Result<ValueId> {
        let c = &self.cfg;
        if x.shape() != [c.input_vars, c.grid_h, c.grid_w] {
            return Err(Error::shape(
                "embed",
                format!("[{}, {}, {}]", c.input_vars, c.grid_h, c.grid_w),
                format!("{:?}", x.shape()),
            ));
        }
        let xin = g.input(x.clone());
        let patches = g.session.extract_patches(xin, c.patch_h, c.patch_w)?;
        let e = g.param("embed.weight")?;
        let e2 = g.session.reshape(e, &[c.dim, c.patch_numel()])?;
        let et = g.session.transpose2(e2)?;
        let mut tokens = g.session.matmul(patches, et)?;
        let bias = g.param("embed.bias")?;
        tokens = g.session.add_bias(tokens, bias)?;
        let pe = g.input(self.posenc.clone());
        g.session.add(tokens, pe)
    }

    /// Full forward pass. `prompts`, when present, is a `[P, D]` tensor whose
    /// rows are prepended before every block (replacing the previous block's
    /// prompt rows) and dropped before the head.
    pub fn forward(
        &self,
        g: &mut ModelGraph<'_, '_, f64>,
        x: &Tensor,
        prompts: Option<ValueId>,
        att: &Attachments,
    ) -> Result<ValueId> {
        let c = &self.cfg;
        let m = c.tokens();
        let mut t = self.embed(g, x)?;
        let p_len = match prompts {
            Some(p) => {
                let shape = g.session.value(p).shape().to_vec();
                if shape.len() != 2 || shape[1] != c.dim {
                    return Err(Error::shape(
                        "forward",
                        format!("prompts of shape [P, {}]", c.dim),
                        format!("{shape:?}"),
                    ));
                }
                shape[0]
            }
            None => 0,
        };
        for i in 0..c.depth {
            if let Some(p) = prompts {
                let body = if i == 0 {
                    t
                } else {
                    g.session.narrow_first(t, p_len, m)?
                };
                t = g.session.concat_first(p, body)?;
            }
            t = self.block(g, i, t, att)?;
        }
        if prompts.is_some() {
            t = g.session.narrow_first(t, p_len, m)?;
        }
        let hw = g.param("head.weight")?;
        let hb = g.param("head.bias")?;
        let mut y = g.session.matmul(t, hw)?;
        y = g.session.add_bias(y, hb)?;
        g.session
            .unpatchify(y, c.output_vars, c.grid_h, c.grid_w, c.patch_h, c.patch_w)
    }
}

/// Multi-head self-attention over `[N, D]` projections, one softmax per head
/// with `1/sqrt(D/heads)` scaling.
pub fn mha(
    g: &mut ModelGraph<'_, '_, f64>,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    n_heads: usize,
) -> Result<ValueId> {
    let d = g.session.value(q).last_dim();
    if d % n_heads != 0 {
        return Err(Error::contract(format!(
            "dim {d} not divisible by {n_heads} heads"
        )));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qt = g.session.transpose2(q)?;
    let kt = g.session.transpose2(k)?;
    let vt = g.session.transpose2(v)?;
    let mut merged: Option<ValueId> = None;
    for h in 0..n_heads {
        let qh_t = g.session.narrow_first(qt, h * dh, dh)?;
        let kh_t = g.session.narrow_first(kt, h * dh, dh)?;
        let vh_t = g.session.narrow_first(vt, h * dh, dh)?;
        let qh = g.session.transpose2(qh_t)?;
        let vh = g.session.transpose2(vh_t)?;
        let scores = g.session.matmul(qh, kh_t)?;
        let scaled = g.session.mul_scalar(scores, scale)?;
        let weights = g.session.softmax_lastdim(scaled)?;
        let oh = g.session.matmul(weights, vh)?;
        let oh_t = g.session.transpose2(oh)?;
        merged = Some(match merged {
            Some(acc) => g.session.concat_first(acc, oh_t)?,
            None => oh_t,
        });
    }
    g.session.transpose2(merged.expect("n_heads >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ModelGraph;
    use crate::params::ParamStore;
    use crate::GradientSession;

    fn toy_config() -> BackboneConfig {
        BackboneConfig {
            input_vars: 2,
            output_vars: 3,
            grid_h: 8,
            grid_w: 8,
            patch_h: 4,
            patch_w: 4,
            dim: 8,
            depth: 2,
            n_heads: 2,
            mlp_ratio: 4,
        }
    }

    fn build(cfg: BackboneConfig, seed: u64) -> (Backbone, ParamStore<f64>) {
        let bb = Backbone::new(cfg).unwrap();
        let mut store = ParamStore::new();
        bb.init_params(&mut store, seed).unwrap();
        (bb, store)
    }

    fn field(cfg: &BackboneConfig, seed: u64) -> Tensor {
        let mut rng = StreamRng::new(seed, "test.field", 0);
        let n = cfg.input_vars * cfg.grid_h * cfg.grid_w;
        TensorBase::from_op(
            vec![cfg.input_vars, cfg.grid_h, cfg.grid_w],
            (0..n).map(|_| rng.normal()).collect(),
        )
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = toy_config();
        c.n_heads = 3;
        assert!(Backbone::new(c).is_err());
        let mut c = toy_config();
        c.grid_h = 9;
        assert!(Backbone::new(c).is_err());
    }

    #[test]
    fn forward_shape_and_token_count() {
        let cfg = toy_config();
        assert_eq!(cfg.tokens(), 4);
        let (bb, store) = build(cfg, 1);
        let x = field(&cfg, 2);
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, &store);
        let y = bb.forward(&mut g, &x, None, &Attachments::default()).unwrap();
        assert_eq!(g.session.value(y).shape(), &[3, 8, 8]);
    }

    #[test]
    fn paper_scale_token_count() {
        // 32x32 grid with 4x4 patches gives 64 tokens regardless of width.
        let cfg = BackboneConfig {
            input_vars: 11,
            output_vars: 11,
            grid_h: 32,
            grid_w: 32,
            patch_h: 4,
            patch_w: 4,
            dim: 16,
            depth: 1,
            n_heads: 2,
            mlp_ratio: 4,
        };
        assert_eq!(cfg.tokens(), 64);
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = toy_config();
        let (bb, store) = build(cfg, 3);
        let per_block = bb.params_per_block();
        assert_eq!(
            store.group_size(ParamGroup::Backbone),
            cfg.depth * per_block
        );
        assert_eq!(
            store.group_size(ParamGroup::Embedding),
            cfg.dim * cfg.input_vars * cfg.patch_h * cfg.patch_w + cfg.dim
        );
        assert_eq!(
            store.group_size(ParamGroup::Head),
            cfg.dim * cfg.head_cols() + cfg.head_cols()
        );
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = toy_config();
        let (_, s1) = build(cfg, 7);
        let (_, s2) = build(cfg, 7);
        let (_, s3) = build(cfg, 8);
        for (a, b) in s1.entries().iter().zip(s2.entries()) {
            assert!(a.tensor.bit_eq(&b.tensor), "{} differs", a.name);
        }
        assert!(!s1
            .tensor("embed.weight")
            .unwrap()
            .bit_eq(s3.tensor("embed.weight").unwrap()));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = toy_config();
        let (bb, store) = build(cfg, 5);
        let x = field(&cfg, 6);
        let run = || {
            let mut session = GradientSession::new();
            let mut g = ModelGraph::inference(&mut session, &store);
            let y = bb.forward(&mut g, &x, None, &Attachments::default()).unwrap();
            g.session.value(y).clone()
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn zero_out_projections_make_blocks_identity() {
        // With attn.out and mlp.fc2 zeroed, each pre-norm block adds zero to
        // the residual stream, so the whole trunk is the identity on tokens.
        let cfg = toy_config();
        let (bb, mut store) = build(cfg, 9);
        for i in 0..cfg.depth {
            for name in ["attn.out.weight", "attn.out.bias", "mlp.fc2.weight", "mlp.fc2.bias"] {
                let full = format!("blocks.{i}.{name}");
                let shape = store.tensor(&full).unwrap().shape().to_vec();
                store.set_tensor(&full, Tensor::zeros(&shape)).unwrap();
            }
        }
        let x = field(&cfg, 10);
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, &store);
        let tokens = bb.embed(&mut g, &x).unwrap();
        let mut t = tokens;
        for i in 0..cfg.depth {
            t = bb.block(&mut g, i, t, &Attachments::default()).unwrap();
        }
        assert!(g.session.value(t).bit_eq(g.session.value(tokens)));
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        // One token: the softmax row is exactly [1], so attention returns v.
        let (bb, store) = build(toy_config(), 11);
        let _ = bb;
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, &store);
        let q = g.input(TensorBase::from_op(vec![1, 8], (0..8).map(|i| i as f64).collect()));
        let k = g.input(TensorBase::from_op(vec![1, 8], vec![0.5; 8]));
        let vdata: Vec<f64> = (0..8).map(|i| (i as f64) - 3.0).collect();
        let v = g.input(TensorBase::from_op(vec![1, 8], vdata.clone()));
        let out = mha(&mut g, q, k, v, 2).unwrap();
        assert_eq!(g.session.value(out).data(), vdata.as_slice());
    }

    #[test]
    fn embed_with_zero_weights_is_bias_plus_position() {
        let cfg = toy_config();
        let (bb, mut store) = build(cfg, 12);
        let shape = store.tensor("embed.weight").unwrap().shape().to_vec();
        store.set_tensor("embed.weight", Tensor::zeros(&shape)).unwrap();
        store
            .set_tensor("embed.bias", Tensor::full(&[cfg.dim], 0.25).unwrap())
            .unwrap();
        let x = field(&cfg, 13);
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, &store);
        let tokens = bb.embed(&mut g, &x).unwrap();
        let got = g.session.value(tokens);
        let want = bb.posenc.add_scalar(0.25);
        assert!(got.bit_eq(&want));
    }

    #[test]
    fn prompt_rows_change_token_count_internally_but_not_output_shape() {
        let cfg = toy_config();
        let (bb, store) = build(cfg, 14);
        let x = field(&cfg, 15);
        let mut session = GradientSession::new();
        let mut g = ModelGraph::inference(&mut session, &store);
        let prompts = g.input(TensorBase::from_op(vec![5, cfg.dim], vec![0.1; 5 * cfg.dim]));
        let y = bb
            .forward(&mut g, &x, Some(prompts), &Attachments::default())
            .unwrap();
        assert_eq!(g.session.value(y).shape(), &[3, 8, 8]);
    }

    #[test]
    fn full_backbone_gradcheck() {
        let cfg = BackboneConfig {
            input_vars: 1,
            output_vars: 1,
            grid_h: 4,
            grid_w: 4,
            patch_h: 2,
            patch_w: 2,
            dim: 4,
            depth: 1,
            n_heads: 2,
            mlp_ratio: 2,
        };
        let (bb, mut store) = build(cfg, 16);
        // Nonzero biases so their gradients are exercised away from init.
        let mut rng = StreamRng::new(17, "test.bias", 0);
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            if name.ends_with(".bias") && !name.starts_with("head") {
                let shape = store.tensor(&name).unwrap().shape().to_vec();
                let n: usize = shape.iter().product();
                let t = TensorBase::from_op(shape, (0..n).map(|_| rng.normal() * 0.05).collect());
                store.set_tensor(&name, t).unwrap();
            }
        }
        let x = field(&cfg, 18);

        // Check one representative parameter from every layer family by
        // rebinding it to the finite-difference leaf for the forward pass.
        let checked = [
            "embed.weight",
            "blocks.0.ln1.weight",
            "blocks.0.attn.q.weight",
            "blocks.0.attn.v.bias",
            "blocks.0.attn.out.weight",
            "blocks.0.ln2.bias",
            "blocks.0.mlp.fc1.weight",
            "blocks.0.mlp.fc2.bias",
            "head.weight",
        ];
        for name in checked {
            let base = store.tensor(name).unwrap().clone();
            crate::check::GradCheck::default()
                .check(&[base], |s, ids| {
                    let mut g = ModelGraph::inference(s, &store);
                    g.bind(name, ids[0]);
                    let y = bb.forward(&mut g, &x, None, &Attachments::default())?;
                    let sq = g.session.square(y)?;
                    g.session.mean(sq)
                })
                .unwrap_or_else(|e| panic!("gradcheck failed for {name}: {e}"));
        }
    }
}
