//! Synthetic gridded-field tasks: generation, persistence, and splits.
//!
//! Three desk-scale regression tasks over a lat/lon grid:
//!
//! * `downscale`: truth fields are seeded superpositions of low-wavenumber
//!   sinusoids with cross-variable coupling; the model sees a
//!   pooled-then-bilinearly-upsampled copy and must restore the detail.
//! * `ensemble`: a truth field plus a smooth ensemble bias and member noise;
//!   the model sees the ensemble mean/spread and learns a Gaussian
//!   correction.
//! * `precip`: a latent moisture field advected by a constant wind with
//!   diffusion; precipitation is a thresholded diagnostic (sparse, mostly
//!   exact zeros) forecast at three lead steps.
//!
//! Each task has a `source` regime (shifted physics, disjoint random
//! streams) used for pretraining and a `target` regime used for fine-tuning,
//! so transfer is real rather than memorized. Generators are pure functions
//! of `(seed, params)`; datasets round-trip through a directory of tensor
//! files plus a `manifest.txt` bit-exactly.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::io::{load_tensor, save_tensor};
use crate::tensor::ops;
use crate::tensor::TensorBase;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    Downscale,
    Ensemble,
    Precip,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Downscale, TaskId::Ensemble, TaskId::Precip];

    pub fn id(self) -> &'static str {
        match self {
            TaskId::Downscale => "downscale",
            TaskId::Ensemble => "ensemble",
            TaskId::Precip => "precip",
        }
    }

    pub fn parse(s: &str) -> Result<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::config(format!("unknown task '{s}'")))
    }
}

/// Which generator regime produced a dataset. Pretraining uses `Source`;
/// fine-tuning and evaluation use `Target`. The regimes differ in physical
/// constants and draw from disjoint random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Source,
    Target,
}

impl Regime {
    pub fn id(self) -> &'static str {
        match self {
            Regime::Source => "source",
            Regime::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        match s {
            "source" => Ok(Regime::Source),
            "target" => Ok(Regime::Target),
            _ => Err(Error::config(format!("unknown regime '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split '{s}'"))),
        }
    }
}

/// Sample-index split boundaries: train is `[0, train_end)`, validation is
/// `[train_end, val_end)`, test is the rest. 80/10/10 with floor rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitBounds {
    pub n: usize,
    pub train_end: usize,
    pub val_end: usize,
}

impl SplitBounds {
    pub fn of(n: usize) -> Result<SplitBounds> {
        let train_end = n * 8 / 10;
        let val_end = train_end + n / 10;
        if train_end == 0 || val_end == train_end || val_end == n {
            return Err(Error::config(format!(
                "{n} samples are too few for an 80/10/10 split"
            )));
        }
        Ok(SplitBounds { n, train_end, val_end })
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.n,
        }
    }
}

/// Uniform pole-excluded latitude/longitude grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub h: usize,
    pub w: usize,
    /// Degrees, strictly inside (-90, 90).
    pub lat: Vec<f64>,
    /// Degrees in [0, 360).
    pub lon: Vec<f64>,
}

impl GridSpec {
    /// Cell-centered uniform grid: `lat_i = -90 + (i + 0.5) * 180 / H`.
    pub fn uniform(h: usize, w: usize) -> Result<GridSpec> {
        if h == 0 || w == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        let lat = (0..h)
            .map(|i| -90.0 + (i as f64 + 0.5) * 180.0 / h as f64)
            .collect();
        let lon = (0..w).map(|j| j as f64 * 360.0 / w as f64).collect();
        Ok(GridSpec { h, w, lat, lon })
    }

    pub fn with_latitudes(lat: Vec<f64>, w: usize) -> Result<GridSpec> {
        if lat.is_empty() || w == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        if lat.iter().any(|&l| l <= -90.0 || l >= 90.0) {
            return Err(Error::config("latitudes must lie strictly inside (-90, 90)"));
        }
        let h = lat.len();
        let lon = (0..w).map(|j| j as f64 * 360.0 / w as f64).collect();
        Ok(GridSpec { h, w, lat, lon })
    }

    /// Cosine-of-latitude area weights normalized to mean exactly one.
    pub fn latitude_weights(&self) -> Result<Tensor> {
        let cos: Vec<f64> = self
            .lat
            .iter()
            .map(|&l| (l * std::f64::consts::PI / 180.0).cos())
            .collect();
        let mean = cos.iter().sum::<f64>() / cos.len() as f64;
        if !(mean > 1e-12) {
            return Err(Error::config(
                "degenerate grid: cosine-latitude weights sum to zero",
            ));
        }
        Tensor::new(vec![self.h], cos.iter().map(|c| c / mean).collect())
    }
}

/// Per-variable normalization statistics from the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarStats {
    pub mean: f64,
    pub std: f64,
}

/// One generated task: raw inputs/targets (normalization is applied by the
/// consumer using the stored stats), grid, splits, and task-specific side
/// fields.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub task: TaskId,
    pub regime: Regime,
    pub seed: u64,
    pub grid: GridSpec,
    pub input_names: Vec<String>,
    pub target_names: Vec<String>,
    /// `[N, V, H, W]`, raw (unnormalized).
    pub inputs: Tensor,
    /// `[N, V_out, H, W]`, raw.
    pub targets: Tensor,
    pub splits: SplitBounds,
    /// Aligned with `input_names`.
    pub norm: Vec<VarStats>,
    /// Downscale only: the pooled field `[N, V, H/f, W/f]` the inputs were
    /// upsampled from.
    pub coarse: Option<Tensor>,
    /// Ensemble only: member mean `[N, H, W]`.
    pub ens_mean: Option<Tensor>,
    /// Ensemble only: member spread (population convention, floored).
    pub ens_std: Option<Tensor>,
    /// Ensemble only: forecast-index weight field in [-1, 1].
    pub efi: Option<Tensor>,
}

impl GridDataset {
    pub fn n_samples(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn input_vars(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn target_vars(&self) -> usize {
        self.targets.shape()[1]
    }

    fn slice3(t: &Tensor, i: usize) -> Tensor {
        let shape = t.shape();
        let per = shape[1] * shape[2] * shape[3];
        let data = t.data()[i * per..(i + 1) * per].to_vec();
        TensorBase::from_op(vec![shape[1], shape[2], shape[3]], data)
    }

    /// Raw input sample `[V, H, W]`.
    pub fn input(&self, i: usize) -> Tensor {
        Self::slice3(&self.inputs, i)
    }

    /// Raw target sample `[V_out, H, W]`.
    pub fn target(&self, i: usize) -> Tensor {
        Self::slice3(&self.targets, i)
    }

    /// Input sample with the stored per-variable statistics applied.
    pub fn normalized_input(&self, i: usize) -> Tensor {
        let mut t = self.input(i);
        let hw = self.grid.h * self.grid.w;
        let data = t.data_mut();
        for (v, stats) in self.norm.iter().enumerate() {
            for x in &mut data[v * hw..(v + 1) * hw] {
                *x = (*x - stats.mean) / stats.std;
            }
        }
        t
    }

    /// Per-sample plane `[H, W]` from an `[N, H, W]` side field.
    pub fn plane(field: &Tensor, i: usize) -> Tensor {
        let shape = field.shape();
        let per = shape[1] * shape[2];
        let data = field.data()[i * per..(i + 1) * per].to_vec();
        TensorBase::from_op(vec![shape[1], shape[2]], data)
    }
}

/// Training-split per-variable mean and population std (floored away from
/// zero so degenerate channels stay finite).
fn train_split_stats(inputs: &Tensor, splits: &SplitBounds) -> Vec<VarStats> {
    let shape = inputs.shape();
    let (v, hw) = (shape[1], shape[2] * shape[3]);
    let per = v * hw;
    let range = splits.range(Split::Train);
    let count = (range.len() * hw) as f64;
    let mut out = Vec::with_capacity(v);
    for var in 0..v {
        let mut sum = 0.0;
        for i in range.clone() {
            let base = i * per + var * hw;
            sum += inputs.data()[base..base + hw].iter().sum::<f64>();
        }
        let mean = sum / count;
        let mut ss = 0.0;
        for i in range.clone() {
            let base = i * per + var * hw;
            ss += inputs.data()[base..base + hw]
                .iter()
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>();
        }
        let std = (ss / count).sqrt().max(1e-12);
        out.push(VarStats { mean, std });
    }
    out
}

/// Superposition of seeded sinusoids with integer wavenumbers in
/// `[k_lo, k_hi]` (both axes, random signs), amplitude-normalized so the
/// field scale is roughly `amp` regardless of the wave count.
fn sinusoid_field(
    rng: &mut StreamRng,
    h: usize,
    w: usize,
    waves: usize,
    k_lo: usize,
    k_hi: usize,
    amp: f64,
) -> Vec<f64> {
    let mut field = vec![0.0; h * w];
    let span = (k_hi - k_lo + 1) as u64;
    let norm = amp / (waves as f64).sqrt();
    for _ in 0..waves {
        let kx = (k_lo as u64 + rng.below(span)) as f64;
        let ky = (k_lo as u64 + rng.below(span)) as f64;
        let sx = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let sy = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let phase = rng.uniform_in(0.0, TAU);
        let a = norm * rng.uniform_in(0.5, 1.5);
        for i in 0..h {
            let fy = sy * ky * i as f64 / h as f64;
            for j in 0..w {
                let fx = sx * kx * j as f64 / w as f64;
                field[i * w + j] += a * (TAU * (fx + fy) + phase).sin();
            }
        }
    }
    field
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownscaleParams {
    pub n_samples: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub factor: usize,
    pub vars: usize,
    pub waves: usize,
    pub wave_lo: usize,
    pub wave_hi: usize,
    /// Each variable leans on the previous one by this factor.
    pub coupling: f64,
    pub amp: f64,
    /// Pointwise quadratic distortion of the truth: `z + warp * z^2`.
    /// Pooling mostly erases the squared term, so restoring it from the
    /// coarse view takes genuinely nonlinear feature computation, not just
    /// a re-weighting of smooth structure.
    pub warp: f64,
    pub regime: Regime,
}

impl DownscaleParams {
    pub fn new(n_samples: usize, regime: Regime) -> Self {
        match regime {
            Regime::Target => DownscaleParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                factor: 4,
                vars: 3,
                waves: 8,
                wave_lo: 1,
                wave_hi: 3,
                coupling: 0.4,
                amp: 1.0,
                warp: 0.6,
                regime,
            },
            Regime::Source => DownscaleParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                factor: 4,
                vars: 3,
                waves: 8,
                wave_lo: 0,
                wave_hi: 3,
                coupling: 0.1,
                amp: 1.0,
                warp: 0.0,
                regime,
            },
        }
    }
}

/// Detail-restoration task: truth at full resolution, inputs pooled by
/// `factor` and bilinearly upsampled back.
pub fn gen_downscale(seed: u64, p: &DownscaleParams) -> Result<GridDataset> {
    if p.factor == 0 || p.grid_h % p.factor != 0 || p.grid_w % p.factor != 0 {
        return Err(Error::config(format!(
            "grid {}x{} not divisible by pooling factor {}",
            p.grid_h, p.grid_w, p.factor
        )));
    }
    if p.vars == 0 || p.waves == 0 || p.wave_hi < p.wave_lo {
        return Err(Error::config("degenerate field parameters"));
    }
    let splits = SplitBounds::of(p.n_samples)?;
    let grid = GridSpec::uniform(p.grid_h, p.grid_w)?;
    let hw = p.grid_h * p.grid_w;
    let domain = format!("downscale.{}.sample", p.regime.id());
    let mut truth = Vec::with_capacity(p.n_samples * p.vars * hw);
    for i in 0..p.n_samples {
        let mut rng = StreamRng::new(seed, &domain, i as u64);
        let mut fields: Vec<Vec<f64>> = Vec::with_capacity(p.vars);
        for v in 0..p.vars {
            let mut f = sinusoid_field(&mut rng, p.grid_h, p.grid_w, p.waves, p.wave_lo, p.wave_hi, p.amp);
            if v > 0 {
                let prev = &fields[v - 1];
                for (x, &pv) in f.iter_mut().zip(prev) {
                    *x += p.coupling * pv;
                }
            }
            if p.warp != 0.0 {
                for x in f.iter_mut() {
                    *x += p.warp * *x * *x;
                }
            }
            fields.push(f);
        }
        for f in fields {
            truth.extend_from_slice(&f);
        }
    }
    let targets = Tensor::new(vec![p.n_samples, p.vars, p.grid_h, p.grid_w], truth)?;
    let coarse = ops::avg_pool_2d(&targets, p.factor)?;
    let inputs = ops::bilinear_upsample_2d(&coarse, p.factor)?;
    let norm = train_split_stats(&inputs, &splits);
    let names: Vec<String> = (0..p.vars).map(|v| format!("var{v}")).collect();
    Ok(GridDataset {
        task: TaskId::Downscale,
        regime: p.regime,
        seed,
        grid,
        input_names: names.clone(),
        target_names: names,
        inputs,
        targets,
        splits,
        norm,
        coarse: Some(coarse),
        ens_mean: None,
        ens_std: None,
        efi: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    pub n_samples: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub members: usize,
    /// Std of i.i.d. member noise.
    pub noise_std: f64,
    /// Amplitude of the shared smooth ensemble bias.
    pub bias_amp: f64,
    pub sigma_floor: f64,
    pub regime: Regime,
}

impl EnsembleParams {
    pub fn new(n_samples: usize, regime: Regime) -> Self {
        match regime {
            Regime::Target => EnsembleParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                members: 10,
                noise_std: 0.5,
                bias_amp: 0.3,
                sigma_floor: 1e-3,
                regime,
            },
            Regime::Source => EnsembleParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                members: 10,
                noise_std: 0.8,
                bias_amp: 0.6,
                sigma_floor: 1e-3,
                regime,
            },
        }
    }
}

/// Ensemble-correction task: inputs are the member mean and spread, the
/// target is the truth field the members scattered around.
pub fn gen_ensemble(seed: u64, p: &EnsembleParams) -> Result<GridDataset> {
    if p.members < 2 {
        return Err(Error::config("ensemble needs at least 2 members"));
    }
    if !(p.sigma_floor > 0.0) {
        return Err(Error::config("spread floor must be positive"));
    }
    let splits = SplitBounds::of(p.n_samples)?;
    let grid = GridSpec::uniform(p.grid_h, p.grid_w)?;
    let hw = p.grid_h * p.grid_w;
    let domain = format!("ensemble.{}.sample", p.regime.id());
    let mut inputs = Vec::with_capacity(p.n_samples * 2 * hw);
    let mut targets = Vec::with_capacity(p.n_samples * hw);
    let mut means = Vec::with_capacity(p.n_samples * hw);
    let mut stds = Vec::with_capacity(p.n_samples * hw);
    let mut efis = Vec::with_capacity(p.n_samples * hw);
    for i in 0..p.n_samples {
        let mut rng = StreamRng::new(seed, &domain, i as u64);
        let truth = sinusoid_field(&mut rng, p.grid_h, p.grid_w, 6, 1, 4, 1.0);
        let bias = sinusoid_field(&mut rng, p.grid_h, p.grid_w, 4, 1, 3, p.bias_amp);
        let efi_base = sinusoid_field(&mut rng, p.grid_h, p.grid_w, 4, 1, 3, 1.2);
        let mut members = vec![0.0; p.members * hw];
        for m in 0..p.members {
            for c in 0..hw {
                members[m * hw + c] = truth[c] + bias[c] + p.noise_std * rng.normal();
            }
        }
        for c in 0..hw {
            let mut sum = 0.0;
            for m in 0..p.members {
                sum += members[m * hw + c];
            }
            let mu = sum / p.members as f64;
            let mut ss = 0.0;
            for m in 0..p.members {
                let d = members[m * hw + c] - mu;
                ss += d * d;
            }
            let sigma = (ss / p.members as f64).sqrt().max(p.sigma_floor);
            means.push(mu);
            stds.push(sigma);
        }
        inputs.extend_from_slice(&means[i * hw..(i + 1) * hw]);
        inputs.extend_from_slice(&stds[i * hw..(i + 1) * hw]);
        targets.extend_from_slice(&truth);
        efis.extend(efi_base.iter().map(|x| x.tanh()));
    }
    let inputs = Tensor::new(vec![p.n_samples, 2, p.grid_h, p.grid_w], inputs)?;
    let targets = Tensor::new(vec![p.n_samples, 1, p.grid_h, p.grid_w], targets)?;
    let norm = train_split_stats(&inputs, &splits);
    Ok(GridDataset {
        task: TaskId::Ensemble,
        regime: p.regime,
        seed,
        grid,
        input_names: vec!["ens_mean".into(), "ens_std".into()],
        target_names: vec!["truth".into()],
        inputs,
        targets,
        splits,
        norm,
        coarse: None,
        ens_mean: Some(Tensor::new(vec![p.n_samples, p.grid_h, p.grid_w], means)?),
        ens_std: Some(Tensor::new(vec![p.n_samples, p.grid_h, p.grid_w], stds)?),
        efi: Some(Tensor::new(vec![p.n_samples, p.grid_h, p.grid_w], efis)?),
    })
}

/// Maps raw two-channel model output to a corrected Gaussian forecast:
/// `mu = out1 * sigma_ens + mu_ens`, `sigma = exp(out2) * sigma_ens`.
pub fn gaussian_correction(
    out1: &Tensor,
    out2: &Tensor,
    mu_ens: &Tensor,
    sigma_ens: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if out1.shape() != out2.shape()
        || out1.shape() != mu_ens.shape()
        || out1.shape() != sigma_ens.shape()
    {
        return Err(Error::shape(
            "gaussian_correction",
            format!("{:?} for all four fields", out1.shape()),
            format!(
                "{:?}/{:?}/{:?}",
                out2.shape(),
                mu_ens.shape(),
                sigma_ens.shape()
            ),
        ));
    }
    if sigma_ens.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::numeric("ensemble spread must be positive"));
    }
    let mu = out1.mul(sigma_ens)?.add(mu_ens)?;
    let sigma = out2.exp().mul(sigma_ens)?;
    Ok((mu, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecipParams {
    pub n_samples: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub leads: usize,
    /// Latent values above this produce precipitation.
    pub threshold: f64,
    pub gain: f64,
    /// Diffusion coefficient per step (5-point stencil; stable below 0.25).
    pub kappa: f64,
    /// Wind components drawn uniformly from [-wind_max, wind_max] cells/step.
    pub wind_max: f64,
    pub regime: Regime,
}

impl PrecipParams {
    pub fn new(n_samples: usize, regime: Regime) -> Self {
        match regime {
            Regime::Target => PrecipParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                leads: 3,
                threshold: 0.3,
                gain: 1.0,
                kappa: 0.05,
                wind_max: 2.0,
                regime,
            },
            Regime::Source => PrecipParams {
                n_samples,
                grid_h: 32,
                grid_w: 32,
                leads: 3,
                threshold: 0.45,
                gain: 1.3,
                kappa: 0.12,
                wind_max: 1.0,
                regime,
            },
        }
    }
}

/// Periodic bilinear sample of `q` at fractional coordinates.
fn sample_periodic(q: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let yf = y.floor();
    let xf = x.floor();
    let fy = y - yf;
    let fx = x - xf;
    let wrap = |v: i64, n: usize| -> usize {
        let n = n as i64;
        (((v % n) + n) % n) as usize
    };
    let i0 = wrap(yf as i64, h);
    let i1 = (i0 + 1) % h;
    let j0 = wrap(xf as i64, w);
    let j1 = (j0 + 1) % w;
    (1.0 - fy) * ((1.0 - fx) * q[i0 * w + j0] + fx * q[i0 * w + j1])
        + fy * ((1.0 - fx) * q[i1 * w + j0] + fx * q[i1 * w + j1])
}

/// One physics step: semi-Lagrangian advection by (u, v) cells, then
/// explicit diffusion.
fn advect_diffuse(q: &[f64], h: usize, w: usize, u: f64, v: f64, kappa: f64) -> Vec<f64> {
    let mut adv = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            adv[i * w + j] = sample_periodic(q, h, w, i as f64 - v, j as f64 - u);
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let up = (i + h - 1) % h;
        let dn = (i + 1) % h;
        for j in 0..w {
            let lf = (j + w - 1) % w;
            let rt = (j + 1) % w;
            let lap = adv[up * w + j] + adv[dn * w + j] + adv[i * w + lf] + adv[i * w + rt]
                - 4.0 * adv[i * w + j];
            out[i * w + j] = adv[i * w + j] + kappa * lap;
        }
    }
    out
}

fn precip_of(q: &[f64], threshold: f64, gain: f64) -> Vec<f64> {
    q.iter().map(|&x| (x - threshold).max(0.0) * gain).collect()
}

/// Sparse-precipitation forecasting task: predict the thresholded latent
/// field at each lead step from the current state.
pub fn gen_precip(seed: u64, p: &PrecipParams) -> Result<GridDataset> {
    if p.leads == 0 {
        return Err(Error::config("need at least one lead step"));
    }
    if !(p.kappa >= 0.0 && p.kappa < 0.25) {
        return Err(Error::config(format!(
            "diffusion coefficient {} outside the stable range [0, 0.25)",
            p.kappa
        )));
    }
    let splits = SplitBounds::of(p.n_samples)?;
    let grid = GridSpec::uniform(p.grid_h, p.grid_w)?;
    let hw = p.grid_h * p.grid_w;
    let domain = format!("precip.{}.sample", p.regime.id());
    let mut inputs = Vec::with_capacity(p.n_samples * 4 * hw);
    let mut targets = Vec::with_capacity(p.n_samples * p.leads * hw);
    for i in 0..p.n_samples {
        let mut rng = StreamRng::new(seed, &domain, i as u64);
        let mut q = sinusoid_field(&mut rng, p.grid_h, p.grid_w, 6, 1, 4, 1.0);
        let u = rng.uniform_in(-p.wind_max, p.wind_max);
        let v = rng.uniform_in(-p.wind_max, p.wind_max);
        inputs.extend(precip_of(&q, p.threshold, p.gain));
        inputs.extend_from_slice(&q);
        inputs.extend(std::iter::repeat(u).take(hw));
        inputs.extend(std::iter::repeat(v).take(hw));
        for _ in 0..p.leads {
            q = advect_diffuse(&q, p.grid_h, p.grid_w, u, v, p.kappa);
            targets.extend(precip_of(&q, p.threshold, p.gain));
        }
    }
    let inputs = Tensor::new(vec![p.n_samples, 4, p.grid_h, p.grid_w], inputs)?;
    let targets = Tensor::new(vec![p.n_samples, p.leads, p.grid_h, p.grid_w], targets)?;
    let norm = train_split_stats(&inputs, &splits);
    let target_names = (1..=p.leads).map(|l| format!("precip_lead{l}")).collect();
    Ok(GridDataset {
        task: TaskId::Precip,
        regime: p.regime,
        seed,
        grid,
        input_names: vec![
            "precip".into(),
            "moisture".into(),
            "wind_u".into(),
            "wind_v".into(),
        ],
        target_names,
        inputs,
        targets,
        splits,
        norm,
        coarse: None,
        ens_mean: None,
        ens_std: None,
        efi: None,
    })
}

/// Convenience dispatch over the three generators with per-task defaults.
pub fn generate(task: TaskId, seed: u64, n_samples: usize, regime: Regime) -> Result<GridDataset> {
    match task {
        TaskId::Downscale => gen_downscale(seed, &DownscaleParams::new(n_samples, regime)),
        TaskId::Ensemble => gen_ensemble(seed, &EnsembleParams::new(n_samples, regime)),
        TaskId::Precip => gen_precip(seed, &PrecipParams::new(n_samples, regime)),
    }
}

fn manifest_string(d: &GridDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task = {}", d.task.id());
    let _ = writeln!(s, "regime = {}", d.regime.id());
    let _ = writeln!(s, "seed = {}", d.seed);
    let _ = writeln!(s, "n = {}", d.n_samples());
    let _ = writeln!(s, "h = {}", d.grid.h);
    let _ = writeln!(s, "w = {}", d.grid.w);
    let _ = writeln!(s, "input_vars = {}", d.input_names.join(","));
    let _ = writeln!(s, "target_vars = {}", d.target_names.join(","));
    let _ = writeln!(s, "train_end = {}", d.splits.train_end);
    let _ = writeln!(s, "val_end = {}", d.splits.val_end);
    for (name, stats) in d.input_names.iter().zip(&d.norm) {
        let _ = writeln!(s, "norm.{name}.mean = {}", stats.mean);
        let _ = writeln!(s, "norm.{name}.std = {}", stats.std);
    }
    s
}

fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let here = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            Error::format(here, format!("manifest line '{trimmed}' is not 'key = value'"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format(0, format!("manifest is missing '{key}'")))
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(0, format!("manifest value '{value}' for '{key}' is not a number")))
}

/// Writes `manifest.txt` plus one tensor file per field into `dir`.
pub fn save_dataset(d: &GridDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), manifest_string(d))?;
    save_tensor(dir.join("inputs.wpft"), &d.inputs)?;
    save_tensor(dir.join("targets.wpft"), &d.targets)?;
    let lat = Tensor::new(vec![d.grid.h], d.grid.lat.clone())?;
    save_tensor(dir.join("lat.wpft"), &lat)?;
    if let Some(t) = &d.coarse {
        save_tensor(dir.join("coarse.wpft"), t)?;
    }
    if let Some(t) = &d.ens_mean {
        save_tensor(dir.join("ens_mean.wpft"), t)?;
    }
    if let Some(t) = &d.ens_std {
        save_tensor(dir.join("ens_std.wpft"), t)?;
    }
    if let Some(t) = &d.efi {
        save_tensor(dir.join("efi.wpft"), t)?;
    }
    Ok(())
}

/// Loads a dataset directory, validating tensor shapes against the manifest.
pub fn load_dataset(dir: &Path) -> Result<GridDataset> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let pairs = parse_manifest(&text)?;
    let task = TaskId::parse(lookup(&pairs, "task")?)
        .map_err(|e| Error::format(0, format!("manifest: {e}")))?;
    let regime = Regime::parse(lookup(&pairs, "regime")?)
        .map_err(|e| Error::format(0, format!("manifest: {e}")))?;
    let seed: u64 = parse_num(lookup(&pairs, "seed")?, "seed")?;
    let n: usize = parse_num(lookup(&pairs, "n")?, "n")?;
    let h: usize = parse_num(lookup(&pairs, "h")?, "h")?;
    let w: usize = parse_num(lookup(&pairs, "w")?, "w")?;
    let input_names: Vec<String> = lookup(&pairs, "input_vars")?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let target_names: Vec<String> = lookup(&pairs, "target_vars")?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let train_end: usize = parse_num(lookup(&pairs, "train_end")?, "train_end")?;
    let val_end: usize = parse_num(lookup(&pairs, "val_end")?, "val_end")?;
    let mut norm = Vec::with_capacity(input_names.len());
    for name in &input_names {
        let mean: f64 = parse_num(lookup(&pairs, &format!("norm.{name}.mean"))?, "norm mean")?;
        let std: f64 = parse_num(lookup(&pairs, &format!("norm.{name}.std"))?, "norm std")?;
        norm.push(VarStats { mean, std });
    }

    let inputs: Tensor = load_tensor(dir.join("inputs.wpft"))?;
    let targets: Tensor = load_tensor(dir.join("targets.wpft"))?;
    let lat: Tensor = load_tensor(dir.join("lat.wpft"))?;
    let expect_in = vec![n, input_names.len(), h, w];
    if inputs.shape() != expect_in.as_slice() {
        return Err(Error::format(
            0,
            format!(
                "inputs.wpft shape {:?} does not match manifest {:?}",
                inputs.shape(),
                expect_in
            ),
        ));
    }
    let expect_t = vec![n, target_names.len(), h, w];
    if targets.shape() != expect_t.as_slice() {
        return Err(Error::format(
            0,
            format!(
                "targets.wpft shape {:?} does not match manifest {:?}",
                targets.shape(),
                expect_t
            ),
        ));
    }
    if lat.shape() != [h] {
        return Err(Error::format(
            0,
            format!("lat.wpft has {} rows but manifest says {h}", lat.numel()),
        ));
    }
    let grid = GridSpec::with_latitudes(lat.data().to_vec(), w)
        .map_err(|e| Error::format(0, format!("lat.wpft: {e}")))?;

    let side = |name: &str, shape: Vec<usize>| -> Result<Option<Tensor>> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::format(0, format!("{name} missing for task {}", task.id())));
        }
        let t: Tensor = load_tensor(&path)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::format(
                0,
                format!("{name} shape {:?} does not match {:?}", t.shape(), shape),
            ));
        }
        Ok(Some(t))
    };
    let (coarse, ens_mean, ens_std, efi) = match task {
        TaskId::Downscale => {
            // The pooling factor is implied by the stored coarse field.
            let t: Tensor = load_tensor(dir.join("coarse.wpft"))?;
            if t.rank() != 4 || t.shape()[0] != n || h % t.shape()[2].max(1) != 0 {
                return Err(Error::format(0, "coarse.wpft is inconsistent with the grid".to_string()));
            }
            (Some(t), None, None, None)
        }
        TaskId::Ensemble => (
            None,
            side("ens_mean.wpft", vec![n, h, w])?,
            side("ens_std.wpft", vec![n, h, w])?,
            side("efi.wpft", vec![n, h, w])?,
        ),
        TaskId::Precip => (None, None, None, None),
    };
    Ok(GridDataset {
        task,
        regime,
        seed,
        grid,
        input_names,
        target_names,
        inputs,
        targets,
        splits: SplitBounds { n, train_end, val_end },
        norm,
        coarse,
        ens_mean,
        ens_std,
        efi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bit_eq_opt(a: &Option<Tensor>, b: &Option<Tensor>) -> bool {
        match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => x.bit_eq(y),
            _ => false,
        }
    }

    fn datasets_bit_eq(a: &GridDataset, b: &GridDataset) -> bool {
        a.task == b.task
            && a.seed == b.seed
            && a.grid == b.grid
            && a.input_names == b.input_names
            && a.target_names == b.target_names
            && a.inputs.bit_eq(&b.inputs)
            && a.targets.bit_eq(&b.targets)
            && a.splits == b.splits
            && a.norm == b.norm
            && bit_eq_opt(&a.coarse, &b.coarse)
            && bit_eq_opt(&a.ens_mean, &b.ens_mean)
            && bit_eq_opt(&a.ens_std, &b.ens_std)
            && bit_eq_opt(&a.efi, &b.efi)
    }

    #[test]
    fn equatorial_grid_has_unit_weights() {
        let g = GridSpec::with_latitudes(vec![0.0; 4], 8).unwrap();
        let w = g.latitude_weights().unwrap();
        assert!(w.data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_row_weights_match_hand_cosines() {
        let g = GridSpec::with_latitudes(vec![0.0, 60.0], 4).unwrap();
        let w = g.latitude_weights().unwrap();
        assert!((w.data()[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((w.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_average_to_one() {
        let g = GridSpec::uniform(32, 32).unwrap();
        let w = g.latitude_weights().unwrap();
        let mean = w.data().iter().sum::<f64>() / 32.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((w.data().iter().sum::<f64>() - 32.0).abs() < 1e-10);
    }

    #[test]
    fn poles_are_rejected() {
        assert!(GridSpec::with_latitudes(vec![90.0], 4).is_err());
        assert!(GridSpec::with_latitudes(vec![0.0, -90.0], 4).is_err());
    }

    #[test]
    fn split_floors_match_the_64_sample_case() {
        let s = SplitBounds::of(64).unwrap();
        assert_eq!(s.range(Split::Train), 0..51);
        assert_eq!(s.range(Split::Val), 51..57);
        assert_eq!(s.range(Split::Test), 57..64);
        assert!(SplitBounds::of(5).is_err());
    }

    #[test]
    fn downscale_shapes_and_pooling_provenance() {
        let d = gen_downscale(7, &DownscaleParams::new(20, Regime::Target)).unwrap();
        assert_eq!(d.inputs.shape(), &[20, 3, 32, 32]);
        assert_eq!(d.targets.shape(), &[20, 3, 32, 32]);
        let coarse = d.coarse.as_ref().unwrap();
        assert_eq!(coarse.shape(), &[20, 3, 8, 8]);
        // The stored coarse field is exactly the pooled truth, and the
        // inputs are exactly its upsampling.
        assert!(ops::avg_pool_2d(&d.targets, 4).unwrap().bit_eq(coarse));
        assert!(ops::bilinear_upsample_2d(coarse, 4).unwrap().bit_eq(&d.inputs));
    }

    #[test]
    fn generators_are_deterministic_and_seed_sensitive() {
        for task in TaskId::ALL {
            let a = generate(task, 11, 20, Regime::Target).unwrap();
            let b = generate(task, 11, 20, Regime::Target).unwrap();
            let c = generate(task, 12, 20, Regime::Target).unwrap();
            assert!(datasets_bit_eq(&a, &b), "{} not reproducible", task.id());
            assert!(!a.inputs.bit_eq(&c.inputs), "{} ignores seed", task.id());
        }
    }

    #[test]
    fn source_regime_differs_from_target() {
        let a = gen_downscale(3, &DownscaleParams::new(12, Regime::Target)).unwrap();
        let b = gen_downscale(3, &DownscaleParams::new(12, Regime::Source)).unwrap();
        assert!(!a.targets.bit_eq(&b.targets));
    }

    #[test]
    fn stored_stats_whiten_the_training_split() {
        for task in TaskId::ALL {
            let d = generate(task, 13, 30, Regime::Target).unwrap();
            let hw = d.grid.h * d.grid.w;
            let train = d.splits.range(Split::Train);
            for (v, stats) in d.norm.iter().enumerate() {
                let mut vals = Vec::new();
                for i in train.clone() {
                    let t = d.normalized_input(i);
                    vals.extend_from_slice(&t.data()[v * hw..(v + 1) * hw]);
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                    / vals.len() as f64;
                assert!(mean.abs() < 1e-10, "{} var {v}: mean {mean}", task.id());
                assert!((var.sqrt() - 1.0).abs() < 1e-10, "{} var {v}: std {}", task.id(), var.sqrt());
                let _ = stats;
            }
        }
    }

    #[test]
    fn silent_ensemble_collapses_to_truth_and_floor() {
        let mut p = EnsembleParams::new(12, Regime::Target);
        p.noise_std = 0.0;
        p.bias_amp = 0.0;
        let d = gen_ensemble(5, &p).unwrap();
        let mean = d.ens_mean.as_ref().unwrap();
        let std = d.ens_std.as_ref().unwrap();
        for (m, t) in mean.data().iter().zip(d.targets.data()) {
            assert!((m - t).abs() < 1e-12);
        }
        assert!(std.data().iter().all(|&s| s == p.sigma_floor));
    }

    #[test]
    fn ensemble_spread_tracks_member_noise() {
        // Population-convention spread of m draws with noise std s has
        // expectation close to s * sqrt((m-1)/m); check the average over
        // many grid points to 5%.
        let p = EnsembleParams::new(40, Regime::Target);
        let d = gen_ensemble(6, &p).unwrap();
        let stds = d.ens_std.as_ref().unwrap();
        let avg = stds.data().iter().sum::<f64>() / stds.numel() as f64;
        let expect = p.noise_std * ((p.members - 1) as f64 / p.members as f64).sqrt();
        assert!(
            (avg - expect).abs() / expect < 0.05,
            "avg spread {avg} vs expected {expect}"
        );
    }

    #[test]
    fn efi_field_stays_in_bounds() {
        let d = gen_ensemble(7, &EnsembleParams::new(12, Regime::Target)).unwrap();
        let efi = d.efi.as_ref().unwrap();
        assert!(efi.data().iter().all(|&e| (-1.0..=1.0).contains(&e)));
        assert!(efi.data().iter().any(|&e| e.abs() > 0.1));
    }

    #[test]
    fn correction_identity_and_scaling() {
        let mu = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let sigma = Tensor::new(vec![2], vec![0.5, 2.0]).unwrap();
        let zeros = Tensor::zeros(&[2]);
        let (m, s) = gaussian_correction(&zeros, &zeros, &mu, &sigma).unwrap();
        assert!(m.bit_eq(&mu));
        assert!(s.bit_eq(&sigma));
        let ln2 = Tensor::full(&[2], std::f64::consts::LN_2).unwrap();
        let (_, s2) = gaussian_correction(&zeros, &ln2, &mu, &sigma).unwrap();
        for (a, b) in s2.data().iter().zip(sigma.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        let big = Tensor::full(&[2], -40.0).unwrap();
        let (_, s3) = gaussian_correction(&zeros, &big, &mu, &sigma).unwrap();
        assert!(s3.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn still_atmosphere_repeats_the_current_precip() {
        let mut p = PrecipParams::new(12, Regime::Target);
        p.wind_max = 0.0;
        p.kappa = 0.0;
        let d = gen_precip(9, &p).unwrap();
        let hw = d.grid.h * d.grid.w;
        for i in 0..d.n_samples() {
            let input = d.input(i);
            let current = &input.data()[..hw];
            let target = d.target(i);
            for l in 0..p.leads {
                let lead = &target.data()[l * hw..(l + 1) * hw];
                assert_eq!(current, lead, "sample {i} lead {l}");
            }
        }
    }

    #[test]
    fn precip_is_mostly_exact_zeros() {
        let mut total = 0usize;
        let mut zeros = 0usize;
        for seed in 0..100 {
            let d = gen_precip(seed, &PrecipParams::new(12, Regime::Target)).unwrap();
            zeros += d.targets.data().iter().filter(|&&x| x == 0.0).count();
            total += d.targets.numel();
        }
        let frac = zeros as f64 / total as f64;
        assert!(frac >= 0.5, "zero fraction {frac}");
    }

    #[test]
    fn dataset_directory_round_trips_bitwise() {
        let tmp = std::env::temp_dir().join(format!("wpft_tasks_{}", std::process::id()));
        for task in TaskId::ALL {
            let d = generate(task, 21, 12, Regime::Target).unwrap();
            let dir = tmp.join(task.id());
            save_dataset(&d, &dir).unwrap();
            let loaded = load_dataset(&dir).unwrap();
            assert!(datasets_bit_eq(&d, &loaded), "{} round trip", task.id());
            assert_eq!(loaded.regime, Regime::Target);
        }
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn corrupt_manifest_grid_is_a_format_error() {
        let tmp = std::env::temp_dir().join(format!("wpft_tasks_bad_{}", std::process::id()));
        let d = gen_downscale(22, &DownscaleParams::new(12, Regime::Target)).unwrap();
        save_dataset(&d, &tmp).unwrap();
        let manifest = std::fs::read_to_string(tmp.join("manifest.txt")).unwrap();
        std::fs::write(tmp.join("manifest.txt"), manifest.replace("h = 32", "h = 16")).unwrap();
        let err = load_dataset(&tmp).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn truncated_tensor_reports_an_offset() {
        let tmp = std::env::temp_dir().join(format!("wpft_tasks_trunc_{}", std::process::id()));
        let d = gen_downscale(23, &DownscaleParams::new(12, Regime::Target)).unwrap();
        save_dataset(&d, &tmp).unwrap();
        let bytes = std::fs::read(tmp.join("inputs.wpft")).unwrap();
        std::fs::write(tmp.join("inputs.wpft"), &bytes[..bytes.len() / 2]).unwrap();
        let err = load_dataset(&tmp).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert!(offset > 0),
            other => panic!("expected format error, got {other}"),
        }
        std::fs::remove_dir_all(&tmp).unwrap();
    }

    #[test]
    fn manifest_preserves_variable_order() {
        let d = gen_precip(24, &PrecipParams::new(12, Regime::Target)).unwrap();
        let text = manifest_string(&d);
        assert!(text.contains("input_vars = precip,moisture,wind_u,wind_v"));
        assert!(text.contains("target_vars = precip_lead1,precip_lead2,precip_lead3"));
    }
}
