//! Fisher-guided selective fine-tuning over a flat parameter vector.
//!
//! Per training step: estimate the diagonal Fisher information of the
//! backbone coordinates from squared loss gradients, add annealed uniform
//! noise so early steps explore beyond the current estimate, keep the top-k
//! fraction, and apply a masked AdamW update that freezes everything else
//! (values and optimizer moments alike). Coordinates outside the masked
//! domain, such as head and prompt-generator parameters, always update.
//!
//! All functions here work on flat `f64` slices; mapping model parameters to
//! and from the flat order is the caller's job (see [`crate::params::FlatLayout`]).

use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::StreamRng;

/// Default selected fraction of backbone coordinates.
pub const DEFAULT_K: f64 = 0.001;
/// Default initial noise amplitude.
pub const DEFAULT_GAMMA: f64 = 0.2;

/// How the squared-gradient Fisher estimate is formed from a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherMode {
    /// Mean of squared per-sample gradients; one backward pass per sample.
    PerSample,
    /// Squared gradient of the batch-mean loss; cheaper but biased whenever
    /// per-sample gradients disagree (it squares the mean instead of
    /// averaging the squares).
    BatchMean,
}

/// Mean of elementwise squared per-sample gradients.
pub fn fisher_per_sample(per_sample_grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = per_sample_grads.len();
    if n == 0 {
        return Err(Error::contract("fisher estimate needs a non-empty batch"));
    }
    let width = per_sample_grads[0].len();
    let mut acc = vec![0.0; width];
    for (j, g) in per_sample_grads.iter().enumerate() {
        if g.len() != width {
            return Err(Error::contract(format!(
                "per-sample gradient {j} has length {} but expected {width}",
                g.len()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(g) {
            *a += v * v;
        }
    }
    let inv = 1.0 / n as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Elementwise square of the batch-mean gradient.
pub fn fisher_batch_mean(mean_grad: &[f64]) -> Vec<f64> {
    mean_grad.iter().map(|&g| g * g).collect()
}

/// Noise amplitude `gamma * (1 - ns/ts)`: linear decay that is exactly zero
/// at the final step.
pub fn noise_scale(gamma: f64, ns: usize, ts: usize) -> Result<f64> {
    if ts == 0 {
        return Err(Error::contract("total step count must be positive"));
    }
    if ns > ts {
        return Err(Error::contract(format!(
            "step index {ns} exceeds total steps {ts}"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::contract(format!("noise amplitude {gamma} < 0")));
    }
    Ok(gamma * (1.0 - ns as f64 / ts as f64))
}

/// Adds per-entry uniform noise scaled by [`noise_scale`] to the Fisher
/// estimate. The draw is keyed by `(seed, "sfas", ns)`, so replaying a step
/// is bit-identical regardless of what was drawn before it.
pub fn perturb(f_hat: &[f64], ns: usize, ts: usize, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    let scale = noise_scale(gamma, ns, ts)?;
    let mut rng = StreamRng::new(seed, "sfas", ns as u64);
    Ok(f_hat.iter().map(|&f| scale * rng.uniform() + f).collect())
}

/// Selects the `ceil(k * n)` largest scores; ties go to the lower index.
pub fn select_topk(scores: &[f64], k: f64) -> Result<Vec<bool>> {
    select_topk_eligible(scores, k, None)
}

/// [`select_topk`] restricted to eligible coordinates: the count is
/// `ceil(k * n_eligible)` and ineligible entries are never selected.
pub fn select_topk_eligible(
    scores: &[f64],
    k: f64,
    eligible: Option<&[bool]>,
) -> Result<Vec<bool>> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::contract(format!(
            "selected fraction must be in (0, 1], got {k}"
        )));
    }
    if let Some(e) = eligible {
        if e.len() != scores.len() {
            return Err(Error::contract(format!(
                "eligibility length {} does not match score length {}",
                e.len(),
                scores.len()
            )));
        }
    }
    if let Some(bad) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::numeric(format!(
            "selection score at index {bad} is NaN"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| eligible.map_or(true, |e| e[i]))
        .collect();
    let m = (k * idx.len() as f64).ceil() as usize;
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("NaN screened above")
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; scores.len()];
    for &i in idx.iter().take(m) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Per-step bookkeeping emitted for the `mask-stats` report. `overlap_with_prev`
/// is the Jaccard index against the previous step's mask (an empty set before
/// the first step, so the first row reports 0). `max_f`/`median_f` summarize
/// the raw Fisher estimate, before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStats {
    pub step: usize,
    pub selected_count: usize,
    pub overlap_with_prev: f64,
    pub noise_scale: f64,
    pub max_f: f64,
    pub median_f: f64,
}

fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Clone)]
pub struct SfasConfig {
    /// Fraction of masked-domain coordinates selected each step.
    pub k: f64,
    /// Initial noise amplitude.
    pub gamma: f64,
    /// Total planned steps `ts` for the linear decay.
    pub total_steps: usize,
    pub mode: FisherMode,
    /// Seed for the per-step noise stream.
    pub seed: u64,
}

impl SfasConfig {
    pub fn new(total_steps: usize, seed: u64) -> Self {
        SfasConfig {
            k: DEFAULT_K,
            gamma: DEFAULT_GAMMA,
            total_steps,
            mode: FisherMode::PerSample,
            seed,
        }
    }
}

/// Masked AdamW over one flat parameter vector.
///
/// `domain` lists the flat indices subject to Fisher selection; everything
/// else is always updated. Moments and per-coordinate step counts freeze
/// together with the values, so a coordinate re-entering the mask resumes
/// from exactly the optimizer state it left behind.
pub struct SelectiveOptimizer {
    opt: AdamW<f64>,
    cfg: SfasConfig,
    domain: Vec<usize>,
    eligible: Option<Vec<bool>>,
    ns: usize,
    prev_mask: Vec<bool>,
    ever_selected: Vec<bool>,
}

impl SelectiveOptimizer {
    pub fn new(
        total_len: usize,
        domain: Vec<usize>,
        opt_cfg: AdamWConfig,
        cfg: SfasConfig,
    ) -> Result<Self> {
        if let Some(&bad) = domain.iter().find(|&&i| i >= total_len) {
            return Err(Error::contract(format!(
                "masked-domain index {bad} out of range for {total_len} parameters"
            )));
        }
        if !(cfg.k > 0.0 && cfg.k <= 1.0) {
            return Err(Error::contract(format!(
                "selected fraction must be in (0, 1], got {}",
                cfg.k
            )));
        }
        let n = domain.len();
        Ok(SelectiveOptimizer {
            opt: AdamW::new(total_len, opt_cfg),
            cfg,
            domain,
            eligible: None,
            ns: 0,
            prev_mask: vec![false; n],
            ever_selected: vec![false; n],
        })
    }

    /// Restricts selection to a subset of the masked domain (e.g. to leave
    /// normalization and bias coordinates out of the Fisher competition).
    /// `eligible` is aligned to `domain` order.
    pub fn set_eligibility(&mut self, eligible: Vec<bool>) -> Result<()> {
        if eligible.len() != self.domain.len() {
            return Err(Error::contract(format!(
                "eligibility length {} does not match domain length {}",
                eligible.len(),
                self.domain.len()
            )));
        }
        self.eligible = Some(eligible);
        Ok(())
    }

    pub fn step_index(&self) -> usize {
        self.ns
    }

    pub fn config(&self) -> &SfasConfig {
        &self.cfg
    }

    /// Domain coordinates selected at least once so far, aligned to `domain`.
    pub fn ever_selected(&self) -> &[bool] {
        &self.ever_selected
    }

    /// One selective update: perturb `f_hat` (aligned to `domain`), keep the
    /// top-k, and step AdamW with everything outside the domain unmasked.
    /// Advances the internal step counter.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        f_hat: &[f64],
        lr: f64,
    ) -> Result<MaskStats> {
        if params.len() != self.opt.len() || grads.len() != self.opt.len() {
            return Err(Error::contract(format!(
                "parameter/gradient length {}/{} does not match optimizer length {}",
                params.len(),
                grads.len(),
                self.opt.len()
            )));
        }
        if f_hat.len() != self.domain.len() {
            return Err(Error::contract(format!(
                "fisher length {} does not match masked-domain length {}",
                f_hat.len(),
                self.domain.len()
            )));
        }
        if self.ns >= self.cfg.total_steps {
            return Err(Error::contract(format!(
                "step {} past planned total {}",
                self.ns, self.cfg.total_steps
            )));
        }
        let scale = noise_scale(self.cfg.gamma, self.ns, self.cfg.total_steps)?;
        let f_bar = perturb(f_hat, self.ns, self.cfg.total_steps, self.cfg.gamma, self.cfg.seed)?;
        let domain_mask = select_topk_eligible(&f_bar, self.cfg.k, self.eligible.as_deref())?;

        let mut mask = vec![true; self.opt.len()];
        for (&flat, &m) in self.domain.iter().zip(&domain_mask) {
            mask[flat] = m;
        }
        self.opt.masked_step(params, grads, &mask, lr)?;

        let stats = MaskStats {
            step: self.ns,
            selected_count: domain_mask.iter().filter(|&&m| m).count(),
            overlap_with_prev: jaccard(&domain_mask, &self.prev_mask),
            noise_scale: scale,
            max_f: f_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            median_f: median(f_hat),
        };
        for (e, &m) in self.ever_selected.iter_mut().zip(&domain_mask) {
            *e |= m;
        }
        self.prev_mask = domain_mask;
        self.ns += 1;
        Ok(stats)
    }
}

/// Numerically estimates `E_X[KL(P_params || P_perturbed)] / eps^2` for one
/// coordinate, for each step size in the ladder. Assumes a unit-variance
/// Gaussian predictive distribution, for which the KL between two predictions
/// is half their squared mean difference. For small `eps` the ratio
/// approaches half the diagonal Fisher entry, so a unit-Fisher coordinate
/// yields 0.5 and an inert coordinate yields 0.
pub fn kl_quadratic_check<F>(
    params: &[f64],
    coord: usize,
    eps_ladder: &[f64],
    predictive_means: F,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if coord >= params.len() {
        return Err(Error::contract(format!(
            "coordinate {coord} out of range for {} parameters",
            params.len()
        )));
    }
    let base = predictive_means(params)?;
    if base.is_empty() {
        return Err(Error::contract("predictive check needs at least one input"));
    }
    let mut table = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        if eps == 0.0 {
            return Err(Error::contract("perturbation step must be nonzero"));
        }
        let mut shifted = params.to_vec();
        shifted[coord] += eps;
        let moved = predictive_means(&shifted)?;
        if moved.len() != base.len() {
            return Err(Error::contract(
                "predictive mean count changed under perturbation",
            ));
        }
        let mean_kl = base
            .iter()
            .zip(&moved)
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum::<f64>()
            / base.len() as f64;
        table.push((eps, mean_kl / (eps * eps)));
    }
    Ok(table)
}
