//! Forecast verification metrics over latitude-weighted grids.
//!
//! The deterministic scores (latitude-weighted RMSE, mean bias, anomaly
//! correlation) and the probabilistic/categorical ones (Gaussian CRPS with
//! an independent quadrature oracle, extreme-weighted CRPS, stable
//! equitable error in precipitation space, threat score) all operate on
//! `[N, H, W]` stacks of a single variable. Climatological reference data
//! (temporal mean, dry-day probability, category and event thresholds) is
//! derived from a reference sample set, normally the training split.
//!
//! Everything here is a pure function; errors are returned, never panicked,
//! so callers can distinguish shape mistakes from genuinely undefined
//! scores (for example a threat score with no events anywhere).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;
use crate::Tensor;

/// Precipitation category for the equitable error score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Dry = 0,
    Light = 1,
    Heavy = 2,
}

fn categorize(v: f64, dry_threshold: f64, wet_boundary: f64) -> Category {
    if v < dry_threshold {
        Category::Dry
    } else if v <= wet_boundary {
        Category::Light
    } else {
        Category::Heavy
    }
}

/// Nearest-rank quantile of an ascending-sorted slice.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Reference statistics per grid point, computed from a `[N, H, W]` stack
/// of ground-truth fields (typically the training split).
#[derive(Debug, Clone)]
pub struct Climatology {
    pub h: usize,
    pub w: usize,
    /// Temporal mean field `[H, W]`; the anomaly baseline.
    pub mean: Tensor,
    /// Fraction of reference values below the dry threshold, `[H, W]`.
    pub dry_prob: Tensor,
    /// 2/3-quantile of the non-dry reference values, `[H, W]`.
    pub wet_boundary: Tensor,
    /// Median of all reference values per point, `[H, W]`.
    pub q50: Tensor,
    /// Upper-quartile threshold per point, `[H, W]`.
    pub q75: Tensor,
    pub dry_threshold: f64,
}

impl Climatology {
    pub fn from_reference(fields: &Tensor, dry_threshold: f64) -> Result<Climatology> {
        if fields.rank() != 3 {
            return Err(Error::shape(
                "climatology",
                "[N, H, W]",
                format!("{:?}", fields.shape()),
            ));
        }
        let (n, h, w) = (fields.shape()[0], fields.shape()[1], fields.shape()[2]);
        if n == 0 {
            return Err(Error::contract("climatology needs at least one reference field"));
        }
        let hw = h * w;
        let mut mean = vec![0.0; hw];
        let mut dry_prob = vec![0.0; hw];
        let mut wet_boundary = vec![0.0; hw];
        let mut q50 = vec![0.0; hw];
        let mut q75 = vec![0.0; hw];
        for c in 0..hw {
            let mut vals: Vec<f64> = (0..n).map(|k| fields.data()[k * hw + c]).collect();
            mean[c] = vals.iter().sum::<f64>() / n as f64;
            let dry = vals.iter().filter(|&&v| v < dry_threshold).count();
            dry_prob[c] = dry as f64 / n as f64;
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            q50[c] = nearest_rank(&vals, 0.5);
            q75[c] = nearest_rank(&vals, 0.75);
            let wet: Vec<f64> = vals.iter().copied().filter(|&v| v >= dry_threshold).collect();
            // A point that is always dry gets the dry threshold itself as
            // its boundary; its dry probability is 1 so scores that use the
            // boundary exclude it anyway.
            wet_boundary[c] = if wet.is_empty() {
                dry_threshold
            } else {
                nearest_rank(&wet, 2.0 / 3.0)
            };
        }
        Ok(Climatology {
            h,
            w,
            mean: TensorBase::from_op(vec![h, w], mean),
            dry_prob: TensorBase::from_op(vec![h, w], dry_prob),
            wet_boundary: TensorBase::from_op(vec![h, w], wet_boundary),
            q50: TensorBase::from_op(vec![h, w], q50),
            q75: TensorBase::from_op(vec![h, w], q75),
            dry_threshold,
        })
    }
}

fn check_stack(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<(usize, usize, usize)> {
    if pred.rank() != 3 {
        return Err(Error::shape(op, "[N, H, W]", format!("{:?}", pred.shape())));
    }
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            op,
            format!("{:?}", pred.shape()),
            format!("{:?}", truth.shape()),
        ));
    }
    Ok((pred.shape()[0], pred.shape()[1], pred.shape()[2]))
}

fn check_weights(op: &'static str, weights: &Tensor, h: usize) -> Result<()> {
    if weights.shape() != [h] {
        return Err(Error::shape(op, format!("[{h}]"), format!("{:?}", weights.shape())));
    }
    Ok(())
}

/// Latitude-weighted root-mean-square error: per sample the square root of
/// the weighted spatial mean squared error, then the mean over samples.
pub fn rmse_latweighted(pred: &Tensor, truth: &Tensor, weights: &Tensor) -> Result<f64> {
    let (n, h, w) = check_stack("rmse", pred, truth)?;
    check_weights("rmse", weights, h)?;
    let hw = h * w;
    let mut total = 0.0;
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..h {
            let wi = weights.data()[i];
            for j in 0..w {
                let d = pred.data()[k * hw + i * w + j] - truth.data()[k * hw + i * w + j];
                acc += wi * d * d;
            }
        }
        total += (acc / hw as f64).sqrt();
    }
    Ok(total / n as f64)
}

/// Unweighted mean of (prediction - truth) over every sample and point.
pub fn mean_bias(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let (n, h, w) = check_stack("bias", pred, truth)?;
    let count = (n * h * w) as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| p - t)
        .sum();
    Ok(sum / count)
}

/// Anomaly correlation against a reference mean field: the weighted inner
/// product of the two anomaly fields normalized by their weighted norms,
/// pooled over all samples.
pub fn acc(pred: &Tensor, truth: &Tensor, clim_mean: &Tensor, weights: &Tensor) -> Result<f64> {
    let (n, h, w) = check_stack("acc", pred, truth)?;
    check_weights("acc", weights, h)?;
    if clim_mean.shape() != [h, w] {
        return Err(Error::shape(
            "acc",
            format!("[{h}, {w}]"),
            format!("{:?}", clim_mean.shape()),
        ));
    }
    let hw = h * w;
    let mut cross = 0.0;
    let mut pp = 0.0;
    let mut tt = 0.0;
    for k in 0..n {
        for i in 0..h {
            let wi = weights.data()[i];
            for j in 0..w {
                let c = clim_mean.data()[i * w + j];
                let pa = pred.data()[k * hw + i * w + j] - c;
                let ta = truth.data()[k * hw + i * w + j] - c;
                cross += wi * pa * ta;
                pp += wi * pa * pa;
                tt += wi * ta * ta;
            }
        }
    }
    if pp == 0.0 || tt == 0.0 {
        return Err(Error::undefined(
            "anomaly correlation of a zero-variance anomaly field",
        ));
    }
    Ok(cross / (pp * tt).sqrt())
}

/// Closed-form CRPS of a Gaussian forecast N(mu, sigma^2) against the
/// observation x: `sigma * (2 pdf(z) + z (2 cdf(z) - 1) - 1/sqrt(pi))`.
pub fn crps_gaussian(mu: f64, sigma: f64, x: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::numeric(format!(
            "gaussian CRPS needs a positive spread, got {sigma}"
        )));
    }
    let z = (x - mu) / sigma;
    let val = sigma
        * (2.0 * z.norm_pdf() + z * (2.0 * z.norm_cdf() - 1.0)
            - 1.0 / std::f64::consts::PI.sqrt());
    Ok(val)
}

/// Pointwise Gaussian CRPS over matching fields.
pub fn crps_gaussian_field(mu: &Tensor, sigma: &Tensor, x: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != x.shape() {
        return Err(Error::shape(
            "crps_field",
            format!("{:?}", mu.shape()),
            format!("{:?} / {:?}", sigma.shape(), x.shape()),
        ));
    }
    let mut out = Vec::with_capacity(mu.numel());
    for i in 0..mu.numel() {
        out.push(crps_gaussian(mu.data()[i], sigma.data()[i], x.data()[i])?);
    }
    Ok(TensorBase::from_op(mu.shape().to_vec(), out))
}

fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, fa, m, fm, flm);
    let right = simpson(m, fm, b, fb, frm);
    let delta = left + right - whole;
    // At the depth cap the interval is narrower than machine precision
    // allows to matter; accept the refined estimate.
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
}

fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(a, fa, b, fb, fm);
    adaptive(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Quadrature CRPS of an arbitrary forecast CDF against observation x:
/// the integral of `(F(y) - step(y - x))^2` over `center +/- 12 scale`,
/// widened if needed so the observation always lies inside (the integrand
/// is ~1 between the distribution and a far-out observation, so truncating
/// there would lose real mass). Split at the observation where the
/// integrand jumps. Absolute tolerance 1e-8. This is the independent
/// oracle for the closed form above.
pub fn crps_numeric<F: Fn(f64) -> f64>(cdf: F, x: f64, center: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::numeric("quadrature scale must be positive"));
    }
    let lo = (center - 12.0 * scale).min(x - scale);
    let hi = (center + 12.0 * scale).max(x + scale);
    let integrand = |y: f64| {
        let step = if y >= x { 1.0 } else { 0.0 };
        let d = cdf(y) - step;
        d * d
    };
    let split = x.clamp(lo, hi);
    let tol = 1e-8;
    let val = integrate(&integrand, lo, split, 0.5 * tol) + integrate(&integrand, split, hi, 0.5 * tol);
    if !val.is_finite() {
        return Err(Error::numeric("CRPS quadrature did not converge"));
    }
    Ok(val)
}

/// Extreme-weighted CRPS: the mean over points of `|efi| * crps`, where the
/// weight field must lie in [-1, 1].
pub fn eecrps(crps_field: &Tensor, efi_field: &Tensor) -> Result<f64> {
    if crps_field.shape() != efi_field.shape() {
        return Err(Error::shape(
            "eecrps",
            format!("{:?}", crps_field.shape()),
            format!("{:?}", efi_field.shape()),
        ));
    }
    if efi_field.data().iter().any(|e| e.abs() > 1.0) {
        return Err(Error::numeric("extreme forecast index outside [-1, 1]"));
    }
    let sum: f64 = crps_field
        .data()
        .iter()
        .zip(efi_field.data())
        .map(|(c, e)| e.abs() * c)
        .sum();
    Ok(sum / crps_field.numel() as f64)
}

/// 3x3 category scoring matrix, rows indexed by forecast category and
/// columns by observed category (dry, light, heavy). Diagonal is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeepsMatrix(pub [[f64; 3]; 3]);

impl SeepsMatrix {
    pub fn score(&self, forecast: usize, observed: usize) -> f64 {
        self.0[forecast][observed]
    }
}

/// Scoring matrix determined by the climatological dry probability p.
pub fn seeps_matrix(p: f64) -> Result<SeepsMatrix> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::numeric(format!(
            "category matrix undefined for dry probability {p}"
        )));
    }
    let wet = 1.0 - p;
    Ok(SeepsMatrix([
        [0.0, 0.5 / wet, 2.0 / wet],
        [0.5 / p, 0.0, 1.5 / wet],
        [0.5 / p + 1.5 / (2.0 + p), 1.5 / (2.0 + p), 0.0],
    ]))
}

/// Stable equitable error in precipitation space: per point, categorize
/// forecast and observation into dry/light/heavy, score the joint
/// contingency frequencies with the p-dependent matrix, exclude points
/// whose dry probability lies outside (0.1, 0.85), and take the
/// area-weighted mean over the included points.
pub fn seeps(pred: &Tensor, obs: &Tensor, clim: &Climatology, weights: &Tensor) -> Result<f64> {
    let (n, h, w) = check_stack("seeps", pred, obs)?;
    check_weights("seeps", weights, h)?;
    if clim.h != h || clim.w != w {
        return Err(Error::shape(
            "seeps",
            format!("[{h}, {w}] climatology"),
            format!("[{}, {}]", clim.h, clim.w),
        ));
    }
    let hw = h * w;
    let mut weighted = 0.0;
    let mut weight_total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let c = i * w + j;
            let p = clim.dry_prob.data()[c];
            if p <= 0.1 || p >= 0.85 {
                continue;
            }
            let matrix = seeps_matrix(p)?;
            let boundary = clim.wet_boundary.data()[c];
            let mut point_sum = 0.0;
            for k in 0..n {
                let f = categorize(pred.data()[k * hw + c], clim.dry_threshold, boundary);
                let o = categorize(obs.data()[k * hw + c], clim.dry_threshold, boundary);
                point_sum += matrix.score(f as usize, o as usize);
            }
            weighted += weights.data()[i] * point_sum / n as f64;
            weight_total += weights.data()[i];
        }
    }
    if weight_total == 0.0 {
        return Err(Error::undefined(
            "every grid point was excluded by the dry-probability window",
        ));
    }
    Ok(weighted / weight_total)
}

/// Threat score H/(H+M+F) with per-point event thresholds; an event is a
/// value strictly above the threshold. Correct negatives are ignored.
pub fn threat_score(pred: &Tensor, obs: &Tensor, thresholds: &Tensor) -> Result<f64> {
    let (n, h, w) = check_stack("threat", pred, obs)?;
    if thresholds.shape() != [h, w] {
        return Err(Error::shape(
            "threat",
            format!("[{h}, {w}]"),
            format!("{:?}", thresholds.shape()),
        ));
    }
    let hw = h * w;
    let (mut hits, mut misses, mut false_alarms) = (0u64, 0u64, 0u64);
    for k in 0..n {
        for c in 0..hw {
            let t = thresholds.data()[c];
            let pe = pred.data()[k * hw + c] > t;
            let oe = obs.data()[k * hw + c] > t;
            match (pe, oe) {
                (true, true) => hits += 1,
                (false, true) => misses += 1,
                (true, false) => false_alarms += 1,
                (false, false) => {}
            }
        }
    }
    let denom = hits + misses + false_alarms;
    if denom == 0 {
        return Err(Error::undefined("threat score with no events anywhere"));
    }
    Ok(hits as f64 / denom as f64)
}
