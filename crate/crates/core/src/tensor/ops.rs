//! Structural tensor operations (pure, gradient-free).
//!
//! The autodiff session wraps these with backward rules; metrics and data
//! generation call them directly.

use super::{shape_string, TensorBase};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
pub fn matmul<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> Result<TensorBase<S>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(
            "matmul",
            "two rank-2 tensors",
            format!("ranks {} and {}", a.rank(), b.rank()),
        ));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("[{m}, {k}] x [{k}, n]"),
            format!("[{m}, {k}] x [{k2}, {n}]"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aip * brow[j];
            }
        }
    }
    Ok(TensorBase::from_op(vec![m, n], out))
}

/// Matrix transpose `[m,n] -> [n,m]`.
pub fn transpose2<S: Scalar>(a: &TensorBase<S>) -> Result<TensorBase<S>> {
    if a.rank() != 2 {
        return Err(Error::shape(
            "transpose2",
            "rank-2 tensor",
            format!("rank {}", a.rank()),
        ));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Ok(TensorBase::from_op(vec![n, m], out))
}

/// Softmax over the last dimension with max subtraction for stability.
pub fn softmax_lastdim<S: Scalar>(a: &TensorBase<S>) -> Result<TensorBase<S>> {
    if a.rank() == 0 {
        return Err(Error::shape("softmax_lastdim", "rank >= 1", "rank 0"));
    }
    let n = a.last_dim();
    let rows = a.numel() / n;
    let ad = a.data();
    let mut out = vec![S::zero(); a.numel()];
    for r in 0..rows {
        let row = &ad[r * n..(r + 1) * n];
        let mut mx = row[0];
        for &x in row {
            if x > mx {
                mx = x;
            }
        }
        let mut denom = S::zero();
        for (j, &x) in row.iter().enumerate() {
            let e = (x - mx).exp();
            out[r * n + j] = e;
            denom += e;
        }
        for j in 0..n {
            out[r * n + j] = out[r * n + j] / denom;
        }
    }
    Ok(TensorBase::from_op(a.shape().to_vec(), out))
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// LayerNorm over the last dimension with biased variance (divide by n).
/// Also returns the normalized activations and per-row inverse std, which the
/// backward rule reuses.
pub(crate) fn layernorm_parts<S: Scalar>(
    x: &TensorBase<S>,
    gamma: &TensorBase<S>,
    beta: &TensorBase<S>,
    eps: f64,
) -> Result<(TensorBase<S>, TensorBase<S>, Vec<S>)> {
    if x.rank() == 0 {
        return Err(Error::shape("layernorm_lastdim", "rank >= 1", "rank 0"));
    }
    let n = x.last_dim();
    if gamma.shape() != [n] || beta.shape() != [n] {
        return Err(Error::shape(
            "layernorm_lastdim",
            format!("gamma and beta of shape [{n}]"),
            format!(
                "{} and {}",
                shape_string(gamma.shape()),
                shape_string(beta.shape())
            ),
        ));
    }
    let rows = x.numel() / n;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let nn = S::of(n as f64);
    let eps = S::of(eps);
    let mut y = vec![S::zero(); x.numel()];
    let mut xhat = vec![S::zero(); x.numel()];
    let mut inv_std = vec![S::zero(); rows];
    for r in 0..rows {
        let row = &xd[r * n..(r + 1) * n];
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) / nn;
        let var = row
            .iter()
            .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
            / nn;
        let is = (var + eps).sqrt().recip();
        inv_std[r] = is;
        for j in 0..n {
            let xh = (row[j] - mean) * is;
            xhat[r * n + j] = xh;
            y[r * n + j] = xh * gd[j] + bd[j];
        }
    }
    Ok((
        TensorBase::from_op(x.shape().to_vec(), y),
        TensorBase::from_op(x.shape().to_vec(), xhat),
        inv_std,
    ))
}

pub fn layernorm_lastdim<S: Scalar>(
    x: &TensorBase<S>,
    gamma: &TensorBase<S>,
    beta: &TensorBase<S>,
    eps: f64,
) -> Result<TensorBase<S>> {
    layernorm_parts(x, gamma, beta, eps).map(|(y, _, _)| y)
}

/// Cyclic axis shift: the last dimension becomes the first.
/// `pi_shift` of shape `(a, b, c)` has shape `(c, a, b)`, and applying it
/// `rank` times is the identity.
pub fn pi_shift<S: Scalar>(a: &TensorBase<S>) -> TensorBase<S> {
    if a.rank() <= 1 {
        return a.clone();
    }
    let n_last = a.last_dim();
    let lead = a.numel() / n_last;
    let ad = a.data();
    let mut out = vec![S::zero(); a.numel()];
    for l in 0..lead {
        for j in 0..n_last {
            out[j * lead + l] = ad[l * n_last + j];
        }
    }
    let mut shape = Vec::with_capacity(a.rank());
    shape.push(n_last);
    shape.extend_from_slice(&a.shape()[..a.rank() - 1]);
    TensorBase::from_op(shape, out)
}

/// Inverse of [`pi_shift`]: the first dimension becomes the last.
pub fn pi_unshift<S: Scalar>(a: &TensorBase<S>) -> TensorBase<S> {
    if a.rank() <= 1 {
        return a.clone();
    }
    let n_first = a.shape()[0];
    let rest = a.numel() / n_first;
    let ad = a.data();
    let mut out = vec![S::zero(); a.numel()];
    for j in 0..n_first {
        for l in 0..rest {
            out[l * n_first + j] = ad[j * rest + l];
        }
    }
    let mut shape = Vec::with_capacity(a.rank());
    shape.extend_from_slice(&a.shape()[1..]);
    shape.push(n_first);
    TensorBase::from_op(shape, out)
}

/// Concatenation along the first dimension.
pub fn concat_first<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> Result<TensorBase<S>> {
    if a.rank() == 0 || b.rank() == 0 || a.rank() != b.rank() || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape(
            "concat_first",
            format!("matching trailing dims, got {}", shape_string(a.shape())),
            shape_string(b.shape()),
        ));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(TensorBase::from_op(shape, data))
}

/// Contiguous slice `[start, start+len)` along the first dimension.
pub fn narrow_first<S: Scalar>(
    a: &TensorBase<S>,
    start: usize,
    len: usize,
) -> Result<TensorBase<S>> {
    if a.rank() == 0 {
        return Err(Error::shape("narrow_first", "rank >= 1", "rank 0"));
    }
    let d0 = a.shape()[0];
    if start + len > d0 {
        return Err(Error::shape(
            "narrow_first",
            format!("start+len <= {d0}"),
            format!("start {start}, len {len}"),
        ));
    }
    let row = a.row_numel();
    let mut shape = a.shape().to_vec();
    shape[0] = len;
    Ok(TensorBase::from_op(
        shape,
        a.data()[start * row..(start + len) * row].to_vec(),
    ))
}

/// Non-overlapping mean pooling over the last two dimensions.
pub fn avg_pool_2d<S: Scalar>(a: &TensorBase<S>, factor: usize) -> Result<TensorBase<S>> {
    if a.rank() < 2 {
        return Err(Error::shape(
            "avg_pool_2d",
            "rank >= 2",
            format!("rank {}", a.rank()),
        ));
    }
    if factor == 0 {
        return Err(Error::contract("avg_pool_2d: factor must be positive"));
    }
    let r = a.rank();
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "avg_pool_2d",
            format!("dims divisible by {factor}"),
            format!("{h} x {w}"),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let planes = a.numel() / (h * w);
    let ad = a.data();
    let inv = S::of(1.0 / (factor * factor) as f64);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &ad[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += src[(oy * factor + dy) * w + ox * factor + dx];
                    }
                }
                out[p * oh * ow + oy * ow + ox] = acc * inv;
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok(TensorBase::from_op(shape, out))
}

/// One axis of the half-pixel bilinear map: destination index ->
/// (left source, right source, left weight).
pub(crate) fn bilinear_axis<S: Scalar>(in_size: usize, factor: usize) -> Vec<(usize, usize, S)> {
    let mut table = Vec::with_capacity(in_size * factor);
    for o in 0..in_size * factor {
        let src = (o as f64 + 0.5) / factor as f64 - 0.5;
        if src <= 0.0 {
            table.push((0, 0, S::one()));
        } else if src >= (in_size - 1) as f64 {
            table.push((in_size - 1, in_size - 1, S::one()));
        } else {
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            table.push((i0, i0 + 1, S::of(1.0 - frac)));
        }
    }
    table
}

/// Bilinear upsampling of the last two dimensions by an integer factor,
/// half-pixel convention with edge clamping.
pub fn bilinear_upsample_2d<S: Scalar>(a: &TensorBase<S>, factor: usize) -> Result<TensorBase<S>> {
    if a.rank() < 2 {
        return Err(Error::shape(
            "bilinear_upsample_2d",
            "rank >= 2",
            format!("rank {}", a.rank()),
        ));
    }
    if factor == 0 {
        return Err(Error::contract("bilinear_upsample_2d: factor must be positive"));
    }
    let r = a.rank();
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    let (oh, ow) = (h * factor, w * factor);
    let rows = bilinear_axis::<S>(h, factor);
    let cols = bilinear_axis::<S>(w, factor);
    let planes = a.numel() / (h * w);
    let ad = a.data();
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &ad[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, wy) = rows[oy];
            for ox in 0..ow {
                let (x0, x1, wx) = cols[ox];
                let one = S::one();
                let v = src[y0 * w + x0] * wy * wx
                    + src[y0 * w + x1] * wy * (one - wx)
                    + src[y1 * w + x0] * (one - wy) * wx
                    + src[y1 * w + x1] * (one - wy) * (one - wx);
                out[p * oh * ow + oy * ow + ox] = v;
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok(TensorBase::from_op(shape, out))
}

/// Splits a `[V, H, W]` field into non-overlapping patches.
/// Output is `[M, V*ph*pw]` with tokens in row-major grid order and the
/// within-token layout `(v, dy, dx)` row-major.
pub fn extract_patches<S: Scalar>(
    x: &TensorBase<S>,
    ph: usize,
    pw: usize,
) -> Result<TensorBase<S>> {
    if x.rank() != 3 {
        return Err(Error::shape(
            "extract_patches",
            "rank-3 [V, H, W]",
            shape_string(x.shape()),
        ));
    }
    let (v, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::shape(
            "extract_patches",
            format!("H, W divisible by patch {ph} x {pw}"),
            format!("{h} x {w}"),
        ));
    }
    let (gy, gx) = (h / ph, w / pw);
    let m = gy * gx;
    let cols = v * ph * pw;
    let xd = x.data();
    let mut out = vec![S::zero(); m * cols];
    for ty in 0..gy {
        for tx in 0..gx {
            let t = ty * gx + tx;
            for vi in 0..v {
                for dy in 0..ph {
                    for dx in 0..pw {
                        let src = vi * h * w + (ty * ph + dy) * w + tx * pw + dx;
                        out[t * cols + vi * ph * pw + dy * pw + dx] = xd[src];
                    }
                }
            }
        }
    }
    Ok(TensorBase::from_op(vec![m, cols], out))
}

/// Inverse of [`extract_patches`]: `[M, C*ph*pw]` tokens back to `[C, H, W]`.
pub fn unpatchify<S: Scalar>(
    t: &TensorBase<S>,
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
) -> Result<TensorBase<S>> {
    let (gy, gx) = (h / ph, w / pw);
    let m = gy * gx;
    let cols = c * ph * pw;
    if t.shape() != [m, cols] {
        return Err(Error::shape(
            "unpatchify",
            format!("[{m}, {cols}]"),
            shape_string(t.shape()),
        ));
    }
    let td = t.data();
    let mut out = vec![S::zero(); c * h * w];
    for ty in 0..gy {
        for tx in 0..gx {
            let tok = ty * gx + tx;
            for ci in 0..c {
                for dy in 0..ph {
                    for dx in 0..pw {
                        let dst = ci * h * w + (ty * ph + dy) * w + tx * pw + dx;
                        out[dst] = td[tok * cols + ci * ph * pw + dy * pw + dx];
                    }
                }
            }
        }
    }
    Ok(TensorBase::from_op(vec![c, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorBase;

    type T = TensorBase<f64>;

    fn t(shape: &[usize], data: &[f64]) -> T {
        T::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&a, &eye).unwrap().data(), a.data());
        assert_eq!(matmul(&eye, &a).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_rectangular() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_reference_row() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let y = softmax_lastdim(&x).unwrap();
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let s: f64 = y.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_and_overflow() {
        let x = t(&[4], &[1e3, 1e3 + 1.0, 1e3 - 2.0, 1e3 + 0.5]);
        let y = softmax_lastdim(&x).unwrap();
        assert!(y.all_finite());
        let x0 = t(&[4], &[0.0, 1.0, -2.0, 0.5]);
        let y0 = softmax_lastdim(&x0).unwrap();
        for (a, b) in y.data().iter().zip(y0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_reference_row() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let g = T::ones(&[3]);
        let b = T::zeros(&[3]);
        let y = layernorm_lastdim(&x, &g, &b, LAYERNORM_EPS).unwrap();
        let want = [-1.22474, 0.0, 1.22474];
        for (a, w) in y.data().iter().zip(want) {
            assert!((a - w).abs() < 1e-4, "{a} vs {w}");
        }
    }

    #[test]
    fn layernorm_beta_shifts_output() {
        let x = t(&[2], &[5.0, 7.0]);
        let g = T::ones(&[2]);
        let b = T::full(&[2], 10.0).unwrap();
        let y = layernorm_lastdim(&x, &g, &b, LAYERNORM_EPS).unwrap();
        assert!((y.data()[0] + y.data()[1] - 20.0).abs() < 1e-10);
    }

    #[test]
    fn pi_shift_shape_and_cycle() {
        let x = t(&[2, 3, 4], &(0..24).map(|i| i as f64).collect::<Vec<_>>());
        let y = pi_shift(&x);
        assert_eq!(y.shape(), &[4, 2, 3]);
        assert_eq!(y.at(&[1, 0, 2]), x.at(&[0, 2, 1]));
        let cycled = pi_shift(&pi_shift(&pi_shift(&x)));
        assert!(cycled.bit_eq(&x));
        assert!(pi_unshift(&y).bit_eq(&x));
    }

    #[test]
    fn concat_and_narrow_round_trip() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[1, 3], &[7.0, 8.0, 9.0]);
        let c = concat_first(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 3]);
        assert!(narrow_first(&c, 0, 2).unwrap().bit_eq(&a));
        assert!(narrow_first(&c, 2, 1).unwrap().bit_eq(&b));
        assert!(narrow_first(&c, 2, 2).is_err());
        let d = t(&[1, 4], &[0.0; 4]);
        assert!(concat_first(&a, &d).is_err());
    }

    #[test]
    fn avg_pool_constant_and_mean() {
        let x = T::full(&[1, 4, 4], 3.0).unwrap();
        let y = avg_pool_2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 3.0).abs() < 1e-15));

        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = avg_pool_2d(&x, 2).unwrap();
        assert_eq!(y.data(), &[2.5]);
        assert!(avg_pool_2d(&t(&[3, 3], &[0.0; 9]), 2).is_err());
    }

    #[test]
    fn bilinear_constant_preserved() {
        let x = T::full(&[2, 3, 3], -1.5).unwrap();
        let y = bilinear_upsample_2d(&x, 4).unwrap();
        assert_eq!(y.shape(), &[2, 12, 12]);
        assert!(y.data().iter().all(|&v| (v + 1.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_linear_ramp_interior_exact() {
        // A ramp along the last axis pools to a coarse ramp; upsampling
        // reproduces it exactly away from the clamped edges.
        let w = 16;
        let ramp: Vec<f64> = (0..w * w).map(|i| (i % w) as f64).collect();
        let x = t(&[w, w], &ramp);
        let coarse = avg_pool_2d(&x, 4).unwrap();
        let back = bilinear_upsample_2d(&coarse, 4).unwrap();
        for y in 0..w {
            for xcol in 4..w - 4 {
                let got = back.data()[y * w + xcol];
                let want = ramp[y * w + xcol];
                assert!(
                    (got - want).abs() / want.abs().max(1.0) < 0.02,
                    "at ({y},{xcol}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn patches_round_trip() {
        let x = t(&[2, 4, 4], &(0..32).map(|i| i as f64).collect::<Vec<_>>());
        let p = extract_patches(&x, 2, 2).unwrap();
        assert_eq!(p.shape(), &[4, 8]);
        // token 0 covers rows 0..2, cols 0..2 of both variables
        assert_eq!(&p.data()[..8], &[0.0, 1.0, 4.0, 5.0, 16.0, 17.0, 20.0, 21.0]);
        let back = unpatchify(&p, 2, 4, 4, 2, 2).unwrap();
        assert!(back.bit_eq(&x));
    }
}
