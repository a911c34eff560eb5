//! Reverse-mode automatic differentiation.
//!
//! A [`GradientSession`] is an explicit tape object: tensors enter as watched
//! leaves or constants, every operation appends a node with its backward
//! rule, and [`GradientSession::backward`] walks the tape in reverse. There is
//! no ambient global tape; sessions are cheap, single-threaded, and fresh per
//! forward pass, so repeated passes never accumulate into each other.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops, TensorBase};

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded in one specific session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId {
    session: u64,
    index: usize,
}

type GradFn<S> = Box<dyn Fn(&TensorBase<S>) -> Vec<TensorBase<S>>>;

struct Node<S: Scalar> {
    value: TensorBase<S>,
    parents: Vec<ValueId>,
    grad_fn: Option<GradFn<S>>,
    participating: bool,
}

/// Gradients of the watched leaves of one backward pass, keyed by [`ValueId`].
pub struct Gradients<S: Scalar> {
    session: u64,
    grads: Vec<Option<TensorBase<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a watched leaf. `None` for constants and interior nodes.
    pub fn get(&self, id: ValueId) -> Option<&TensorBase<S>> {
        if id.session != self.session {
            return None;
        }
        self.grads.get(id.index).and_then(|g| g.as_ref())
    }
}

pub struct GradientSession<S: Scalar> {
    id: u64,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for GradientSession<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> GradientSession<S> {
    pub fn new() -> Self {
        GradientSession {
            id: SESSION_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Registers a tensor whose gradient will be tracked.
    pub fn leaf(&mut self, t: TensorBase<S>) -> ValueId {
        self.push(t, vec![], None, true)
    }

    /// Registers a tensor that participates in the forward pass only; its
    /// gradient is never materialized.
    pub fn constant(&mut self, t: TensorBase<S>) -> ValueId {
        self.push(t, vec![], None, false)
    }

    pub fn value(&self, id: ValueId) -> &TensorBase<S> {
        &self.nodes[id.index].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: TensorBase<S>,
        parents: Vec<ValueId>,
        grad_fn: Option<GradFn<S>>,
        participating: bool,
    ) -> ValueId {
        self.nodes.push(Node {
            value,
            parents,
            grad_fn,
            participating,
        });
        ValueId {
            session: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, id: ValueId) -> Result<()> {
        if id.session != self.id || id.index >= self.nodes.len() {
            return Err(Error::contract(
                "tensor handle used in a session it does not belong to",
            ));
        }
        Ok(())
    }

    fn check2(&self, a: ValueId, b: ValueId) -> Result<()> {
        self.check(a)?;
        self.check(b)
    }

    fn any_participating(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.index].participating)
    }

    fn record(
        &mut self,
        value: TensorBase<S>,
        parents: Vec<ValueId>,
        grad_fn: impl Fn(&TensorBase<S>) -> Vec<TensorBase<S>> + 'static,
    ) -> ValueId {
        let participating = self.any_participating(&parents);
        let f: Option<GradFn<S>> = if participating {
            Some(Box::new(grad_fn))
        } else {
            None
        };
        self.push(value, parents, f, participating)
    }

    // ----- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let y = self.value(a).add(self.value(b))?;
        Ok(self.record(y, vec![a, b], |g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.record(y, vec![a, b], |g| vec![g.clone(), g.neg()]))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = av.mul(&bv)?;
        Ok(self.record(y, vec![a, b], move |g| {
            vec![
                g.mul(&bv).expect("shape fixed at record"),
                g.mul(&av).expect("shape fixed at record"),
            ]
        }))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = av.div(&bv)?;
        Ok(self.record(y, vec![a, b], move |g| {
            let da = g.div(&bv).expect("checked at record");
            let db = g
                .mul(&av)
                .and_then(|t| t.div(&bv.mul(&bv).expect("same shape")))
                .expect("checked at record")
                .neg();
            vec![da, db]
        }))
    }

    pub fn add_scalar(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        self.check(a)?;
        let y = self.value(a).add_scalar(c);
        Ok(self.record(y, vec![a], |g| vec![g.clone()]))
    }

    pub fn mul_scalar(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        self.check(a)?;
        let y = self.value(a).mul_scalar(c);
        Ok(self.record(y, vec![a], move |g| vec![g.mul_scalar(c)]))
    }

    pub fn neg(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let y = self.value(a).neg();
        Ok(self.record(y, vec![a], |g| vec![g.neg()]))
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let y = self.value(a).exp();
        let yc = y.clone();
        Ok(self.record(y, vec![a], move |g| {
            vec![g.mul(&yc).expect("shape fixed at record")]
        }))
    }

    pub fn square(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let av = self.value(a).clone();
        let y = av.square();
        Ok(self.record(y, vec![a], move |g| {
            vec![g
                .mul(&av)
                .expect("shape fixed at record")
                .mul_scalar(S::of(2.0))]
        }))
    }

    pub fn abs(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let av = self.value(a).clone();
        let y = av.abs();
        Ok(self.record(y, vec![a], move |g| {
            let sign = av.map(|x| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            });
            vec![g.mul(&sign).expect("shape fixed at record")]
        }))
    }

    /// Exact GELU `x * Phi(x)`; gradient `Phi(x) + x * phi(x)`.
    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let av = self.value(a).clone();
        let y = av.gelu();
        Ok(self.record(y, vec![a], move |g| {
            let local = av.map(|x| x.norm_cdf() + x * x.norm_pdf());
            vec![g.mul(&local).expect("shape fixed at record")]
        }))
    }

    /// Standard normal CDF applied elementwise; gradient is the PDF.
    pub fn norm_cdf(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let av = self.value(a).clone();
        let y = av.norm_cdf();
        Ok(self.record(y, vec![a], move |g| {
            let local = av.map(|x| x.norm_pdf());
            vec![g.mul(&local).expect("shape fixed at record")]
        }))
    }

    // ----- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = ops::matmul(&av, &bv)?;
        Ok(self.record(y, vec![a, b], move |g| {
            let bt = ops::transpose2(&bv).expect("rank checked at record");
            let at = ops::transpose2(&av).expect("rank checked at record");
            vec![
                ops::matmul(g, &bt).expect("shapes fixed at record"),
                ops::matmul(&at, g).expect("shapes fixed at record"),
            ]
        }))
    }

    pub fn transpose2(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let y = ops::transpose2(self.value(a))?;
        Ok(self.record(y, vec![a], |g| {
            vec![ops::transpose2(g).expect("rank fixed at record")]
        }))
    }

    /// Adds a rank-1 bias to every row along the last dimension.
    pub fn add_bias(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        self.check2(a, bias)?;
        let av = self.value(a);
        let bv = self.value(bias);
        let n = av.last_dim();
        if bv.shape() != [n] {
            return Err(Error::shape(
                "add_bias",
                format!("bias of shape [{n}]"),
                format!("{:?}", bv.shape()),
            ));
        }
        let rows = av.numel() / n;
        let mut out = av.data().to_vec();
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] += bv.data()[j];
            }
        }
        let y = TensorBase::from_op(av.shape().to_vec(), out);
        Ok(self.record(y, vec![a, bias], move |g| {
            let mut db = vec![S::zero(); n];
            let rows = g.numel() / n;
            for r in 0..rows {
                for j in 0..n {
                    db[j] += g.data()[r * n + j];
                }
            }
            vec![g.clone(), TensorBase::from_op(vec![n], db)]
        }))
    }

    /// Multiplies every row along the last dimension by a rank-1 scale.
    pub fn mul_bias(&mut self, a: ValueId, scale: ValueId) -> Result<ValueId> {
        self.check2(a, scale)?;
        let av = self.value(a).clone();
        let sv = self.value(scale).clone();
        let n = av.last_dim();
        if sv.shape() != [n] {
            return Err(Error::shape(
                "mul_bias",
                format!("scale of shape [{n}]"),
                format!("{:?}", sv.shape()),
            ));
        }
        let rows = av.numel() / n;
        let mut out = av.data().to_vec();
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] *= sv.data()[j];
            }
        }
        let y = TensorBase::from_op(av.shape().to_vec(), out);
        Ok(self.record(y, vec![a, scale], move |g| {
            let rows = g.numel() / n;
            let mut dx = g.data().to_vec();
            let mut ds = vec![S::zero(); n];
            for r in 0..rows {
                for j in 0..n {
                    dx[r * n + j] *= sv.data()[j];
                    ds[j] += g.data()[r * n + j] * av.data()[r * n + j];
                }
            }
            vec![
                TensorBase::from_op(g.shape().to_vec(), dx),
                TensorBase::from_op(vec![n], ds),
            ]
        }))
    }

    pub fn softmax_lastdim(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let y = ops::softmax_lastdim(self.value(a))?;
        let yc = y.clone();
        Ok(self.record(y, vec![a], move |g| {
            let n = yc.last_dim();
            let rows = yc.numel() / n;
            let mut dx = vec![S::zero(); yc.numel()];
            for r in 0..rows {
                let mut dot = S::zero();
                for j in 0..n {
                    dot += g.data()[r * n + j] * yc.data()[r * n + j];
                }
                for j in 0..n {
                    dx[r * n + j] = yc.data()[r * n + j] * (g.data()[r * n + j] - dot);
                }
            }
            vec![TensorBase::from_op(yc.shape().to_vec(), dx)]
        }))
    }

    pub fn layernorm_lastdim(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    ) -> Result<ValueId> {
        self.check2(x, gamma)?;
        self.check(beta)?;
        let gv = self.value(gamma).clone();
        let (y, xhat, inv_std) =
            ops::layernorm_parts(self.value(x), &gv, self.value(beta), ops::LAYERNORM_EPS)?;
        Ok(self.record(y, vec![x, gamma, beta], move |g| {
            let n = xhat.last_dim();
            let rows = xhat.numel() / n;
            let nn = S::of(n as f64);
            let mut dx = vec![S::zero(); xhat.numel()];
            let mut dgamma = vec![S::zero(); n];
            let mut dbeta = vec![S::zero(); n];
            for r in 0..rows {
                let mut m1 = S::zero();
                let mut m2 = S::zero();
                for j in 0..n {
                    let gg = g.data()[r * n + j] * gv.data()[j];
                    m1 += gg;
                    m2 += gg * xhat.data()[r * n + j];
                }
                m1 = m1 / nn;
                m2 = m2 / nn;
                for j in 0..n {
                    let gg = g.data()[r * n + j] * gv.data()[j];
                    dx[r * n + j] = inv_std[r] * (gg - m1 - xhat.data()[r * n + j] * m2);
                    dgamma[j] += g.data()[r * n + j] * xhat.data()[r * n + j];
                    dbeta[j] += g.data()[r * n + j];
                }
            }
            vec![
                TensorBase::from_op(xhat.shape().to_vec(), dx),
                TensorBase::from_op(vec![n], dgamma),
                TensorBase::from_op(vec![n], dbeta),
            ]
        }))
    }

    // ----- structure --------------------------------------------------------

    /// Cyclic shift: last dimension becomes the first. The gradient applies
    /// the inverse permutation.
    pub fn pi_shift(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let y = ops::pi_shift(self.value(a));
        Ok(self.record(y, vec![a], |g| vec![ops::pi_unshift(g)]))
    }

    pub fn concat_first(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check2(a, b)?;
        let a0 = self.value(a).shape()[0];
        let b0 = self.value(b).shape()[0];
        let y = ops::concat_first(self.value(a), self.value(b))?;
        Ok(self.record(y, vec![a, b], move |g| {
            vec![
                ops::narrow_first(g, 0, a0).expect("split fixed at record"),
                ops::narrow_first(g, a0, b0).expect("split fixed at record"),
            ]
        }))
    }

    pub fn narrow_first(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let y = ops::narrow_first(self.value(a), start, len)?;
        Ok(self.record(y, vec![a], move |g| {
            let row: usize = shape[1..].iter().product();
            let mut data = vec![S::zero(); shape.iter().product()];
            data[start * row..(start + len) * row].copy_from_slice(g.data());
            vec![TensorBase::from_op(shape.clone(), data)]
        }))
    }

    pub fn reshape(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        self.check(a)?;
        let old = self.value(a).shape().to_vec();
        let y = self.value(a).reshape(shape)?;
        Ok(self.record(y, vec![a], move |g| {
            vec![g.reshape(&old).expect("numel fixed at record")]
        }))
    }

    // ----- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let y = TensorBase::scalar(self.value(a).sum_all())?;
        Ok(self.record(y, vec![a], move |g| {
            let s = g.data()[0];
            vec![TensorBase::from_op(
                shape.clone(),
                vec![s; shape.iter().product()],
            )]
        }))
    }

    pub fn mean(&mut self, a: ValueId) -> Result<ValueId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let y = TensorBase::scalar(self.value(a).mean_all())?;
        Ok(self.record(y, vec![a], move |g| {
            let s = g.data()[0] / S::of(n as f64);
            vec![TensorBase::from_op(shape.clone(), vec![s; n])]
        }))
    }

    // ----- resampling -------------------------------------------------------

    pub fn avg_pool_2d(&mut self, a: ValueId, factor: usize) -> Result<ValueId> {
        self.check(a)?;
        let in_shape = self.value(a).shape().to_vec();
        let y = ops::avg_pool_2d(self.value(a), factor)?;
        Ok(self.record(y, vec![a], move |g| {
            let r = in_shape.len();
            let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
            let (oh, ow) = (h / factor, w / factor);
            let planes: usize = in_shape[..r - 2].iter().product();
            let inv = S::of(1.0 / (factor * factor) as f64);
            let mut dx = vec![S::zero(); planes * h * w];
            for p in 0..planes {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = g.data()[p * oh * ow + oy * ow + ox] * inv;
                        for dy in 0..factor {
                            for dxx in 0..factor {
                                dx[p * h * w + (oy * factor + dy) * w + ox * factor + dxx] += go;
                            }
                        }
                    }
                }
            }
            vec![TensorBase::from_op(in_shape.clone(), dx)]
        }))
    }

    pub fn bilinear_upsample_2d(&mut self, a: ValueId, factor: usize) -> Result<ValueId> {
        self.check(a)?;
        let in_shape = self.value(a).shape().to_vec();
        let y = ops::bilinear_upsample_2d(self.value(a), factor)?;
        Ok(self.record(y, vec![a], move |g| {
            let r = in_shape.len();
            let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
            let (oh, ow) = (h * factor, w * factor);
            let planes: usize = in_shape[..r - 2].iter().product();
            let rows = ops::bilinear_axis::<S>(h, factor);
            let cols = ops::bilinear_axis::<S>(w, factor);
            let one = S::one();
            let mut dx = vec![S::zero(); planes * h * w];
            for p in 0..planes {
                for oy in 0..oh {
                    let (y0, y1, wy) = rows[oy];
                    for ox in 0..ow {
                        let (x0, x1, wx) = cols[ox];
                        let go = g.data()[p * oh * ow + oy * ow + ox];
                        dx[p * h * w + y0 * w + x0] += go * wy * wx;
                        dx[p * h * w + y0 * w + x1] += go * wy * (one - wx);
                        dx[p * h * w + y1 * w + x0] += go * (one - wy) * wx;
                        dx[p * h * w + y1 * w + x1] += go * (one - wy) * (one - wx);
                    }
                }
            }
            vec![TensorBase::from_op(in_shape.clone(), dx)]
        }))
    }

    pub fn extract_patches(&mut self, x: ValueId, ph: usize, pw: usize) -> Result<ValueId> {
        self.check(x)?;
        let in_shape = self.value(x).shape().to_vec();
        let y = ops::extract_patches(self.value(x), ph, pw)?;
        Ok(self.record(y, vec![x], move |g| {
            let (v, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            vec![ops::unpatchify(g, v, h, w, ph, pw).expect("shapes fixed at record")]
        }))
    }

    pub fn unpatchify(
        &mut self,
        t: ValueId,
        c: usize,
        h: usize,
        w: usize,
        ph: usize,
        pw: usize,
    ) -> Result<ValueId> {
        self.check(t)?;
        let y = ops::unpatchify(self.value(t), c, h, w, ph, pw)?;
        Ok(self.record(y, vec![t], move |g| {
            vec![ops::extract_patches(g, ph, pw).expect("shapes fixed at record")]
        }))
    }

    // ----- backward ---------------------------------------------------------

    /// Accumulates gradients of `loss` with respect to every watched leaf.
    /// `loss` must be a single-element tensor that depends on at least one
    /// watched leaf. Leaves the session reusable for further reads.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<S>> {
        self.check(loss)?;
        let ln = &self.nodes[loss.index];
        if ln.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                ln.value.shape()
            )));
        }
        if !ln.participating {
            return Err(Error::contract(
                "backward on a loss that depends on no watched tensor",
            ));
        }
        let mut grads: Vec<Option<TensorBase<S>>> = Vec::with_capacity(loss.index + 1);
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(TensorBase::ones(ln.value.shape()));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.participating {
                continue;
            }
            let Some(f) = &node.grad_fn else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parent_grads = f(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                let pn = &self.nodes[pid.index];
                if !pn.participating {
                    continue;
                }
                debug_assert_eq!(pg.shape(), pn.value.shape());
                grads[pid.index] = Some(match grads[pid.index].take() {
                    Some(acc) => acc.add(&pg).expect("gradient shapes agree"),
                    None => pg,
                });
            }
        }

        // Keep gradients only for watched leaves; unreached leaves get zeros.
        let mut out: Vec<Option<TensorBase<S>>> = Vec::with_capacity(loss.index + 1);
        for i in 0..=loss.index {
            let node = &self.nodes[i];
            let is_watched_leaf = node.grad_fn.is_none() && node.parents.is_empty() && node.participating;
            if is_watched_leaf {
                out.push(Some(
                    grads[i]
                        .take()
                        .unwrap_or_else(|| TensorBase::zeros(node.value.shape())),
                ));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients {
            session: self.id,
            grads: out,
        })
    }
}
