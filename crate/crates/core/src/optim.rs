//! AdamW with optional coordinate masking.
//!
//! The optimizer state lives in flat vectors aligned with a flat parameter
//! vector. A masked step updates only the selected coordinates: first and
//! second moments, per-coordinate step counts, and weight decay are all frozen
//! where the mask is off, so a coordinate that re-enters the mask later
//! resumes from exactly the state it was frozen with.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

pub struct AdamW<S: Scalar> {
    cfg: AdamWConfig,
    m: Vec<S>,
    v: Vec<S>,
    /// Per-coordinate update counts; bias correction uses each coordinate's
    /// own count so a masked trajectory is AdamW restricted to its
    /// subsequence of steps.
    t: Vec<u64>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(n: usize, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    pub fn moments(&self) -> (&[S], &[S], &[u64]) {
        (&self.m, &self.v, &self.t)
    }

    /// Unmasked update of every coordinate.
    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: f64) -> Result<()> {
        self.step_inner(params, grads, None, lr)
    }

    /// Updates only coordinates where `mask` is true; everything else
    /// (parameter, moments, step count) stays bit-identical.
    pub fn masked_step(
        &mut self,
        params: &mut [S],
        grads: &[S],
        mask: &[bool],
        lr: f64,
    ) -> Result<()> {
        if mask.len() != params.len() {
            return Err(Error::shape(
                "masked_step",
                format!("mask of length {}", params.len()),
                format!("{}", mask.len()),
            ));
        }
        self.step_inner(params, grads, Some(mask), lr)
    }

    fn step_inner(
        &mut self,
        params: &mut [S],
        grads: &[S],
        mask: Option<&[bool]>,
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adamw_step",
                format!("{} coordinates", self.m.len()),
                format!("params {}, grads {}", params.len(), grads.len()),
            ));
        }
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let eps = S::of(self.cfg.eps);
        let wd = S::of(self.cfg.weight_decay);
        let lr = S::of(lr);
        let one = S::one();
        for i in 0..params.len() {
            if let Some(m) = mask {
                if !m[i] {
                    continue;
                }
            }
            self.t[i] += 1;
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let t = self.t[i] as i32;
            let mhat = self.m[i] / (one - b1.powi(t));
            let vhat = self.v[i] / (one - b2.powi(t));
            params[i] = params[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_steps(mask: Option<Vec<bool>>, steps: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut opt = AdamW::<f64>::new(3, AdamWConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        for k in 0..steps {
            let g = vec![0.1 * (k as f64 + 1.0), -0.2, 0.05];
            match &mask {
                Some(m) => opt.masked_step(&mut p, &g, m, 1e-2).unwrap(),
                None => opt.step(&mut p, &g, 1e-2).unwrap(),
            }
        }
        let (m, v, _) = opt.moments();
        (p, m.to_vec(), v.to_vec())
    }

    #[test]
    fn all_true_mask_equals_unmasked() {
        let (p1, m1, v1) = run_steps(None, 7);
        let (p2, m2, v2) = run_steps(Some(vec![true; 3]), 7);
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn masked_coordinates_fully_frozen() {
        let (p, m, v) = run_steps(Some(vec![true, false, true]), 5);
        assert_eq!(p[1], -2.0);
        assert_eq!(m[1], 0.0);
        assert_eq!(v[1], 0.0);
        assert_ne!(p[0], 1.0);
        assert_ne!(p[2], 0.5);
    }

    #[test]
    fn single_step_matches_hand_formula() {
        let mut opt = AdamW::<f64>::new(1, AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        });
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.5], 1e-3).unwrap();
        // t=1: mhat = g, vhat = g^2, update = lr*(g/|g| + wd*p)
        let want = 2.0 - 1e-3 * (0.5 / (0.5 + 1e-8) + 0.05 * 2.0);
        assert!((p[0] - want).abs() < 1e-15, "{} vs {want}", p[0]);
    }

    #[test]
    fn zero_gradient_still_decays_weights() {
        let mut opt = AdamW::<f64>::new(1, AdamWConfig::default());
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.0], 1e-2).unwrap();
        assert!((p[0] - (1.0 - 1e-2 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn mask_length_mismatch_rejected() {
        let mut opt = AdamW::<f64>::new(2, AdamWConfig::default());
        let mut p = vec![0.0, 0.0];
        assert!(opt.masked_step(&mut p, &[0.0, 0.0], &[true], 1e-3).is_err());
    }
}
