//! Numeric verification helpers.
//!
//! [`GradCheck`] compares tape gradients against central finite differences.
//! The numeric side only re-runs forward passes on perturbed inputs, so it
//! stays independent of every backward rule it is checking.

use crate::autodiff::{GradientSession, ValueId};
use crate::error::Result;
use crate::tensor::TensorBase;

/// Mixed relative/absolute closeness test.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs || diff <= rel * a.abs().max(b.abs())
}

pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute floor for near-zero gradients, where the relative test is
    /// dominated by rounding in the difference quotient.
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

impl GradCheck {
    /// Checks the gradient of `build` (a scalar-valued graph over the given
    /// inputs) at every input coordinate. Returns a description of the first
    /// mismatch, if any.
    pub fn check<F>(&self, inputs: &[TensorBase<f64>], build: F) -> std::result::Result<(), String>
    where
        F: Fn(&mut GradientSession<f64>, &[ValueId]) -> Result<ValueId>,
    {
        let eval = |xs: &[TensorBase<f64>]| -> f64 {
            let mut s = GradientSession::new();
            let ids: Vec<ValueId> = xs.iter().map(|t| s.leaf(t.clone())).collect();
            let loss = build(&mut s, &ids).expect("forward must succeed during gradcheck");
            s.value(loss).item().expect("loss must be scalar")
        };

        // Analytic gradients from one tape pass.
        let mut s = GradientSession::new();
        let ids: Vec<ValueId> = inputs.iter().map(|t| s.leaf(t.clone())).collect();
        let loss = build(&mut s, &ids).map_err(|e| format!("forward failed: {e}"))?;
        let grads = s.backward(loss).map_err(|e| format!("backward failed: {e}"))?;

        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(ids[i])
                .ok_or_else(|| format!("input {i} received no gradient"))?;
            for j in 0..input.numel() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += self.step;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= self.step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * self.step);
                let a = analytic.data()[j];
                if !close(a, numeric, self.rel_tol, self.abs_tol) {
                    return Err(format!(
                        "input {i} coord {j}: analytic {a} vs numeric {numeric} \
                         (rel {:.3e})",
                        (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-300)
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = TensorBase<f64>;

    #[test]
    fn passes_on_correct_gradient() {
        let x = T::new(vec![3], vec![0.3, -0.7, 1.2]).unwrap();
        GradCheck::default()
            .check(&[x], |s, ids| {
                let sq = s.square(ids[0])?;
                s.sum(sq)
            })
            .unwrap();
    }

    #[test]
    fn flags_disagreement() {
        // With an absurdly large step the central difference of exp no longer
        // matches the analytic gradient, which must surface as an error.
        let x = T::new(vec![2], vec![0.5, -0.25]).unwrap();
        let bad = GradCheck {
            step: 10.0,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
        }
        .check(&[x], |s, ids| {
            let y = s.exp(ids[0])?;
            s.sum(y)
        });
        assert!(bad.is_err());
    }

    #[test]
    fn close_mixed_tolerance() {
        assert!(close(1.0, 1.00005, 1e-4, 0.0));
        assert!(!close(1.0, 1.001, 1e-4, 0.0));
        assert!(close(0.0, 5e-8, 1e-4, 1e-7));
    }
}
