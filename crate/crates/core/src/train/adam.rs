//! Bias-corrected Adam.

use crate::arch::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for each optimized parameter, keyed by position in `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub ids: Vec<ParamId>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for every trainable tensor of `params`.
    pub fn new(params: &ParamStore<T>) -> Self {
        let ids: Vec<ParamId> = params.trainable_ids().collect();
        let zeros = |ids: &[ParamId]| ids.iter().map(|&id| Tensor::zeros(params.get(id).shape())).collect();
        AdamState {
            m: zeros(&ids),
            v: zeros(&ids),
            ids,
            t: 0,
        }
    }

    /// One update `w -= lr * m_hat / (sqrt(v_hat) + eps)`. `grads[k]` belongs
    /// to `self.ids[k]`; `None` means a zero gradient. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::shape("adam", format!("{} gradients for {} parameters", grads.len(), self.ids.len())));
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let id = self.ids[k];
                if g.shape() != params.get(id).shape() {
                    return Err(Error::shape("adam", format!("gradient shape for '{}'", params.entry(id).name)));
                }
                if let Some(i) = g.data().iter().position(|v| !v.as_f64().is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of '{}' at element {i} ({}); update skipped",
                        params.entry(id).name,
                        g.data()[i].as_f64()
                    )));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, g) in grads.iter().enumerate() {
            let id = self.ids[k];
            let w = params.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..w.len() {
                let gi = g.as_ref().map_or(0.0, |g| g.data()[i].as_f64());
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
                w[i] = T::of(w[i].as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ParamKind;

    fn one(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", ParamKind::Weight, Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one(0.0);
        let mut st = AdamState::new(&p);
        st.step(&AdamConfig::default(), &mut p, &[Some(Tensor::scalar(1.0))], 1e-3).unwrap();
        let w = p.get(ParamId(0)).data()[0];
        assert!((w + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut p = one(0.7);
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            st.step(&AdamConfig::default(), &mut p, &[None], 0.1).unwrap();
        }
        assert_eq!(p.get(ParamId(0)).data()[0], 0.7);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = one(0.7);
        let mut st = AdamState::new(&p);
        let err = st.step(&AdamConfig::default(), &mut p, &[Some(Tensor::scalar(f64::NAN))], 0.1);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(st.t, 0);
    }
}
