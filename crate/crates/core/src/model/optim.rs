//! Adam with bias correction followed by a small decoupled L1 + L2 decay.

use ndarray::{Array2, Zip};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{cast, Real};
use super::Model;
use crate::error::{Error, Result};
use crate::features::FeaturePair;
use crate::mora::Mark;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Applied as w -= decay * (w + sign(w)) after every update.
    pub decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-5,
            decay: 1e-6,
        }
    }
}

impl AdamConfig {
    pub(crate) fn to_f32s(self) -> Vec<f32> {
        vec![self.alpha, self.beta1, self.beta2, self.eps, self.decay]
    }

    pub(crate) fn from_f32s(v: &[f32]) -> Result<AdamConfig> {
        let [alpha, beta1, beta2, eps, decay] = v else {
            return Err(Error::Checkpoint(format!("adam section has {} values", v.len())));
        };
        Ok(AdamConfig {
            alpha: *alpha,
            beta1: *beta1,
            beta2: *beta2,
            eps: *eps,
            decay: *decay,
        })
    }
}

/// Everything needed to continue training bit for bit.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub model: Model<F>,
    pub adam: AdamConfig,
    pub first_moment: Vec<Array2<F>>,
    pub second_moment: Vec<Array2<F>>,
    /// Number of updates applied so far.
    pub step: u64,
}

fn sign<F: Real>(w: F) -> F {
    if w > F::zero() {
        F::one()
    } else if w < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

impl<F: Real> TrainState<F> {
    pub fn new(model: Model<F>, adam: AdamConfig) -> Self {
        TrainState {
            first_moment: model.zeros_like_params(),
            second_moment: model.zeros_like_params(),
            model,
            adam,
            step: 0,
        }
    }

    /// One bias-corrected Adam update then decay. Leaves the state untouched
    /// when any gradient entry is not finite.
    pub fn adam_step(&mut self, grads: &[Array2<F>]) -> Result<()> {
        if grads.len() != self.model.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.model.params.len(),
                actual: grads.len(),
            });
        }
        for (i, (g, p)) in grads.iter().zip(&self.model.params).enumerate() {
            if g.dim() != p.dim() {
                return Err(Error::InvalidArgument(format!("gradient shape mismatch for {}", self.model.names()[i])));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", self.model.names()[i])));
            }
        }
        let a = self.adam;
        let t = (self.step + 1) as i32;
        let b1 = cast::<F>(a.beta1 as f64);
        let b2 = cast::<F>(a.beta2 as f64);
        let alpha = cast::<F>(a.alpha as f64);
        let eps = cast::<F>(a.eps as f64);
        let decay = cast::<F>(a.decay as f64);
        let c1 = F::one() - b1.powi(t);
        let c2 = F::one() - b2.powi(t);
        for ((p, g), (m, v)) in self
            .model
            .params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= alpha * mhat / (vhat.sqrt() + eps);
                *w -= decay * (*w + sign(*w));
            });
        }
        self.step += 1;
        Ok(())
    }

    /// Gradient step on one batch; returns the pre-update loss. A non-finite
    /// loss is an error and leaves the state unchanged.
    pub fn train_step(&mut self, batch: &[(&FeaturePair, &[Mark])], rng: &mut dyn RngCore) -> Result<F> {
        let out = self.model.loss_and_gradients(batch, self.step, rng)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.step)));
        }
        self.adam_step(&out.grads)?;
        self.model.update_stats(&out.batch_stats);
        Ok(out.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn scalar_state(w: f64) -> TrainState<f64> {
        let mut model = Model::<f64>::new(ModelConfig::tiny(), 0).unwrap();
        for p in &mut model.params {
            p.fill(w);
        }
        TrainState::new(model, AdamConfig::default())
    }

    #[test]
    fn first_step_moves_by_alpha_then_decays() {
        let mut st = scalar_state(0.5);
        let grads: Vec<_> = st.model.params.iter().map(|p| Array2::ones(p.dim())).collect();
        st.adam_step(&grads).unwrap();
        // m = 0.5, v = 0.1, both bias-corrected to 1
        let alpha = 2e-4f32 as f64;
        let eps = 1e-5f32 as f64;
        let decay = 1e-6f32 as f64;
        let after_adam = 0.5 - alpha * 1.0 / (1.0 + eps);
        let want = after_adam - decay * (after_adam + 1.0);
        let got = st.model.params[0][[0, 0]];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((0.5 - got - 2e-4).abs() < 1e-5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut st = scalar_state(-0.25);
        let grads = st.model.zeros_like_params();
        st.adam_step(&grads).unwrap();
        let decay = 1e-6f32 as f64;
        let want = -0.25 - decay * (-0.25 - 1.0);
        assert!((st.model.params[3][[0, 0]] - want).abs() < 1e-15);
        let mut zero = scalar_state(0.0);
        zero.adam_step(&grads).unwrap();
        assert_eq!(zero.model.params[0][[0, 0]], 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut st = scalar_state(0.1);
        let mut grads = st.model.zeros_like_params();
        grads[2][[0, 0]] = f64::NAN;
        let before = st.model.params.clone();
        assert!(matches!(st.adam_step(&grads), Err(Error::NonFinite(_))));
        assert_eq!(st.model.params, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_states_step_identically() {
        let mut a = scalar_state(0.3);
        let mut b = a.clone();
        let grads: Vec<_> = a.model.params.iter().map(|p| p.mapv(|_| 0.7)).collect();
        a.adam_step(&grads).unwrap();
        b.adam_step(&grads).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.first_moment, b.first_moment);
    }
}
