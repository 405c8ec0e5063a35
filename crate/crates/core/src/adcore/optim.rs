use serde::{Deserialize, Serialize};

use super::store::{AdamState, Gradients, ParameterStore};
use super::tensor::Tensor;
use super::AdError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update for every parameter present in `grads`.
    pub fn step<T: Scalar>(&self, store: &mut ParameterStore<T>, grads: &Gradients<T>) -> Result<(), AdError> {
        let ids = resolve(store, grads)?;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let (one_b1, one_b2) = (T::c(1.0 - self.beta1), T::c(1.0 - self.beta2));
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for (id, g) in ids.into_iter().zip(grads.values()) {
            let p = store.param_mut(id);
            let shape = p.value.shape().to_vec();
            let state = p.adam.get_or_insert_with(|| AdamState {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                step: 0,
            });
            state.step += 1;
            let t = state.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let m = state.m.data_mut();
            let v = state.v.data_mut();
            for (((theta, &gv), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + one_b1 * gv;
                *vi = b2 * *vi + one_b2 * gv * gv;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
}

impl Adagrad {
    pub fn new(lr: f64) -> Self {
        Adagrad { lr, eps: 1e-8 }
    }

    /// `accum += g^2; theta -= lr * g / (sqrt(accum) + eps)`.
    pub fn step<T: Scalar>(&self, store: &mut ParameterStore<T>, grads: &Gradients<T>) -> Result<(), AdError> {
        let ids = resolve(store, grads)?;
        let (lr, eps) = (T::c(self.lr), T::c(self.eps));
        for (id, g) in ids.into_iter().zip(grads.values()) {
            let p = store.param_mut(id);
            let shape = p.value.shape().to_vec();
            let acc = p.adagrad.get_or_insert_with(|| Tensor::zeros(&shape));
            for ((theta, &gv), a) in p.value.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *a = *a + gv * gv;
                *theta = *theta - lr * gv / (a.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Maps gradient names to store ids, rejecting frozen or unknown parameters
/// and shape mismatches before anything is modified.
fn resolve<T: Scalar>(store: &ParameterStore<T>, grads: &Gradients<T>) -> Result<Vec<usize>, AdError> {
    grads
        .iter()
        .map(|(name, g)| {
            let id = store
                .id(name)
                .ok_or_else(|| AdError::UnknownParameter(name.clone()))?;
            if store.is_frozen(name) {
                return Err(AdError::FrozenGradient(name.clone()));
            }
            let expected = store.param(id).value.shape();
            if expected != g.shape() {
                return Err(AdError::GradientShape {
                    name: name.clone(),
                    expected: expected.to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            Ok(id)
        })
        .collect()
}

/// Adds `src` into `dst`, creating entries as needed.
pub fn accumulate_gradients<T: Scalar>(dst: &mut Gradients<T>, src: Gradients<T>) {
    for (name, g) in src {
        match dst.get_mut(&name) {
            Some(t) => t.add_assign(&g),
            None => {
                dst.insert(name, g);
            }
        }
    }
}
