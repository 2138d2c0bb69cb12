//! Adam with bias correction. Each parameter keeps its own step count, so a
//! parameter that starts receiving gradients late is bias-corrected from its
//! first update.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    state: Vec<Option<Moments<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: Vec::new(),
        }
    }

    /// Step count of a parameter (0 if never updated).
    pub fn steps(&self, id: ParamId) -> u64 {
        self.state
            .get(id.index())
            .and_then(|s| s.as_ref())
            .map_or(0, |s| s.t)
    }

    /// Applies one update to every parameter listed in `grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        for (id, g) in grads {
            let param = store.get_mut(*id);
            if param.numel() != g.len() {
                return Err(NnError::shape(
                    "adam",
                    format!(
                        "parameter has {} values, gradient {}",
                        param.numel(),
                        g.len()
                    ),
                ));
            }
            let st = self.state[id.index()].get_or_insert_with(|| Moments {
                m: vec![T::zero(); g.len()],
                v: vec![T::zero(); g.len()],
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - c.beta1.powi(st.t as i32);
            let bc2 = 1.0 - c.beta2.powi(st.t as i32);
            let step = T::of(c.lr / bc1);
            let inv_bc2 = T::of(1.0 / bc2);
            let eps = T::of(c.eps);
            for (((p, &gi), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
