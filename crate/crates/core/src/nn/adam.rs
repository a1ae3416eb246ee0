use super::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    id: ParamId,
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with bias correction over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>, ids: &[ParamId]) -> Self {
        let moments = ids
            .iter()
            .map(|&id| {
                let n = store.get(id).value.numel();
                Moments {
                    id,
                    m: vec![T::zero(); n],
                    v: vec![T::zero(); n],
                }
            })
            .collect();
        Self {
            config,
            t: 0,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every managed parameter; gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(missing) = self.moments.iter().find(|mo| store.get(mo.id).grad.is_none()) {
            return Err(Error::Contract(format!(
                "parameter {} has no gradient",
                store.get(missing.id).name
            )));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for mo in &mut self.moments {
            let p = store.get_mut(mo.id);
            let grad = p.grad.take().expect("checked above");
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(mo.m.iter_mut())
                .zip(mo.v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
