use indexmap::IndexMap;

use super::params::{GradMap, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, Tensor>,
    second: IndexMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are left alone.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .map_err(|_| Error::Invalid(format!("gradient for unknown parameter `{name}`")))?;
            if !p.same_shape(g) {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient of `{name}` has wrong shape"),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter `{name}`"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (mm, gg) in m.data_mut().iter_mut().zip(g.data()) {
                *mm = self.beta1 * *mm + (1.0 - self.beta1) * gg;
            }
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (vv, gg) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gg * gg;
            }
            let m = &self.first[name];
            let v = &self.second[name];
            for ((pp, mm), vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mm / c1;
                let vhat = vv / c2;
                *pp -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
