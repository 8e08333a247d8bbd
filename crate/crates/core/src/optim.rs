//! Adam with bias correction over keyed parameter blocks.

use std::collections::BTreeMap;

use crate::autodiff::{GradientMap, ParamId};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<ParamId, Vec<f64>>,
    v: BTreeMap<ParamId, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Result<Self> {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {learning_rate} must be >= 0")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(Error::InvalidArgument("Adam needs betas in [0, 1) and eps > 0".into()));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First-moment accumulator of a block, once it has been updated.
    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.m.get(&id).map(|v| v.as_slice())
    }

    /// One update of every block that has a gradient.
    pub fn step(&mut self, params: &mut BTreeMap<ParamId, Vec<f64>>, grads: &GradientMap) -> Result<()> {
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let p = params
                .get_mut(id)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter block {id}")))?;
            if p.len() != g.len() {
                return Err(shape_err(p.len(), g.len()));
            }
            let m = self.m.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
