use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Array;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Array<f32>, Array<f32>)>,
}

impl OptimState {
    pub fn new(lr: f64) -> Self {
        OptimState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<&(Array<f32>, Array<f32>)> {
        self.moments.get(name)
    }
}

/// One bias-corrected Adam update of every parameter named in `grads`.
/// Parameters without a gradient entry are left untouched.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    grads: &BTreeMap<String, Array<f32>>,
    opt: &mut OptimState,
) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, grad) in grads {
        let param = params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if param.shape() != grad.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let (m, v) = opt
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Array::zeros(grad.shape()), Array::zeros(grad.shape())));
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = *g as f64;
            let mn = b1 * *m as f64 + (1.0 - b1) * g;
            let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let update = opt.lr * (mn / c1) / ((vn / c2).sqrt() + opt.eps);
            *p = (*p as f64 - update) as f32;
        }
    }
    Ok(())
}
