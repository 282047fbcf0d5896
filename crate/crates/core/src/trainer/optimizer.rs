use crate::model::ModelParams;
use crate::{Error, Result};

/// Adam moments and step count for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step with decoupled weight decay: `theta <- theta - lr*wd*theta`
/// first, then the bias-corrected adaptive update.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    opt: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&opt.m) {
        return Err(Error::Dimension("optimizer layouts do not match the parameters".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
    let decay = lr * weight_decay;
    let tensors = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(opt.m.tensors_mut().zip(opt.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for (((pv, gv), mv), vv) in p
            .data
            .iter_mut()
            .zip(&g.data)
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *pv -= decay * *pv;
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
        }
    }
    match params.first_non_finite() {
        Some(name) => Err(Error::NonFinite(format!("parameter `{name}` after update"))),
        None => Ok(()),
    }
}
