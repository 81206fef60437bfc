use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

/// Nesterov momentum buffers, one per parameter in store order.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub velocity: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        OptimizerState {
            velocity: params.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect(),
            step: 0,
        }
    }
}

/// One SGD step with Nesterov momentum μ and weight decay λ:
///
/// ```text
/// g' = g + λ·p
/// v  ← μ·v + g'
/// p  ← p − lr·(g' + μ·v)
/// ```
///
/// Every parameter must carry a gradient.
pub fn sgd_nesterov_step<F: Real>(
    params: &mut ParamStore<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, store has {}",
            state.velocity.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for id in &ids {
        if params.grad(*id).is_none() {
            return Err(Error::Contract(format!("parameter {:?} has no gradient", params.get(*id).name)));
        }
    }
    let (mu, wd, lr_f) = (F::from_f64(cfg.momentum), F::from_f64(cfg.weight_decay), F::from_f64(lr));
    for (k, id) in ids.into_iter().enumerate() {
        let grad = params.grad(id).expect("checked above").clone();
        let v = &mut state.velocity[k];
        if v.shape() != grad.shape() {
            return Err(Error::dim(
                "sgd_nesterov_step",
                format!("velocity {:?} vs gradient {:?} for {}", v.shape(), grad.shape(), params.get(id).name),
            ));
        }
        let value = params.value_mut(id);
        for ((p, vel), &g) in value.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
            let g = g + wd * *p;
            *vel = mu * *vel + g;
            if lr != 0.0 {
                *p -= lr_f * (g + mu * *vel);
            }
        }
    }
    state.step += 1;
    Ok(())
}
