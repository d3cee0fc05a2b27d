use super::params::ParamStore;
use super::tape::Gradients;
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Copy, Debug)]
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

/// First and second moment estimates, one slot per stored parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every parameter that has a gradient.
///
/// All gradients are checked for finiteness before any parameter moves, so a
/// failing step leaves `params` and `state` untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NumericsError> {
    let pairs: Vec<_> = grads.params().collect();
    apply(params, &pairs, state, cfg)
}

/// Same as [`adam_step`] for explicitly listed gradients (e.g. accumulated
/// over several tapes).
pub fn adam_step_with(
    params: &mut ParamStore,
    grads: &[(super::ParamId, Tensor)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NumericsError> {
    let pairs: Vec<_> = grads.iter().map(|(p, g)| (*p, g)).collect();
    apply(params, &pairs, state, cfg)
}

fn apply(
    params: &mut ParamStore,
    pairs: &[(super::ParamId, &Tensor)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NumericsError> {
    for (id, g) in pairs {
        if !g.is_finite() {
            return Err(NumericsError::NonFiniteGradient {
                param: params.name(*id).to_string(),
            });
        }
        if g.shape() != params.get(*id).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: params.get(*id).shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    if state.m.len() < params.len() {
        state.m.resize(params.len(), None);
        state.v.resize(params.len(), None);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, g) in pairs {
        let i = id.index();
        let m = state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let w = params.get_mut(*id);
        for (((wv, mv), vv), gv) in w
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *wv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
