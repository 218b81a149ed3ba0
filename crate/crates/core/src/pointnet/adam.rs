use crate::pointnet::model::ModelState;

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, flat in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        AdamState {
            m: vec![0.0; params],
            v: vec![0.0; params],
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update on flat slices. `t` is the 1-based step.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    lr: f64,
    t: u64,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Apply one ADAM step of `grads` to `state`, advancing the step counter.
pub fn adam_step(state: &mut ModelState, moments: &mut AdamState, grads: &ModelState, cfg: &AdamConfig, lr: f64) {
    moments.step += 1;
    let t = moments.step;
    let mut offset = 0;
    for (p, g) in state.tensors_mut().into_iter().zip(grads.tensors()) {
        let n = p.len();
        adam_update(
            p,
            g,
            &mut moments.m[offset..offset + n],
            &mut moments.v[offset..offset + n],
            cfg,
            lr,
            t,
        );
        offset += n;
    }
}
