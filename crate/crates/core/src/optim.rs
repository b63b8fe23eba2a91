use alloc::vec::Vec;

use crate::error::{usage_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params.into_iter().map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape()))).unzip();
        Self { step: 0, m, v }
    }

    pub fn from_parts(step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(usage_err!("adam moments are not paired"));
        }
        Ok(Self { step, m, v })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self.m.len() == other.m.len()
            && self.m.iter().zip(&other.m).all(|(a, b)| a.bit_eq(b))
            && self.v.iter().zip(&other.v).all(|(a, b)| a.bit_eq(b))
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// `grads[i]` belongs to `params[i]`; a missing gradient is a usage error.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&[Real]>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(usage_err!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => return Err(usage_err!("adam_step: parameter {i} has no gradient")),
            Some(g) if g.len() != p.numel() || state.m[i].shape() != p.shape() => {
                return Err(usage_err!("adam_step: parameter {i} shape mismatch"));
            }
            Some(_) => {}
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as Real, cfg.beta2 as Real);
    let c1 = (1.0 - cfg.beta1.powi(t)) as Real;
    let c2 = (1.0 - cfg.beta2.powi(t)) as Real;
    let (lr, eps) = (cfg.lr as Real, cfg.eps as Real);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let g = g.expect("checked above");
        let (m, v) = (m.data_mut(), v.data_mut());
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
