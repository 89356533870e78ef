use crate::error::{Error, Result};
use crate::numerics::{MlpParams, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One update. Gradients are checked for finiteness before any parameter
    /// is touched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &[Tensor]) -> Result<()> {
        let names = params.param_names();
        if grads.len() != names.len() {
            return Err(Error::shape("adam_step", &[names.len()], &[grads.len()]));
        }
        for ((name, grad), p) in names.iter().zip(grads).zip(params.tensors()) {
            if grad.shape() != p.shape() {
                return Err(Error::shape("adam_step", p.shape(), grad.shape()));
            }
            if !grad.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target <- rho * target + (1 - rho) * online`, elementwise.
pub fn ema_update(target: &mut MlpParams, online: &MlpParams, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("EMA factor {rho} outside [0, 1]")));
    }
    if !target.same_architecture(online) {
        let ts: Vec<usize> = target.tensors().iter().map(|t| t.len()).collect();
        let os: Vec<usize> = online.tensors().iter().map(|t| t.len()).collect();
        return Err(Error::shape("ema_update", &ts, &os));
    }
    for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = rho * *tv + (1.0 - rho) * ov;
        }
    }
    Ok(())
}
