//! Inference-style batch normalization with fixed running statistics.

use crate::error::{NnError, Result};
use crate::tensor::Tensor3;

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel. Only
/// `gamma` and `beta` are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    eps: f64,
}

impl NormParams {
    pub fn new(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        eps: f64,
    ) -> Result<Self> {
        let n = gamma.len();
        if n == 0 || beta.len() != n || running_mean.len() != n || running_var.len() != n {
            return Err(NnError::invalid("normalization vectors must share one non-zero length"));
        }
        if !(eps > 0.0) {
            return Err(NnError::invalid(format!("epsilon must be positive, got {eps}")));
        }
        if running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(NnError::invalid("running variance must be non-negative"));
        }
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        })
    }

    /// Unit scale, zero shift, zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: DEFAULT_NORM_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    fn inv_std(&self, c: usize) -> f64 {
        1.0 / (self.running_var[c] + self.eps).sqrt()
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(NnError::invalid(format!(
                "normalization over {} channels applied to {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }
}

pub fn batch_norm(x: &Tensor3, p: &NormParams) -> Result<Tensor3> {
    p.check(x)?;
    let plane = x.plane();
    let mut y = x.clone();
    for (c, chunk) in y.data_mut().chunks_mut(plane.max(1)).enumerate() {
        let s = p.gamma[c] * p.inv_std(c);
        for v in chunk {
            *v = s * (*v - p.running_mean[c]) + p.beta[c];
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batch_norm_backward(x: &Tensor3, p: &NormParams, grad_out: &Tensor3) -> Result<(NormGrads, Tensor3)> {
    p.check(x)?;
    if grad_out.shape() != x.shape() {
        return Err(NnError::invalid("normalization gradient has the wrong shape"));
    }
    let plane = x.plane();
    let n = p.channels();
    let (mut gamma, mut beta) = (vec![0.0; n], vec![0.0; n]);
    let mut gx = grad_out.clone();
    for c in 0..n {
        let inv = p.inv_std(c);
        let range = c * plane..(c + 1) * plane;
        for (&g, &v) in grad_out.data()[range.clone()].iter().zip(&x.data()[range.clone()]) {
            gamma[c] += g * (v - p.running_mean[c]) * inv;
            beta[c] += g;
        }
        for g in &mut gx.data_mut()[range] {
            *g *= p.gamma[c] * inv;
        }
    }
    Ok((NormGrads { gamma, beta }, gx))
}
