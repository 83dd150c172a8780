use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

/// Learning rate used at full scale; far too slow for the toy policy.
pub const FULL_LR: f64 = 2e-5;
pub const DESK_LR: f64 = 1e-2;

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: DESK_LR,
        }
    }
}

/// First and second moment estimates plus step count.
///
/// The update carries no bias correction:
/// `m' = b1 m + (1 - b1) g`, `v' = b2 v + (1 - b2) g^2`,
/// `gamma = m' / (sqrt(v') + eps)`, `theta' = theta - lr * gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            eps: hyper.eps,
            lr: hyper.lr,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            lr: self.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.m.len() == self.v.len()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.lr >= 0.0
            && self.v.iter().all(|&x| x >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPolicy("invalid Adam state".into()))
        }
    }

    /// Preconditioned direction for `grad` against this state, leaving the
    /// state untouched. This is what per-sample features use.
    pub fn gamma(&self, grad: &[f64]) -> Result<Vec<f64>> {
        self.check_grad(grad)?;
        Ok(grad
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|(&g, (&m, &v))| {
                let m1 = self.beta1 * m + (1.0 - self.beta1) * g;
                let v1 = self.beta2 * v + (1.0 - self.beta2) * g * g;
                m1 / (v1.sqrt() + self.eps)
            })
            .collect())
    }

    /// Advances the moments with `grad`, returning the direction.
    pub fn advance(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        self.check_grad(grad)?;
        let mut gamma = Vec::with_capacity(grad.len());
        for ((m, v), &g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            gamma.push(*m / (v.sqrt() + self.eps));
        }
        self.t += 1;
        Ok(gamma)
    }

    /// One optimizer step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let gamma = self.advance(grad)?;
        for (p, g) in params.iter_mut().zip(gamma) {
            *p -= self.lr * g;
        }
        Ok(())
    }

    fn check_grad(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                found: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(())
    }
}

/// Functional form: direction plus the advanced state.
pub fn adam_gamma(grad: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let gamma = next.advance(grad)?;
    Ok((gamma, next))
}
