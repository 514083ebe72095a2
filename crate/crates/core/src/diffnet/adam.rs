use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment estimates for a flat parameter vector.
///
/// The update is elementwise, so stepping two blocks with two states of equal
/// step count is identical to stepping their concatenation with one state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
}

impl OptState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Gradients are screened before anything
    /// is mutated, so a rejected step leaves both state and parameters intact.
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) -> Result<()> {
        if x.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::validation(
                "grads",
                format!("optimizer holds {} moments, got {} params and {} grads", self.m.len(), x.len(), g.len()),
            ));
        }
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Optimizer { index });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..x.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}
