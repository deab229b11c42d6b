use crate::error::{CraneError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// Moment estimates for a list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamWState {
    /// Zero moments for blocks of the given sizes.
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        AdamWState {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Resets moments (the step counter keeps counting).
    pub fn reset_moments(&mut self) {
        self.m.iter_mut().chain(self.v.iter_mut()).for_each(|b| b.fill(0.0));
    }

    /// One decoupled-weight-decay Adam update:
    ///
    /// ```text
    /// p ← p·(1 − lr·wd) − lr · m̂ / (√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CraneError::Dimension(format!(
                "adamw: {} parameter blocks, {} gradient blocks, state has {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != p.len() {
                return Err(CraneError::Dimension(format!(
                    "adamw block {k}: param {}, grad {}, state {}",
                    p.len(),
                    g.len(),
                    self.m[k].len()
                )));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
