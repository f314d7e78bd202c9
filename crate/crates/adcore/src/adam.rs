use crate::AdError;

/// Hyperparameters of the Adam update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment accumulators for a list of parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zero-initialized state for blocks of the given sizes.
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            first: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, block: usize) -> &[f64] {
        &self.first[block]
    }

    pub fn second_moment(&self, block: usize) -> &[f64] {
        &self.second[block]
    }

    /// One bias-corrected Adam update over every block. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), AdError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(AdError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![self.first.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (block, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[block].len() || g.len() != p.len() {
                return Err(AdError::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![self.first[block].len()],
                    rhs: vec![p.len(), g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(AdError::NonFiniteGradient { block });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (block, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[block];
            let v = &mut self.second[block];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-block convenience around [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<(), AdError> {
    state.step(&mut [params], &[grads])
}
