//! First-order optimizers over flat parameter buffers. Shared by
//! classifier training, codec training, and the CW attack inner loop.

/// Adam with the usual bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, numel: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// SGD with classical momentum (0.9).
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, numel: usize) -> Self {
        SgdMomentum {
            lr,
            momentum: 0.9,
            velocity: vec![0.0; numel],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for i in 0..params.len() {
            self.velocity[i] = self.momentum * self.velocity[i] - self.lr * grads[i];
            params[i] += self.velocity[i];
        }
    }
}

pub enum Optimizer {
    Adam(Adam),
    Sgd(SgdMomentum),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Adam(o) => o.step(params, grads),
            Optimizer::Sgd(o) => o.step(params, grads),
        }
    }
}
