//! First-order adaptive-moment optimizer (Adam) with decoupled weight decay,
//! operating on flat parameter slices.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Adam<R> {
    lr: R,
    beta1: R,
    beta2: R,
    eps: R,
    weight_decay: R,
    t: u64,
    m: Vec<R>,
    v: Vec<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(n_params: usize, lr: R, weight_decay: R) -> Self {
        Self {
            lr,
            beta1: R::of(0.9),
            beta2: R::of(0.999),
            eps: R::of(1e-8),
            weight_decay,
            t: 0,
            m: vec![R::zero(); n_params],
            v: vec![R::zero(); n_params],
        }
    }

    /// One update over the full parameter vector. Weight decay is decoupled:
    /// it shrinks parameters directly instead of entering the moment buffers.
    pub fn step(&mut self, params: &mut [R], grads: &[R]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under the optimizer");
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let t = R::of(self.t as f64);
        let bc1 = R::one() - self.beta1.powf(t);
        let bc2 = R::one() - self.beta2.powf(t);
        let one = R::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * (m_hat / (v_hat.sqrt() + self.eps));
            if self.weight_decay > R::zero() {
                params[i] = params[i] - self.lr * self.weight_decay * params[i];
            }
        }
    }
}
