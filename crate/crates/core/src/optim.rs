//! Adam over an ordered parameter list. Moments are kept in f64 regardless
//! of the model scalar so update arithmetic is identical across runs.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Adam<S: Scalar> {
    params: Vec<Tensor<S>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> Adam<S> {
    /// Default moments (0.9, 0.999) and eps 1e-8.
    pub fn new(params: Vec<Tensor<S>>, lr: f64) -> Self {
        Self::with_hyperparams(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        params: Vec<Tensor<S>>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        assert!(lr >= 0.0 && lr.is_finite(), "bad learning rate {lr}");
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        for p in &params {
            assert!(p.requires_grad(), "optimizer given a non-trainable tensor");
        }
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam { params, m, v, t: 0, lr, beta1, beta2, eps }
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    /// Applies one update from the gradients accumulated since the last
    /// step, then clears them. A parameter with no gradient this round is
    /// treated as zero-gradient (its moments still decay).
    pub fn step(&mut self) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_values(|vals| {
                for (k, x) in vals.iter_mut().enumerate() {
                    let g = grad.as_ref().map_or(0.0, |g| g[k].to_f());
                    m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                    v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    let step = self.lr * mhat / (vhat.sqrt() + self.eps);
                    *x = S::from_f(x.to_f() - step);
                }
            });
            p.zero_grad();
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
