//! Seeded parameter initialization. One `ParamInit` drives a whole model;
//! construction order therefore fixes the random stream, which is what makes
//! same-seed runs bit-identical.

use std::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct ParamInit<S: Scalar> {
    rng: ChaCha8Rng,
    std: f64,
    _marker: PhantomData<S>,
}

impl<S: Scalar> ParamInit<S> {
    pub fn new(seed: u64, std: f64) -> Self {
        ParamInit { rng: ChaCha8Rng::seed_from_u64(seed), std, _marker: PhantomData }
    }

    /// Standard normal via Box-Muller; one value per draw pair, kept
    /// spare-free so the stream position is easy to reason about.
    fn next_normal(&mut self) -> f64 {
        let u1: f64 = self.rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = self.rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Trainable tensor with entries from N(0, std²).
    pub fn normal(&mut self, shape: &[usize]) -> Tensor<S> {
        let n: usize = shape.iter().product();
        let std = self.std;
        let vals: Vec<S> = (0..n).map(|_| S::from_f(self.next_normal() * std)).collect();
        Tensor::parameter(shape.to_vec(), vals)
    }

    /// Trainable zeros (biases, the neutral fusion output projection).
    pub fn zeros(&mut self, shape: &[usize]) -> Tensor<S> {
        let n: usize = shape.iter().product();
        Tensor::parameter(shape.to_vec(), vec![S::zero(); n])
    }

    /// Trainable ones (layer-norm gains).
    pub fn ones(&mut self, shape: &[usize]) -> Tensor<S> {
        let n: usize = shape.iter().product();
        Tensor::parameter(shape.to_vec(), vec![S::one(); n])
    }
}
