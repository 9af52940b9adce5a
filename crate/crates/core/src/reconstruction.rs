//! Table-reconstruction auxiliary objective: zero out a fraction of the
//! table-level cell encodings, predict them back with a small MLP, and score
//! the prediction with MSE on the masked cells only.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TasdError};
use crate::init::ParamInit;
use crate::scalar::Scalar;
use crate::tensor::{mse, Tensor};

/// Which training pass(es) the reconstruction loss applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrPass {
    Both,
    First,
    Second,
}

impl TrPass {
    pub fn applies_to_first(self) -> bool {
        matches!(self, TrPass::Both | TrPass::First)
    }

    pub fn applies_to_second(self) -> bool {
        matches!(self, TrPass::Both | TrPass::Second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrConfig {
    pub enabled: bool,
    /// Fraction of cells to mask, rounded up to a whole cell count.
    pub rho: f64,
    /// Weight of the reconstruction term in the combined loss.
    pub lambda: f64,
    /// Hidden width of the reconstruction MLP; defaults to the model width.
    pub hidden: Option<usize>,
    pub pass: TrPass,
}

impl Default for TrConfig {
    fn default() -> Self {
        TrConfig { enabled: true, rho: 0.15, lambda: 1e-2, hidden: None, pass: TrPass::Both }
    }
}

impl TrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TasdError::Config(format!(
                "tr.rho must be in [0, 1), got {}",
                self.rho
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TasdError::Config(format!(
                "tr.lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Pass-through nonlinearity, for tests that need a hand-checkable MLP.
    Identity,
}

/// Two-layer per-cell MLP d -> hidden -> d.
pub struct TrMlp<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
    pub activation: Activation,
}

impl<S: Scalar> TrMlp<S> {
    pub fn init(d: usize, hidden: usize, init: &mut ParamInit<S>) -> Self {
        TrMlp {
            w1: init.normal(&[d, hidden]),
            b1: init.zeros(&[hidden]),
            w2: init.normal(&[hidden, d]),
            b2: init.zeros(&[d]),
            activation: Activation::Gelu,
        }
    }

    pub fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.w1"), self.w1.clone()));
        out.push((format!("{prefix}.b1"), self.b1.clone()));
        out.push((format!("{prefix}.w2"), self.w2.clone()));
        out.push((format!("{prefix}.b2"), self.b2.clone()));
    }

    /// Applies the MLP to the last axis: [..., d] -> [..., d].
    pub fn apply(&self, x: &Tensor<S>) -> Tensor<S> {
        let h = x.matmul(&self.w1).add(&self.b1);
        let h = match self.activation {
            Activation::Gelu => h.gelu(),
            Activation::Identity => h,
        };
        h.matmul(&self.w2).add(&self.b2)
    }
}

/// Zeroes ceil(rho * m * n) distinct cell vectors of the table encoding.
/// Returns the masked encoding plus a row-major cell mask (true = masked).
/// Errors if every cell would be masked, since reconstruction from nothing
/// is unlearnable; callers skip the objective for such tables.
pub fn mask_cells<S: Scalar>(
    e2: &Tensor<S>,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<S>, Vec<bool>)> {
    assert_eq!(e2.rank(), 3, "expected a [m, n, d] table encoding");
    assert!((0.0..=1.0).contains(&rho), "rho {rho} out of [0, 1]");
    let (m, n) = (e2.shape()[0], e2.shape()[1]);
    let cells = m * n;
    let k = (rho * cells as f64).ceil() as usize;
    if k == cells {
        return Err(TasdError::Pipeline(format!(
            "masking {k} of {cells} cells leaves nothing unmasked; \
             table too small for reconstruction at rho={rho}"
        )));
    }
    let mut mask = vec![false; cells];
    for idx in sample(rng, cells, k) {
        mask[idx] = true;
    }
    let keep: Vec<S> = mask.iter().map(|&b| if b { S::zero() } else { S::one() }).collect();
    let keep = Tensor::constant(vec![m, n, 1], keep);
    Ok((e2.mul(&keep), mask))
}

/// Predicts every cell vector back from the masked encoding.
pub fn reconstruct<S: Scalar>(e2_masked: &Tensor<S>, mlp: &TrMlp<S>) -> Tensor<S> {
    mlp.apply(e2_masked)
}

/// MSE between prediction and target restricted to masked cells. The target
/// should be the clean encoding, detached so no gradient reaches it. An
/// empty mask yields a constant zero.
///
/// Because the MLP acts per cell and masked inputs are zero vectors, this
/// loss trains only the MLP (its first weight matrix sees zero input and
/// keeps a zero gradient); when gradient flow into the table encoder is
/// wanted, use [`tr_loss_full_table`] instead.
pub fn tr_loss<S: Scalar>(e2_hat: &Tensor<S>, e2_clean: &Tensor<S>, mask: &[bool]) -> Tensor<S> {
    assert_eq!(e2_hat.shape(), e2_clean.shape(), "prediction/target shape mismatch");
    assert_eq!(e2_hat.rank(), 3, "expected [m, n, d] tensors");
    let (m, n, d) = (e2_hat.shape()[0], e2_hat.shape()[1], e2_hat.shape()[2]);
    assert_eq!(mask.len(), m * n, "mask length mismatch");
    let idx: Vec<u32> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i as u32))
        .collect();
    if idx.is_empty() {
        return Tensor::scalar(S::zero());
    }
    let hat = e2_hat.reshape(&[m * n, d]).gather_rows(&idx);
    let clean = e2_clean.reshape(&[m * n, d]).gather_rows(&idx);
    mse(&hat, &clean)
}

/// Alternative reconstruction score over every cell, masked or not. Unmasked
/// cells enter the MLP with their real encodings, so this variant pushes
/// gradient through the first MLP layer and back into the encoder.
pub fn tr_loss_full_table<S: Scalar>(e2_hat: &Tensor<S>, e2_clean: &Tensor<S>) -> Tensor<S> {
    assert_eq!(e2_hat.shape(), e2_clean.shape(), "prediction/target shape mismatch");
    mse(e2_hat, e2_clean)
}

/// lm + lambda * tr.
pub fn combined_loss<S: Scalar>(lm: &Tensor<S>, tr: &Tensor<S>, lambda: f64) -> Tensor<S> {
    lm.add(&tr.scale(S::from_f(lambda)))
}
