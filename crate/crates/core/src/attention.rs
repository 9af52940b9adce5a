//! Multi-head attention over batched sequences, plus attention bookkeeping
//! types used to inspect the trained network.

use crate::init::ParamInit;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-head projection matrices. Each head projects the full model width d
/// down to d/h, and the concatenated heads go through one output projection.
pub struct MhaParams<S: Scalar> {
    pub wq: Vec<Tensor<S>>,
    pub wk: Vec<Tensor<S>>,
    pub wv: Vec<Tensor<S>>,
    pub wo: Tensor<S>,
}

impl<S: Scalar> MhaParams<S> {
    pub fn init(d: usize, h: usize, init: &mut ParamInit<S>) -> Self {
        Self::init_inner(d, h, init, false)
    }

    /// Variant with wo all zeros: the layer's output starts at exactly zero,
    /// so adding it residually leaves the carrier signal untouched until
    /// training moves wo away from the origin.
    pub fn init_zero_out(d: usize, h: usize, init: &mut ParamInit<S>) -> Self {
        Self::init_inner(d, h, init, true)
    }

    fn init_inner(d: usize, h: usize, init: &mut ParamInit<S>, zero_out: bool) -> Self {
        assert!(h > 0 && d.is_multiple_of(h), "width {d} not divisible by {h} heads");
        let dh = d / h;
        let mut wq = Vec::with_capacity(h);
        let mut wk = Vec::with_capacity(h);
        let mut wv = Vec::with_capacity(h);
        for _ in 0..h {
            wq.push(init.normal(&[d, dh]));
            wk.push(init.normal(&[d, dh]));
            wv.push(init.normal(&[d, dh]));
        }
        let wo = if zero_out { init.zeros(&[d, d]) } else { init.normal(&[d, d]) };
        MhaParams { wq, wk, wv, wo }
    }

    pub fn d(&self) -> usize {
        self.wq[0].shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        for i in 0..self.heads() {
            out.push((format!("{prefix}.wq{i}"), self.wq[i].clone()));
            out.push((format!("{prefix}.wk{i}"), self.wk[i].clone()));
            out.push((format!("{prefix}.wv{i}"), self.wv[i].clone()));
        }
        out.push((format!("{prefix}.wo"), self.wo.clone()));
    }
}

pub struct MhaOutput<S: Scalar> {
    pub out: Tensor<S>,
    /// Post-softmax attention weights per head, each [..., l_q, l_k].
    pub attn: Vec<Tensor<S>>,
}

/// Attention over the last two axes. `q` is [..., l_q, d], `kv` is
/// [..., l_k, d]; leading batch axes must broadcast. Scores are scaled by
/// 1/sqrt(d) (model width, not head width) before the row softmax, and an
/// optional additive mask broadcastable to [..., l_q, l_k] is applied inside
/// the softmax.
pub fn mha<S: Scalar>(
    p: &MhaParams<S>,
    q_in: &Tensor<S>,
    kv_in: &Tensor<S>,
    mask: Option<&Tensor<S>>,
) -> MhaOutput<S> {
    let d = p.d();
    assert_eq!(q_in.shape().last(), Some(&d), "query width mismatch");
    assert_eq!(kv_in.shape().last(), Some(&d), "key/value width mismatch");
    let scale = S::from_f(1.0 / (d as f64).sqrt());
    let mut heads = Vec::with_capacity(p.heads());
    let mut attn = Vec::with_capacity(p.heads());
    for i in 0..p.heads() {
        let q = q_in.matmul(&p.wq[i]);
        let k = kv_in.matmul(&p.wk[i]);
        let v = kv_in.matmul(&p.wv[i]);
        let kt = k.transpose(k.rank() - 2, k.rank() - 1);
        let scores = q.matmul(&kt).scale(scale);
        let weights = scores.softmax_lastdim(mask);
        heads.push(weights.matmul(&v));
        attn.push(weights);
    }
    let cat = Tensor::concat(&heads, q_in.rank() - 1);
    MhaOutput { out: cat.matmul(&p.wo), attn }
}

/// One recorded attention matrix: `rows` holds the per-row sums of every
/// softmax row in the tensor, `width` the row length.
pub struct AttnRecord {
    pub label: String,
    pub width: usize,
    pub rows: Vec<f64>,
}

/// Collects attention row sums across a forward pass so tests can check
/// normalization everywhere without replumbing each layer.
#[derive(Default)]
pub struct AttnTrace {
    pub records: Vec<AttnRecord>,
}

impl AttnTrace {
    pub fn new() -> Self {
        AttnTrace::default()
    }

    pub fn record<S: Scalar>(&mut self, label: &str, weights: &Tensor<S>) {
        let width = *weights.shape().last().expect("attention tensor is not scalar");
        let vals = weights.values();
        let rows = vals
            .chunks(width)
            .map(|row| row.iter().map(|x| x.to_f()).sum())
            .collect();
        self.records.push(AttnRecord { label: label.to_string(), width, rows });
    }

    /// Every row sum seen, across all records.
    pub fn row_sums(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.rows.iter().copied()).collect()
    }
}

/// Head-averaged fusion attention: for each generated position, how much
/// weight fell on each table cell. `weights` is row-major [rows, cols].
pub struct AttentionMap {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    /// Mean over heads; each input must be rank-2 [rows, cols].
    pub fn from_heads<S: Scalar>(attn: &[Tensor<S>]) -> Self {
        assert!(!attn.is_empty(), "attention map needs at least one head");
        let shape = attn[0].shape().to_vec();
        assert_eq!(shape.len(), 2, "fusion attention should be rank 2");
        let mut weights = vec![0.0f64; shape[0] * shape[1]];
        for head in attn {
            assert_eq!(head.shape(), &shape[..]);
            for (acc, v) in weights.iter_mut().zip(head.values().iter()) {
                *acc += v.to_f();
            }
        }
        let inv = 1.0 / attn.len() as f64;
        for w in &mut weights {
            *w *= inv;
        }
        AttentionMap { rows: shape[0], cols: shape[1], weights }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, h: usize, seed: u64) -> MhaParams<f64> {
        let mut init = ParamInit::new(seed, 0.02);
        MhaParams::init(d, h, &mut init)
    }

    #[test]
    fn output_shape_matches_query() {
        let p = params(8, 2, 3);
        let mut init = ParamInit::<f64>::new(11, 1.0);
        let q = init.normal(&[5, 8]);
        let kv = init.normal(&[7, 8]);
        let out = mha(&p, &q, &kv, None);
        assert_eq!(out.out.shape(), &[5, 8]);
        assert_eq!(out.attn.len(), 2);
        assert_eq!(out.attn[0].shape(), &[5, 7]);
    }

    #[test]
    fn batched_rank4_input() {
        let p = params(6, 3, 4);
        let mut init = ParamInit::<f64>::new(12, 1.0);
        let x = init.normal(&[2, 3, 4, 6]);
        let out = mha(&p, &x, &x, None);
        assert_eq!(out.out.shape(), &[2, 3, 4, 6]);
        assert_eq!(out.attn[0].shape(), &[2, 3, 4, 4]);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let p = params(8, 2, 5);
        let mut init = ParamInit::<f64>::new(13, 1.0);
        let x = init.normal(&[2, 5, 8]);
        let out = mha(&p, &x, &x, None);
        let mut trace = AttnTrace::new();
        for (i, a) in out.attn.iter().enumerate() {
            trace.record(&format!("head{i}"), a);
        }
        let sums = trace.row_sums();
        assert_eq!(sums.len(), 2 * 2 * 5);
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
        }
    }

    #[test]
    fn causal_mask_zeroes_future_weights() {
        let p = params(4, 1, 6);
        let mut init = ParamInit::<f64>::new(14, 1.0);
        let x = init.normal(&[4, 4]);
        let mut mask = vec![0.0; 16];
        for i in 0..4 {
            for j in (i + 1)..4 {
                mask[i * 4 + j] = f64::NEG_INFINITY;
            }
        }
        let mask = Tensor::constant(vec![4, 4], mask);
        let out = mha(&p, &x, &x, Some(&mask));
        let w = out.attn[0].value_vec();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(w[i * 4 + j], 0.0, "weight above diagonal at ({i},{j})");
            }
        }
    }

    #[test]
    fn zero_out_projection_gives_zero_output() {
        let mut init = ParamInit::<f64>::new(7, 0.02);
        let p = MhaParams::init_zero_out(8, 2, &mut init);
        let mut data = ParamInit::<f64>::new(15, 1.0);
        let q = data.normal(&[3, 8]);
        let kv = data.normal(&[6, 8]);
        let out = mha(&p, &q, &kv, None);
        assert!(out.out.value_vec().iter().all(|v| *v == 0.0));
        // weights still form distributions, so gradients can flow on day one
        let sums: f64 = out.attn[0].value_vec().iter().sum();
        assert!((sums - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_flow_to_all_projections() {
        let p = params(4, 2, 8);
        let mut init = ParamInit::<f64>::new(16, 1.0);
        let x = init.normal(&[3, 4]);
        let out = mha(&p, &x, &x, None);
        out.out.sum_all().backward();
        for (name, t) in [("wq", &p.wq[0]), ("wk", &p.wk[0]), ("wv", &p.wv[1]), ("wo", &p.wo)] {
            let g = t.grad_vec().unwrap_or_else(|| panic!("{name} missing grad"));
            assert!(g.iter().any(|v| *v != 0.0), "{name} grad all zero");
        }
    }

    #[test]
    fn attention_map_averages_heads() {
        let a = Tensor::<f64>::constant(vec![2, 2], vec![1.0, 0.0, 0.5, 0.5]);
        let b = Tensor::<f64>::constant(vec![2, 2], vec![0.0, 1.0, 0.5, 0.5]);
        let map = AttentionMap::from_heads(&[a, b]);
        assert_eq!(map.rows, 2);
        assert_eq!(map.cols, 2);
        assert_eq!(map.row(0), &[0.5, 0.5]);
        assert_eq!(map.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn named_parameters_cover_every_tensor() {
        let p = params(8, 2, 9);
        let mut named = Vec::new();
        p.collect_named("mha", &mut named);
        assert_eq!(named.len(), 2 * 3 + 1);
        assert_eq!(named[0].0, "mha.wq0");
        assert_eq!(named.last().unwrap().0, "mha.wo");
    }
}
