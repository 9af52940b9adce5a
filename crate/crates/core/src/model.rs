//! Table-structure-aware text generation model: a decoder-only language
//! model backbone plus a two-stage table encoder (cell-level then
//! table-level self-attention) whose output is fused into the decoder's
//! final hidden states through cross-attention.

use serde::{Deserialize, Serialize};

use crate::attention::{mha, AttentionMap, AttnTrace, MhaParams};
use crate::error::{Result, TasdError};
use crate::init::ParamInit;
use crate::reconstruction::TrMlp;
use crate::scalar::Scalar;
use crate::table::{cell_multiview_sequence, Table, TableSchema};
use crate::tensor::{cross_entropy_masked, Tensor};
use crate::text::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasatgConfig {
    /// Model width.
    pub d: usize,
    /// Attention heads, shared by backbone and table encoder.
    pub h: usize,
    /// Decoder blocks in the backbone.
    pub n_layers: usize,
    /// Tokens kept per cell view (truncate or pad).
    pub view_len: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Largest table geometry the positional tables can address.
    pub m_max: usize,
    pub n_max: usize,
    pub schema: TableSchema,
    pub seed: u64,
    /// Hidden width of the reconstruction MLP; None builds no MLP.
    #[serde(default)]
    pub tr_hidden: Option<usize>,
}

impl TasatgConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TasdError::Config(msg));
        if self.d == 0 || self.h == 0 || !self.d.is_multiple_of(self.h) {
            return fail(format!("d={} must be a positive multiple of h={}", self.d, self.h));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.view_len == 0 {
            return fail("view_len must be at least 1".into());
        }
        if self.max_seq_len < 2 {
            return fail("max_seq_len must allow at least two tokens".into());
        }
        if self.vocab_size <= 4 {
            return fail(format!(
                "vocab_size={} leaves no room beyond the 4 reserved tokens",
                self.vocab_size
            ));
        }
        if self.m_max == 0 || self.n_max == 0 {
            return fail("m_max and n_max must be at least 1".into());
        }
        if self.tr_hidden == Some(0) {
            return fail("tr_hidden must be at least 1 when present".into());
        }
        Ok(())
    }

    /// Views per cell, fixed by the schema.
    pub fn views(&self) -> usize {
        self.schema.view_names().len()
    }

    /// Cell token sequence length s = views * view_len.
    pub fn cell_seq_len(&self) -> usize {
        self.views() * self.view_len
    }
}

pub struct LayerNorm<S: Scalar> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LayerNorm<S> {
    fn init(d: usize, init: &mut ParamInit<S>) -> Self {
        LayerNorm { gain: init.ones(&[d]), bias: init.zeros(&[d]) }
    }

    pub fn apply(&self, x: &Tensor<S>) -> Tensor<S> {
        x.layer_norm(&self.gain, &self.bias)
    }

    fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct FeedForward<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> FeedForward<S> {
    fn init(d: usize, init: &mut ParamInit<S>) -> Self {
        FeedForward {
            w1: init.normal(&[d, 4 * d]),
            b1: init.zeros(&[4 * d]),
            w2: init.normal(&[4 * d, d]),
            b2: init.zeros(&[d]),
        }
    }

    pub fn apply(&self, x: &Tensor<S>) -> Tensor<S> {
        x.matmul(&self.w1).add(&self.b1).gelu().matmul(&self.w2).add(&self.b2)
    }

    fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        out.push((format!("{prefix}.w1"), self.w1.clone()));
        out.push((format!("{prefix}.b1"), self.b1.clone()));
        out.push((format!("{prefix}.w2"), self.w2.clone()));
        out.push((format!("{prefix}.b2"), self.b2.clone()));
    }
}

/// Pre-norm decoder block: x += attn(ln1(x)); x += ffn(ln2(x)).
pub struct DecoderBlock<S: Scalar> {
    pub ln1: LayerNorm<S>,
    pub attn: MhaParams<S>,
    pub ln2: LayerNorm<S>,
    pub ffn: FeedForward<S>,
}

impl<S: Scalar> DecoderBlock<S> {
    fn init(d: usize, h: usize, init: &mut ParamInit<S>) -> Self {
        DecoderBlock {
            ln1: LayerNorm::init(d, init),
            attn: MhaParams::init(d, h, init),
            ln2: LayerNorm::init(d, init),
            ffn: FeedForward::init(d, init),
        }
    }

    fn apply(
        &self,
        x: &Tensor<S>,
        mask: &Tensor<S>,
        mut trace: Option<&mut AttnTrace>,
        label: &str,
    ) -> Tensor<S> {
        let normed = self.ln1.apply(x);
        let a = mha(&self.attn, &normed, &normed, Some(mask));
        record_heads(&mut trace, label, &a.attn);
        let x = x.add(&a.out);
        let f = self.ffn.apply(&self.ln2.apply(&x));
        x.add(&f)
    }

    fn collect_named(&self, prefix: &str, out: &mut Vec<(String, Tensor<S>)>) {
        self.ln1.collect_named(&format!("{prefix}.ln1"), out);
        self.attn.collect_named(&format!("{prefix}.attn"), out);
        self.ln2.collect_named(&format!("{prefix}.ln2"), out);
        self.ffn.collect_named(&format!("{prefix}.ffn"), out);
    }
}

/// The three table encodings produced by the encoder stack.
/// e0: [m, n, s, d] raw cell token embeddings.
/// e1: [m, n, d] after cell self-attention and mean pooling over s.
/// e2: [m, n, d] after table-level self-attention.
pub struct TableEncoding<S: Scalar> {
    pub e0: Tensor<S>,
    pub e1: Tensor<S>,
    pub e2: Tensor<S>,
}

impl<S: Scalar> TableEncoding<S> {
    pub fn m(&self) -> usize {
        self.e2.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.e2.shape()[1]
    }

    /// Copy with all three encodings cut off from the parameter graph, for
    /// decoding loops that reuse one encoding across many prefix forwards.
    pub fn detached(&self) -> TableEncoding<S> {
        TableEncoding { e0: self.e0.detach(), e1: self.e1.detach(), e2: self.e2.detach() }
    }
}

pub struct LmOutput<S: Scalar> {
    /// [l, vocab_size] next-token logits per position.
    pub logits: Tensor<S>,
    /// Head-averaged fusion weights [l, m*n] when a table was attached.
    pub fusion_attn: Option<AttentionMap>,
}

fn record_heads<S: Scalar>(trace: &mut Option<&mut AttnTrace>, label: &str, heads: &[Tensor<S>]) {
    if let Some(tr) = trace.as_deref_mut() {
        for (i, h) in heads.iter().enumerate() {
            tr.record(&format!("{label}.h{i}"), h);
        }
    }
}

fn causal_mask<S: Scalar>(l: usize) -> Tensor<S> {
    let mut vals = vec![S::zero(); l * l];
    for i in 0..l {
        for j in (i + 1)..l {
            vals[i * l + j] = S::from_f(f64::NEG_INFINITY);
        }
    }
    Tensor::constant(vec![l, l], vals)
}

pub struct TasatgModel<S: Scalar> {
    cfg: TasatgConfig,
    pub token_embedding: Tensor<S>,
    pub pos_embedding: Tensor<S>,
    pub blocks: Vec<DecoderBlock<S>>,
    pub ln_f: LayerNorm<S>,
    pub lm_head: Tensor<S>,
    /// Within-cell token position table [s, d].
    pub ctpe: Tensor<S>,
    /// Row / column position tables [m_max, d] and [n_max, d].
    pub tpe_row: Tensor<S>,
    pub tpe_col: Tensor<S>,
    /// Cell-level self-attention over each cell's token sequence.
    pub mha1: MhaParams<S>,
    /// Table-level self-attention over the m*n cell vectors.
    pub mha2: MhaParams<S>,
    /// Fusion cross-attention from decoder states into cell encodings.
    /// Its output projection starts at zero so a fresh model's logits are
    /// identical with and without a table attached.
    pub mha3: MhaParams<S>,
    pub tr_mlp: Option<TrMlp<S>>,
}

impl<S: Scalar> TasatgModel<S> {
    /// Builds all parameters from one seeded stream. The draw order below is
    /// also the `named_parameters` order and the checkpoint order, so a given
    /// (config, seed) pair always produces bit-identical parameters.
    pub fn new(cfg: TasatgConfig) -> Self {
        cfg.validate().expect("invalid model config");
        let mut init = ParamInit::new(cfg.seed, 0.02);
        let d = cfg.d;
        let token_embedding = init.normal(&[cfg.vocab_size, d]);
        let pos_embedding = init.normal(&[cfg.max_seq_len, d]);
        let blocks =
            (0..cfg.n_layers).map(|_| DecoderBlock::init(d, cfg.h, &mut init)).collect();
        let ln_f = LayerNorm::init(d, &mut init);
        let lm_head = init.normal(&[d, cfg.vocab_size]);
        let ctpe = init.normal(&[cfg.cell_seq_len(), d]);
        let tpe_row = init.normal(&[cfg.m_max, d]);
        let tpe_col = init.normal(&[cfg.n_max, d]);
        let mha1 = MhaParams::init(d, cfg.h, &mut init);
        let mha2 = MhaParams::init(d, cfg.h, &mut init);
        let mha3 = MhaParams::init_zero_out(d, cfg.h, &mut init);
        let tr_mlp = cfg.tr_hidden.map(|hidden| TrMlp::init(d, hidden, &mut init));
        TasatgModel {
            cfg,
            token_embedding,
            pos_embedding,
            blocks,
            ln_f,
            lm_head,
            ctpe,
            tpe_row,
            tpe_col,
            mha1,
            mha2,
            mha3,
            tr_mlp,
        }
    }

    pub fn config(&self) -> &TasatgConfig {
        &self.cfg
    }

    /// Every trainable tensor in construction order, with stable names.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        out.push(("token_embedding".to_string(), self.token_embedding.clone()));
        out.push(("pos_embedding".to_string(), self.pos_embedding.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_named(&format!("layers.{i}"), &mut out);
        }
        self.ln_f.collect_named("ln_f", &mut out);
        out.push(("lm_head".to_string(), self.lm_head.clone()));
        out.push(("ctpe".to_string(), self.ctpe.clone()));
        out.push(("tpe_row".to_string(), self.tpe_row.clone()));
        out.push(("tpe_col".to_string(), self.tpe_col.clone()));
        self.mha1.collect_named("mha1", &mut out);
        self.mha2.collect_named("mha2", &mut out);
        self.mha3.collect_named("mha3", &mut out);
        if let Some(mlp) = &self.tr_mlp {
            mlp.collect_named("tr_mlp", &mut out);
        }
        out
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Raw cell token embeddings, [m, n, s, d].
    pub fn embed_table(&self, table: &Table, vocab: &Vocab) -> Tensor<S> {
        assert_eq!(table.schema(), self.cfg.schema, "table schema does not match the model");
        assert_eq!(
            vocab.size(),
            self.cfg.vocab_size,
            "vocab has {} entries but the model was built for {}",
            vocab.size(),
            self.cfg.vocab_size
        );
        let (m, n) = (table.m(), table.n());
        assert!(
            m <= self.cfg.m_max && n <= self.cfg.n_max,
            "table is {m}x{n} but the model supports at most {}x{}",
            self.cfg.m_max,
            self.cfg.n_max
        );
        let s = self.cfg.cell_seq_len();
        let mut ids = Vec::with_capacity(m * n * s);
        for i in 0..m {
            for j in 0..n {
                let seq = cell_multiview_sequence(table.cell(i, j), vocab, self.cfg.view_len);
                debug_assert_eq!(seq.ids.len(), s);
                ids.extend_from_slice(&seq.ids);
            }
        }
        self.token_embedding.gather_rows(&ids).reshape(&[m, n, s, self.cfg.d])
    }

    /// Cell-level stage: add within-cell position encodings, attend among
    /// each cell's own tokens, mean-pool over the token axis. [m, n, d].
    pub fn cell_self_attention(
        &self,
        e0: &Tensor<S>,
        mut trace: Option<&mut AttnTrace>,
    ) -> Tensor<S> {
        assert_eq!(e0.rank(), 4, "expected [m, n, s, d] cell embeddings");
        let x = e0.add(&self.ctpe);
        let out = mha(&self.mha1, &x, &x, None);
        record_heads(&mut trace, "mha1", &out.attn);
        out.out.mean_axis(2)
    }

    /// Table-level stage: add row/column position encodings and attend over
    /// all m*n cells jointly. [m, n, d].
    pub fn table_self_attention(
        &self,
        e1: &Tensor<S>,
        mut trace: Option<&mut AttnTrace>,
    ) -> Tensor<S> {
        assert_eq!(e1.rank(), 3, "expected [m, n, d] cell vectors");
        let (m, n, d) = (e1.shape()[0], e1.shape()[1], e1.shape()[2]);
        let row_ids: Vec<u32> = (0..m as u32).collect();
        let col_ids: Vec<u32> = (0..n as u32).collect();
        let rows = self.tpe_row.gather_rows(&row_ids).reshape(&[m, 1, d]);
        let cols = self.tpe_col.gather_rows(&col_ids).reshape(&[1, n, d]);
        let x = e1.add(&rows).add(&cols);
        let flat = x.reshape(&[m * n, d]);
        let out = mha(&self.mha2, &flat, &flat, None);
        record_heads(&mut trace, "mha2", &out.attn);
        out.out.reshape(&[m, n, d])
    }

    pub fn encode_table(
        &self,
        table: &Table,
        vocab: &Vocab,
        mut trace: Option<&mut AttnTrace>,
    ) -> TableEncoding<S> {
        let e0 = self.embed_table(table, vocab);
        let e1 = self.cell_self_attention(&e0, trace.as_deref_mut());
        let e2 = self.table_self_attention(&e1, trace);
        TableEncoding { e0, e1, e2 }
    }

    /// Decoder stack over a token sequence, ending after the final layer
    /// norm. [l, d].
    pub fn backbone_hidden(
        &self,
        tokens: &[u32],
        mut trace: Option<&mut AttnTrace>,
    ) -> Tensor<S> {
        let l = tokens.len();
        assert!(l >= 1, "empty token sequence");
        assert!(
            l <= self.cfg.max_seq_len,
            "sequence length {l} exceeds max_seq_len {}",
            self.cfg.max_seq_len
        );
        let tok = self.token_embedding.gather_rows(tokens);
        let pos_ids: Vec<u32> = (0..l as u32).collect();
        let pos = self.pos_embedding.gather_rows(&pos_ids);
        let mut x = tok.add(&pos);
        let mask = causal_mask::<S>(l);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.apply(&x, &mask, trace.as_deref_mut(), &format!("backbone.layer{i}"));
        }
        self.ln_f.apply(&x)
    }

    /// Fusion stage: decoder states attend over the flattened cell encodings
    /// and the result is added back residually.
    pub fn fuse_hidden(
        &self,
        hid: &Tensor<S>,
        e2: &Tensor<S>,
        mut trace: Option<&mut AttnTrace>,
    ) -> (Tensor<S>, AttentionMap) {
        assert_eq!(hid.rank(), 2, "expected [l, d] hidden states");
        assert_eq!(e2.rank(), 3, "expected [m, n, d] table encoding");
        let (m, n, d) = (e2.shape()[0], e2.shape()[1], e2.shape()[2]);
        let flat = e2.reshape(&[m * n, d]);
        let out = mha(&self.mha3, hid, &flat, None);
        record_heads(&mut trace, "mha3", &out.attn);
        let map = AttentionMap::from_heads(&out.attn);
        (out.out.add(hid), map)
    }

    /// Next-token logits for a sequence, optionally conditioned on a
    /// pre-computed table encoding.
    pub fn forward_tokens(
        &self,
        tokens: &[u32],
        enc: Option<&TableEncoding<S>>,
        mut trace: Option<&mut AttnTrace>,
    ) -> LmOutput<S> {
        let hid = self.backbone_hidden(tokens, trace.as_deref_mut());
        match enc {
            Some(enc) => {
                let (fused, map) = self.fuse_hidden(&hid, &enc.e2, trace);
                LmOutput { logits: fused.matmul(&self.lm_head), fusion_attn: Some(map) }
            }
            None => LmOutput { logits: hid.matmul(&self.lm_head), fusion_attn: None },
        }
    }

    /// Convenience wrapper that encodes the table (when given) and runs the
    /// decoder in one call.
    pub fn forward_lm(
        &self,
        tokens: &[u32],
        table: Option<&Table>,
        vocab: &Vocab,
        mut trace: Option<&mut AttnTrace>,
    ) -> LmOutput<S> {
        let enc = table.map(|t| self.encode_table(t, vocab, trace.as_deref_mut()));
        self.forward_tokens(tokens, enc.as_ref(), trace)
    }
}

/// Mean next-token cross-entropy over masked positions. `loss_mask[t]`
/// marks token t as a prediction target, scored against `logits[t-1]`;
/// position 0 has no preceding logit and must not be masked in.
pub fn lm_loss<S: Scalar>(logits: &Tensor<S>, tokens: &[u32], loss_mask: &[bool]) -> Tensor<S> {
    let l = tokens.len();
    assert_eq!(logits.rank(), 2, "expected [l, vocab] logits");
    assert_eq!(logits.shape()[0], l, "logits/token length mismatch");
    assert_eq!(loss_mask.len(), l, "mask/token length mismatch");
    assert!(l >= 2, "need at least two tokens for next-token loss");
    assert!(!loss_mask[0], "position 0 has no preceding logit and cannot be a target");
    let preds = logits.slice_rows(0, l - 1);
    cross_entropy_masked(&preds, &tokens[1..], &loss_mask[1..])
}
