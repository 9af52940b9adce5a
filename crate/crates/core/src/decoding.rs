//! Greedy and beam-search decoding over anything that can score a next
//! token. Scores are summed token log-probs in f64; all tie-breaking is
//! deterministic so decodes are reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TasdError};
use crate::model::{TableEncoding, TasatgModel};
use crate::scalar::Scalar;
use crate::table::Table;
use crate::text::{Vocab, EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub beam_width: usize,
    /// Cap on total sequence length, prefix included.
    pub max_len: usize,
    /// 0 compares raw log-prob sums; larger values divide each hypothesis
    /// score by (number of scored tokens)^alpha when picking the winner.
    pub length_penalty_alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Beam,
            beam_width: 5,
            max_len: 64,
            length_penalty_alpha: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(TasdError::Config("decode.beam_width must be at least 1".into()));
        }
        if self.max_len < 1 {
            return Err(TasdError::Config("decode.max_len must be at least 1".into()));
        }
        if !(self.length_penalty_alpha >= 0.0 && self.length_penalty_alpha.is_finite()) {
            return Err(TasdError::Config(format!(
                "decode.length_penalty_alpha must be finite and non-negative, got {}",
                self.length_penalty_alpha
            )));
        }
        Ok(())
    }
}

/// Anything that can produce next-token log-probabilities for a sequence.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities over the next token given the sequence so far.
    /// Must return one finite-or-neg-infinite value per vocab entry.
    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64>;
}

/// Argmax with ties broken toward the lowest token id.
fn argmax_lowest(lp: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, v) in lp.iter().enumerate().skip(1) {
        if *v > lp[best] {
            best = i;
        }
    }
    best as u32
}

/// Repeatedly appends the argmax token until `<eos>` or the length cap.
/// Returns the generated suffix only; a terminating `<eos>` is consumed but
/// not included.
pub fn greedy_decode(scorer: &dyn NextTokenScorer, prefix: &[u32], cfg: &DecodeConfig) -> Vec<u32> {
    assert!(prefix.len() < cfg.max_len, "prefix leaves no room to generate");
    let mut seq = prefix.to_vec();
    let mut out = Vec::new();
    while seq.len() < cfg.max_len {
        let lp = scorer.next_log_probs(&seq);
        debug_assert_eq!(lp.len(), scorer.vocab_size());
        let tok = argmax_lowest(&lp);
        if tok == EOS_ID {
            break;
        }
        out.push(tok);
        seq.push(tok);
    }
    out
}

#[derive(Clone, Debug)]
struct Hyp {
    suffix: Vec<u32>,
    /// Sum of token log-probs, including the terminating <eos> once finished.
    score: f64,
    /// Number of log-prob terms in `score`.
    scored: usize,
    /// Emitted <eos>; frozen, no further extension.
    done: bool,
}

impl Hyp {
    fn normalized(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.score
        } else {
            self.score / (self.scored.max(1) as f64).powf(alpha)
        }
    }
}

/// Higher score first; equal scores fall back to lexicographic token order
/// so shorter prefixes win exact ties.
fn rank(a: &Hyp, b: &Hyp, key: impl Fn(&Hyp) -> f64) -> Ordering {
    key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal).then_with(|| a.suffix.cmp(&b.suffix))
}

/// Standard beam search over summed log-probs. Every extension of an open
/// hypothesis competes for the `width` beam slots, the `<eos>` extension
/// included: when it wins a slot the hypothesis freezes there (no further
/// growth), and when it loses it is gone. The search stops once every slot
/// is frozen or open hypotheses hit the length cap, and the best surviving
/// hypothesis wins. This slot semantics is what makes width 1 coincide with
/// greedy decoding (the sole slot always holds greedy's argmax choice) and a
/// wide-enough beam coincide with exhaustive enumeration (nothing is ever
/// evicted).
pub fn beam_search(scorer: &dyn NextTokenScorer, prefix: &[u32], cfg: &DecodeConfig) -> Vec<u32> {
    assert!(cfg.beam_width >= 1, "beam width must be at least 1");
    assert!(prefix.len() < cfg.max_len, "prefix leaves no room to generate");
    let width = cfg.beam_width;
    let alpha = cfg.length_penalty_alpha;
    let mut beams = vec![Hyp { suffix: Vec::new(), score: 0.0, scored: 0, done: false }];
    // open hypotheses grow in lockstep: after k rounds each has k tokens
    for step in 0.. {
        if prefix.len() + step >= cfg.max_len || beams.iter().all(|h| h.done) {
            break;
        }
        let mut cands: Vec<Hyp> = beams.iter().filter(|h| h.done).cloned().collect();
        for b in beams.iter().filter(|h| !h.done) {
            let mut seq = Vec::with_capacity(prefix.len() + b.suffix.len());
            seq.extend_from_slice(prefix);
            seq.extend_from_slice(&b.suffix);
            let lp = scorer.next_log_probs(&seq);
            debug_assert_eq!(lp.len(), scorer.vocab_size());
            for (tok, l) in lp.iter().enumerate() {
                let done = tok as u32 == EOS_ID;
                let mut suffix = b.suffix.clone();
                if !done {
                    suffix.push(tok as u32);
                }
                cands.push(Hyp { suffix, score: b.score + l, scored: b.scored + 1, done });
            }
        }
        cands.sort_by(|a, b| rank(a, b, |h| h.normalized(alpha)));
        cands.truncate(width);
        beams = cands;
    }
    beams
        .into_iter()
        .min_by(|a, b| rank(a, b, |h| h.normalized(alpha)))
        .map(|h| h.suffix)
        .expect("at least one hypothesis survives")
}

/// Dispatch on the configured strategy.
pub fn decode(scorer: &dyn NextTokenScorer, prefix: &[u32], cfg: &DecodeConfig) -> Vec<u32> {
    match cfg.strategy {
        DecodeStrategy::Greedy => greedy_decode(scorer, prefix, cfg),
        DecodeStrategy::Beam => beam_search(scorer, prefix, cfg),
    }
}

/// Scorer adapter over a trained model, with the table encoded once up
/// front and detached so per-step forwards stay small.
pub struct TableLm<'a, S: Scalar> {
    model: &'a TasatgModel<S>,
    enc: Option<TableEncoding<S>>,
}

impl<'a, S: Scalar> TableLm<'a, S> {
    pub fn new(model: &'a TasatgModel<S>, table: Option<&Table>, vocab: &Vocab) -> Self {
        let enc = table.map(|t| model.encode_table(t, vocab, None).detached());
        TableLm { model, enc }
    }
}

impl<S: Scalar> NextTokenScorer for TableLm<'_, S> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        assert!(!prefix.is_empty(), "model scorer needs a nonempty prefix");
        let out = self.model.forward_tokens(prefix, self.enc.as_ref(), None);
        let v = self.vocab_size();
        let vals = out.logits.values();
        let row: Vec<f64> =
            vals[(prefix.len() - 1) * v..prefix.len() * v].iter().map(|x| x.to_f()).collect();
        log_softmax(&row)
    }
}

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}
