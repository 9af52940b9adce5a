//! Corpus text metrics over token-id sequences: BLEU-1..4, ROUGE-L, and an
//! exact-match METEOR variant (no stemming or synonym resources, hence
//! "meteor_lite" in every report). One reference per candidate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TasdError};
use crate::text::TokenSeq;

pub const ROUGE_BETA: f64 = 1.2;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// BLEU-1 through BLEU-4, 0..100.
    pub bleu: Vec<f64>,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub n_pairs: usize,
}

fn check_corpus(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<()> {
    if cands.is_empty() {
        return Err(TasdError::Metrics("empty corpus".into()));
    }
    if cands.len() != refs.len() {
        return Err(TasdError::Metrics(format!(
            "{} candidates but {} references",
            cands.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-1..max_n: clipped n-gram matches and candidate n-gram totals
/// are summed over the corpus, the brevity penalty uses total lengths, and
/// BLEU-k is the penalized geometric mean of precisions 1..k. No smoothing:
/// a zero precision at any order zeroes every BLEU-k from that order up.
pub fn bleu_n(cands: &[TokenSeq], refs: &[TokenSeq], max_n: usize) -> Result<Vec<f64>> {
    check_corpus(cands, refs)?;
    assert!(max_n >= 1, "max_n must be at least 1");
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.ids.len();
        r_len += r.ids.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&r.ids, n);
            for (gram, count) in ngram_counts(&c.ids, n) {
                total[n - 1] += count;
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let bp = if c_len > r_len || c_len == 0 {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| if total[i] == 0 { 0.0 } else { matched[i] as f64 / total[i] as f64 })
        .collect();
    Ok((1..=max_n)
        .map(|k| {
            if precisions[..k].contains(&0.0) {
                0.0
            } else {
                let log_mean = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
                100.0 * bp * log_mean.exp()
            }
        })
        .collect())
}

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    // rolling-row DP
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-pair ROUGE-L F-score (beta 1.2), 0..100. A pair with an empty
/// candidate or reference scores 0.
pub fn rouge_l(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<f64> {
    check_corpus(cands, refs)?;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        if c.ids.is_empty() || r.ids.is_empty() {
            continue;
        }
        let l = lcs_len(&c.ids, &r.ids);
        assert!(l <= c.ids.len().min(r.ids.len()), "LCS longer than an input");
        if l == 0 {
            continue;
        }
        let p = l as f64 / c.ids.len() as f64;
        let rr = l as f64 / r.ids.len() as f64;
        sum += (1.0 + b2) * p * rr / (rr + b2 * p);
    }
    Ok(100.0 * sum / cands.len() as f64)
}

/// Greedy left-to-right exact unigram alignment for one pair: each candidate
/// token takes the first unused identical reference token. Returns matched
/// (cand_idx, ref_idx) pairs in candidate order.
fn align(cand: &[u32], refr: &[u32]) -> Vec<(usize, usize)> {
    let mut used = vec![false; refr.len()];
    let mut pairs = Vec::new();
    for (i, &c) in cand.iter().enumerate() {
        if let Some(j) = refr.iter().enumerate().position(|(j, &r)| r == c && !used[j]) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    for (k, &(ci, rj)) in pairs.iter().enumerate() {
        if k == 0 || pairs[k - 1] != (ci.wrapping_sub(1), rj.wrapping_sub(1)) {
            chunks += 1;
        }
    }
    chunks
}

/// Mean per-pair METEOR-lite score, 0..100: harmonic mean of unigram
/// precision and recall weighted toward recall (alpha 0.9), discounted by
/// the fragmentation penalty 0.5 * (chunks/matches)^3. Zero matches → 0.
pub fn meteor_lite(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<f64> {
    check_corpus(cands, refs)?;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        if c.ids.is_empty() || r.ids.is_empty() {
            continue;
        }
        let pairs = align(&c.ids, &r.ids);
        let m = pairs.len() as f64;
        if pairs.is_empty() {
            continue;
        }
        let p = m / c.ids.len() as f64;
        let rr = m / r.ids.len() as f64;
        let f = p * rr / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * rr);
        let penalty = METEOR_GAMMA * (chunk_count(&pairs) as f64 / m).powf(METEOR_BETA);
        sum += f * (1.0 - penalty);
    }
    Ok(100.0 * sum / cands.len() as f64)
}

/// All metrics in one pass; serializes as
/// {"bleu":[...], "rouge_l":..., "meteor_lite":..., "n_pairs":...}.
pub fn metric_report(cands: &[TokenSeq], refs: &[TokenSeq]) -> Result<MetricReport> {
    Ok(MetricReport {
        bleu: bleu_n(cands, refs, 4)?,
        rouge_l: rouge_l(cands, refs)?,
        meteor_lite: meteor_lite(cands, refs)?,
        n_pairs: cands.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(lists: &[&[u32]]) -> Vec<TokenSeq> {
        lists.iter().map(|ids| TokenSeq::from_ids(ids.to_vec())).collect()
    }

    #[test]
    fn identical_corpus_scores_perfect_bleu() {
        let c = seqs(&[&[4, 5, 6, 7, 8]]);
        let b = bleu_n(&c, &c, 4).unwrap();
        for (k, v) in b.iter().enumerate() {
            assert!((v - 100.0).abs() < 1e-9, "BLEU-{} = {v}", k + 1);
        }
    }

    #[test]
    fn clipping_worked_example() {
        // "the the the the" vs "the cat": clipped 1-gram precision 1/4,
        // c=4 > r=2 so BP=1, BLEU-1 = 25
        let c = seqs(&[&[5, 5, 5, 5]]);
        let r = seqs(&[&[5, 6]]);
        let b = bleu_n(&c, &r, 4).unwrap();
        assert!((b[0] - 25.0).abs() < 1e-9, "BLEU-1 = {}", b[0]);
        assert_eq!(b[1], 0.0, "no bigram overlap");
    }

    #[test]
    fn disjoint_vocab_scores_zero_everywhere() {
        let c = seqs(&[&[4, 5, 6, 7]]);
        let r = seqs(&[&[8, 9, 10, 11]]);
        assert_eq!(bleu_n(&c, &r, 4).unwrap(), vec![0.0; 4]);
        assert_eq!(rouge_l(&c, &r).unwrap(), 0.0);
        assert_eq!(meteor_lite(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn brevity_penalty_engages_on_short_candidates() {
        // c=2, r=4: BP = exp(1 - 2) = e^-1; unigram precision 1
        let c = seqs(&[&[4, 5]]);
        let r = seqs(&[&[4, 5, 6, 7]]);
        let b = bleu_n(&c, &r, 1).unwrap();
        assert!((b[0] - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_k_never_increases_with_k() {
        let c = seqs(&[&[4, 5, 6, 7, 5, 6], &[9, 8, 7]]);
        let r = seqs(&[&[4, 5, 6, 8, 5, 6], &[9, 7, 8]]);
        let b = bleu_n(&c, &r, 4).unwrap();
        for k in 1..4 {
            assert!(b[k] <= b[k - 1] + 1e-12, "BLEU rose from order {k}: {b:?}");
        }
    }

    #[test]
    fn rouge_worked_example() {
        // "a b c d" vs "a c d e": LCS 3, P = R = 0.75, F = 75
        let c = seqs(&[&[4, 5, 6, 7]]);
        let r = seqs(&[&[4, 6, 7, 8]]);
        assert!((rouge_l(&c, &r).unwrap() - 75.0).abs() < 1e-9);
    }

    #[test]
    fn rouge_identity_and_empty_pair() {
        let c = seqs(&[&[4, 5, 6]]);
        assert!((rouge_l(&c, &c).unwrap() - 100.0).abs() < 1e-12);
        let e = seqs(&[&[]]);
        let r = seqs(&[&[4]]);
        assert_eq!(rouge_l(&e, &r).unwrap(), 0.0);
    }

    #[test]
    fn meteor_identical_three_token_pair() {
        let c = seqs(&[&[4, 5, 6]]);
        // F = 1, penalty = 0.5/27 -> 100 * 53/54
        let expect = 100.0 * (1.0 - 0.5 / 27.0);
        assert!((meteor_lite(&c, &c).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 98.1481481481).abs() < 1e-6);
    }

    #[test]
    fn meteor_single_token_pair_halves() {
        let c = seqs(&[&[4]]);
        assert!((meteor_lite(&c, &c).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn meteor_fragmentation_grows_with_chunks() {
        // same multiset of matches, different orderings
        let r = seqs(&[&[4, 5, 6, 7]]);
        let contiguous = seqs(&[&[4, 5, 6, 7]]);
        let scrambled = seqs(&[&[5, 4, 7, 6]]);
        let a = meteor_lite(&contiguous, &r).unwrap();
        let b = meteor_lite(&scrambled, &r).unwrap();
        assert!(a > b, "contiguous {a} should beat scrambled {b}");
    }

    #[test]
    fn greedy_alignment_reuses_no_reference_token() {
        // cand repeats token 4 three times, ref holds two: 2 matches
        let pairs = align(&[4, 4, 4], &[4, 9, 4]);
        assert_eq!(pairs, vec![(0, 0), (1, 2)]);
        assert_eq!(chunk_count(&pairs), 2);
    }

    #[test]
    fn metrics_are_order_invariant() {
        let c = seqs(&[&[4, 5, 6], &[7, 8], &[9, 4, 4, 5]]);
        let r = seqs(&[&[4, 5, 7], &[7, 8], &[4, 4, 9, 5]]);
        let flip = |v: &[TokenSeq]| {
            let mut w = v.to_vec();
            w.reverse();
            w
        };
        let a = metric_report(&c, &r).unwrap();
        let b = metric_report(&flip(&c), &flip(&r)).unwrap();
        for (x, y) in a.bleu.iter().zip(&b.bleu) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.rouge_l - b.rouge_l).abs() < 1e-12);
        assert!((a.meteor_lite - b.meteor_lite).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_and_length_mismatch_error() {
        let c = seqs(&[&[4]]);
        assert!(metric_report(&[], &[]).is_err());
        assert!(metric_report(&c, &[]).is_err());
    }

    #[test]
    fn report_serializes_with_stable_keys() {
        let c = seqs(&[&[4, 5, 6, 7]]);
        let rep = metric_report(&c, &c).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        for key in ["\"bleu\":", "\"rouge_l\":", "\"meteor_lite\":", "\"n_pairs\":"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        assert_eq!(rep.n_pairs, 1);
    }
}
