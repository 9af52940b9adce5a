//! Tokenization and vocabulary shared by the serializers, the model, and
//! the metrics, so all three agree on token boundaries.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Result, TasdError};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word tokenizer: lowercases, splits on whitespace, and separates
/// `. , ; : ( )` as standalone tokens.
pub fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if matches!(ch, '.' | ',' | ';' | ':' | '(' | ')') {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token ids plus, when known, the string they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub text_origin: Option<String>,
}

impl TokenSeq {
    pub fn from_ids(ids: Vec<u32>) -> TokenSeq {
        TokenSeq { ids, text_origin: None }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Immutable token table. Ids 0..=3 are the reserved tokens; the rest are
/// corpus tokens ordered by (count desc, token asc).
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds from a corpus, keeping tokens with count >= min_count.
    pub fn build(corpus: &[String], min_count: usize) -> Vocab {
        assert!(!corpus.is_empty(), "build_vocab needs a nonempty corpus");
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in split_text(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(tok, count)| {
                *count >= min_count.max(1) && !RESERVED_TOKENS.contains(&tok.as_str())
            })
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(tok, _)| tok));
        Vocab::from_tokens(tokens).expect("freshly built vocab is valid")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(TasdError::Vocab(format!(
                "vocab has {} tokens, needs at least the {} reserved ones",
                tokens.len(),
                RESERVED_TOKENS.len()
            )));
        }
        for (i, expect) in RESERVED_TOKENS.iter().enumerate() {
            if tokens[i] != *expect {
                return Err(TasdError::Vocab(format!(
                    "reserved token at id {i} is {:?}, expected {expect:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(TasdError::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id for a known token; panics if absent (test convenience).
    pub fn expect_id(&self, token: &str) -> u32 {
        self.id(token)
            .unwrap_or_else(|| panic!("token {token:?} not in vocab"))
    }

    pub fn token(&self, id: u32) -> &str {
        assert!(
            (id as usize) < self.tokens.len(),
            "token id {id} out of range for vocab of size {}",
            self.tokens.len()
        );
        &self.tokens[id as usize]
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let ids = split_text(text)
            .into_iter()
            .map(|tok| self.id(&tok).unwrap_or(UNK_ID))
            .collect();
        TokenSeq { ids, text_origin: Some(text.to_string()) }
    }

    /// Joins tokens with single spaces, dropping <pad>/<bos>/<eos>.
    /// Panics on an out-of-range id.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| self.token(id))
            .filter(|&tok| tok != "<pad>" && tok != "<bos>" && tok != "<eos>")
            .collect();
        words.join(" ")
    }

    /// Canonical byte form: one token per line, line number = id.
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for tok in &self.tokens {
            bytes.extend_from_slice(tok.as_bytes());
            bytes.push(b'\n');
        }
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.canonical_bytes())
            .map_err(|e| TasdError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let data =
            fs::read_to_string(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
        let tokens: Vec<String> = data.lines().map(|l| l.to_string()).collect();
        Vocab::from_tokens(tokens)
    }

    /// SHA-256 of the canonical byte form; stored in checkpoints so a model
    /// is never silently paired with the wrong vocabulary.
    pub fn sha256(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_bytes());
        hasher.finalize().into()
    }
}
