//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic "TASD1"
//!   u32 config length, config JSON (the model's own config snapshot)
//!   32-byte sha-256 of the vocabulary
//!   u32 parameter count, then per parameter:
//!     u16 name length, name bytes (utf-8)
//!     u8 ndim, ndim x u32 dims
//!     prod(dims) x f64 values, row-major
//!
//! Values are always stored as f64 regardless of the model's scalar type, so
//! a round trip through disk is bit-exact for f64 models.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TasdError};
use crate::model::{TasatgConfig, TasatgModel};
use crate::scalar::Scalar;
use crate::text::Vocab;

const MAGIC: &[u8; 5] = b"TASD1";

fn ck(msg: impl Into<String>) -> TasdError {
    TasdError::Checkpoint(msg.into())
}

pub fn save_checkpoint<S: Scalar>(
    model: &TasatgModel<S>,
    vocab: &Vocab,
    path: &Path,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg = serde_json::to_vec(model.config()).map_err(|e| ck(e.to_string()))?;
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&vocab.sha256());
    let params = model.named_parameters();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in &params {
        let nb = name.as_bytes();
        assert!(nb.len() <= u16::MAX as usize, "parameter name too long");
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        let dims = p.shape().to_vec();
        assert!(dims.len() <= u8::MAX as usize, "parameter rank too large");
        buf.push(dims.len() as u8);
        for d in &dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.value_vec() {
            buf.extend_from_slice(&v.to_f().to_le_bytes());
        }
    }
    let mut f =
        fs::File::create(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    Ok(())
}

struct Reader<'a> {
    inner: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.inner.len() < n {
            return Err(ck(format!("unexpected end of file while reading {what}")));
        }
        let (head, rest) = self.inner.split_at(n);
        self.inner = rest;
        Ok(head)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

struct StoredParam {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn parse(bytes: &[u8]) -> Result<(TasatgConfig, [u8; 32], Vec<StoredParam>)> {
    let mut r = Reader { inner: bytes };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(ck(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.take(cfg_len, "config")?;
    let cfg: TasatgConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| ck(format!("bad config: {e}")))?;
    cfg.validate().map_err(|e| ck(format!("stored config invalid: {e}")))?;
    let vocab_sha: [u8; 32] = r.take(32, "vocab hash")?.try_into().unwrap();
    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| ck(format!("bad parameter name: {e}")))?
            .to_string();
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dim")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 8, &format!("values of {name}"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(StoredParam { name, dims, values });
    }
    if !r.inner.is_empty() {
        return Err(ck(format!("{} trailing bytes after last parameter", r.inner.len())));
    }
    Ok((cfg, vocab_sha, params))
}

fn check_vocab(stored: [u8; 32], vocab: &Vocab) -> Result<()> {
    if stored != vocab.sha256() {
        return Err(ck("vocab hash mismatch: checkpoint was saved with a different vocabulary"));
    }
    Ok(())
}

/// Copies stored parameters into an existing model. Every stored parameter
/// must exist in the model with the same shape and vice versa; mismatches
/// report the offending parameter by name.
pub fn load_into<S: Scalar>(model: &TasatgModel<S>, vocab: &Vocab, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    let (_, vocab_sha, stored) = parse(&bytes)?;
    check_vocab(vocab_sha, vocab)?;
    let live = model.named_parameters();
    if stored.len() != live.len() {
        return Err(ck(format!(
            "checkpoint has {} parameters, model has {}",
            stored.len(),
            live.len()
        )));
    }
    for (sp, (name, p)) in stored.iter().zip(&live) {
        if sp.name != *name {
            return Err(ck(format!(
                "parameter order mismatch: checkpoint has {:?} where model has {name:?}",
                sp.name
            )));
        }
        if sp.dims != p.shape() {
            return Err(ck(format!(
                "parameter {name:?} has shape {:?} in checkpoint but {:?} in model",
                sp.dims,
                p.shape()
            )));
        }
        let vals: Vec<S> = sp.values.iter().map(|v| S::from_f(*v)).collect();
        p.set_values(&vals);
    }
    Ok(())
}

/// Rebuilds a model from the config embedded in the checkpoint.
pub fn load_checkpoint(path: &Path, vocab: &Vocab) -> Result<TasatgModel<f64>> {
    let bytes = fs::read(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    let (cfg, vocab_sha, _) = parse(&bytes)?;
    check_vocab(vocab_sha, vocab)?;
    if cfg.vocab_size != vocab.size() {
        return Err(ck(format!(
            "stored vocab_size {} does not match vocabulary of size {}",
            cfg.vocab_size,
            vocab.size()
        )));
    }
    let model = TasatgModel::<f64>::new(cfg);
    load_into(&model, vocab, path)?;
    Ok(model)
}

/// Reads only the config snapshot, without materializing parameters.
pub fn peek_config(path: &Path) -> Result<TasatgConfig> {
    let bytes = fs::read(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    let (cfg, _, _) = parse(&bytes)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::TableSchema;
    use tempfile::tempdir;

    fn tiny_vocab() -> Vocab {
        Vocab::build(&["alpha beta gamma delta".to_string()], 1)
    }

    fn cfg(vocab: &Vocab, d: usize) -> TasatgConfig {
        TasatgConfig {
            d,
            h: 2,
            n_layers: 1,
            view_len: 2,
            max_seq_len: 16,
            vocab_size: vocab.size(),
            m_max: 3,
            n_max: 3,
            schema: TableSchema::Open,
            seed: 9,
            tr_hidden: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let back = load_checkpoint(&path, &vocab).unwrap();
        for ((na, a), (nb, b)) in model.named_parameters().iter().zip(&back.named_parameters()) {
            assert_eq!(na, nb);
            let (va, vb) = (a.value_vec(), b.value_vec());
            assert_eq!(va.len(), vb.len());
            for (x, y) in va.iter().zip(&vb) {
                assert_eq!(x.to_bits(), y.to_bits(), "parameter {na} not bit-exact");
            }
        }
        assert_eq!(back.config(), model.config());
    }

    #[test]
    fn save_is_deterministic() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&model, &vocab, &p1).unwrap();
        save_checkpoint(&model, &vocab, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path, &vocab).err().expect("must fail").to_string();
        assert!(err.contains("magic"), "err: {err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        let err = load_checkpoint(&path, &vocab).err().expect("must fail").to_string();
        assert!(err.contains("unexpected end of file"), "err: {err}");
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let vocab = tiny_vocab();
        let wide = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&wide, &vocab, &path).unwrap();
        let narrow = TasatgModel::<f64>::new(cfg(&vocab, 4));
        let err = load_into(&narrow, &vocab, &path).unwrap_err().to_string();
        assert!(err.contains("token_embedding"), "err: {err}");
        assert!(err.contains("shape"), "err: {err}");
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let other = Vocab::build(&["totally different words here".to_string()], 1);
        let err = load_into(&model, &other, &path).unwrap_err().to_string();
        assert!(err.contains("vocab hash mismatch"), "err: {err}");
    }

    #[test]
    fn loaded_weights_drive_identical_logits() {
        let vocab = tiny_vocab();
        let model = TasatgModel::<f64>::new(cfg(&vocab, 8));
        // Perturb away from init so the test is not vacuous.
        for (_, p) in model.named_parameters() {
            p.update_values(|vs| {
                for (i, v) in vs.iter_mut().enumerate() {
                    *v += 1e-3 * ((i % 7) as f64);
                }
            });
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let back = load_checkpoint(&path, &vocab).unwrap();
        let tokens = [1u32, 4, 5, 6];
        let a = model.forward_tokens(&tokens, None, None).logits.value_vec();
        let b = back.forward_tokens(&tokens, None, None).logits.value_vec();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
