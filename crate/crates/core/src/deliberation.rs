//! Two-pass deliberation training and inference.
//!
//! Pass one trains M1 on [serialized table ++ target] with the loss restricted
//! to the target span. The trained M1 drafts a description for every train and
//! val record, and pass two trains a fresh M2 on [draft ++ target], again with
//! the loss on the target. At inference M1 drafts from the serialized table and
//! M2 rewrites the draft; ablation modes drop the second pass or the table
//! conditioning of either pass.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{DatasetRecord, SplitDataset};
use crate::decoding::{decode, DecodeConfig, TableLm};
use crate::error::{Result, TasdError};
use crate::model::{lm_loss, TasatgConfig, TasatgModel};
use crate::optim::Adam;
use crate::reconstruction::{combined_loss, mask_cells, reconstruct, tr_loss};
use crate::scalar::Scalar;
use crate::table::{serialize_text, Table};
use crate::text::{Vocab, BOS_ID};

/// Which parts of the two-pass system are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Full system: both passes, both table-conditioned.
    #[serde(rename = "TASD")]
    Tasd,
    /// No deliberation: single pass, output is the draft.
    #[serde(rename = "wo-d")]
    WoD,
    /// No table conditioning in either pass.
    #[serde(rename = "wo-tas")]
    WoTas,
    /// First pass runs table-free; the second still fuses the table.
    #[serde(rename = "wo-1st-tas")]
    Wo1stTas,
}

impl Mode {
    pub fn fuse_first(self) -> bool {
        !matches!(self, Mode::WoTas | Mode::Wo1stTas)
    }

    pub fn fuse_second(self) -> bool {
        !matches!(self, Mode::WoTas)
    }

    pub fn two_pass(self) -> bool {
        !matches!(self, Mode::WoD)
    }

    pub const ALL: [Mode; 4] = [Mode::Tasd, Mode::WoD, Mode::WoTas, Mode::Wo1stTas];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Tasd => "TASD",
            Mode::WoD => "wo-d",
            Mode::WoTas => "wo-tas",
            Mode::Wo1stTas => "wo-1st-tas",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = TasdError;

    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "tasd" => Ok(Mode::Tasd),
            "wo-d" => Ok(Mode::WoD),
            "wo-tas" => Ok(Mode::WoTas),
            "wo-1st-tas" => Ok(Mode::Wo1stTas),
            other => Err(TasdError::Config(format!(
                "unknown mode {other:?}; expected TASD, wo-d, wo-tas or wo-1st-tas"
            ))),
        }
    }
}

/// One training sequence: [bos] ++ prefix ++ target ++ [eos], with the loss
/// mask marking the target tokens and the closing eos.
#[derive(Debug, Clone)]
pub struct LmExample {
    pub id: String,
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
    pub table: Table,
    /// Length of [bos] ++ prefix, i.e. where generation starts.
    pub prefix_len: usize,
}

fn build_example(
    rec: &DatasetRecord,
    prefix_text: &str,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<LmExample> {
    if rec.target.trim().is_empty() {
        return Err(TasdError::Pipeline(format!("record {:?} has an empty target", rec.id)));
    }
    let prefix = vocab.tokenize(prefix_text);
    let target = vocab.tokenize(&rec.target);
    let mut tokens = Vec::with_capacity(2 + prefix.len() + target.len());
    tokens.push(BOS_ID);
    tokens.extend_from_slice(&prefix.ids);
    let prefix_len = tokens.len();
    tokens.extend_from_slice(&target.ids);
    tokens.push(crate::text::EOS_ID);
    if tokens.len() > max_seq_len {
        return Err(TasdError::Pipeline(format!(
            "record {:?} needs {} tokens but max_seq_len is {max_seq_len}",
            rec.id,
            tokens.len()
        )));
    }
    let mut mask = vec![false; prefix_len];
    mask.resize(tokens.len(), true);
    Ok(LmExample { id: rec.id.clone(), tokens, mask, table: rec.table.clone(), prefix_len })
}

/// Examples whose prefix is the template serialization of the table (pass one).
pub fn serialize_examples(
    records: &[DatasetRecord],
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<Vec<LmExample>> {
    records
        .iter()
        .map(|r| build_example(r, &serialize_text(&r.table), vocab, max_seq_len))
        .collect()
}

/// Examples whose prefix is a previously generated draft (pass two). Every
/// record must have a draft.
pub fn draft_examples(
    records: &[DatasetRecord],
    drafts: &BTreeMap<String, String>,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<Vec<LmExample>> {
    records
        .iter()
        .map(|r| {
            let draft = drafts.get(&r.id).ok_or_else(|| {
                TasdError::Pipeline(format!("record {:?} has no draft", r.id))
            })?;
            build_example(r, draft, vocab, max_seq_len)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainedModel<S: Scalar> {
    pub model: TasatgModel<S>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean language-model loss (no reconstruction term) over examples.
pub fn mean_lm_loss<S: Scalar>(
    model: &TasatgModel<S>,
    examples: &[LmExample],
    vocab: &Vocab,
    fuse: bool,
) -> f64 {
    assert!(!examples.is_empty(), "loss over an empty example set");
    let mut tot = 0.0;
    for ex in examples {
        let enc = fuse.then(|| model.encode_table(&ex.table, vocab, None));
        let out = model.forward_tokens(&ex.tokens, enc.as_ref(), None);
        tot += lm_loss(&out.logits, &ex.tokens, &ex.mask).item().to_f();
    }
    tot / examples.len() as f64
}

fn snapshot<S: Scalar>(model: &TasatgModel<S>) -> Vec<Vec<S>> {
    model.parameters().iter().map(|p| p.value_vec()).collect()
}

fn restore<S: Scalar>(model: &TasatgModel<S>, snap: &[Vec<S>]) {
    for (p, vals) in model.parameters().iter().zip(snap) {
        p.set_values(vals);
    }
}

/// Trains one model with per-record optimizer steps, keeping the parameters of
/// the best validation epoch. Stops early once `patience` consecutive epochs
/// fail to improve validation loss.
pub fn fit<S: Scalar>(
    run: &RunConfig,
    model_cfg: TasatgConfig,
    train: &[LmExample],
    val: &[LmExample],
    vocab: &Vocab,
    fuse: bool,
    tr_active: bool,
) -> Result<TrainedModel<S>> {
    if train.is_empty() {
        return Err(TasdError::Pipeline("train split is empty".into()));
    }
    if val.is_empty() {
        return Err(TasdError::Pipeline("validation split is empty".into()));
    }
    if tr_active {
        assert!(fuse, "reconstruction needs the table encoder in the loop");
        assert!(model_cfg.tr_hidden.is_some(), "reconstruction needs the mlp head");
    }
    let seed = model_cfg.seed;
    let model = TasatgModel::<S>::new(model_cfg);
    let mut adam = Adam::new(model.parameters(), run.train.lr);
    // Independent stream for reconstruction masks, offset so it never mirrors
    // the parameter init stream.
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5452_4d53));
    let mut history: Vec<EpochStats> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_snap: Option<Vec<Vec<S>>> = None;
    for epoch in 0..run.train.epochs {
        let mut tot = 0.0;
        for ex in train {
            let enc = fuse.then(|| model.encode_table(&ex.table, vocab, None));
            let out = model.forward_tokens(&ex.tokens, enc.as_ref(), None);
            let lm = lm_loss(&out.logits, &ex.tokens, &ex.mask);
            let loss = if tr_active {
                let enc = enc.as_ref().expect("fuse implies encoding");
                match mask_cells(&enc.e2, run.tr.rho, &mut mask_rng) {
                    Ok((masked, cell_mask)) => {
                        let mlp = model.tr_mlp.as_ref().expect("tr_hidden implies mlp");
                        let hat = reconstruct(&masked, mlp);
                        let tr = tr_loss(&hat, &enc.e2.detach(), &cell_mask);
                        combined_loss(&lm, &tr, run.tr.lambda)
                    }
                    // Masking would cover the whole table; train on the
                    // language loss alone for this record.
                    Err(_) => lm,
                }
            } else {
                lm
            };
            tot += loss.item().to_f();
            loss.backward();
            adam.step();
        }
        let train_loss = tot / train.len() as f64;
        let val_loss = mean_lm_loss(&model, val, vocab, fuse);
        history.push(EpochStats { epoch, train_loss, val_loss });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snap = Some(snapshot(&model));
        } else if epoch - best_epoch > run.train.patience {
            break;
        }
    }
    restore(&model, &best_snap.expect("at least one epoch ran"));
    Ok(TrainedModel { model, history, best_epoch, best_val_loss: best_val })
}

/// One generated draft, persisted as a JSON line {"id", "draft"}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draft {
    pub id: String,
    pub draft: String,
}

pub fn save_drafts(drafts: &[Draft], path: &Path) -> Result<()> {
    let mut out = String::new();
    for d in drafts {
        out.push_str(&serde_json::to_string(d).map_err(|e| TasdError::Pipeline(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| TasdError::io(path.display().to_string(), e))
}

pub fn load_drafts(path: &Path) -> Result<Vec<Draft>> {
    let text =
        fs::read_to_string(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| TasdError::dataset(path.display().to_string(), i + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn draft_map(drafts: &[Draft]) -> BTreeMap<String, String> {
    drafts.iter().map(|d| (d.id.clone(), d.draft.clone())).collect()
}

fn decode_suffix<S: Scalar>(
    model: &TasatgModel<S>,
    table: Option<&Table>,
    prefix_text: &str,
    vocab: &Vocab,
    dcfg: &DecodeConfig,
    id: &str,
) -> Result<Vec<u32>> {
    let mut prefix = vec![BOS_ID];
    prefix.extend_from_slice(&vocab.tokenize(prefix_text).ids);
    if prefix.len() >= dcfg.max_len {
        return Err(TasdError::Pipeline(format!(
            "record {id:?}: prefix of {} tokens leaves no room under max_len {}",
            prefix.len(),
            dcfg.max_len
        )));
    }
    let scorer = TableLm::new(model, table, vocab);
    Ok(decode(&scorer, &prefix, dcfg))
}

/// Drafts one description per record from the serialized table.
pub fn generate_drafts<S: Scalar>(
    model: &TasatgModel<S>,
    records: &[DatasetRecord],
    vocab: &Vocab,
    dcfg: &DecodeConfig,
    fuse: bool,
) -> Result<Vec<Draft>> {
    records
        .iter()
        .map(|rec| {
            let suffix = decode_suffix(
                model,
                fuse.then_some(&rec.table),
                &serialize_text(&rec.table),
                vocab,
                dcfg,
                &rec.id,
            )?;
            Ok(Draft { id: rec.id.clone(), draft: vocab.detokenize(&suffix) })
        })
        .collect()
}

pub struct PipelineResult<S: Scalar> {
    pub mode: Mode,
    pub vocab: Vocab,
    pub m1: TrainedModel<S>,
    pub m2: Option<TrainedModel<S>>,
    pub train_drafts: Vec<Draft>,
    pub val_drafts: Vec<Draft>,
}

fn common_schema(split: &SplitDataset) -> Result<crate::table::TableSchema> {
    let all = split.train.iter().chain(&split.val).chain(&split.test);
    let mut schema = None;
    for rec in all {
        match schema {
            None => schema = Some(rec.table.schema()),
            Some(s) if s == rec.table.schema() => {}
            Some(s) => {
                return Err(TasdError::Pipeline(format!(
                    "record {:?} has schema {:?} but the dataset started with {s:?}",
                    rec.id,
                    rec.table.schema()
                )))
            }
        }
    }
    schema.ok_or_else(|| TasdError::Pipeline("dataset is empty".into()))
}

/// Vocabulary over the train split: serialized tables plus targets.
pub fn build_vocab(train: &[DatasetRecord], min_count: usize) -> Vocab {
    let mut corpus = Vec::with_capacity(train.len() * 2);
    for rec in train {
        corpus.push(serialize_text(&rec.table));
        corpus.push(rec.target.clone());
    }
    Vocab::build(&corpus, min_count)
}

/// Trains the configured mode end to end on a split dataset.
pub fn run_pipeline<S: Scalar>(
    split: &SplitDataset,
    run: &RunConfig,
    mode: Mode,
) -> Result<PipelineResult<S>> {
    let schema = common_schema(split)?;
    let vocab = build_vocab(&split.train, run.train.min_count);
    let max_seq_len = run.model.max_seq_len;
    let m1_train = serialize_examples(&split.train, &vocab, max_seq_len)?;
    let m1_val = serialize_examples(&split.val, &vocab, max_seq_len)?;
    let m1_cfg = run.model_config(vocab.size(), schema);
    let tr1 = run.tr.enabled && run.tr.pass.applies_to_first() && mode.fuse_first();
    let m1 = fit::<S>(run, m1_cfg.clone(), &m1_train, &m1_val, &vocab, mode.fuse_first(), tr1)?;
    let train_drafts =
        generate_drafts(&m1.model, &split.train, &vocab, &run.decode, mode.fuse_first())?;
    let val_drafts =
        generate_drafts(&m1.model, &split.val, &vocab, &run.decode, mode.fuse_first())?;
    if !mode.two_pass() {
        return Ok(PipelineResult { mode, vocab, m1, m2: None, train_drafts, val_drafts });
    }
    let m2_train =
        draft_examples(&split.train, &draft_map(&train_drafts), &vocab, max_seq_len)?;
    let m2_val = draft_examples(&split.val, &draft_map(&val_drafts), &vocab, max_seq_len)?;
    // Fresh parameters for the second pass: separate init stream, no tensor
    // shared with the first model.
    let m2_cfg = TasatgConfig { seed: m1_cfg.seed.wrapping_add(1), ..m1_cfg };
    let tr2 = run.tr.enabled && run.tr.pass.applies_to_second() && mode.fuse_second();
    let m2 = fit::<S>(run, m2_cfg, &m2_train, &m2_val, &vocab, mode.fuse_second(), tr2)?;
    Ok(PipelineResult { mode, vocab, m1, m2: Some(m2), train_drafts, val_drafts })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferOutput {
    pub id: String,
    pub draft: String,
    pub final_text: String,
}

/// Drafts with M1, then rewrites with M2 when the mode has a second pass.
pub fn infer<S: Scalar>(
    res: &PipelineResult<S>,
    records: &[DatasetRecord],
    dcfg: &DecodeConfig,
) -> Result<Vec<InferOutput>> {
    records
        .iter()
        .map(|rec| {
            let suffix = decode_suffix(
                &res.m1.model,
                res.mode.fuse_first().then_some(&rec.table),
                &serialize_text(&rec.table),
                &res.vocab,
                dcfg,
                &rec.id,
            )?;
            let draft = res.vocab.detokenize(&suffix);
            let final_text = match &res.m2 {
                Some(m2) => {
                    let suffix = decode_suffix(
                        &m2.model,
                        res.mode.fuse_second().then_some(&rec.table),
                        &draft,
                        &res.vocab,
                        dcfg,
                        &rec.id,
                    )?;
                    res.vocab.detokenize(&suffix)
                }
                None => draft.clone(),
            };
            Ok(InferOutput { id: rec.id.clone(), draft, final_text })
        })
        .collect()
}

/// Fraction of records whose greedy generation token-exactly matches the
/// target.
pub fn exact_match_rate<S: Scalar>(
    model: &TasatgModel<S>,
    records: &[DatasetRecord],
    vocab: &Vocab,
    fuse: bool,
    max_len: usize,
) -> Result<f64> {
    assert!(!records.is_empty(), "exact match over an empty set");
    let dcfg = DecodeConfig {
        strategy: crate::decoding::DecodeStrategy::Greedy,
        max_len,
        ..DecodeConfig::default()
    };
    let mut hits = 0usize;
    for rec in records {
        let suffix = decode_suffix(
            model,
            fuse.then_some(&rec.table),
            &serialize_text(&rec.table),
            vocab,
            &dcfg,
            &rec.id,
        )?;
        if suffix == vocab.tokenize(&rec.target).ids {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_dataset, synth_dataset, SplitSpec};
    use crate::table::TableSchema;
    use tempfile::tempdir;

    fn micro_run_config() -> RunConfig {
        let mut run = RunConfig::default();
        run.model.d = 8;
        run.model.h = 2;
        run.model.n_layers = 1;
        run.model.view_len = 1;
        run.model.max_seq_len = 48;
        run.model.m_max = 2;
        run.model.n_max = 2;
        run.train.epochs = 2;
        run.train.lr = 1e-3;
        run.decode.strategy = crate::decoding::DecodeStrategy::Greedy;
        run.decode.max_len = 48;
        run.tr.enabled = false;
        run
    }

    fn micro_split() -> SplitDataset {
        let ds = synth_dataset(6, 1, 2, 6, 42, TableSchema::Open);
        split_dataset(ds, &SplitSpec::Ratios { ratios: [4.0, 1.0, 1.0] }).unwrap()
    }

    #[test]
    fn mode_flag_truth_table() {
        assert!(Mode::Tasd.fuse_first() && Mode::Tasd.fuse_second() && Mode::Tasd.two_pass());
        assert!(Mode::WoD.fuse_first() && Mode::WoD.fuse_second() && !Mode::WoD.two_pass());
        assert!(!Mode::WoTas.fuse_first() && !Mode::WoTas.fuse_second() && Mode::WoTas.two_pass());
        assert!(
            !Mode::Wo1stTas.fuse_first()
                && Mode::Wo1stTas.fuse_second()
                && Mode::Wo1stTas.two_pass()
        );
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in Mode::ALL {
            assert_eq!(mode.to_string().parse::<Mode>().unwrap(), mode);
        }
        assert_eq!("tasd".parse::<Mode>().unwrap(), Mode::Tasd);
        assert!("both".parse::<Mode>().is_err());
    }

    #[test]
    fn example_mask_covers_target_and_eos_only() {
        let split = micro_split();
        let vocab = build_vocab(&split.train, 1);
        let ex = &serialize_examples(&split.train, &vocab, 64).unwrap()[0];
        assert_eq!(ex.tokens[0], BOS_ID);
        assert_eq!(*ex.tokens.last().unwrap(), crate::text::EOS_ID);
        assert!(ex.mask[..ex.prefix_len].iter().all(|m| !m));
        assert!(ex.mask[ex.prefix_len..].iter().all(|m| *m));
        let target_len = vocab.tokenize(&split.train[0].target).len();
        assert_eq!(ex.tokens.len() - ex.prefix_len, target_len + 1);
    }

    #[test]
    fn overlong_example_names_the_record() {
        let split = micro_split();
        let vocab = build_vocab(&split.train, 1);
        let err = serialize_examples(&split.train, &vocab, 8).err().unwrap().to_string();
        assert!(err.contains("synth-0000"), "err: {err}");
        assert!(err.contains("max_seq_len"), "err: {err}");
    }

    #[test]
    fn empty_target_is_rejected() {
        let mut split = micro_split();
        split.train[1].target = "  ".into();
        let vocab = build_vocab(&split.train, 1);
        let err = serialize_examples(&split.train, &vocab, 64).err().unwrap().to_string();
        assert!(err.contains("synth-0001") && err.contains("empty target"), "err: {err}");
    }

    #[test]
    fn fit_restores_the_best_epoch() {
        let run = micro_run_config();
        let split = micro_split();
        let vocab = build_vocab(&split.train, 1);
        let train = serialize_examples(&split.train, &vocab, 64).unwrap();
        let val = serialize_examples(&split.val, &vocab, 64).unwrap();
        let cfg = run.model_config(vocab.size(), TableSchema::Open);
        let tm = fit::<f64>(&run, cfg, &train, &val, &vocab, true, false).unwrap();
        assert!(!tm.history.is_empty());
        let min_val =
            tm.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(tm.best_val_loss, min_val);
        assert_eq!(tm.history[tm.best_epoch].val_loss, min_val);
        let now = mean_lm_loss(&tm.model, &val, &vocab, true);
        assert!(
            (now - tm.best_val_loss).abs() < 1e-12,
            "restored val loss {now} vs best {}",
            tm.best_val_loss
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let run = micro_run_config();
        let split = micro_split();
        let vocab = build_vocab(&split.train, 1);
        let train = serialize_examples(&split.train, &vocab, 64).unwrap();
        let val = serialize_examples(&split.val, &vocab, 64).unwrap();
        let cfg = run.model_config(vocab.size(), TableSchema::Open);
        let a = fit::<f64>(&run, cfg.clone(), &train, &val, &vocab, true, false).unwrap();
        let b = fit::<f64>(&run, cfg, &train, &val, &vocab, true, false).unwrap();
        assert_eq!(a.history, b.history);
        for (pa, pb) in a.model.parameters().iter().zip(&b.model.parameters()) {
            for (x, y) in pa.value_vec().iter().zip(&pb.value_vec()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn divergent_run_stops_early() {
        let mut run = micro_run_config();
        run.train.lr = 50.0;
        run.train.epochs = 40;
        run.train.patience = 1;
        let split = micro_split();
        let vocab = build_vocab(&split.train, 1);
        let train = serialize_examples(&split.train, &vocab, 64).unwrap();
        let val = serialize_examples(&split.val, &vocab, 64).unwrap();
        let cfg = run.model_config(vocab.size(), TableSchema::Open);
        let tm = fit::<f64>(&run, cfg, &train, &val, &vocab, false, false).unwrap();
        let len = tm.history.len();
        if len < run.train.epochs {
            let last = tm.history[len - 1].epoch;
            assert!(last - tm.best_epoch > run.train.patience, "stop rule misfired");
        }
        assert!(len < run.train.epochs, "50.0 learning rate should not keep improving val loss");
    }

    #[test]
    fn tr_fit_runs_and_stays_finite() {
        let mut run = micro_run_config();
        run.tr.enabled = true;
        run.tr.rho = 0.4;
        let ds = synth_dataset(4, 2, 2, 6, 7, TableSchema::Open);
        let split =
            split_dataset(ds, &SplitSpec::Ratios { ratios: [2.0, 1.0, 1.0] }).unwrap();
        let vocab = build_vocab(&split.train, 1);
        let train = serialize_examples(&split.train, &vocab, 64).unwrap();
        let val = serialize_examples(&split.val, &vocab, 64).unwrap();
        let cfg = run.model_config(vocab.size(), TableSchema::Open);
        assert!(cfg.tr_hidden.is_some());
        let tm = fit::<f64>(&run, cfg, &train, &val, &vocab, true, true).unwrap();
        assert!(tm.history.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
    }

    #[test]
    fn drafts_round_trip_and_keys() {
        let drafts = vec![
            Draft { id: "a".into(), draft: "one two".into() },
            Draft { id: "b".into(), draft: String::new() },
        ];
        let dir = tempdir().unwrap();
        let path = dir.path().join("drafts.jsonl");
        save_drafts(&drafts, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"id\":\"a\""));
        assert!(text.lines().next().unwrap().contains("\"draft\":\"one two\""));
        assert_eq!(load_drafts(&path).unwrap(), drafts);
    }

    #[test]
    fn full_pipeline_smoke_tasd_and_wo_d() {
        let run = micro_run_config();
        let split = micro_split();
        let res = run_pipeline::<f64>(&split, &run, Mode::Tasd).unwrap();
        assert!(res.m2.is_some());
        assert_eq!(res.train_drafts.len(), split.train.len());
        assert_eq!(res.val_drafts.len(), split.val.len());
        let outs = infer(&res, &split.test, &run.decode).unwrap();
        assert_eq!(outs.len(), split.test.len());
        let res = run_pipeline::<f64>(&split, &run, Mode::WoD).unwrap();
        assert!(res.m2.is_none());
        let outs = infer(&res, &split.test, &run.decode).unwrap();
        for o in &outs {
            assert_eq!(o.draft, o.final_text, "single pass output must be the draft");
        }
    }

    #[test]
    fn pipeline_is_deterministic_end_to_end() {
        let run = micro_run_config();
        let split = micro_split();
        let a = run_pipeline::<f64>(&split, &run, Mode::Tasd).unwrap();
        let b = run_pipeline::<f64>(&split, &run, Mode::Tasd).unwrap();
        assert_eq!(a.train_drafts, b.train_drafts);
        let oa = infer(&a, &split.test, &run.decode).unwrap();
        let ob = infer(&b, &split.test, &run.decode).unwrap();
        assert_eq!(oa, ob);
    }

    #[test]
    fn m1_and_m2_share_no_tensors() {
        let run = micro_run_config();
        let split = micro_split();
        let res = run_pipeline::<f64>(&split, &run, Mode::Tasd).unwrap();
        let m2 = res.m2.as_ref().unwrap();
        for (_, p1) in res.m1.model.named_parameters() {
            for (_, p2) in m2.model.named_parameters() {
                assert_ne!(p1.id(), p2.id(), "passes must not alias parameters");
            }
        }
    }

    #[test]
    fn mixed_schema_split_is_rejected() {
        let mut split = micro_split();
        let other = synth_dataset(1, 1, 2, 6, 9, TableSchema::Numeric);
        split.test[0] = other.records[0].clone();
        let run = micro_run_config();
        let err = run_pipeline::<f64>(&split, &run, Mode::Tasd).err().unwrap().to_string();
        assert!(err.contains("schema"), "err: {err}");
    }
}
