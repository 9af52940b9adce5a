//! Dataset records, JSON-lines persistence, deterministic splits, and the
//! synthetic table generator used for desk-scale training runs.
//!
//! One record per line: {"id", "schema", "meta"{...}, "rows":[[{"views":{...}}]],
//! "target"}. `rows` is row-major; every cell carries one string per view of
//! its schema.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TasdError};
use crate::table::{serialize_text, Cell, Table, TableSchema};

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    pub table: Table,
    /// Reference description Y; may be empty for generate-only records.
    pub target: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCell {
    views: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    schema: TableSchema,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    rows: Vec<Vec<RawCell>>,
    #[serde(default)]
    target: String,
}

fn cell_from_raw(raw: &RawCell, schema: TableSchema, id: &str) -> Result<Cell> {
    let names = schema.view_names();
    let mut views = Vec::with_capacity(names.len());
    for name in names {
        match raw.views.get(*name) {
            Some(v) => views.push(v.clone()),
            None => {
                return Err(TasdError::Table(format!(
                    "record {id}: cell missing view {name:?}"
                )))
            }
        }
    }
    for k in raw.views.keys() {
        if !names.contains(&k.as_str()) {
            return Err(TasdError::Table(format!(
                "record {id}: cell has unknown view {k:?} for schema"
            )));
        }
    }
    Ok(Cell::new(schema, views))
}

fn record_from_raw(raw: RawRecord) -> Result<DatasetRecord> {
    let id = raw.id;
    let mut rows = Vec::with_capacity(raw.rows.len());
    for r in &raw.rows {
        let mut row = Vec::with_capacity(r.len());
        for c in r {
            row.push(cell_from_raw(c, raw.schema, &id)?);
        }
        rows.push(row);
    }
    let table = Table::new(raw.schema, rows, raw.meta)
        .map_err(|e| TasdError::Table(format!("record {id}: {e}")))?;
    Ok(DatasetRecord { id, table, target: raw.target })
}

/// Loads a JSON-lines dataset. `totto_filter` drops (not errors) tables with
/// m >= 8 or n >= 8 after validation.
pub fn load_dataset(path: &Path, totto_filter: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| TasdError::dataset(path.display().to_string(), lineno, e.to_string()))?;
        let rec = record_from_raw(raw)
            .map_err(|e| TasdError::dataset(path.display().to_string(), lineno, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(TasdError::dataset(path.display().to_string(), lineno, format!("duplicate id {:?}", rec.id)));
        }
        if totto_filter && (rec.table.m() >= 8 || rec.table.n() >= 8) {
            continue;
        }
        records.push(rec);
    }
    Ok(Dataset { records })
}

fn raw_from_record(rec: &DatasetRecord) -> RawRecord {
    let schema = rec.table.schema();
    let names = schema.view_names();
    let rows = (0..rec.table.m())
        .map(|i| {
            (0..rec.table.n())
                .map(|j| {
                    let cell = rec.table.cell(i, j);
                    let views = names
                        .iter()
                        .zip(cell.views())
                        .map(|(k, v)| (k.to_string(), v.clone()))
                        .collect();
                    RawCell { views }
                })
                .collect()
        })
        .collect();
    RawRecord {
        id: rec.id.clone(),
        schema,
        meta: rec.table.meta().clone(),
        rows,
        target: rec.target.clone(),
    }
}

/// Writes one JSON object per line; key order is fixed, so equal datasets
/// produce byte-identical files.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for rec in &ds.records {
        let raw = raw_from_record(rec);
        let line = serde_json::to_string(&raw)
            .map_err(|e| TasdError::Dataset { path: path.display().to_string(), line: 0, msg: e.to_string() })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    f.write_all(&out).map_err(|e| TasdError::io(path.display().to_string(), e))?;
    Ok(())
}

/// How to carve a dataset into train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    /// Proportions, normalized; records are assigned in file order.
    Ratios { ratios: [f64; 3] },
    /// Explicit id lists; together they must cover every record exactly once.
    Ids { train_ids: Vec<String>, val_ids: Vec<String>, test_ids: Vec<String> },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios { ratios: [8.0, 1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitDataset {
    pub train: Vec<DatasetRecord>,
    pub val: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

pub fn split_dataset(ds: Dataset, spec: &SplitSpec) -> Result<SplitDataset> {
    match spec {
        SplitSpec::Ratios { ratios } => {
            let sum: f64 = ratios.iter().sum();
            if sum.is_nan() || sum <= 0.0 || ratios.iter().any(|r| *r < 0.0) {
                return Err(TasdError::Config(format!("bad split ratios {ratios:?}")));
            }
            let n = ds.records.len();
            let n_train = (n as f64 * ratios[0] / sum).floor() as usize;
            let n_val = (n as f64 * ratios[1] / sum).floor() as usize;
            let mut it = ds.records.into_iter();
            let train: Vec<_> = it.by_ref().take(n_train).collect();
            let val: Vec<_> = it.by_ref().take(n_val).collect();
            let test: Vec<_> = it.collect();
            Ok(SplitDataset { train, val, test })
        }
        SplitSpec::Ids { train_ids, val_ids, test_ids } => {
            let mut assign: BTreeMap<&str, usize> = BTreeMap::new();
            for (k, ids) in [train_ids, val_ids, test_ids].into_iter().enumerate() {
                for id in ids {
                    if assign.insert(id.as_str(), k).is_some() {
                        return Err(TasdError::Config(format!(
                            "id {id:?} appears in more than one split"
                        )));
                    }
                }
            }
            let mut out = SplitDataset::default();
            for rec in ds.records {
                match assign.get(rec.id.as_str()) {
                    Some(0) => out.train.push(rec),
                    Some(1) => out.val.push(rec),
                    Some(2) => out.test.push(rec),
                    _ => {
                        return Err(TasdError::Config(format!(
                            "record {:?} is missing from the split id lists",
                            rec.id
                        )))
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Deterministic synthetic dataset: every cell view (and the metadata) is a
/// random word from a fixed pool, and the target is exactly the template
/// serialization of the table, so the generation task has a known-correct
/// answer and a small closed vocabulary.
pub fn synth_dataset(
    n_records: usize,
    m: usize,
    n: usize,
    word_pool: usize,
    seed: u64,
    schema: TableSchema,
) -> Dataset {
    assert!(n_records >= 1 && m >= 1 && n >= 1 && word_pool >= 1, "all sizes must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..word_pool));
    let mut records = Vec::with_capacity(n_records);
    for k in 0..n_records {
        let mut meta = BTreeMap::new();
        for key in schema.meta_keys() {
            let v = word(&mut rng);
            meta.insert(key.to_string(), v);
        }
        let rows: Vec<Vec<Cell>> = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let views =
                            schema.view_names().iter().map(|_| word(&mut rng)).collect();
                        Cell::new(schema, views)
                    })
                    .collect()
            })
            .collect();
        let table = Table::new(schema, rows, meta).expect("synthetic table is well-formed");
        let target = serialize_text(&table);
        records.push(DatasetRecord { id: format!("synth-{k:04}"), table, target });
    }
    Dataset { records }
}
