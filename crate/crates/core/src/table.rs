//! Table data model and the two template serializers that turn a table into
//! the flat text prefix the first-pass model reads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TasdError};
use crate::text::{split_text, TokenSeq, Vocab, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableSchema {
    /// Scientific-results style: each cell carries metric, row header,
    /// column header, and value views.
    Numeric,
    /// Wikipedia style: each cell carries header and value views.
    Open,
}

impl TableSchema {
    pub fn view_names(self) -> &'static [&'static str] {
        match self {
            TableSchema::Numeric => &["metric", "row_header", "col_header", "value"],
            TableSchema::Open => &["header", "value"],
        }
    }

    pub fn view_count(self) -> usize {
        self.view_names().len()
    }

    pub fn meta_keys(self) -> &'static [&'static str] {
        match self {
            TableSchema::Numeric => &["table_id", "caption"],
            TableSchema::Open => &["page_title", "section_title", "section_text"],
        }
    }
}

/// One cell's views, stored in the schema's declared order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    views: Vec<String>,
}

impl Cell {
    pub fn new(schema: TableSchema, views: Vec<String>) -> Cell {
        assert_eq!(
            views.len(),
            schema.view_count(),
            "cell wants {} views for this schema, got {}",
            schema.view_count(),
            views.len()
        );
        Cell { views }
    }

    pub fn numeric(
        metric: impl Into<String>,
        row_header: impl Into<String>,
        col_header: impl Into<String>,
        value: impl Into<String>,
    ) -> Cell {
        Cell { views: vec![metric.into(), row_header.into(), col_header.into(), value.into()] }
    }

    pub fn open(header: impl Into<String>, value: impl Into<String>) -> Cell {
        Cell { views: vec![header.into(), value.into()] }
    }

    pub fn views(&self) -> &[String] {
        &self.views
    }

    pub fn view(&self, k: usize) -> &str {
        &self.views[k]
    }
}

/// Rectangular m×n grid of cells plus schema-specific metadata.
#[derive(Debug, Clone)]
pub struct Table {
    schema: TableSchema,
    m: usize,
    n: usize,
    cells: Vec<Cell>,
    meta: BTreeMap<String, String>,
}

impl Table {
    /// Validates rectangularity and metadata keys. Missing required meta
    /// keys become empty strings; unknown keys are rejected.
    pub fn new(
        schema: TableSchema,
        rows: Vec<Vec<Cell>>,
        meta: BTreeMap<String, String>,
    ) -> Result<Table> {
        let m = rows.len();
        if m == 0 {
            return Err(TasdError::Table("table has no rows".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(TasdError::Table("table has no columns".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(TasdError::Table(format!(
                    "ragged rows: row 0 has {n} cells, row {i} has {}",
                    row.len()
                )));
            }
            for cell in row {
                if cell.views.len() != schema.view_count() {
                    return Err(TasdError::Table(format!(
                        "cell in row {i} has {} views, schema wants {}",
                        cell.views.len(),
                        schema.view_count()
                    )));
                }
            }
        }
        let mut full_meta = meta;
        for key in full_meta.keys() {
            if !schema.meta_keys().contains(&key.as_str()) {
                return Err(TasdError::Table(format!("unknown meta key {key:?} for this schema")));
            }
        }
        for key in schema.meta_keys() {
            full_meta.entry(key.to_string()).or_default();
        }
        Ok(Table { schema, m, n, cells: rows.into_iter().flatten().collect(), meta: full_meta })
    }

    pub fn schema(&self) -> TableSchema {
        self.schema
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        assert!(i < self.m && j < self.n, "cell ({i},{j}) out of range for {}x{}", self.m, self.n);
        &self.cells[i * self.n + j]
    }

    /// Row-major cell order.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn meta_value(&self, key: &str) -> &str {
        self.meta.get(key).map(|s| s.as_str()).unwrap_or_else(|| {
            panic!("meta key {key:?} absent; Table::new guarantees required keys")
        })
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }
}

/// Serialized table text plus its tokenization.
#[derive(Debug, Clone)]
pub struct SerializedTable {
    pub text: String,
    pub token_seq: TokenSeq,
}

/// Collapses runs of spaces left by empty template slots and trims the ends.
fn normalize_spaces(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev_space = true; // leading spaces dropped
    for ch in s.chars() {
        if ch == ' ' {
            if !prev_space {
                out.push(' ');
            }
            prev_space = true;
        } else {
            out.push(ch);
            prev_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Template text for either schema: intro sentence, then one clause per
/// cell in row-major order, comma-separated, closed with a period.
pub fn serialize_text(t: &Table) -> String {
    let intro = match t.schema() {
        TableSchema::Numeric => {
            format!("{} shows {}. ", t.meta_value("table_id"), t.meta_value("caption"))
        }
        TableSchema::Open => format!(
            "As {} {}, {}. ",
            t.meta_value("page_title"),
            t.meta_value("section_title"),
            t.meta_value("section_text")
        ),
    };
    let clauses: Vec<String> = t
        .cells()
        .iter()
        .map(|c| match t.schema() {
            TableSchema::Numeric => format!(
                "{} of {} {} is {}",
                c.view(0), // metric
                c.view(1), // row header
                c.view(2), // col header
                c.view(3), // value
            ),
            TableSchema::Open => format!("{} is {}", c.view(0), c.view(1)),
        })
        .collect();
    normalize_spaces(&format!("{intro}{}.", clauses.join(", ")))
}

fn serialize_with(t: &Table, expect: TableSchema, vocab: &Vocab) -> Result<SerializedTable> {
    if t.schema() != expect {
        return Err(TasdError::Table(format!(
            "serializer for {expect:?} schema called on a {:?} table",
            t.schema()
        )));
    }
    let text = serialize_text(t);
    let token_seq = vocab.tokenize(&text);
    Ok(SerializedTable { text, token_seq })
}

pub fn serialize_numeric(t: &Table, vocab: &Vocab) -> Result<SerializedTable> {
    serialize_with(t, TableSchema::Numeric, vocab)
}

pub fn serialize_open(t: &Table, vocab: &Vocab) -> Result<SerializedTable> {
    serialize_with(t, TableSchema::Open, vocab)
}

/// Fixed-length multi-view token sequence of one cell: each view tokenized,
/// truncated or right-padded to `view_len`, concatenated in schema order;
/// the result always has length view_count · view_len.
pub fn cell_multiview_sequence(c: &Cell, vocab: &Vocab, view_len: usize) -> TokenSeq {
    assert!(view_len >= 1, "view_len must be at least 1");
    let mut ids = Vec::with_capacity(c.views().len() * view_len);
    for view in c.views() {
        let mut view_ids: Vec<u32> = split_text(view)
            .into_iter()
            .take(view_len)
            .map(|tok| vocab.id(&tok).unwrap_or(crate::text::UNK_ID))
            .collect();
        view_ids.resize(view_len, PAD_ID);
        ids.extend(view_ids);
    }
    TokenSeq::from_ids(ids)
}
