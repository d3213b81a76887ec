//! In-memory table model: parsing, serialization, seeded permutation and
//! row sampling.
//!
//! Tables are immutable after construction; every operation here is a pure
//! function of its inputs. Cell equality is *semantic* — see
//! [`crate::exec::compare::cells_equal`] — never raw byte equality.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// One table cell: text, a finite number, or null.
///
/// Numbers are stored as `f64` and rendered in the canonical shortest form
/// that round-trips exactly (`8`, not `8.0`). Non-finite numeric text and
/// anything else stays text; empty cells are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Number(f64),
    Text(String),
    Null,
}

impl CellValue {
    /// Parse one raw cell. Empty string is null; finite numeric text becomes
    /// a number; everything else is kept verbatim as text.
    pub fn parse(raw: &str) -> CellValue {
        if raw.is_empty() {
            return CellValue::Null;
        }
        if let Ok(x) = raw.trim().parse::<f64>() {
            if x.is_finite() {
                return CellValue::number(x);
            }
        }
        CellValue::Text(raw.to_string())
    }

    /// Build a number cell, normalizing `-0.0` to `0.0` so canonical
    /// renderings are unique.
    pub fn number(x: f64) -> CellValue {
        debug_assert!(x.is_finite());
        CellValue::Number(if x == 0.0 { 0.0 } else { x })
    }

    pub fn text(s: impl Into<String>) -> CellValue {
        CellValue::Text(s.into())
    }

    /// Canonical rendering: null is empty, numbers use the shortest exact
    /// decimal form, text is verbatim.
    pub fn render(&self) -> String {
        match self {
            CellValue::Null => String::new(),
            CellValue::Number(x) => x.to_string(),
            CellValue::Text(s) => s.clone(),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CellValue::Null)
    }
}

/// A named 2-D grid of cells with a header row.
///
/// Rectangularity is enforced at construction: every row has exactly
/// `headers.len()` cells. Header names need not be unique; positional
/// identity is authoritative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<CellValue>>,
    ) -> Result<Table> {
        let name = name.into();
        if headers.is_empty() {
            return Err(Error::Corpus(format!("table '{name}' has no columns")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(Error::Corpus(format!(
                    "table '{name}' row {i} has {} cells, expected {}",
                    row.len(),
                    headers.len()
                )));
            }
        }
        Ok(Table { name, headers, rows })
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.headers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.headers.is_empty()
    }

    /// Extract one column as a single-column table named `name.header`.
    pub fn column_table(&self, col: usize) -> Result<Table> {
        if col >= self.headers.len() {
            return Err(Error::Corpus(format!(
                "column {col} out of range for table '{}'",
                self.name
            )));
        }
        Ok(Table {
            name: format!("{}.{}", self.name, self.headers[col]),
            headers: vec![self.headers[col].clone()],
            rows: self.rows.iter().map(|r| vec![r[col].clone()]).collect(),
        })
    }

    /// Digest of the exact arrangement: headers and cells in order. The
    /// table name is excluded — prompts never render it, so two tables with
    /// equal content are the same prompt.
    pub fn digest_exact(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"table-exact\x00");
        for hd in &self.headers {
            h.update(hd.as_bytes());
            h.update([1]);
        }
        for row in &self.rows {
            for cell in row {
                h.update(cell.render().as_bytes());
                h.update([2]);
            }
            h.update([3]);
        }
        short_hex(h)
    }

    /// Digest invariant under any row/column permutation: each column is
    /// reduced to (header, sorted cell multiset), then columns are sorted.
    /// The table name is excluded so renames do not matter either.
    pub fn digest_invariant(&self) -> String {
        let mut cols: Vec<String> = (0..self.headers.len())
            .map(|c| {
                let mut cells: Vec<String> =
                    self.rows.iter().map(|r| r[c].render()).collect();
                cells.sort_unstable();
                format!("{}\x01{}", self.headers[c], cells.join("\x02"))
            })
            .collect();
        cols.sort_unstable();
        let mut h = Sha256::new();
        h.update(b"table-invariant\x00");
        for c in &cols {
            h.update(c.as_bytes());
            h.update([4]);
        }
        short_hex(h)
    }
}

fn short_hex(h: Sha256) -> String {
    let out = h.finalize();
    let mut s = String::with_capacity(16);
    for b in &out[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// A seeded row/column rearrangement of a table shape.
///
/// `row_order[i]` is the original index of the row placed at position `i`;
/// likewise for `col_order`. Generated deterministically from the seed:
/// same (shape, seed) gives the same permutation on every platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permutation {
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
    pub seed: u64,
}

impl Permutation {
    pub fn from_seed(rows: usize, cols: usize, seed: u64) -> Permutation {
        let mut rng = SplitMix64::new(seed);
        let mut row_order: Vec<usize> = (0..rows).collect();
        rng.shuffle(&mut row_order);
        let mut col_order: Vec<usize> = (0..cols).collect();
        rng.shuffle(&mut col_order);
        Permutation { row_order, col_order, seed }
    }

    pub fn identity(rows: usize, cols: usize) -> Permutation {
        Permutation {
            row_order: (0..rows).collect(),
            col_order: (0..cols).collect(),
            seed: 0,
        }
    }
}

/// Reorder rows and columns of `t` with a seeded permutation. The original
/// table is untouched; the multiset of cells is preserved.
pub fn permute(t: &Table, seed: u64) -> (Table, Permutation) {
    let p = Permutation::from_seed(t.row_count(), t.column_count(), seed);
    let out = apply_permutation(t, &p);
    (out, p)
}

pub fn apply_permutation(t: &Table, p: &Permutation) -> Table {
    let headers = p.col_order.iter().map(|&c| t.headers[c].clone()).collect();
    let rows = p
        .row_order
        .iter()
        .map(|&r| p.col_order.iter().map(|&c| t.rows[r][c].clone()).collect())
        .collect();
    Table { name: t.name.clone(), headers, rows }
}

/// Draw `min(k, rows)` rows without replacement, preserving the original
/// relative order of the chosen rows. Headers are unchanged.
pub fn sample_rows(t: &Table, k: usize, seed: u64) -> Table {
    if k >= t.row_count() {
        return t.clone();
    }
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..t.row_count()).collect();
    rng.shuffle(&mut idx);
    let mut chosen: Vec<usize> = idx.into_iter().take(k).collect();
    chosen.sort_unstable();
    Table {
        name: t.name.clone(),
        headers: t.headers.clone(),
        rows: chosen.iter().map(|&r| t.rows[r].clone()).collect(),
    }
}

/// Header + row comparison behind the semantic cell rules. Headers must
/// match in order after trimming; rows match as sequences when
/// `row_order_sensitive`, otherwise as multisets.
pub fn tables_semantically_equal(a: &Table, b: &Table, row_order_sensitive: bool) -> bool {
    if a.column_count() != b.column_count() || a.row_count() != b.row_count() {
        return false;
    }
    let headers_match = a
        .headers
        .iter()
        .zip(&b.headers)
        .all(|(x, y)| x.trim() == y.trim());
    if !headers_match {
        return false;
    }
    crate::exec::compare::rows_equal(&a.rows, &b.rows, row_order_sensitive)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Counters for ragged-row repair during CSV ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvStats {
    pub padded_rows: usize,
    pub truncated_rows: usize,
}

/// Parse RFC-4180-style CSV with a header row. Short rows are padded with
/// nulls and long rows truncated (counted in [`CsvStats`]) because real
/// web-table corpora are dirty.
pub fn parse_table_csv_with_stats(bytes: &[u8], name: &str) -> Result<(Table, CsvStats)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Corpus(format!("'{name}' is not valid UTF-8: {e}")))?;
    if text.trim().is_empty() {
        return Err(Error::Corpus(format!("'{name}' is empty")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Corpus(format!("'{name}' header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Corpus(format!("'{name}' has no header row")));
    }
    let mut stats = CsvStats::default();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Corpus(format!("'{name}': {e}")))?;
        let mut row: Vec<CellValue> = record.iter().map(CellValue::parse).collect();
        if row.len() < headers.len() {
            stats.padded_rows += 1;
            row.resize(headers.len(), CellValue::Null);
        } else if row.len() > headers.len() {
            stats.truncated_rows += 1;
            row.truncate(headers.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Corpus(format!("'{name}' has a header but no data rows")));
    }
    Ok((Table { name: name.to_string(), headers, rows }, stats))
}

pub fn parse_table_csv(bytes: &[u8], name: &str) -> Result<Table> {
    parse_table_csv_with_stats(bytes, name).map(|(t, _)| t)
}

/// Write the table back out as CSV with canonical cell renderings.
pub fn serialize_table_csv(t: &Table) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(&t.headers).expect("csv header write");
    for row in &t.rows {
        w.write_record(row.iter().map(|c| c.render()))
            .expect("csv row write");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

/// Load every `*.csv` in a directory, sorted by file name; the file stem
/// becomes the table name. Unparseable files are errors, not skips.
pub fn load_corpus(dir: &Path) -> Result<Vec<Table>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Corpus(format!("cannot read corpus dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Corpus(format!(
            "no .csv files in corpus dir {}",
            dir.display()
        )));
    }
    let mut tables = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("table")
            .to_string();
        let bytes = std::fs::read(&p)?;
        tables.push(parse_table_csv(&bytes, &name)?);
    }
    Ok(tables)
}

/// Digest of a whole corpus: sorted (name, exact digest) pairs.
pub fn corpus_digest(tables: &[Table]) -> String {
    let entries: BTreeSet<String> = tables
        .iter()
        .map(|t| format!("{}\x00{}", t.name, t.digest_exact()))
        .collect();
    let mut h = Sha256::new();
    h.update(b"corpus\x00");
    for e in &entries {
        h.update(e.as_bytes());
        h.update([5]);
    }
    short_hex(h)
}

// ---------------------------------------------------------------------------
// Markdown
// ---------------------------------------------------------------------------

fn markdown_escape(s: &str) -> String {
    s.replace('|', "\\|").replace(['\r', '\n'], " ")
}

/// GitHub-style pipe table: one header row, one `---` separator row, one line
/// per data row, no trailing newline. Pipes inside cells are escaped as `\|`;
/// nulls render as empty cells. This format is pinned by golden tests.
pub fn serialize_table_markdown(t: &Table) -> String {
    let mut out = String::new();
    let header: Vec<String> = t.headers.iter().map(|h| markdown_escape(h)).collect();
    let _ = write!(out, "| {} |", header.join(" | "));
    let sep = vec!["---"; t.column_count()];
    let _ = write!(out, "\n| {} |", sep.join(" | "));
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|c| markdown_escape(&c.render())).collect();
        let _ = write!(out, "\n| {} |", cells.join(" | "));
    }
    out
}

/// Caps applied when a table is inserted into a prompt, to bound prompt
/// length. Rows beyond the cap are dropped with an explicit footer line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCaps {
    pub max_rows: usize,
    pub max_cols: usize,
}

impl Default for PromptCaps {
    fn default() -> Self {
        PromptCaps { max_rows: 50, max_cols: 20 }
    }
}

/// Markdown rendering for prompt insertion, truncated to `caps` with a
/// `… (k more rows)` footer when rows are dropped.
pub fn render_table_for_prompt(t: &Table, caps: PromptCaps) -> String {
    let cols = t.column_count().min(caps.max_cols);
    let rows = t.row_count().min(caps.max_rows);
    let view = Table {
        name: t.name.clone(),
        headers: t.headers[..cols].to_vec(),
        rows: t.rows[..rows]
            .iter()
            .map(|r| r[..cols].to_vec())
            .collect(),
    };
    let mut out = serialize_table_markdown(&view);
    if t.row_count() > rows {
        let _ = write!(out, "\n… ({} more rows)", t.row_count() - rows);
    }
    out
}

/// Parse a markdown pipe table produced by [`serialize_table_markdown`] or a
/// model answer in the same shape. Lines that are not pipe rows are ignored;
/// the first pipe block found is used.
pub fn parse_table_markdown(text: &str, name: &str) -> Result<Table> {
    let mut lines = Vec::new();
    let mut in_block = false;
    for line in text.lines() {
        let lt = line.trim();
        if lt.starts_with('|') {
            in_block = true;
            lines.push(lt);
        } else if in_block {
            break;
        }
    }
    if lines.len() < 2 {
        return Err(Error::UnparseableCompletion(format!(
            "no markdown table found in answer for '{name}'"
        )));
    }
    let headers = split_markdown_row(lines[0]);
    let mut rows = Vec::new();
    for line in &lines[2..] {
        let mut cells: Vec<CellValue> = split_markdown_row(line)
            .into_iter()
            .map(|c| CellValue::parse(&c))
            .collect();
        cells.resize(headers.len(), CellValue::Null);
        cells.truncate(headers.len());
        rows.push(cells);
    }
    Table::new(name, headers, rows)
}

fn split_markdown_row(line: &str) -> Vec<String> {
    let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = inner.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '\\' if chars.peek() == Some(&'|') => {
                cur.push('|');
                chars.next();
            }
            '|' => {
                cells.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    cells.push(cur.trim().to_string());
    cells
}
