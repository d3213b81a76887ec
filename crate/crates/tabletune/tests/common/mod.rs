#![allow(dead_code)]

//! Shared test support: the independent reference evaluator for the SQL
//! differential, random program/table generators, fixture-corpus
//! generation, and golden-pair loading.

pub mod gen;
pub mod reference;

use std::path::Path;

use tabletune::rng::SplitMix64;
use tabletune::table::Table;

/// Write a deterministic fixture corpus of CSV tables. Every column's
/// content is unique across the corpus so candidate tasks never collide.
pub fn generate_corpus(dir: &Path, tables: usize, cols: usize, rows: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = SplitMix64::new(seed);
    for t in 0..tables {
        let mut csv = String::new();
        let headers: Vec<String> = (0..cols).map(|c| format!("col{c}")).collect();
        csv.push_str(&headers.join(","));
        csv.push('\n');
        for r in 0..rows {
            let row: Vec<String> = (0..cols)
                .map(|c| {
                    if c % 2 == 0 {
                        // Text column: unique token per (table, column, row).
                        format!("w{t}_{c}_{r}_{}", rng.next_below(1000))
                    } else {
                        // Numeric column.
                        format!("{}", (t * 1000 + c * 100 + r) as f64 + 0.5)
                    }
                })
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("t{t:03}.csv")), csv).unwrap();
    }
}

/// A (sql, dsl) pair from the golden suites.
#[derive(Debug, serde::Deserialize)]
pub struct GoldenPair {
    pub name: String,
    pub sql: String,
    pub dsl: String,
}

#[derive(Debug, serde::Deserialize)]
pub struct GoldenSuite {
    pub fixture: tabletune::eval::TableSpec,
    pub pairs: Vec<GoldenPair>,
}

pub fn load_golden_suite(name: &str) -> (Table, Vec<GoldenPair>) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/golden")
        .join(name);
    let text = std::fs::read_to_string(&path).unwrap();
    let suite: GoldenSuite = serde_json::from_str(&text).unwrap();
    (suite.fixture.to_table("fixture").unwrap(), suite.pairs)
}

pub fn fixtures_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
