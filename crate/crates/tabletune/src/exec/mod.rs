//! Pluggable code execution over in-memory tables.
//!
//! Two interpreters are always registered: `sql-subset` (a single-table
//! SELECT dialect) and `table-dsl` (a pipeline language). Both bind the
//! input table to the name `t`, never panic on bad programs (all failures
//! become [`ExecResult::Error`]), and enforce a timeout and an output-row
//! cap. A sandboxed subprocess adapter can be registered for external
//! engines. Normative grammars live in `docs/sql-subset.ebnf` and
//! `docs/table-dsl.ebnf`.

pub mod compare;
pub mod dsl;
pub mod sql;
pub mod subprocess;

pub use dsl::execute_table_dsl;
pub use sql::execute_sql_subset;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{CellValue, Table};

pub const LANG_SQL: &str = "sql-subset";
pub const LANG_DSL: &str = "table-dsl";

/// A program paired with the language tag it should be executed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub language: String,
    pub source: String,
}

impl CodeSnippet {
    pub fn new(language: impl Into<String>, source: impl Into<String>) -> CodeSnippet {
        CodeSnippet {
            language: language.into(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecPhase {
    Parse,
    Runtime,
    Timeout,
}

/// Outcome of executing a snippet on a table. `ordered` marks results whose
/// row order is a promise of the program (an explicit sort stage), which
/// [`compare::results_equal`] uses to pick sequence vs multiset comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExecResult {
    Table { table: Table, ordered: bool },
    Scalar { value: CellValue },
    Error { phase: ExecPhase, message: String },
}

impl ExecResult {
    pub fn parse_error(msg: impl Into<String>) -> ExecResult {
        ExecResult::Error {
            phase: ExecPhase::Parse,
            message: msg.into(),
        }
    }

    pub fn runtime_error(msg: impl Into<String>) -> ExecResult {
        ExecResult::Error {
            phase: ExecPhase::Runtime,
            message: msg.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, ExecResult::Error { .. })
    }

    /// Collapse a 1×1 table to a scalar; leave anything else untouched.
    pub fn collapse(self) -> ExecResult {
        match self {
            ExecResult::Table { table, .. }
                if table.row_count() == 1 && table.column_count() == 1 =>
            {
                ExecResult::Scalar {
                    value: table.rows[0][0].clone(),
                }
            }
            other => other,
        }
    }

    /// Short stable rendering for validation-round records.
    pub fn summary(&self) -> String {
        match self {
            ExecResult::Scalar { value } => format!("scalar:{}", value.render()),
            ExecResult::Table { table, ordered } => format!(
                "table:{}x{}:{}:{}",
                table.row_count(),
                table.column_count(),
                ordered,
                table.digest_exact()
            ),
            ExecResult::Error { phase, message } => format!("error:{phase:?}:{message}"),
        }
    }
}

/// Per-executor resource limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecLimits {
    pub timeout_ms: u64,
    pub max_output_rows: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            timeout_ms: 2_000,
            max_output_rows: 10_000,
        }
    }
}

/// Deadline handed to interpreters; checked inside evaluation loops.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    start: Instant,
    budget: Duration,
}

impl Deadline {
    pub fn new(limits: ExecLimits) -> Deadline {
        Deadline {
            start: Instant::now(),
            budget: Duration::from_millis(limits.timeout_ms),
        }
    }

    pub fn exceeded(&self) -> bool {
        self.start.elapsed() > self.budget
    }
}

pub trait Executor: Send + Sync {
    fn execute(&self, source: &str, table: &Table, limits: ExecLimits) -> ExecResult;

    /// Whether the program promises an output row order (an explicit sort).
    fn has_explicit_ordering(&self, source: &str) -> bool;
}

/// Language tag → executor map. `sql-subset` and `table-dsl` are always
/// present in [`ExecutorRegistry::builtin`].
pub struct ExecutorRegistry {
    executors: BTreeMap<String, Box<dyn Executor>>,
    limits: BTreeMap<String, ExecLimits>,
    default_limits: ExecLimits,
}

impl ExecutorRegistry {
    pub fn builtin() -> ExecutorRegistry {
        let mut r = ExecutorRegistry {
            executors: BTreeMap::new(),
            limits: BTreeMap::new(),
            default_limits: ExecLimits::default(),
        };
        r.register(LANG_SQL, Box::new(sql::SqlExecutor));
        r.register(LANG_DSL, Box::new(dsl::DslExecutor));
        r
    }

    pub fn register(&mut self, language: &str, executor: Box<dyn Executor>) {
        self.executors.insert(language.to_string(), executor);
    }

    pub fn set_limits(&mut self, language: &str, limits: ExecLimits) {
        self.limits.insert(language.to_string(), limits);
    }

    pub fn languages(&self) -> Vec<String> {
        self.executors.keys().cloned().collect()
    }

    pub fn knows(&self, language: &str) -> bool {
        self.executors.contains_key(language)
    }

    fn limits_for(&self, language: &str) -> ExecLimits {
        self.limits
            .get(language)
            .copied()
            .unwrap_or(self.default_limits)
    }

    /// Whether `source` in `language` promises an output row order.
    pub fn has_explicit_ordering(&self, snippet: &CodeSnippet) -> Result<bool> {
        let ex = self
            .executors
            .get(&snippet.language)
            .ok_or_else(|| Error::Registry(snippet.language.clone()))?;
        Ok(ex.has_explicit_ordering(&snippet.source))
    }

    /// Dispatch a snippet. The only raised error is an unregistered
    /// language; every execution failure comes back as [`ExecResult::Error`].
    pub fn execute(&self, snippet: &CodeSnippet, table: &Table) -> Result<ExecResult> {
        let ex = self
            .executors
            .get(&snippet.language)
            .ok_or_else(|| Error::Registry(snippet.language.clone()))?;
        let limits = self.limits_for(&snippet.language);
        let result = ex.execute(&snippet.source, table, limits);
        Ok(enforce_row_cap(result, limits))
    }
}

fn enforce_row_cap(result: ExecResult, limits: ExecLimits) -> ExecResult {
    match &result {
        ExecResult::Table { table, .. } if table.row_count() > limits.max_output_rows => {
            ExecResult::runtime_error(format!(
                "result has {} rows, exceeding the {}-row cap",
                table.row_count(),
                limits.max_output_rows
            ))
        }
        _ => result,
    }
}

/// Convenience wrapper matching the registry dispatch.
pub fn execute(snippet: &CodeSnippet, table: &Table, registry: &ExecutorRegistry) -> Result<ExecResult> {
    registry.execute(snippet, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::parse_table_csv;

    #[test]
    fn unregistered_language_is_a_raised_error() {
        let registry = ExecutorRegistry::builtin();
        let t = parse_table_csv(b"a\n1\n", "t").unwrap();
        let err = registry
            .execute(&CodeSnippet::new("cobol", "PERFORM"), &t)
            .unwrap_err();
        assert!(matches!(err, Error::Registry(_)));
    }

    #[test]
    fn builtin_languages_present() {
        let registry = ExecutorRegistry::builtin();
        assert!(registry.knows(LANG_SQL));
        assert!(registry.knows(LANG_DSL));
    }

    #[test]
    fn row_cap_enforced() {
        let mut registry = ExecutorRegistry::builtin();
        registry.set_limits(
            LANG_SQL,
            ExecLimits {
                timeout_ms: 1_000,
                max_output_rows: 2,
            },
        );
        let t = parse_table_csv(b"a\n1\n2\n3\n", "t").unwrap();
        let r = registry
            .execute(&CodeSnippet::new(LANG_SQL, "SELECT a FROM t"), &t)
            .unwrap();
        assert!(r.is_error());
    }
}
