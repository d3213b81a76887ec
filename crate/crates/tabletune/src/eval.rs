//! Benchmark evaluation harness: execution accuracy for code tasks, pooled
//! (micro-averaged) precision/recall/F1 for classification tasks.
//!
//! Benchmarks are JSONL files, one case per line, in one of three shapes:
//!
//! * code: `{"id","language","question","table":{"headers","rows"},
//!   "gold_result":{"headers","rows"},"gold_code"?}`
//! * error detection: `{"id","column":{"header","cells"},"gold_errors"}`
//! * schema matching: `{"id","table_a","table_b","gold_mappings"}`
//!
//! Evaluation is read-only with respect to models and benchmarks; with a
//! scripted model, repeated runs are identical.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::compare::results_equal;
use crate::exec::{CodeSnippet, ExecResult, ExecutorRegistry};
use crate::model::{DecodeParams, ModelClient, ModelRef};
use crate::table::{CellValue, Table};
use crate::task::{
    instantiate_generative, parse_completion, Completion, TaskContext, TaskFamily, TaskInstance,
    TaskKind, TemplateSet,
};

// ---------------------------------------------------------------------------
// Benchmark cases
// ---------------------------------------------------------------------------

/// Table payload in benchmark files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
}

impl TableSpec {
    pub fn to_table(&self, name: &str) -> Result<Table> {
        Table::new(name, self.headers.clone(), self.rows.clone())
    }

    pub fn from_table(t: &Table) -> TableSpec {
        TableSpec {
            headers: t.headers.clone(),
            rows: t.rows.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCase {
    pub id: String,
    pub language: String,
    pub question: String,
    pub table: TableSpec,
    pub gold_result: TableSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_code: Option<String>,
    /// Whether the gold result's row order is part of the answer.
    #[serde(default)]
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub header: String,
    pub cells: Vec<CellValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCase {
    pub id: String,
    pub column: ColumnSpec,
    pub gold_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaCase {
    pub id: String,
    pub table_a: TableSpec,
    pub table_b: TableSpec,
    pub gold_mappings: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchmarkCase {
    Code(CodeCase),
    ErrorDetection(ErrorCase),
    SchemaMatching(SchemaCase),
}

impl BenchmarkCase {
    pub fn id(&self) -> &str {
        match self {
            BenchmarkCase::Code(c) => &c.id,
            BenchmarkCase::ErrorDetection(c) => &c.id,
            BenchmarkCase::SchemaMatching(c) => &c.id,
        }
    }
}

/// Load a benchmark JSONL file.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkCase>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read benchmark {}: {e}", path.display())))?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: BenchmarkCase = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!(
                "benchmark {} line {}: {e}",
                path.display(),
                i + 1
            ))
        })?;
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(Error::Config(format!(
            "benchmark {} holds no cases",
            path.display()
        )));
    }
    Ok(cases)
}

pub fn save_benchmark(cases: &[BenchmarkCase], path: &Path) -> Result<()> {
    let mut out = String::new();
    for case in cases {
        out.push_str(&serde_json::to_string(case)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Task instance a code case is prompted as; shared with the scripted-model
/// builders so eval prompts and scripts agree on fingerprints.
pub fn code_case_instance(case: &CodeCase) -> Result<TaskInstance> {
    let table = case.table.to_table(&case.id)?;
    instantiate_generative(
        &TaskFamily::NlToCode {
            language: case.language.clone(),
        },
        &table,
        0,
        TaskContext::Question(case.question.clone()),
        &TemplateSet::default(),
    )
}

pub fn error_case_instance(case: &ErrorCase) -> Result<TaskInstance> {
    let table = Table::new(
        &case.id,
        vec![case.column.header.clone()],
        case.column.cells.iter().map(|c| vec![c.clone()]).collect(),
    )?;
    let templates = TemplateSet::default();
    let kind = TaskKind::classification(TaskFamily::ErrorDetection);
    let mut inst = instantiate_generative(
        &TaskFamily::ErrorDetection,
        &table,
        0,
        TaskContext::None,
        &templates,
    )?;
    inst.kind = kind.clone();
    inst.template = templates.for_kind(&kind).to_string();
    inst.rerender();
    Ok(inst)
}

pub fn schema_case_instance(case: &SchemaCase) -> Result<TaskInstance> {
    let a = case.table_a.to_table(&format!("{}-a", case.id))?;
    let b = case.table_b.to_table(&format!("{}-b", case.id))?;
    let templates = TemplateSet::default();
    let kind = TaskKind::classification(TaskFamily::SchemaMatching);
    let mut inst = instantiate_generative(
        &TaskFamily::SchemaMatching,
        &a,
        0,
        TaskContext::None,
        &templates,
    )?;
    inst.kind = kind.clone();
    inst.template = templates.for_kind(&kind).to_string();
    inst.tables = vec![a, b];
    inst.rerender();
    Ok(inst)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Set precision/recall/F1. An empty prediction has precision 1 by
/// convention, an empty gold set recall 1; F1 is 0 when both components
/// are 0.
pub fn precision_recall_f1(
    predicted: &BTreeSet<String>,
    gold: &BTreeSet<String>,
) -> (f64, f64, f64) {
    let tp = predicted.intersection(gold).count();
    let fp = predicted.len() - tp;
    let fn_ = gold.len() - tp;
    prf_from_counts(tp, fp, fn_)
}

/// Same metric from pooled counts (micro-averaging over cases).
pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub predicted: String,
    pub matched: bool,
    /// Per-case contribution to pooled counts (classification only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Aggregate {
    ExecutionAccuracy {
        execution_accuracy: f64,
        matched: usize,
        total: usize,
    },
    F1 {
        precision: f64,
        recall: f64,
        f1: f64,
        tp: usize,
        fp: usize,
        #[serde(rename = "fn")]
        fn_: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub aggregate: Aggregate,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    /// Flat per-case CSV summary with the aggregate in a trailing comment
    /// row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["id", "matched", "predicted"]).expect("csv");
        for case in &self.cases {
            w.write_record([
                case.id.as_str(),
                if case.matched { "1" } else { "0" },
                case.predicted.as_str(),
            ])
            .expect("csv");
        }
        let mut out = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        match &self.aggregate {
            Aggregate::ExecutionAccuracy {
                execution_accuracy,
                matched,
                total,
            } => {
                out.push_str(&format!(
                    "# execution_accuracy={execution_accuracy},matched={matched},total={total}\n"
                ));
            }
            Aggregate::F1 {
                precision,
                recall,
                f1,
                ..
            } => {
                out.push_str(&format!(
                    "# precision={precision},recall={recall},f1={f1}\n"
                ));
            }
        }
        out
    }

    /// Recompute the aggregate from the per-case records; must agree with
    /// the stored aggregate.
    pub fn recompute(&self) -> Aggregate {
        match &self.aggregate {
            Aggregate::ExecutionAccuracy { .. } => {
                let matched = self.cases.iter().filter(|c| c.matched).count();
                let total = self.cases.len();
                Aggregate::ExecutionAccuracy {
                    execution_accuracy: if total == 0 {
                        0.0
                    } else {
                        matched as f64 / total as f64
                    },
                    matched,
                    total,
                }
            }
            Aggregate::F1 { .. } => {
                let (mut tp, mut fp, mut fn_) = (0, 0, 0);
                for c in &self.cases {
                    if let Some((a, b, d)) = c.counts {
                        tp += a;
                        fp += b;
                        fn_ += d;
                    }
                }
                let (precision, recall, f1) = prf_from_counts(tp, fp, fn_);
                Aggregate::F1 {
                    precision,
                    recall,
                    f1,
                    tp,
                    fp,
                    fn_,
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn gold_result(case: &CodeCase) -> Result<ExecResult> {
    let table = case.gold_result.to_table("gold")?;
    Ok(ExecResult::Table {
        table,
        ordered: case.ordered,
    }
    .collapse())
}

/// Execution accuracy of a model on code cases: prompt, parse the code,
/// execute it on the case table, and compare against the gold result
/// values. Per-case failures (bad parse, execution error, transport error)
/// count as unmatched, never as harness errors.
pub fn evaluate_execution_accuracy(
    client: &ModelClient,
    model: &ModelRef,
    cases: &[BenchmarkCase],
    registry: &ExecutorRegistry,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    let mut matched_count = 0usize;
    for case in cases {
        let code_case = match case {
            BenchmarkCase::Code(c) => c,
            other => {
                return Err(Error::Config(format!(
                    "case '{}' is not a code case",
                    other.id()
                )))
            }
        };
        if !registry.knows(&code_case.language) {
            return Err(Error::Registry(code_case.language.clone()));
        }
        let instance = code_case_instance(code_case)?;
        let (predicted, matched) =
            match client.complete(model, &instance.prompt(DecodeParams::validation())) {
                Ok(raw) => match parse_completion(&instance.kind, &raw) {
                    Ok(Completion::Code { source, .. }) => {
                        let snippet = CodeSnippet::new(code_case.language.clone(), source.clone());
                        let table = code_case.table.to_table(&code_case.id)?;
                        let result = registry.execute(&snippet, &table)?;
                        let ok = results_equal(&result, &gold_result(code_case)?);
                        (source, ok)
                    }
                    Ok(other) => (other.render(), false),
                    Err(_) => (raw, false),
                },
                Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
                Err(e) => (format!("transport error: {e}"), false),
            };
        if matched {
            matched_count += 1;
        }
        records.push(CaseRecord {
            id: code_case.id.clone(),
            predicted,
            matched,
            counts: None,
        });
    }
    let total = records.len();
    Ok(EvalReport {
        model_id: model.id.clone(),
        aggregate: Aggregate::ExecutionAccuracy {
            execution_accuracy: if total == 0 {
                0.0
            } else {
                matched_count as f64 / total as f64
            },
            matched: matched_count,
            total,
        },
        cases: records,
    })
}

/// Harness self-test: run the bundled gold programs as if a model had
/// produced them. Every case must match its gold result, so anything below
/// 1.0 points at the executor or the fixtures.
pub fn execution_self_test(
    cases: &[BenchmarkCase],
    registry: &ExecutorRegistry,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    let mut matched_count = 0usize;
    for case in cases {
        let code_case = match case {
            BenchmarkCase::Code(c) => c,
            other => {
                return Err(Error::Config(format!(
                    "case '{}' is not a code case",
                    other.id()
                )))
            }
        };
        let gold_code = code_case.gold_code.as_deref().ok_or_else(|| {
            Error::Config(format!("case '{}' bundles no gold_code", code_case.id))
        })?;
        let snippet = CodeSnippet::new(code_case.language.clone(), gold_code);
        let table = code_case.table.to_table(&code_case.id)?;
        let result = registry.execute(&snippet, &table)?;
        let matched = results_equal(&result, &gold_result(code_case)?);
        if matched {
            matched_count += 1;
        }
        records.push(CaseRecord {
            id: code_case.id.clone(),
            predicted: gold_code.to_string(),
            matched,
            counts: None,
        });
    }
    let total = records.len();
    Ok(EvalReport {
        model_id: "self-test".to_string(),
        aggregate: Aggregate::ExecutionAccuracy {
            execution_accuracy: if total == 0 {
                0.0
            } else {
                matched_count as f64 / total as f64
            },
            matched: matched_count,
            total,
        },
        cases: records,
    })
}

fn normalize_value(s: &str) -> String {
    let t = s.trim();
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => CellValue::number(x).render(),
        _ => t.to_string(),
    }
}

/// Pooled classification evaluation. Predicted and gold answer sets are
/// accumulated across all cases and micro-averaged into one
/// precision/recall/F1 triple; per-case records keep their own counts so
/// the aggregate stays recomputable.
pub fn evaluate_classification(
    client: &ModelClient,
    model: &ModelRef,
    cases: &[BenchmarkCase],
) -> Result<EvalReport> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut records = Vec::new();
    for case in cases {
        let (instance, gold): (TaskInstance, BTreeSet<String>) = match case {
            BenchmarkCase::ErrorDetection(c) => (
                error_case_instance(c)?,
                c.gold_errors.iter().map(|v| normalize_value(v)).collect(),
            ),
            BenchmarkCase::SchemaMatching(c) => (
                schema_case_instance(c)?,
                c.gold_mappings
                    .iter()
                    .map(|p| format!("{}→{}", p[0].trim(), p[1].trim()))
                    .collect(),
            ),
            BenchmarkCase::Code(c) => {
                return Err(Error::Config(format!(
                    "case '{}' is a code case, not classification",
                    c.id
                )))
            }
        };
        let (predicted_render, predicted): (String, BTreeSet<String>) =
            match client.complete(model, &instance.prompt(DecodeParams::validation())) {
                Ok(raw) => match parse_completion(&instance.kind, &raw) {
                    Ok(Completion::ErrorSet { values }) => (
                        Completion::ErrorSet {
                            values: values.clone(),
                        }
                        .render(),
                        values.iter().map(|v| normalize_value(v)).collect(),
                    ),
                    Ok(Completion::MappingList { pairs }) => (
                        Completion::MappingList {
                            pairs: pairs.clone(),
                        }
                        .render(),
                        pairs
                            .iter()
                            .map(|(a, b)| format!("{}→{}", a.trim(), b.trim()))
                            .collect(),
                    ),
                    Ok(other) => (other.render(), BTreeSet::new()),
                    Err(_) => (raw, BTreeSet::new()),
                },
                Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
                Err(e) => (format!("transport error: {e}"), BTreeSet::new()),
            };
        let case_tp = predicted.intersection(&gold).count();
        let case_fp = predicted.len() - case_tp;
        let case_fn = gold.len() - case_tp;
        tp += case_tp;
        fp += case_fp;
        fn_ += case_fn;
        records.push(CaseRecord {
            id: case.id().to_string(),
            predicted: predicted_render,
            matched: case_fp == 0 && case_fn == 0,
            counts: Some((case_tp, case_fp, case_fn)),
        });
    }
    let (precision, recall, f1) = prf_from_counts(tp, fp, fn_);
    Ok(EvalReport {
        model_id: model.id.clone(),
        aggregate: Aggregate::F1 {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        },
        cases: records,
    })
}
