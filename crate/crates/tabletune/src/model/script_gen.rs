//! Builders for scripted model files: oracles that always answer the
//! planted ground truth, and adversarial doubles that answer wrongly and
//! permutation-sensitively on a seeded subset of candidates.
//!
//! The ground truth is a pure function of column content (see
//! [`oracle_error_value`]), so tests can recompute it independently of the
//! pipeline when checking exports. One script file serves both the
//! generator and validator roles of a run because the task facet is part
//! of every fingerprint.

use crate::error::Result;
use crate::eval::BenchmarkCase;
use crate::model::scripted::{KeyMode, ScriptFile};
use crate::rng::{derive_seed, fold_str};
use crate::table::Table;
use crate::task::{
    apply_dual_transform, brainstorm_fingerprint, instantiate_generative,
    sample_negative_instance, Completion, TaskContext, TaskFamily, TemplateSet,
};

/// Planted "realistic error" for a column: its first non-null cell with a
/// tilde appended. Deterministic from content, never equal to an existing
/// value.
pub fn oracle_error_value(column: &Table) -> String {
    format!("{}~", first_cell(column))
}

/// The answer an adversarial generator gives on a wrong candidate; distinct
/// from [`oracle_error_value`] by construction.
pub fn wrong_error_value(column: &Table) -> String {
    format!("{}!", first_cell(column))
}

fn first_cell(column: &Table) -> String {
    column
        .rows
        .iter()
        .map(|r| r[0].render())
        .find(|v| !v.is_empty())
        .unwrap_or_else(|| "value".to_string())
}

/// Seeded wrong-candidate selector: a fixed fraction of columns, chosen by
/// content digest, so the set is stable across runs and independent of
/// candidate order.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialSpec {
    pub wrong_percent: u64,
    pub selector_seed: u64,
}

impl AdversarialSpec {
    pub fn is_wrong(&self, column: &Table) -> bool {
        let x = derive_seed(
            self.selector_seed,
            "wrong-select",
            &[fold_str(&column.digest_invariant())],
        );
        x % 100 < self.wrong_percent
    }
}

fn each_column(corpus: &[Table]) -> Vec<Table> {
    let mut out = Vec::new();
    for t in corpus {
        for c in 0..t.column_count() {
            if let Ok(col) = t.column_table(c) {
                out.push(col);
            }
        }
    }
    out
}

/// Oracle for error-detection runs: the generator invents
/// [`oracle_error_value`] for every column, and the validator consistently
/// confirms it (and answers `[]` on clean columns) under any permutation.
pub fn error_detection_oracle(corpus: &[Table]) -> Result<ScriptFile> {
    let templates = TemplateSet::default();
    let family = TaskFamily::ErrorDetection;
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    for column in each_column(corpus) {
        let truth = oracle_error_value(&column);
        let gen = instantiate_generative(&family, &column, 0, TaskContext::None, &templates)?;
        let completion = Completion::error_set([truth.clone()]);
        script
            .entries
            .insert(gen.fingerprint().invariant, completion.render());
        let dual = apply_dual_transform(&gen, &completion)?;
        script
            .entries
            .insert(dual.fingerprint().invariant, completion.render());
        let (negative, empty) =
            sample_negative_instance(&family, &column, None, 0, &templates)?;
        script
            .entries
            .insert(negative.fingerprint().invariant, empty.render());
    }
    Ok(script)
}

/// Adversarial error-detection double. On wrong columns the generator
/// invents [`wrong_error_value`]; the validator then confirms the wrong
/// answer only on the exact unpermuted arrangement of the classification
/// table and answers `[]` on any permuted variant — the signature of a
/// model anchoring on table order rather than content.
pub fn error_detection_adversarial(
    corpus: &[Table],
    spec: AdversarialSpec,
) -> Result<ScriptFile> {
    let templates = TemplateSet::default();
    let family = TaskFamily::ErrorDetection;
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    script.default = Some("[]".to_string());
    for column in each_column(corpus) {
        let gen = instantiate_generative(&family, &column, 0, TaskContext::None, &templates)?;
        if spec.is_wrong(&column) {
            let wrong = Completion::error_set([wrong_error_value(&column)]);
            script
                .entries
                .insert(gen.fingerprint().invariant, wrong.render());
            let dual = apply_dual_transform(&gen, &wrong)?;
            script
                .exact_overrides
                .insert(dual.fingerprint().exact, wrong.render());
        } else {
            let truth = Completion::error_set([oracle_error_value(&column)]);
            script
                .entries
                .insert(gen.fingerprint().invariant, truth.render());
            let dual = apply_dual_transform(&gen, &truth)?;
            script
                .entries
                .insert(dual.fingerprint().invariant, truth.render());
        }
        let (negative, empty) =
            sample_negative_instance(&family, &column, None, 0, &templates)?;
        script
            .entries
            .insert(negative.fingerprint().invariant, empty.render());
    }
    Ok(script)
}

/// A fully permutation-sensitive validator: its answer embeds the exact
/// prompt digest, so no two permutations ever agree.
pub fn permutation_sensitive_validator() -> ScriptFile {
    let mut script = ScriptFile::new(KeyMode::Exact);
    script.default = Some("[\"{{exact}}\"]".to_string());
    script
}

/// Table-B for the schema-matching oracle: same content, every header
/// renamed with an `_alt` suffix.
pub fn oracle_table_b(a: &Table) -> (Table, Vec<(String, String)>) {
    let headers: Vec<String> = a.headers.iter().map(|h| format!("{h}_alt")).collect();
    let pairs: Vec<(String, String)> = a
        .headers
        .iter()
        .zip(&headers)
        .map(|(x, y)| (x.clone(), y.clone()))
        .collect();
    (
        Table {
            name: format!("{}_b", a.name),
            headers,
            rows: a.rows.clone(),
        },
        pairs,
    )
}

/// Oracle for schema-matching runs: generates `_alt`-renamed Table-B with
/// full mappings, confirms them on the dual under any permutation, and
/// calls unrelated table pairs unmatched.
pub fn schema_matching_oracle(corpus: &[Table]) -> Result<ScriptFile> {
    let templates = TemplateSet::default();
    let family = TaskFamily::SchemaMatching;
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    for table in corpus {
        let gen = instantiate_generative(&family, table, 0, TaskContext::None, &templates)?;
        let (table_b, pairs) = oracle_table_b(table);
        let completion = Completion::GeneratedTableWithMappings {
            table: table_b,
            pairs: pairs.iter().cloned().collect(),
        };
        script
            .entries
            .insert(gen.fingerprint().invariant, completion.render());
        let dual = apply_dual_transform(&gen, &completion)?;
        let mappings = Completion::mapping_list(pairs);
        script
            .entries
            .insert(dual.fingerprint().invariant, mappings.render());
    }
    for (i, a) in corpus.iter().enumerate() {
        for (j, b) in corpus.iter().enumerate() {
            if i == j {
                continue;
            }
            let (negative, empty) =
                sample_negative_instance(&family, a, Some(b), 0, &templates)?;
            script
                .entries
                .insert(negative.fingerprint().invariant, empty.render());
        }
    }
    Ok(script)
}

/// Fixed brainstormed question used by the code-task doubles.
pub const ORACLE_QUESTION: &str = "how many rows are in the table";

/// Program pair behind [`ORACLE_QUESTION`], equivalent across languages.
pub fn oracle_programs() -> (&'static str, &'static str) {
    ("SELECT COUNT(*) FROM t", "count()")
}

/// Divergent second-language program for adversarial code runs.
pub fn wrong_dsl_program() -> &'static str {
    "sum(__missing_column__)"
}

/// Oracle for NL-to-code runs with execution validation across
/// `sql_language` and `dsl_language`: brainstorms a fixed question per
/// table and answers it equivalently in both languages. Also carries
/// verifier answers for the model-based fallback path.
pub fn nl2code_oracle(
    corpus: &[Table],
    sql_language: &str,
    dsl_language: &str,
) -> Result<ScriptFile> {
    nl2code_script(corpus, sql_language, dsl_language, None)
}

/// Adversarial variant: on wrong tables (per `spec`) the second-language
/// program diverges, so execution validation must reject the pair.
pub fn nl2code_adversarial(
    corpus: &[Table],
    sql_language: &str,
    dsl_language: &str,
    spec: AdversarialSpec,
) -> Result<ScriptFile> {
    nl2code_script(corpus, sql_language, dsl_language, Some(spec))
}

fn nl2code_script(
    corpus: &[Table],
    sql_language: &str,
    dsl_language: &str,
    adversarial: Option<AdversarialSpec>,
) -> Result<ScriptFile> {
    let templates = TemplateSet::default();
    let (sql_src, dsl_src) = oracle_programs();
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    for table in corpus {
        script.entries.insert(
            brainstorm_fingerprint(table).invariant,
            ORACLE_QUESTION.to_string(),
        );
        let question = TaskContext::Question(ORACLE_QUESTION.to_string());
        let wrong = adversarial.is_some_and(|spec| spec.is_wrong(table));

        let sql_family = TaskFamily::NlToCode {
            language: sql_language.to_string(),
        };
        let gen_sql =
            instantiate_generative(&sql_family, table, 0, question.clone(), &templates)?;
        let sql_completion = Completion::code(sql_language, sql_src);
        script
            .entries
            .insert(gen_sql.fingerprint().invariant, sql_completion.render());

        let dsl_family = TaskFamily::NlToCode {
            language: dsl_language.to_string(),
        };
        let gen_dsl =
            instantiate_generative(&dsl_family, table, 0, question.clone(), &templates)?;
        let dsl_source = if wrong { wrong_dsl_program() } else { dsl_src };
        let dsl_completion = Completion::code(dsl_language, dsl_source);
        script
            .entries
            .insert(gen_dsl.fingerprint().invariant, dsl_completion.render());

        // Verifier answers for the model-based fallback: affirm with echo.
        let dual_sql = apply_dual_transform(&gen_sql, &sql_completion)?;
        script.entries.insert(
            dual_sql.fingerprint().invariant,
            sql_completion.render_expected(&dual_sql.kind),
        );
        let dual_dsl = apply_dual_transform(&gen_dsl, &dsl_completion)?;
        script.entries.insert(
            dual_dsl.fingerprint().invariant,
            dsl_completion.render_expected(&dual_dsl.kind),
        );
    }
    Ok(script)
}

/// Eval harness self-test double: answers every benchmark case with its
/// bundled gold program, so execution accuracy must come out at 1.0.
pub fn gold_echo(cases: &[BenchmarkCase]) -> Result<ScriptFile> {
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    for case in cases {
        if let BenchmarkCase::Code(code_case) = case {
            let gold = code_case.gold_code.as_deref().ok_or_else(|| {
                crate::error::Error::Config(format!(
                    "case '{}' has no gold_code to echo",
                    code_case.id
                ))
            })?;
            let instance = crate::eval::code_case_instance(code_case)?;
            let completion = Completion::code(code_case.language.clone(), gold);
            script
                .entries
                .insert(instance.fingerprint().invariant, completion.render());
        }
    }
    Ok(script)
}

/// Classification eval double that reproduces each case's gold answer.
pub fn classification_gold(cases: &[BenchmarkCase]) -> Result<ScriptFile> {
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    for case in cases {
        match case {
            BenchmarkCase::ErrorDetection(c) => {
                let instance = crate::eval::error_case_instance(c)?;
                let completion = Completion::error_set(c.gold_errors.clone());
                script
                    .entries
                    .insert(instance.fingerprint().invariant, completion.render());
            }
            BenchmarkCase::SchemaMatching(c) => {
                let instance = crate::eval::schema_case_instance(c)?;
                let completion = Completion::mapping_list(
                    c.gold_mappings
                        .iter()
                        .map(|p| (p[0].clone(), p[1].clone())),
                );
                script
                    .entries
                    .insert(instance.fingerprint().invariant, completion.render());
            }
            BenchmarkCase::Code(_) => {}
        }
    }
    Ok(script)
}
