//! Execution-invariance validation: two scripted models answer the same
//! question in different languages, and the programs are executed on row
//! samples of the table. Equivalent programs survive every round; a
//! divergent pair is rejected the moment results differ.
//!
//! ```bash
//! cargo run -p tabletune --example execution_validation
//! ```

use std::path::Path;

use tabletune::exec::{ExecutorRegistry, LANG_DSL, LANG_SQL};
use tabletune::model::scripted::{KeyMode, ScriptFile};
use tabletune::model::{ModelClient, ModelRef};
use tabletune::table::parse_table_csv;
use tabletune::task::{
    instantiate_generative, Completion, TaskContext, TaskFamily, TemplateSet,
};
use tabletune::validate::{retarget, validate_generative_execution, ValidationConfig, ValidationMode};

fn scripted_pair(
    work: &Path,
    name: &str,
    t_g: &tabletune::task::TaskInstance,
    sql: &str,
    dsl: &str,
) -> tabletune::Result<ModelRef> {
    let mut script = ScriptFile::new(KeyMode::PermutationInvariant);
    script.entries.insert(
        t_g.fingerprint().invariant,
        Completion::code(LANG_SQL, sql).render(),
    );
    let t_g_dsl = retarget(t_g, LANG_DSL);
    script.entries.insert(
        t_g_dsl.fingerprint().invariant,
        Completion::code(LANG_DSL, dsl).render(),
    );
    let path = work.join(format!("{name}.json"));
    script.write(&path)?;
    Ok(ModelRef::scripted(name, path))
}

fn main() -> tabletune::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let table = parse_table_csv(&std::fs::read(fixtures.join("football.csv"))?, "t")?;
    let templates = TemplateSet::default();
    let family = TaskFamily::NlToCode {
        language: LANG_SQL.to_string(),
    };
    let question = "which team has the highest goal";
    let t_g = instantiate_generative(
        &family,
        &table,
        0,
        TaskContext::Question(question.to_string()),
        &templates,
    )?;

    let work = std::env::temp_dir().join("tabletune-example-execution");
    std::fs::create_dir_all(&work)?;
    let registry = ExecutorRegistry::builtin();
    let client = ModelClient::default();
    let cfg = ValidationConfig::new(ValidationMode::Execution, 5, 11);

    // Equivalent programs: same answer on the full table and on every
    // sampled subset.
    let good = scripted_pair(
        &work,
        "equivalent",
        &t_g,
        "SELECT team FROM t ORDER BY goals DESC LIMIT 1",
        "top_by(goals) | project(team)",
    )?;
    let (outcome, c_sql, c_dsl) =
        validate_generative_execution(&client, &good, &good, &t_g, LANG_DSL, &cfg, &registry)?;
    println!("question: {question}");
    println!("equivalent pair validated={} rounds={}", outcome.validated, outcome.rounds_run);
    for round in &outcome.detail {
        println!("  round {}: {} -> {}", round.round, round.input, round.observed);
    }
    println!("  admitted for training:\n    {}\n    {}", c_sql.render(), c_dsl.render());

    // Divergent programs: caught on the full table in round 1, so neither
    // snippet can poison the training data.
    let bad = scripted_pair(
        &work,
        "divergent",
        &t_g,
        "SELECT MAX(goals) FROM t",
        "min(goals)",
    )?;
    let (outcome, _, _) =
        validate_generative_execution(&client, &bad, &bad, &t_g, LANG_DSL, &cfg, &registry)?;
    println!(
        "\ndivergent pair validated={} failure_round={:?}",
        outcome.validated, outcome.failure_round
    );
    if let Some(round) = outcome.detail.first() {
        println!("  {}", round.observed);
    }
    Ok(())
}
