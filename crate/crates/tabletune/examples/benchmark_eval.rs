//! Benchmark evaluation: the execution-accuracy self-test (gold programs
//! run as if a model produced them), a scripted gold-echo model through
//! the full prompt-parse-execute path, and pooled-F1 classification
//! scoring including a deliberately imperfect model.
//!
//! ```bash
//! cargo run -p tabletune --example benchmark_eval
//! ```

use std::path::Path;

use tabletune::eval::{
    evaluate_classification, evaluate_execution_accuracy, execution_self_test, load_benchmark,
    Aggregate,
};
use tabletune::exec::ExecutorRegistry;
use tabletune::model::script_gen::{classification_gold, gold_echo};
use tabletune::model::scripted::{KeyMode, ScriptFile};
use tabletune::model::{ModelClient, ModelRef};

fn show(aggregate: &Aggregate) -> String {
    match aggregate {
        Aggregate::ExecutionAccuracy {
            execution_accuracy,
            matched,
            total,
        } => format!("execution accuracy {execution_accuracy:.3} ({matched}/{total})"),
        Aggregate::F1 {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        } => format!(
            "precision {precision:.3} recall {recall:.3} f1 {f1:.3} (tp={tp} fp={fp} fn={fn_})"
        ),
    }
}

fn main() -> tabletune::Result<()> {
    let benchmarks = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/benchmarks");
    let registry = ExecutorRegistry::builtin();
    let client = ModelClient::default();
    let work = std::env::temp_dir().join("tabletune-example-eval");
    std::fs::create_dir_all(&work)?;

    // Code benchmark: harness self-test must be perfect by construction.
    let cases = load_benchmark(&benchmarks.join("nl2sql.jsonl"))?;
    let report = execution_self_test(&cases, &registry)?;
    println!("self-test:        {}", show(&report.aggregate));

    // Same benchmark through a scripted model echoing the gold programs.
    let echo_path = work.join("gold_echo.json");
    gold_echo(&cases)?.write(&echo_path)?;
    let echo = ModelRef::scripted("gold-echo", &echo_path);
    let report = evaluate_execution_accuracy(&client, &echo, &cases, &registry)?;
    println!("gold-echo model:  {}", show(&report.aggregate));

    // Classification benchmark with a gold-answering model: F1 = 1.
    let cases = load_benchmark(&benchmarks.join("error_detection.jsonl"))?;
    let gold_path = work.join("gold_classification.json");
    classification_gold(&cases)?.write(&gold_path)?;
    let gold = ModelRef::scripted("gold", &gold_path);
    let report = evaluate_classification(&client, &gold, &cases)?;
    println!("gold classifier:  {}", show(&report.aggregate));

    // A lazy model that calls every column clean scores recall 0 on the
    // cases with planted errors.
    let mut lazy = ScriptFile::new(KeyMode::PermutationInvariant);
    lazy.default = Some("[]".to_string());
    let lazy_path = work.join("lazy.json");
    lazy.write(&lazy_path)?;
    let lazy_model = ModelRef::scripted("always-clean", &lazy_path);
    let report = evaluate_classification(&client, &lazy_model, &cases)?;
    println!("always-clean:     {}", show(&report.aggregate));
    Ok(())
}
