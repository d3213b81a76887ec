//! Command-line surface for batch operation.
//!
//! Subcommands: `run` (full self-training loop), `generate` (one iteration,
//! no fine-tune), `validate` (re-validate an exported JSONL), `export`
//! (rebuild training JSONL from a run's validation records), `evaluate`
//! (benchmark a model), `exec` (run one snippet on one CSV, debugging aid).
//!
//! Flags override config-file values; the fully resolved configuration is
//! echoed into `report.json`. Exit codes: 0 success, 1 config/corpus
//! errors, 2 backend failures, 64 usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval;
use crate::exec::{CodeSnippet, ExecResult, ExecutorRegistry};
use crate::model::{ModelClient, ModelRef};
use crate::pipeline::{
    export_training_jsonl, CandidateRecord, PipelineConfig, Provenance, TrainingExample,
};
use crate::table::{load_corpus, parse_table_csv, serialize_table_markdown, Table};
use crate::task::{
    apply_dual_transform, instantiate_generative, parse_completion, sample_negative_instance,
    Completion, TaskContext, TaskFamily, TaskKind, TemplateSet,
};
use crate::validate::{retarget, ValidationConfig, ValidationMode};

const DEFAULT_AUTH_ENV: &str = "TABLETUNE_API_KEY";

#[derive(Debug, Parser)]
#[command(
    name = "tabletune",
    version,
    about = "Self-training data pipeline for table-task language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full generate-validate-finetune loop.
    Run(RunArgs),
    /// Run one iteration of candidate generation and validation, exporting
    /// data without registering fine-tunes.
    Generate(RunArgs),
    /// Re-validate an exported training JSONL against a validator model.
    Validate(ValidateArgs),
    /// Rebuild training JSONL from a run's validation records.
    Export(ExportArgs),
    /// Evaluate a model on a benchmark file.
    Evaluate(EvaluateArgs),
    /// Execute one code snippet against one CSV table.
    Exec(ExecArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Task family: error-detection | schema-matching | nl-to-code |
    /// data-transform.
    #[arg(long)]
    task: Option<String>,
    /// Directory of CSV tables.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for reports and exports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fine-tuning iterations (k).
    #[arg(long)]
    iterations: Option<u32>,
    /// Candidate attempts per iteration.
    #[arg(long)]
    step_size: Option<u32>,
    /// Validation rounds per candidate (N).
    #[arg(long)]
    rounds: Option<u32>,
    /// Root seed; every other seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Model spec, repeatable: scripted:<path> or http:<url>#<name>. The
    /// first is the base generator/validator; a second one answers the
    /// second language in execution mode.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Primary code language (code tasks).
    #[arg(long)]
    language: Option<String>,
    /// Second code language for execution validation.
    #[arg(long)]
    second_language: Option<String>,
    /// Negatives per validated positive.
    #[arg(long)]
    negatives_ratio: Option<f64>,
    /// Validation mode: permutation | execution | model-based.
    #[arg(long)]
    mode: Option<String>,
    /// Export training data but register no fine-tunes.
    #[arg(long)]
    export_only: bool,
    /// Ablation: keep validation rounds but skip row/column shuffling.
    #[arg(long)]
    no_permutation: bool,
    /// Ablation: replace execution validation with the model-based check.
    #[arg(long)]
    no_execution_validation: bool,
    /// Ablation: keep the generator at the vanilla model.
    #[arg(long)]
    no_generator_finetune: bool,
    /// TOML config file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of prompt-template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Environment variable holding the HTTP bearer token.
    #[arg(long, default_value = DEFAULT_AUTH_ENV)]
    auth_env: String,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Exported training JSONL to re-validate.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long = "model")]
    model: String,
    #[arg(long, default_value_t = 5)]
    rounds: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_permutation: bool,
    #[arg(long, default_value = DEFAULT_AUTH_ENV)]
    auth_env: String,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// validation.jsonl from a previous run.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Which training set to rebuild: g (generative) or c (classification /
    /// second language).
    #[arg(long, default_value = "c")]
    set: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Benchmark JSONL file.
    #[arg(long)]
    benchmark: PathBuf,
    /// Model spec; omit with --self-test.
    #[arg(long = "model")]
    model: Option<String>,
    /// Run the bundled gold programs as the model output (code benchmarks).
    #[arg(long)]
    self_test: bool,
    /// Where to write the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write a per-case CSV summary.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_AUTH_ENV)]
    auth_env: String,
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// Language tag: sql-subset | table-dsl.
    #[arg(long)]
    language: String,
    /// Program text.
    #[arg(long)]
    code: String,
    /// CSV file holding the input table (bound to the name t).
    #[arg(long)]
    table: PathBuf,
}

/// Entry point: parse argv, dispatch, and map errors to exit codes.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args, false),
        Command::Generate(args) => cmd_run(args, true),
        Command::Validate(args) => cmd_validate(args),
        Command::Export(args) => cmd_export(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Exec(args) => cmd_exec(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// Config-file overlay
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: Option<String>,
    corpus: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    iterations: Option<u32>,
    step_size: Option<u32>,
    rounds: Option<u32>,
    seed: Option<u64>,
    models: Option<Vec<String>>,
    language: Option<String>,
    second_language: Option<String>,
    negatives_ratio: Option<f64>,
    mode: Option<String>,
    export_only: Option<bool>,
    no_permutation: Option<bool>,
    no_execution_validation: Option<bool>,
    no_generator_finetune: Option<bool>,
    templates: Option<PathBuf>,
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
}

fn parse_family(task: &str, language: Option<&str>) -> Result<TaskFamily> {
    let language = language.unwrap_or(crate::exec::LANG_SQL).to_string();
    match task {
        "error-detection" => Ok(TaskFamily::ErrorDetection),
        "schema-matching" => Ok(TaskFamily::SchemaMatching),
        "nl-to-code" => Ok(TaskFamily::NlToCode { language }),
        "data-transform" => Ok(TaskFamily::DataTransform { language }),
        other => Err(Error::Config(format!(
            "unknown task '{other}' (expected error-detection, schema-matching, nl-to-code, data-transform)"
        ))),
    }
}

fn parse_mode(mode: &str) -> Result<ValidationMode> {
    match mode {
        "permutation" => Ok(ValidationMode::Permutation),
        "execution" => Ok(ValidationMode::Execution),
        "model-based" => Ok(ValidationMode::ModelBasedForCode),
        other => Err(Error::Config(format!(
            "unknown mode '{other}' (expected permutation, execution, model-based)"
        ))),
    }
}

fn resolve_config(args: RunArgs) -> Result<PipelineConfig> {
    let file = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    let task = args
        .task
        .or(file.task)
        .ok_or_else(|| Error::Config("--task is required".to_string()))?;
    let language = args.language.or(file.language);
    let family = parse_family(&task, language.as_deref())?;
    let corpus = args
        .corpus
        .or(file.corpus)
        .ok_or_else(|| Error::Config("--corpus is required".to_string()))?;
    let out_dir = args
        .out_dir
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("tabletune-out"));
    let model_specs = if args.models.is_empty() {
        file.models.unwrap_or_default()
    } else {
        args.models
    };
    if model_specs.is_empty() {
        return Err(Error::Config(
            "at least one --model is required".to_string(),
        ));
    }
    let base_model = ModelRef::parse_spec(&model_specs[0], &args.auth_env)?;
    let second_model = model_specs
        .get(1)
        .map(|s| ModelRef::parse_spec(s, &args.auth_env))
        .transpose()?;

    let mut cfg = PipelineConfig::new(family, corpus, out_dir, base_model);
    cfg.second_model = second_model;
    cfg.iterations = args.iterations.or(file.iterations).unwrap_or(3);
    cfg.step_size = args.step_size.or(file.step_size).unwrap_or(3000);
    cfg.root_seed = args.seed.or(file.seed).unwrap_or(0);
    cfg.validation.n_rounds = args.rounds.or(file.rounds).unwrap_or(5);
    if let Some(mode) = args.mode.or(file.mode) {
        cfg.validation.mode = parse_mode(&mode)?;
    }
    cfg.second_language = args.second_language.or(file.second_language);
    cfg.negatives_ratio = args
        .negatives_ratio
        .or(file.negatives_ratio)
        .unwrap_or(1.0);
    cfg.mode_flags.export_only = args.export_only || file.export_only.unwrap_or(false);
    cfg.mode_flags.no_permutation = args.no_permutation || file.no_permutation.unwrap_or(false);
    cfg.mode_flags.no_execution_validation =
        args.no_execution_validation || file.no_execution_validation.unwrap_or(false);
    cfg.mode_flags.no_generator_finetune =
        args.no_generator_finetune || file.no_generator_finetune.unwrap_or(false);
    cfg.template_dir = args.templates.or(file.templates);
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

static CANCEL: std::sync::OnceLock<std::sync::Arc<std::sync::atomic::AtomicBool>> =
    std::sync::OnceLock::new();

// Only the lock-free atomic store runs inside the handler.
extern "C" fn on_sigint(_: libc::c_int) {
    if let Some(flag) = CANCEL.get() {
        flag.store(true, std::sync::atomic::Ordering::SeqCst);
    }
}

/// Route Ctrl-C into the pipeline's cooperative cancellation flag so an
/// interrupted run still finalizes its report with partial counts.
fn install_sigint(flag: std::sync::Arc<std::sync::atomic::AtomicBool>) {
    let _ = CANCEL.set(flag);
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
    }
}

fn cmd_run(args: RunArgs, generate_only: bool) -> Result<()> {
    let mut cfg = resolve_config(args)?;
    if generate_only {
        cfg.iterations = 1;
        cfg.mode_flags.export_only = true;
    }
    let mut pipeline = crate::pipeline::Pipeline::new(cfg.clone())?;
    install_sigint(pipeline.cancel_flag());
    let reports = pipeline.run()?;
    for r in &reports {
        println!(
            "iteration {}: candidates={} validated={} negatives={} train_g={} train_c={}",
            r.iteration,
            r.candidates,
            r.validated,
            r.negatives_validated,
            r.train_g_size,
            r.train_c_size
        );
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    println!(
        "report written to {}",
        cfg.out_dir.join("report.json").display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let model = ModelRef::parse_spec(&args.model, &args.auth_env)?;
    let client = ModelClient::default();
    let mut vcfg = ValidationConfig::new(ValidationMode::Permutation, args.rounds, args.seed);
    vcfg.permute = !args.no_permutation;
    let (total, revalidated) =
        crate::pipeline::revalidate_export(&args.input, &args.corpus, &client, &model, &vcfg)?;
    println!("revalidated {revalidated}/{total} exported examples");
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cases = eval::load_benchmark(&args.benchmark)?;
    let registry = ExecutorRegistry::builtin();
    let all_code = cases
        .iter()
        .all(|c| matches!(c, eval::BenchmarkCase::Code(_)));
    let report = if args.self_test {
        if !all_code {
            return Err(Error::Config(
                "--self-test applies to code benchmarks".to_string(),
            ));
        }
        eval::execution_self_test(&cases, &registry)?
    } else {
        let spec = args.model.as_deref().ok_or_else(|| {
            Error::Config("either --model or --self-test is required".to_string())
        })?;
        let model = ModelRef::parse_spec(spec, &args.auth_env)?;
        let client = ModelClient::default();
        if all_code {
            eval::evaluate_execution_accuracy(&client, &model, &cases, &registry)?
        } else {
            eval::evaluate_classification(&client, &model, &cases)?
        }
    };
    match &report.aggregate {
        eval::Aggregate::ExecutionAccuracy {
            execution_accuracy,
            matched,
            total,
        } => println!("execution accuracy {execution_accuracy:.4} ({matched}/{total})"),
        eval::Aggregate::F1 {
            precision,
            recall,
            f1,
            ..
        } => println!("precision {precision:.4} recall {recall:.4} f1 {f1:.4}"),
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
        println!("report written to {}", out.display());
    }
    if let Some(csv_path) = &args.csv {
        std::fs::write(csv_path, report.to_csv())?;
        println!("csv summary written to {}", csv_path.display());
    }
    Ok(())
}

fn cmd_exec(args: ExecArgs) -> Result<()> {
    let bytes = std::fs::read(&args.table)?;
    let name = args
        .table
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("t");
    let table = parse_table_csv(&bytes, name)?;
    let registry = ExecutorRegistry::builtin();
    let snippet = CodeSnippet::new(args.language, args.code);
    match registry.execute(&snippet, &table)? {
        ExecResult::Scalar { value } => println!("{}", value.render()),
        ExecResult::Table { table, .. } => println!("{}", serialize_table_markdown(&table)),
        ExecResult::Error { phase, message } => {
            return Err(Error::Config(format!("{phase:?} error: {message}")))
        }
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.records)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.records.display())))?;
    let corpus = load_corpus(&args.corpus)?;
    let by_name: BTreeMap<&str, &Table> = corpus.iter().map(|t| (t.name.as_str(), t)).collect();
    let templates = TemplateSet::default();
    let want_generative = match args.set.as_str() {
        "g" => true,
        "c" => false,
        other => {
            return Err(Error::Config(format!(
                "--set must be 'g' or 'c', got '{other}'"
            )))
        }
    };
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CandidateRecord = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!("{} line {}: {e}", args.records.display(), i + 1))
        })?;
        if record.status != "validated" {
            continue;
        }
        match rebuild_example(&record, &by_name, &templates, want_generative) {
            Ok(Some(example)) => examples.push(example),
            Ok(None) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let n = export_training_jsonl(&examples, &args.out)?;
    println!(
        "exported {n} examples to {}{}",
        args.out.display(),
        if skipped > 0 {
            format!(" ({skipped} records not representable in this set)")
        } else {
            String::new()
        }
    );
    Ok(())
}

/// Rebuild a training example from a validation record plus the corpus.
/// Negatives and duals are reconstructed deterministically from seeds and
/// rendered completions.
fn rebuild_example(
    record: &CandidateRecord,
    corpus: &BTreeMap<&str, &Table>,
    templates: &TemplateSet,
    want_generative: bool,
) -> Result<Option<TrainingExample>> {
    let table = corpus.get(record.table.as_str()).ok_or_else(|| {
        Error::Corpus(format!("table '{}' not found in corpus", record.table))
    })?;
    // Reuse the recorded outcome digest so a rebuild reproduces the run's
    // own export byte-for-byte.
    let validation = record
        .outcome
        .as_ref()
        .map(|o| o.digest())
        .unwrap_or_default();
    let provenance = |_completion: &Completion, table_b| Provenance {
        table: record.table.clone(),
        column: record.column,
        kind: record.kind.clone(),
        iteration: record.iteration,
        candidate: record.candidate,
        seed: record.seed,
        negative: record.negative,
        question: record.question.clone(),
        table_b,
        validation: validation.clone(),
    };

    if record.negative {
        if want_generative {
            return Ok(None);
        }
        let family = family_from_tag(&record.kind)?;
        let (primary, secondary) = replay_negative_tables(&family, record.seed, corpus)?;
        let (instance, expected) = sample_negative_instance(
            &family,
            &primary,
            secondary.as_ref(),
            record.seed,
            templates,
        )?;
        let table_b = secondary.as_ref().map(eval::TableSpec::from_table);
        return Ok(Some(TrainingExample {
            provenance: provenance(&expected, table_b),
            task: instance,
            completion: expected,
        }));
    }

    let rendered = record
        .completion
        .as_ref()
        .ok_or_else(|| Error::Config("validated record has no completion".to_string()))?;
    let family = family_from_tag(&record.kind)?;
    match &family {
        TaskFamily::ErrorDetection => {
            let column = table.column_table(record.column.ok_or_else(|| {
                Error::Config("error-detection record has no column".to_string())
            })?)?;
            let c = parse_completion(&TaskKind::generative(family.clone()), rendered)?;
            let gen = instantiate_generative(
                &family,
                &column,
                record.seed,
                TaskContext::None,
                templates,
            )?;
            let example = if want_generative {
                TrainingExample {
                    provenance: provenance(&c, None),
                    task: gen,
                    completion: c,
                }
            } else {
                let dual = apply_dual_transform(&gen, &c)?;
                TrainingExample {
                    provenance: provenance(&c, None),
                    task: dual,
                    completion: c,
                }
            };
            Ok(Some(example))
        }
        TaskFamily::SchemaMatching => {
            let c = parse_completion(&TaskKind::generative(family.clone()), rendered)?;
            let gen = instantiate_generative(
                &family,
                table,
                record.seed,
                TaskContext::None,
                templates,
            )?;
            let table_b = match &c {
                Completion::GeneratedTableWithMappings { table, .. } => {
                    Some(eval::TableSpec::from_table(table))
                }
                _ => None,
            };
            let example = if want_generative {
                TrainingExample {
                    provenance: provenance(&c, table_b),
                    task: gen,
                    completion: c,
                }
            } else {
                let dual = apply_dual_transform(&gen, &c)?;
                let expected = dual.expected.clone().expect("dual carries expected");
                TrainingExample {
                    provenance: provenance(&expected, table_b),
                    task: dual,
                    completion: expected,
                }
            };
            Ok(Some(example))
        }
        TaskFamily::NlToCode { .. } | TaskFamily::DataTransform { .. } => {
            let question = record
                .question
                .clone()
                .ok_or_else(|| Error::Config("code record has no question".to_string()))?;
            let gen = instantiate_generative(
                &family,
                table,
                record.seed,
                TaskContext::Question(question),
                templates,
            )?;
            if want_generative {
                let c = parse_completion(&TaskKind::generative(family.clone()), rendered)?;
                Ok(Some(TrainingExample {
                    provenance: provenance(&c, None),
                    task: gen,
                    completion: c,
                }))
            } else {
                match &record.second_completion {
                    Some(second) => {
                        let second_lang = language_of_code_render(second)
                            .unwrap_or_else(|| crate::exec::LANG_DSL.to_string());
                        let c = parse_completion(
                            &TaskKind::generative(family.with_language(&second_lang)),
                            second,
                        )?;
                        Ok(Some(TrainingExample {
                            provenance: provenance(&c, None),
                            task: retarget(&gen, &second_lang),
                            completion: c,
                        }))
                    }
                    None => Ok(None),
                }
            }
        }
    }
}

fn language_of_code_render(rendered: &str) -> Option<String> {
    rendered
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("```"))
        .map(|tag| tag.trim().to_string())
        .filter(|tag| !tag.is_empty())
}

fn family_from_tag(tag: &str) -> Result<TaskFamily> {
    if tag == "error-detection" {
        return Ok(TaskFamily::ErrorDetection);
    }
    if tag == "schema-matching" {
        return Ok(TaskFamily::SchemaMatching);
    }
    if let Some(lang) = tag.strip_prefix("nl-to-code:") {
        return Ok(TaskFamily::NlToCode {
            language: lang.to_string(),
        });
    }
    if let Some(lang) = tag.strip_prefix("data-transform:") {
        return Ok(TaskFamily::DataTransform {
            language: lang.to_string(),
        });
    }
    Err(Error::Config(format!("unknown task tag '{tag}'")))
}

/// Replay the seeded table draws of a negative attempt.
fn replay_negative_tables(
    family: &TaskFamily,
    neg_seed: u64,
    corpus: &BTreeMap<&str, &Table>,
) -> Result<(Table, Option<Table>)> {
    let tables: Vec<&Table> = corpus.values().copied().collect();
    let mut rng = crate::rng::SplitMix64::new(crate::rng::derive_seed(
        neg_seed,
        "negative-table",
        &[],
    ));
    let primary_idx = rng.next_below(tables.len() as u64) as usize;
    let primary = tables[primary_idx].clone();
    let secondary = if matches!(family, TaskFamily::SchemaMatching) {
        if tables.len() < 2 {
            return Err(Error::Corpus(
                "schema-matching negatives need two corpus tables".to_string(),
            ));
        }
        let mut other = rng.next_below(tables.len() as u64 - 1) as usize;
        if other >= primary_idx {
            other += 1;
        }
        Some(tables[other].clone())
    } else {
        None
    };
    Ok((primary, secondary))
}
