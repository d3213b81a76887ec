//! The self-training outer loop: sample tables, generate candidate
//! completions, build duals, validate, accumulate training sets, export
//! JSONL, register fine-tunes, iterate, and report.
//!
//! Candidates draw from a seeded without-replacement pool of (table,
//! column) targets so a run never wastes model calls on duplicate tasks;
//! near-identical candidates that slip through (same task digest) are
//! rejected as duplicates. Every seed derives from the root seed by
//! (purpose, iteration, index), so identical configurations produce
//! byte-identical exports and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::TableSpec;
use crate::exec::ExecutorRegistry;
use crate::model::{
    DecodeParams, FineTuneJob, FineTuneParams, ModelClient, ModelRef,
};
use crate::rng::{derive_seed, SplitMix64};
use crate::table::{corpus_digest, load_corpus, Table};
use crate::task::{
    apply_dual_transform, brainstorm_prompt, instantiate_generative, parse_completion,
    parse_question, sample_negative_instance, Completion, TaskContext, TaskFamily,
    TaskInstance, TaskKind, TemplateSet,
};
use crate::validate::{
    validate_classification, validate_generative_execution, ValidationConfig, ValidationMode,
    ValidationOutcome,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Ablation and operation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeFlags {
    /// Keep the N validation rounds but skip the row/column shuffling.
    pub no_permutation: bool,
    /// For code tasks: validate with the verifier model instead of
    /// differential execution.
    pub no_execution_validation: bool,
    /// Keep the generator at the vanilla model across iterations.
    pub no_generator_finetune: bool,
    /// Export training data but register no fine-tunes.
    pub export_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub family: TaskFamily,
    /// Second target language for execution-validated code runs.
    pub second_language: Option<String>,
    /// Number of generate-validate-finetune iterations (k).
    pub iterations: u32,
    /// Candidate attempts per iteration.
    pub step_size: u32,
    pub validation: ValidationConfig,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    pub root_seed: u64,
    pub base_model: ModelRef,
    /// Model answering in the second language; defaults to `base_model`.
    pub second_model: Option<ModelRef>,
    /// Negatives admitted per validated positive (classification tasks).
    pub negatives_ratio: f64,
    pub mode_flags: ModeFlags,
    pub finetune: FineTuneParams,
    /// Fine-tune the second-language model in lockstep (execution mode).
    pub lockstep_second: bool,
    /// Optional template override directory.
    pub template_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(
        family: TaskFamily,
        corpus_dir: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
        base_model: ModelRef,
    ) -> PipelineConfig {
        let mode = if family.is_code() {
            ValidationMode::Execution
        } else {
            ValidationMode::Permutation
        };
        // Production defaults: 3 iterations of 3000 candidates each; tests
        // and examples dial both far down.
        PipelineConfig {
            family,
            second_language: None,
            iterations: 3,
            step_size: 3000,
            validation: ValidationConfig::new(mode, 5, 0),
            corpus_dir: corpus_dir.into(),
            out_dir: out_dir.into(),
            root_seed: 0,
            base_model,
            second_model: None,
            negatives_ratio: 1.0,
            mode_flags: ModeFlags::default(),
            finetune: FineTuneParams::default(),
            lockstep_second: true,
            template_dir: None,
        }
    }

    fn check(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".to_string()));
        }
        if self.step_size < 1 {
            return Err(Error::Config("step_size must be >= 1".to_string()));
        }
        if self.negatives_ratio < 0.0 {
            return Err(Error::Config("negatives_ratio must be >= 0".to_string()));
        }
        if self.validation.mode == ValidationMode::Execution {
            if !self.family.is_code() {
                return Err(Error::Config(format!(
                    "execution validation needs a code task, got {}",
                    self.family.tag()
                )));
            }
            if self.second_language.is_none() && !self.mode_flags.no_execution_validation {
                return Err(Error::Config(
                    "execution validation needs --second-language".to_string(),
                ));
            }
        }
        if self.validation.mode == ValidationMode::ModelBasedForCode && !self.family.is_code() {
            return Err(Error::Config(format!(
                "model-based code validation needs a code task, got {}",
                self.family.tag()
            )));
        }
        Ok(())
    }

    /// The validation configuration after applying ablation flags and the
    /// per-candidate seed.
    fn effective_validation(&self, candidate_seed: u64) -> ValidationConfig {
        let mut v = self.validation;
        v.seed = derive_seed(candidate_seed, "validate", &[]);
        if self.mode_flags.no_permutation {
            v.permute = false;
        }
        if v.mode == ValidationMode::Execution && self.mode_flags.no_execution_validation {
            v.mode = ValidationMode::ModelBasedForCode;
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Training examples and reports
// ---------------------------------------------------------------------------

/// Where a training example came from; everything needed to rebuild and
/// re-validate it against the same corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub table: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    pub kind: String,
    pub iteration: u32,
    pub candidate: u32,
    pub seed: u64,
    pub negative: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Generated second table for schema-matching duals (not in the corpus).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_b: Option<TableSpec>,
    /// Digest of the validated=true outcome that admitted this example.
    pub validation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub task: TaskInstance,
    pub completion: Completion,
    pub provenance: Provenance,
}

/// Per-iteration accounting. `candidates` counts positive attempts only and
/// always equals `validated` plus the sum of `rejected_by_reason`; negatives
/// are tracked separately. In execution mode the "c" slots describe the
/// second-language generative set and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub candidates: u32,
    pub validated: u32,
    pub rejected_by_reason: BTreeMap<String, u32>,
    pub negatives_attempted: u32,
    pub negatives_validated: u32,
    pub train_g_size: usize,
    pub train_c_size: usize,
    pub new_models: NewModels,
    pub exports: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewModels {
    pub m_g: ModelRef,
    pub m_c: ModelRef,
}

/// One line of `validation.jsonl`: the audit trail for every candidate and
/// negative attempted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub iteration: u32,
    pub candidate: u32,
    pub negative: bool,
    pub kind: String,
    pub table: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ValidationOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub corpus_digest: String,
    pub iterations: Vec<IterationReport>,
}

// ---------------------------------------------------------------------------
// Candidate pool
// ---------------------------------------------------------------------------

/// Seeded without-replacement iterator over candidate targets: (table,
/// column) pairs for error detection, tables otherwise. Once exhausted it
/// falls back to seeded draws with replacement; the dedup check rejects the
/// resulting repeats.
struct CandidatePool {
    entries: Vec<(usize, usize)>,
    pos: usize,
    fallback: SplitMix64,
}

impl CandidatePool {
    fn new(family: &TaskFamily, corpus: &[Table], seed: u64) -> CandidatePool {
        let mut entries = Vec::new();
        for (t, table) in corpus.iter().enumerate() {
            match family {
                TaskFamily::ErrorDetection => {
                    for c in 0..table.column_count() {
                        entries.push((t, c));
                    }
                }
                _ => entries.push((t, 0)),
            }
        }
        let mut rng = SplitMix64::new(derive_seed(seed, "candidate-pool", &[]));
        rng.shuffle(&mut entries);
        CandidatePool {
            entries,
            pos: 0,
            fallback: SplitMix64::new(derive_seed(seed, "candidate-pool-fallback", &[])),
        }
    }

    fn next(&mut self) -> (usize, usize) {
        if self.pos < self.entries.len() {
            let e = self.entries[self.pos];
            self.pos += 1;
            e
        } else {
            self.entries[self.fallback.next_below(self.entries.len() as u64) as usize]
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub corpus: Vec<Table>,
    pub client: ModelClient,
    pub registry: ExecutorRegistry,
    templates: TemplateSet,
    pool: CandidatePool,
    seen_tasks: BTreeSet<String>,
    records: Vec<CandidateRecord>,
    cancel: std::sync::Arc<std::sync::atomic::AtomicBool>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Pipeline> {
        cfg.check()?;
        let corpus = load_corpus(&cfg.corpus_dir)?;
        let templates = match &cfg.template_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        let registry = ExecutorRegistry::builtin();
        if let Some(lang) = cfg.family.language() {
            if !registry.knows(lang) {
                return Err(Error::Registry(lang.to_string()));
            }
        }
        if let Some(lang) = &cfg.second_language {
            if !registry.knows(lang) {
                return Err(Error::Registry(lang.clone()));
            }
        }
        let pool = CandidatePool::new(&cfg.family, &corpus, cfg.root_seed);
        Ok(Pipeline {
            corpus,
            client: ModelClient::default(),
            registry,
            templates,
            pool,
            seen_tasks: BTreeSet::new(),
            records: Vec::new(),
            cancel: std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false)),
            cfg,
        })
    }

    /// Cooperative cancellation flag: set it (for example from a SIGINT
    /// handler) and the run stops at the next candidate boundary, still
    /// exporting partial data and writing the report with partial counts.
    pub fn cancel_flag(&self) -> std::sync::Arc<std::sync::atomic::AtomicBool> {
        self.cancel.clone()
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(std::sync::atomic::Ordering::SeqCst)
    }

    /// Run the full loop: k iterations of generate → validate → export →
    /// fine-tune, re-basing each fine-tune on the vanilla base model.
    /// Writes `report.json` and `validation.jsonl` under the output
    /// directory and returns the per-iteration reports.
    pub fn run(&mut self) -> Result<Vec<IterationReport>> {
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        let mut m_g = self.cfg.base_model.clone();
        // The counterpart model: the validator, or in execution mode the
        // second-language generator.
        let mut m_c = self
            .cfg
            .second_model
            .clone()
            .unwrap_or_else(|| self.cfg.base_model.clone());
        let mut reports = Vec::new();
        for iter in 1..=self.cfg.iterations {
            let (report, _, _) = self.run_iteration(&m_g, &m_c, iter)?;
            m_g = report.new_models.m_g.clone();
            m_c = report.new_models.m_c.clone();
            reports.push(report);
            if self.cancelled() {
                break;
            }
        }
        let report = RunReport {
            config: self.cfg.clone(),
            corpus_digest: corpus_digest(&self.corpus),
            iterations: reports.clone(),
        };
        std::fs::write(
            self.cfg.out_dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        self.write_validation_records()?;
        Ok(reports)
    }

    fn write_validation_records(&self) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        std::fs::write(self.cfg.out_dir.join("validation.jsonl"), out)?;
        Ok(())
    }

    /// One iteration: `step_size` candidate attempts with interleaved
    /// negatives, JSONL export, and fine-tune registration. Returns the
    /// report plus both training sets (generative, and classification or
    /// second-language generative).
    pub fn run_iteration(
        &mut self,
        m_g: &ModelRef,
        m_c: &ModelRef,
        iter: u32,
    ) -> Result<(IterationReport, Vec<TrainingExample>, Vec<TrainingExample>)> {
        if self.corpus.is_empty() {
            return Err(Error::Corpus("corpus has no tables".to_string()));
        }
        let mut train_g: Vec<TrainingExample> = Vec::new();
        let mut train_c: Vec<TrainingExample> = Vec::new();
        let mut rejected: BTreeMap<String, u32> = BTreeMap::new();
        let mut validated = 0u32;
        let mut negatives_attempted = 0u32;
        let mut negatives_validated = 0u32;
        let mut negative_budget = 0f64;
        let mut warnings = Vec::new();

        let execution_mode = self.cfg.validation.mode == ValidationMode::Execution
            && !self.cfg.mode_flags.no_execution_validation;

        let mut attempted = 0u32;
        for j in 0..self.cfg.step_size {
            if self.cancelled() {
                warnings.push(format!(
                    "interrupted after {attempted} of {} candidates; partial counts",
                    self.cfg.step_size
                ));
                break;
            }
            attempted += 1;
            let seed = derive_seed(self.cfg.root_seed, "candidate", &[u64::from(iter), u64::from(j)]);
            let (table_idx, col_idx) = self.pool.next();
            let outcome = if execution_mode {
                self.attempt_execution_candidate(m_g, m_c, iter, j, seed, table_idx)?
            } else {
                self.attempt_classification_candidate(m_g, m_c, iter, j, seed, table_idx, col_idx)?
            };
            match outcome {
                Attempt::Validated { g, c } => {
                    validated += 1;
                    train_g.push(*g);
                    if let Some(c) = c {
                        train_c.push(*c);
                    }
                    // Negatives ride on validated positives so the final
                    // ratio tracks the configured value. Only the
                    // classification families define negatives.
                    let supports_negatives = matches!(
                        self.cfg.family,
                        TaskFamily::ErrorDetection | TaskFamily::SchemaMatching
                    );
                    if supports_negatives {
                        negative_budget += self.cfg.negatives_ratio;
                        let mut n = 0u64;
                        while negative_budget >= 1.0 {
                            negative_budget -= 1.0;
                            negatives_attempted += 1;
                            let neg_seed = derive_seed(
                                self.cfg.root_seed,
                                "negative",
                                &[u64::from(iter), u64::from(j), n],
                            );
                            n += 1;
                            if let Some(example) =
                                self.attempt_negative(m_c, iter, j, neg_seed)?
                            {
                                negatives_validated += 1;
                                train_c.push(example);
                            }
                        }
                    }
                }
                Attempt::Rejected(reason) => {
                    *rejected.entry(reason).or_insert(0) += 1;
                }
            }
        }

        if validated == 0 {
            warnings.push("NoValidatedData: every candidate was rejected; fine-tune skipped".to_string());
        }

        // Export.
        let iter_dir = self.cfg.out_dir.join(format!("iter_{iter}"));
        std::fs::create_dir_all(&iter_dir)?;
        let mut exports = BTreeMap::new();
        let (g_name, c_name) = if execution_mode {
            let l = self.cfg.family.language().expect("code family");
            let lp = self.cfg.second_language.as_deref().expect("second language");
            (format!("train_g_{l}.jsonl"), format!("train_g_{lp}.jsonl"))
        } else {
            ("train_g.jsonl".to_string(), "train_c.jsonl".to_string())
        };
        let g_path = iter_dir.join(&g_name);
        let c_path = iter_dir.join(&c_name);
        export_training_jsonl(&train_g, &g_path)?;
        export_training_jsonl(&train_c, &c_path)?;
        exports.insert("train_g".to_string(), g_path.display().to_string());
        exports.insert("train_c".to_string(), c_path.display().to_string());

        // Fine-tune, re-basing on the vanilla base model every iteration.
        // Skipped on an interrupted iteration: partial data is exported but
        // never trained on.
        let mut new_m_g = m_g.clone();
        let mut new_m_c = m_c.clone();
        if validated > 0 && !self.cancelled() {
            if !self.cfg.mode_flags.no_generator_finetune {
                if let Some(model) = self.submit(&g_path, iter, &mut warnings)? { new_m_g = model }
            }
            if !train_c.is_empty() {
                let second_trains = !execution_mode || self.cfg.lockstep_second;
                if second_trains {
                    let base = match (&execution_mode, &self.cfg.second_model) {
                        (true, Some(second)) => second.clone(),
                        _ => self.cfg.base_model.clone(),
                    };
                    if let Some(model) = self.submit_for(&base, &c_path, iter, &mut warnings)? { new_m_c = model }
                }
            }
        }

        let report = IterationReport {
            iteration: iter,
            candidates: attempted,
            validated,
            rejected_by_reason: rejected,
            negatives_attempted,
            negatives_validated,
            train_g_size: train_g.len(),
            train_c_size: train_c.len(),
            new_models: NewModels {
                m_g: new_m_g,
                m_c: new_m_c,
            },
            exports,
            warnings,
        };
        debug_assert_eq!(
            report.candidates,
            report.validated + report.rejected_by_reason.values().sum::<u32>()
        );
        Ok((report, train_g, train_c))
    }

    fn submit(
        &self,
        file: &Path,
        iter: u32,
        warnings: &mut Vec<String>,
    ) -> Result<Option<ModelRef>> {
        self.submit_for(&self.cfg.base_model, file, iter, warnings)
    }

    fn submit_for(
        &self,
        base: &ModelRef,
        file: &Path,
        iter: u32,
        warnings: &mut Vec<String>,
    ) -> Result<Option<ModelRef>> {
        let job = FineTuneJob::new(
            base.clone(),
            file,
            self.cfg.finetune,
            iter,
            self.cfg.mode_flags.export_only,
        );
        let done = self.client.submit_finetune(job)?;
        match done.new_model() {
            Some(m) => Ok(Some(m.clone())),
            None => {
                if let crate::model::FineTuneStatus::Failed { reason } = &done.status {
                    warnings.push(format!("fine-tune failed, models carried over: {reason}"));
                }
                Ok(None)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attempt_classification_candidate(
        &mut self,
        m_g: &ModelRef,
        m_c: &ModelRef,
        iter: u32,
        j: u32,
        seed: u64,
        table_idx: usize,
        col_idx: usize,
    ) -> Result<Attempt> {
        let table = &self.corpus[table_idx];
        let family = self.cfg.family.clone();
        let mut record = CandidateRecord {
            iteration: iter,
            candidate: j,
            negative: false,
            kind: family.tag(),
            table: table.name.clone(),
            column: None,
            question: None,
            seed,
            status: String::new(),
            completion: None,
            second_completion: None,
            outcome: None,
        };

        // Build the generative instance over the pooled target.
        let t_g = match &family {
            TaskFamily::ErrorDetection => {
                record.column = Some(col_idx);
                let column = table.column_table(col_idx)?;
                instantiate_generative(&family, &column, seed, TaskContext::None, &self.templates)?
            }
            TaskFamily::SchemaMatching => {
                instantiate_generative(&family, table, seed, TaskContext::None, &self.templates)?
            }
            _ => {
                // Code family under model-based validation: brainstorm first.
                let question = match self.brainstorm(m_g, table) {
                    Ok(q) => q,
                    Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
                    Err(_) => {
                        return self.reject(record, "brainstorm-failure");
                    }
                };
                record.question = Some(question.clone());
                instantiate_generative(
                    &family,
                    table,
                    seed,
                    TaskContext::Question(question),
                    &self.templates,
                )?
            }
        };

        // Dedup by task digest before spending a generation call.
        let task_digest = t_g.fingerprint().exact;
        if !self.seen_tasks.insert(task_digest) {
            return self.reject(record, "duplicate");
        }

        let raw = match self.client.complete(m_g, &t_g.prompt(DecodeParams::generation())) {
            Ok(raw) => raw,
            Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
            Err(_) => return self.reject(record, "generation-transport"),
        };
        let c = match parse_completion(&t_g.kind, &raw) {
            Ok(c) => c,
            Err(_) => return self.reject(record, "parse-failure"),
        };
        record.completion = Some(c.render());

        let t_c = match apply_dual_transform(&t_g, &c) {
            Ok(t_c) => t_c,
            Err(_) => return self.reject(record, "dual-transform"),
        };
        // The validator is asked the classification question, so the
        // comparison target is the dual's expected completion (for schema
        // matching the mapping list, not the whole generated table).
        let expected = t_c.expected.clone().unwrap_or_else(|| c.clone());

        let vcfg = self.cfg.effective_validation(seed);
        let outcome = validate_classification(&self.client, m_c, &t_c, &expected, &vcfg)?;
        record.outcome = Some(outcome.clone());
        if !outcome.validated {
            let reason = if outcome.abort.is_some() {
                "validation-transport"
            } else {
                "validation-mismatch"
            };
            return self.reject(record, reason);
        }

        record.status = "validated".to_string();
        self.records.push(record.clone());

        let table_b = match &c {
            Completion::GeneratedTableWithMappings { table, .. } => {
                Some(TableSpec::from_table(table))
            }
            _ => None,
        };
        let provenance = Provenance {
            table: table.name.clone(),
            column: record.column,
            kind: family.tag(),
            iteration: iter,
            candidate: j,
            seed,
            negative: false,
            question: record.question.clone(),
            table_b,
            validation: outcome.digest(),
        };
        let g = TrainingExample {
            task: t_g,
            completion: c,
            provenance: provenance.clone(),
        };
        let c_example = TrainingExample {
            task: t_c,
            completion: expected,
            provenance,
        };
        Ok(Attempt::Validated {
            g: Box::new(g),
            c: Some(Box::new(c_example)),
        })
    }

    fn attempt_execution_candidate(
        &mut self,
        m_l: &ModelRef,
        m_lprime: &ModelRef,
        iter: u32,
        j: u32,
        seed: u64,
        table_idx: usize,
    ) -> Result<Attempt> {
        let table = &self.corpus[table_idx];
        let family = self.cfg.family.clone();
        let second_language = self
            .cfg
            .second_language
            .clone()
            .expect("checked at config time");
        let mut record = CandidateRecord {
            iteration: iter,
            candidate: j,
            negative: false,
            kind: family.tag(),
            table: table.name.clone(),
            column: None,
            question: None,
            seed,
            status: String::new(),
            completion: None,
            second_completion: None,
            outcome: None,
        };

        let question = match self.brainstorm(m_l, table) {
            Ok(q) => q,
            Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
            Err(_) => return self.reject(record, "brainstorm-failure"),
        };
        record.question = Some(question.clone());
        let t_g = instantiate_generative(
            &family,
            table,
            seed,
            TaskContext::Question(question.clone()),
            &self.templates,
        )?;

        let task_digest = t_g.fingerprint().exact;
        if !self.seen_tasks.insert(task_digest) {
            return self.reject(record, "duplicate");
        }

        let vcfg = self.cfg.effective_validation(seed);
        let (outcome, c_l, c_lprime) = match validate_generative_execution(
            &self.client,
            m_l,
            m_lprime,
            &t_g,
            &second_language,
            &vcfg,
            &self.registry,
        ) {
            Ok(r) => r,
            Err(Error::UnparseableCompletion(_)) => {
                return self.reject(record, "parse-failure")
            }
            Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
            Err(Error::Transport(_)) => return self.reject(record, "generation-transport"),
            Err(e) => return Err(e),
        };
        record.completion = Some(c_l.render());
        record.second_completion = Some(c_lprime.render());
        record.outcome = Some(outcome.clone());
        if !outcome.validated {
            return self.reject(record, "execution-mismatch");
        }

        record.status = "validated".to_string();
        self.records.push(record.clone());

        let provenance = Provenance {
            table: table.name.clone(),
            column: None,
            kind: family.tag(),
            iteration: iter,
            candidate: j,
            seed,
            negative: false,
            question: Some(question),
            table_b: None,
            validation: outcome.digest(),
        };
        let g = TrainingExample {
            task: t_g.clone(),
            completion: c_l,
            provenance: provenance.clone(),
        };
        let second = TrainingExample {
            task: crate::validate::retarget(&t_g, &second_language),
            completion: c_lprime,
            provenance,
        };
        Ok(Attempt::Validated {
            g: Box::new(g),
            c: Some(Box::new(second)),
        })
    }

    fn attempt_negative(
        &mut self,
        m_c: &ModelRef,
        iter: u32,
        j: u32,
        neg_seed: u64,
    ) -> Result<Option<TrainingExample>> {
        let mut rng = SplitMix64::new(derive_seed(neg_seed, "negative-table", &[]));
        let primary_idx = rng.next_below(self.corpus.len() as u64) as usize;
        let primary = self.corpus[primary_idx].clone();
        let secondary = if matches!(self.cfg.family, TaskFamily::SchemaMatching) {
            if self.corpus.len() < 2 {
                return Ok(None);
            }
            let mut other = rng.next_below(self.corpus.len() as u64 - 1) as usize;
            if other >= primary_idx {
                other += 1;
            }
            Some(self.corpus[other].clone())
        } else {
            None
        };
        let (instance, expected) = match sample_negative_instance(
            &self.cfg.family,
            &primary,
            secondary.as_ref(),
            neg_seed,
            &self.templates,
        ) {
            Ok(pair) => pair,
            Err(Error::UnsupportedKind(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut record = CandidateRecord {
            iteration: iter,
            candidate: j,
            negative: true,
            kind: self.cfg.family.tag(),
            table: primary.name.clone(),
            column: column_of(&instance, &primary),
            question: None,
            seed: neg_seed,
            status: String::new(),
            completion: Some(expected.render()),
            second_completion: None,
            outcome: None,
        };
        let vcfg = self.cfg.effective_validation(neg_seed);
        let outcome = validate_classification(&self.client, m_c, &instance, &expected, &vcfg)?;
        record.outcome = Some(outcome.clone());
        if !outcome.validated {
            record.status = "rejected:negative-validation".to_string();
            self.records.push(record);
            return Ok(None);
        }
        record.status = "validated".to_string();
        self.records.push(record.clone());
        let provenance = Provenance {
            table: primary.name.clone(),
            column: record.column,
            kind: self.cfg.family.tag(),
            iteration: iter,
            candidate: j,
            seed: neg_seed,
            negative: true,
            question: None,
            table_b: secondary.as_ref().map(TableSpec::from_table),
            validation: outcome.digest(),
        };
        Ok(Some(TrainingExample {
            task: instance,
            completion: expected,
            provenance,
        }))
    }

    fn brainstorm(&self, model: &ModelRef, table: &Table) -> Result<String> {
        let prompt = brainstorm_prompt(table, &self.templates, DecodeParams::generation());
        let raw = self.client.complete(model, &prompt)?;
        match parse_question(&raw)? {
            Completion::Question { text } => Ok(text),
            _ => unreachable!("parse_question yields questions"),
        }
    }

    fn reject(&mut self, mut record: CandidateRecord, reason: &str) -> Result<Attempt> {
        record.status = format!("rejected:{reason}");
        self.records.push(record);
        Ok(Attempt::Rejected(reason.to_string()))
    }
}

/// Identify which column of `table` a single-column instance covers, for
/// provenance.
fn column_of(instance: &TaskInstance, table: &Table) -> Option<usize> {
    let inst_table = instance.tables.first()?;
    if inst_table.column_count() != 1 {
        return None;
    }
    let digest = inst_table.digest_exact();
    (0..table.column_count()).find(|&c| {
        table
            .column_table(c)
            .map(|col| col.digest_exact() == digest)
            .unwrap_or(false)
    })
}

enum Attempt {
    Validated {
        g: Box<TrainingExample>,
        c: Option<Box<TrainingExample>>,
    },
    Rejected(String),
}

/// Run the configured pipeline end to end.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<Vec<IterationReport>> {
    Pipeline::new(cfg)?.run()
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Write a training set as chat-format JSONL, one example per line:
/// `{"messages":[system,user,assistant],"meta":provenance}`. Ordering is
/// stable (by provenance), so identical runs export identical bytes.
pub fn export_training_jsonl(examples: &[TrainingExample], path: &Path) -> Result<usize> {
    let mut sorted: Vec<&TrainingExample> = examples.iter().collect();
    sorted.sort_by_key(|e| {
        (
            e.provenance.iteration,
            e.provenance.candidate,
            e.provenance.negative,
            e.provenance.seed,
        )
    });
    let mut out = String::new();
    for example in sorted {
        let prompt = example.task.prompt(DecodeParams::validation());
        let line = serde_json::json!({
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
                {"role": "assistant", "content": example.completion.render_expected(&example.task.kind)},
            ],
            "meta": example.provenance,
        });
        let _ = writeln!(out, "{line}");
    }
    std::fs::write(path, &out)?;
    Ok(examples.len())
}

/// One line of an exported training file, as read back for re-validation.
#[derive(Debug, Clone, Deserialize)]
pub struct ExportedExample {
    pub messages: Vec<ExportedMessage>,
    pub meta: Provenance,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExportedMessage {
    pub role: String,
    pub content: String,
}

impl ExportedExample {
    pub fn assistant_content(&self) -> Result<&str> {
        self.messages
            .iter()
            .find(|m| m.role == "assistant")
            .map(|m| m.content.as_str())
            .ok_or_else(|| Error::Config("export line has no assistant message".to_string()))
    }
}

pub fn load_export(path: &Path) -> Result<Vec<ExportedExample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read export {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: ExportedExample = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(ex);
    }
    Ok(out)
}

/// Rebuild every exported example's classification task from the corpus and
/// its provenance, re-run permutation validation against `m_c`, and return
/// (total, revalidated) counts.
///
/// Supports error-detection and schema-matching exports (code duals carry
/// no reconstructible table transform).
pub fn revalidate_export(
    export_path: &Path,
    corpus_dir: &Path,
    client: &ModelClient,
    m_c: &ModelRef,
    validation: &ValidationConfig,
) -> Result<(usize, usize)> {
    let corpus = load_corpus(corpus_dir)?;
    let by_name: BTreeMap<&str, &Table> =
        corpus.iter().map(|t| (t.name.as_str(), t)).collect();
    let templates = TemplateSet::default();
    let examples = load_export(export_path)?;
    let mut revalidated = 0usize;
    for example in &examples {
        let table = by_name.get(example.meta.table.as_str()).ok_or_else(|| {
            Error::Corpus(format!(
                "table '{}' from export not found in corpus",
                example.meta.table
            ))
        })?;
        let (t_c, expected) = rebuild_classification(example, table, &templates)?;
        let mut vcfg = *validation;
        vcfg.seed = derive_seed(example.meta.seed, "validate", &[]);
        let outcome = validate_classification(client, m_c, &t_c, &expected, &vcfg)?;
        if outcome.validated {
            revalidated += 1;
        }
    }
    Ok((examples.len(), revalidated))
}

fn rebuild_classification(
    example: &ExportedExample,
    table: &Table,
    templates: &TemplateSet,
) -> Result<(TaskInstance, Completion)> {
    let meta = &example.meta;
    if meta.kind == TaskFamily::ErrorDetection.tag() {
        let family = TaskFamily::ErrorDetection;
        let column = table.column_table(meta.column.ok_or_else(|| {
            Error::Config("error-detection export line has no column index".to_string())
        })?)?;
        let kind = TaskKind::classification(family.clone());
        let expected = parse_completion(&kind, example.assistant_content()?)?;
        if meta.negative {
            let (instance, empty) =
                sample_negative_instance(&family, &column, None, meta.seed, templates)?;
            return Ok((instance, empty));
        }
        let gen = instantiate_generative(&family, &column, meta.seed, TaskContext::None, templates)?;
        let t_c = apply_dual_transform(&gen, &expected)?;
        Ok((t_c, expected))
    } else if meta.kind == TaskFamily::SchemaMatching.tag() {
        let family = TaskFamily::SchemaMatching;
        let kind = TaskKind::classification(family.clone());
        let expected = parse_completion(&kind, example.assistant_content()?)?;
        let table_b = meta
            .table_b
            .as_ref()
            .ok_or_else(|| {
                Error::Config("schema-matching export line has no table_b".to_string())
            })?
            .to_table("table-b")?;
        if meta.negative {
            let (instance, empty) = sample_negative_instance(
                &family,
                table,
                Some(&table_b),
                meta.seed,
                templates,
            )?;
            return Ok((instance, empty));
        }
        let gen = instantiate_generative(&family, table, meta.seed, TaskContext::None, templates)?;
        let pairs = match &expected {
            Completion::MappingList { pairs } => pairs.clone(),
            _ => return Err(Error::VariantMismatch("expected a mapping list".to_string())),
        };
        let generated = Completion::GeneratedTableWithMappings {
            table: table_b,
            pairs,
        };
        let t_c = apply_dual_transform(&gen, &generated)?;
        Ok((t_c, expected))
    } else {
        Err(Error::UnsupportedKind(format!(
            "re-validation is not defined for {} exports",
            meta.kind
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let m = ModelRef::scripted("m", "s.json");
        let mut cfg = PipelineConfig::new(TaskFamily::ErrorDetection, "corpus", "out", m);
        cfg.iterations = 0;
        assert!(cfg.check().is_err());
        cfg.iterations = 1;
        cfg.negatives_ratio = -0.5;
        assert!(cfg.check().is_err());
        cfg.negatives_ratio = 0.0;
        cfg.validation.mode = ValidationMode::Execution;
        assert!(cfg.check().is_err(), "execution mode needs a code family");
    }

    #[test]
    fn pool_covers_all_columns_before_repeating() {
        let t1 = crate::table::parse_table_csv(b"a,b\n1,2\n", "t1").unwrap();
        let t2 = crate::table::parse_table_csv(b"c\n3\n", "t2").unwrap();
        let corpus = vec![t1, t2];
        let mut pool = CandidatePool::new(&TaskFamily::ErrorDetection, &corpus, 5);
        let mut seen = BTreeSet::new();
        for _ in 0..3 {
            seen.insert(pool.next());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn export_is_sorted_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let table =
            crate::table::parse_table_csv(b"states\nOhio\nTexas\nUtah\n", "states").unwrap();
        let templates = TemplateSet::default();
        let mk = |candidate: u32, seed: u64| {
            let gen = instantiate_generative(
                &TaskFamily::ErrorDetection,
                &table,
                seed,
                TaskContext::None,
                &templates,
            )
            .unwrap();
            let c = Completion::error_set([format!("err{candidate}")]);
            TrainingExample {
                task: apply_dual_transform(&gen, &c).unwrap(),
                completion: c,
                provenance: Provenance {
                    table: "states".to_string(),
                    column: Some(0),
                    kind: "error-detection".to_string(),
                    iteration: 1,
                    candidate,
                    seed,
                    negative: false,
                    question: None,
                    table_b: None,
                    validation: "d".to_string(),
                },
            }
        };
        let examples = vec![mk(2, 9), mk(0, 4), mk(1, 7)];
        let n = export_training_jsonl(&examples, &path).unwrap();
        assert_eq!(n, 3);
        let loaded = load_export(&path).unwrap();
        let order: Vec<u32> = loaded.iter().map(|e| e.meta.candidate).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(loaded[0].assistant_content().unwrap().contains("err0"));
    }

    #[test]
    fn empty_export_creates_file_with_zero_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let n = export_training_jsonl(&[], &path).unwrap();
        assert_eq!(n, 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn preset_cancellation_finalizes_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_dir = dir.path().join("corpus");
        std::fs::create_dir_all(&corpus_dir).unwrap();
        std::fs::write(corpus_dir.join("t.csv"), "a,b\nx,1\ny,2\n").unwrap();
        let script = dir.path().join("s.json");
        std::fs::write(&script, r#"{"key_mode":"exact","entries":{}}"#).unwrap();
        let mut cfg = PipelineConfig::new(
            TaskFamily::ErrorDetection,
            &corpus_dir,
            dir.path().join("out"),
            ModelRef::scripted("m", &script),
        );
        cfg.step_size = 5;
        let mut pipeline = Pipeline::new(cfg.clone()).unwrap();
        pipeline
            .cancel_flag()
            .store(true, std::sync::atomic::Ordering::SeqCst);
        let reports = pipeline.run().unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].candidates, 0, "no candidate attempted");
        assert!(reports[0].warnings.iter().any(|w| w.contains("interrupted")));
        assert!(cfg.out_dir.join("report.json").exists());
    }
}
