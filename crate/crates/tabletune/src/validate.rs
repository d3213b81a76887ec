//! The two validation procedures that gate training-data admission.
//!
//! **Permutation validation** re-renders a classification task over N
//! seeded permutations of its table(s) and asks the validator model each
//! time; the candidate completion is trusted only if every round reproduces
//! it. **Execution validation** generates the same task's code in two
//! languages and executes both on N row samples of the table (the full
//! table first); any result disagreement or execution error rejects the
//! pair — a shared crash is not evidence of correctness.
//!
//! Both are deterministic given their seed: same inputs, same outcome,
//! including the per-round detail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::compare::results_equal;
use crate::exec::{CodeSnippet, ExecutorRegistry};
use crate::model::{DecodeParams, ModelClient, ModelRef};
use crate::rng::derive_seed;
use crate::table::sample_rows;
use crate::task::{
    completions_equal, parse_completion, Completion, Facet, TaskInstance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Permutation,
    Execution,
    ModelBasedForCode,
}

/// Validation knobs. `n_rounds` is N; `permute` exists for the ablation
/// that keeps the N rounds but drops the row/column shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub n_rounds: u32,
    pub seed: u64,
    pub mode: ValidationMode,
    /// Row-sample size for execution rounds, as a fraction of the table
    /// (minimum one row).
    pub sample_fraction: f64,
    /// Execute round 1 on the full table; divergence visible there is then
    /// caught deterministically.
    pub include_full_table_first: bool,
    pub permute: bool,
}

impl ValidationConfig {
    pub fn new(mode: ValidationMode, n_rounds: u32, seed: u64) -> ValidationConfig {
        ValidationConfig {
            n_rounds: n_rounds.max(1),
            seed,
            mode,
            sample_fraction: 0.5,
            include_full_table_first: true,
            permute: true,
        }
    }
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig::new(ValidationMode::Permutation, 5, 0)
    }
}

/// What happened in one validation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDetail {
    pub round: u32,
    /// Permutation seed (permutation mode) or row-sample digest (execution
    /// mode) the round ran under.
    pub input: String,
    /// Digest or summary of what came back.
    pub observed: String,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub validated: bool,
    pub rounds_run: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_round: Option<u32>,
    pub detail: Vec<RoundDetail>,
    /// Set when the run was cut short by infrastructure (model transport
    /// failure) rather than a mismatch; the candidate is still discarded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

impl ValidationOutcome {
    fn validated(rounds: u32, detail: Vec<RoundDetail>) -> ValidationOutcome {
        ValidationOutcome {
            validated: true,
            rounds_run: rounds,
            failure_round: None,
            detail,
            abort: None,
        }
    }

    fn rejected(round: u32, detail: Vec<RoundDetail>) -> ValidationOutcome {
        ValidationOutcome {
            validated: false,
            rounds_run: round,
            failure_round: Some(round),
            detail,
            abort: None,
        }
    }

    fn aborted(round: u32, detail: Vec<RoundDetail>, reason: String) -> ValidationOutcome {
        ValidationOutcome {
            validated: false,
            rounds_run: round,
            failure_round: Some(round),
            detail,
            abort: Some(reason),
        }
    }

    /// Stable digest of the outcome, referenced by training-example
    /// provenance.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(b"validation\x00");
        h.update(serde_json::to_string(self).expect("outcome json").as_bytes());
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Permutation-invariance validation of a classification candidate.
///
/// For each round the task's tables are permuted under a round-distinct
/// seed (both tables for schema matching), the task is re-rendered, the
/// validator model is asked, and its parsed answer is compared to `c`.
/// The first mismatch — or parse failure, counted conservatively as a
/// mismatch — rejects; N clean rounds validate.
pub fn validate_classification(
    client: &ModelClient,
    m_c: &ModelRef,
    t_c: &TaskInstance,
    c: &Completion,
    cfg: &ValidationConfig,
) -> Result<ValidationOutcome> {
    if t_c.kind.facet != Facet::Classification {
        return Err(Error::Config(
            "permutation validation runs on classification instances".to_string(),
        ));
    }
    let mut detail = Vec::with_capacity(cfg.n_rounds as usize);
    for round in 1..=cfg.n_rounds {
        let round_seed = derive_seed(cfg.seed, "validation-round", &[u64::from(round)]);
        let variant = if cfg.permute {
            t_c.with_permuted_tables(round_seed)
        } else {
            t_c.clone()
        };
        let input = if cfg.permute {
            format!("permutation-seed:{round_seed}")
        } else {
            "identity".to_string()
        };
        let raw = match client.complete(m_c, &variant.prompt(DecodeParams::validation())) {
            Ok(raw) => raw,
            Err(Error::ScriptMiss(m)) => return Err(Error::ScriptMiss(m)),
            Err(e) => {
                detail.push(RoundDetail {
                    round,
                    input,
                    observed: format!("transport: {e}"),
                    matched: false,
                });
                return Ok(ValidationOutcome::aborted(
                    round,
                    detail,
                    format!("TransportAbort: {e}"),
                ));
            }
        };
        let matched = match parse_completion(&t_c.kind, &raw) {
            Ok(answer) => completions_equal(&answer, c).unwrap_or(false),
            Err(_) => false,
        };
        detail.push(RoundDetail {
            round,
            input,
            observed: answer_digest(&raw),
            matched,
        });
        if !matched {
            return Ok(ValidationOutcome::rejected(round, detail));
        }
    }
    Ok(ValidationOutcome::validated(cfg.n_rounds, detail))
}

fn answer_digest(raw: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"answer\x00");
    h.update(raw.as_bytes());
    let out = h.finalize();
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Execution-invariance validation of a code-generative task.
///
/// Both models answer the same task, each in its own language; the two
/// programs are executed on N row samples of the task's table and must
/// agree every time under [`results_equal`]. On success both `(task, code)`
/// pairs are eligible training examples — equivalence certifies each
/// program through the other.
pub fn validate_generative_execution(
    client: &ModelClient,
    m_l: &ModelRef,
    m_lprime: &ModelRef,
    t_g: &TaskInstance,
    second_language: &str,
    cfg: &ValidationConfig,
    registry: &ExecutorRegistry,
) -> Result<(ValidationOutcome, Completion, Completion)> {
    if t_g.kind.facet != Facet::Generative || !t_g.kind.family.is_code() {
        return Err(Error::Config(
            "execution validation runs on code-generative instances".to_string(),
        ));
    }
    let first_language = t_g.kind.family.language().expect("code family");
    if first_language == second_language {
        return Err(Error::Config(format!(
            "execution validation needs two distinct languages, got '{first_language}' twice"
        )));
    }
    if !registry.knows(first_language) {
        return Err(Error::Registry(first_language.to_string()));
    }
    if !registry.knows(second_language) {
        return Err(Error::Registry(second_language.to_string()));
    }

    // Same task, retargeted for the second language.
    let t_g_prime = retarget(t_g, second_language);

    let raw_l = client.complete(m_l, &t_g.prompt(DecodeParams::generation()))?;
    let c_l = parse_completion(&t_g.kind, &raw_l)?;
    let raw_lprime = client.complete(m_lprime, &t_g_prime.prompt(DecodeParams::generation()))?;
    let c_lprime = parse_completion(&t_g_prime.kind, &raw_lprime)?;

    let snippet_l = to_snippet(&c_l, first_language);
    let snippet_lprime = to_snippet(&c_lprime, second_language);
    let table = &t_g.tables[0];
    let mut detail = Vec::with_capacity(cfg.n_rounds as usize);
    for round in 1..=cfg.n_rounds {
        let subsample = if round == 1 && cfg.include_full_table_first {
            table.clone()
        } else {
            let k = ((table.row_count() as f64) * cfg.sample_fraction).ceil() as usize;
            sample_rows(
                table,
                k.max(1),
                derive_seed(cfg.seed, "execution-sample", &[u64::from(round)]),
            )
        };
        let r = registry.execute(&snippet_l, &subsample)?;
        let r_prime = registry.execute(&snippet_lprime, &subsample)?;
        let matched = results_equal(&r, &r_prime);
        detail.push(RoundDetail {
            round,
            input: format!("rows:{}:{}", subsample.row_count(), subsample.digest_exact()),
            observed: format!("{} vs {}", r.summary(), r_prime.summary()),
            matched,
        });
        if !matched {
            return Ok((
                ValidationOutcome::rejected(round, detail),
                c_l,
                c_lprime,
            ));
        }
    }
    Ok((
        ValidationOutcome::validated(cfg.n_rounds, detail),
        c_l,
        c_lprime,
    ))
}

/// Retarget a code task to another output language and re-render.
pub fn retarget(t_g: &TaskInstance, language: &str) -> TaskInstance {
    let mut out = t_g.clone();
    out.kind.family = out.kind.family.with_language(language);
    out.rerender();
    out
}

fn to_snippet(c: &Completion, language: &str) -> CodeSnippet {
    match c {
        Completion::Code { source, .. } => CodeSnippet::new(language, source.clone()),
        other => CodeSnippet::new(language, other.render()),
    }
}

/// Model-based validation for code duals: the fallback used when execution
/// validation is off. Permutes the table and requires the verifier model to
/// consistently affirm the code.
pub fn validate_code_model_based(
    client: &ModelClient,
    m_c: &ModelRef,
    t_c: &TaskInstance,
    c: &Completion,
    cfg: &ValidationConfig,
) -> Result<ValidationOutcome> {
    if !t_c.kind.family.is_code() || t_c.kind.facet != Facet::Classification {
        return Err(Error::Config(
            "model-based code validation runs on code-classification duals".to_string(),
        ));
    }
    validate_classification(client, m_c, t_c, c, cfg)
}

/// Dispatch on the configured mode; exists so callers can stay
/// mode-agnostic. Execution mode has its own entry point because it also
/// produces the two completions.
pub fn validate_candidate(
    client: &ModelClient,
    m_c: &ModelRef,
    t_c: &TaskInstance,
    c: &Completion,
    cfg: &ValidationConfig,
) -> Result<ValidationOutcome> {
    match cfg.mode {
        ValidationMode::Permutation => validate_classification(client, m_c, t_c, c, cfg),
        ValidationMode::ModelBasedForCode => validate_code_model_based(client, m_c, t_c, c, cfg),
        ValidationMode::Execution => Err(Error::Config(
            "execution validation goes through validate_generative_execution".to_string(),
        )),
    }
}

/// Execute one snippet on every non-empty row subset of a small table and
/// report whether another snippet agrees everywhere. Exhaustive, so only
/// meant for fixtures (≤ ~12 rows).
pub fn agree_on_all_subsets(
    a: &CodeSnippet,
    b: &CodeSnippet,
    table: &crate::table::Table,
    registry: &ExecutorRegistry,
) -> Result<bool> {
    let n = table.row_count();
    assert!(n <= 16, "exhaustive subset check is for small fixtures");
    for mask in 1u32..(1 << n) {
        let rows: Vec<Vec<crate::table::CellValue>> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| table.rows[i].clone())
            .collect();
        let subset = crate::table::Table {
            name: table.name.clone(),
            headers: table.headers.clone(),
            rows,
        };
        let ra = registry.execute(a, &subset)?;
        let rb = registry.execute(b, &subset)?;
        if !results_equal(&ra, &rb) {
            return Ok(false);
        }
    }
    Ok(true)
}
