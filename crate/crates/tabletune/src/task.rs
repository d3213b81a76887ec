//! Task templates and the duality machinery: instantiate generative tasks
//! from a table, apply the dual transform to build the classification
//! counterpart, and parse and compare model completions.
//!
//! A task instance is the (instruction, table(s), expected completion)
//! triple the models are prompted with. Every generative kind has a
//! classification dual related by a deterministic transform: an invented
//! error is inserted into its source column, a generated Table-B is paired
//! with its Table-A, and candidate code is framed for a yes/no verifier.
//! An oracle model must answer both sides of a dual identically, which is
//! what validation exploits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ChatPrompt, DecodeParams, PromptFingerprint};
use crate::rng::{derive_seed, fold_str, SplitMix64};
use crate::table::{
    parse_table_markdown, permute, render_table_for_prompt, PromptCaps, Table,
};

// ---------------------------------------------------------------------------
// Kinds
// ---------------------------------------------------------------------------

/// The task families exercised by the pipeline. Code families carry their
/// target language tag, which must be known to the executor registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskFamily {
    ErrorDetection,
    SchemaMatching,
    NlToCode { language: String },
    DataTransform { language: String },
}

impl TaskFamily {
    pub fn is_code(&self) -> bool {
        matches!(
            self,
            TaskFamily::NlToCode { .. } | TaskFamily::DataTransform { .. }
        )
    }

    pub fn language(&self) -> Option<&str> {
        match self {
            TaskFamily::NlToCode { language } | TaskFamily::DataTransform { language } => {
                Some(language)
            }
            _ => None,
        }
    }

    /// Stable tag used in fingerprints, reports, and provenance.
    pub fn tag(&self) -> String {
        match self {
            TaskFamily::ErrorDetection => "error-detection".to_string(),
            TaskFamily::SchemaMatching => "schema-matching".to_string(),
            TaskFamily::NlToCode { language } => format!("nl-to-code:{language}"),
            TaskFamily::DataTransform { language } => format!("data-transform:{language}"),
        }
    }

    /// Same family with the code language swapped; identity for non-code
    /// families.
    pub fn with_language(&self, language: &str) -> TaskFamily {
        match self {
            TaskFamily::NlToCode { .. } => TaskFamily::NlToCode {
                language: language.to_string(),
            },
            TaskFamily::DataTransform { .. } => TaskFamily::DataTransform {
                language: language.to_string(),
            },
            other => other.clone(),
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Facet {
    Generative,
    Classification,
}

impl Facet {
    pub fn tag(self) -> &'static str {
        match self {
            Facet::Generative => "generative",
            Facet::Classification => "classification",
        }
    }
}

/// Family plus facet; the full identity of a prompt template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskKind {
    pub family: TaskFamily,
    pub facet: Facet,
}

impl TaskKind {
    pub fn generative(family: TaskFamily) -> TaskKind {
        TaskKind {
            family,
            facet: Facet::Generative,
        }
    }

    pub fn classification(family: TaskFamily) -> TaskKind {
        TaskKind {
            family,
            facet: Facet::Classification,
        }
    }

    pub fn tag(&self) -> String {
        format!("{}/{}", self.family.tag(), self.facet.tag())
    }
}

// ---------------------------------------------------------------------------
// Completions
// ---------------------------------------------------------------------------

/// Typed parse of a model answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Completion {
    /// Values flagged as data errors; empty is the "no error" answer.
    ErrorSet { values: BTreeSet<String> },
    /// Column mapping pairs; a set, so duplicates collapse and order never
    /// matters.
    MappingList { pairs: BTreeSet<(String, String)> },
    Code { language: String, source: String },
    GeneratedTableWithMappings {
        table: Table,
        pairs: BTreeSet<(String, String)>,
    },
    Question { text: String },
}

impl Completion {
    pub fn error_set<I, S>(values: I) -> Completion
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Completion::ErrorSet {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn mapping_list<I, S>(pairs: I) -> Completion
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Completion::MappingList {
            pairs: pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        }
    }

    pub fn code(language: impl Into<String>, source: impl Into<String>) -> Completion {
        Completion::Code {
            language: language.into(),
            source: source.into().trim().to_string(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Completion::ErrorSet { .. } => "ErrorSet",
            Completion::MappingList { .. } => "MappingList",
            Completion::Code { .. } => "Code",
            Completion::GeneratedTableWithMappings { .. } => "GeneratedTableWithMappings",
            Completion::Question { .. } => "Question",
        }
    }

    /// Canonical rendering: what goes into exported training data as the
    /// assistant message, and what `parse_completion` must round-trip.
    pub fn render(&self) -> String {
        match self {
            Completion::ErrorSet { values } => {
                serde_json::to_string(&values.iter().collect::<Vec<_>>()).expect("json array")
            }
            Completion::MappingList { pairs } => {
                let rows: Vec<[&String; 2]> = pairs.iter().map(|(a, b)| [a, b]).collect();
                serde_json::to_string(&rows).expect("json pairs")
            }
            Completion::Code { language, source } => {
                format!("```{language}\n{source}\n```")
            }
            Completion::GeneratedTableWithMappings { table, pairs } => {
                let rows: Vec<[&String; 2]> = pairs.iter().map(|(a, b)| [a, b]).collect();
                format!(
                    "{}\n\nmappings: {}",
                    crate::table::serialize_table_markdown(table),
                    serde_json::to_string(&rows).expect("json pairs")
                )
            }
            Completion::Question { text } => text.clone(),
        }
    }

    /// Rendering used as the expected assistant message for a task: code
    /// duals are trained as verifiers, so their expected answer is a literal
    /// `yes` plus the code echo.
    pub fn render_expected(&self, kind: &TaskKind) -> String {
        match self {
            Completion::Code { .. }
                if kind.facet == Facet::Classification && kind.family.is_code() =>
            {
                format!("yes\n{}", self.render())
            }
            _ => self.render(),
        }
    }

    /// Short digest of the canonical rendering, for records.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"completion\x00");
        h.update(self.render().as_bytes());
        let out = h.finalize();
        out[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-value normalization used before set comparison: trim, and render
/// numeric-looking values canonically so `08` and `8` collapse.
fn normalize_value(s: &str) -> String {
    let t = s.trim();
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => crate::table::CellValue::number(x).render(),
        _ => t.to_string(),
    }
}

fn normalize_set(values: &BTreeSet<String>) -> BTreeSet<String> {
    values.iter().map(|v| normalize_value(v)).collect()
}

fn normalize_pairs(pairs: &BTreeSet<(String, String)>) -> BTreeSet<(String, String)> {
    pairs
        .iter()
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .collect()
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Order-insensitive completion equality. Sets compare after per-value
/// normalization; code compares by exact source (execution equivalence is
/// the executors' job); questions compare case-insensitively with collapsed
/// whitespace. Different variants are an error, not `false`.
pub fn completions_equal(a: &Completion, b: &Completion) -> Result<bool> {
    match (a, b) {
        (Completion::ErrorSet { values: x }, Completion::ErrorSet { values: y }) => {
            Ok(normalize_set(x) == normalize_set(y))
        }
        (Completion::MappingList { pairs: x }, Completion::MappingList { pairs: y }) => {
            Ok(normalize_pairs(x) == normalize_pairs(y))
        }
        (
            Completion::Code { language: la, source: sa },
            Completion::Code { language: lb, source: sb },
        ) => Ok(la == lb && sa.trim() == sb.trim()),
        (
            Completion::GeneratedTableWithMappings { table: ta, pairs: pa },
            Completion::GeneratedTableWithMappings { table: tb, pairs: pb },
        ) => Ok(normalize_pairs(pa) == normalize_pairs(pb)
            && crate::table::tables_semantically_equal(ta, tb, false)),
        (Completion::Question { text: x }, Completion::Question { text: y }) => {
            Ok(collapse_whitespace(x).to_lowercase() == collapse_whitespace(y).to_lowercase())
        }
        _ => Err(Error::VariantMismatch(format!(
            "cannot compare {} with {}",
            a.variant_name(),
            b.variant_name()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

/// Prompt templates, one per (family, facet), as UTF-8 text with `{{table}}`,
/// `{{table_a}}`, `{{table_b}}`, `{{question}}`, `{{examples}}`, `{{code}}`
/// and `{{language}}` placeholders. The embedded defaults can be overridden
/// from a directory of `.txt` files to vary prompt wording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub error_detection_generative: String,
    pub error_detection_classification: String,
    pub schema_matching_generative: String,
    pub schema_matching_classification: String,
    pub nl_to_code_generative: String,
    pub nl_to_code_classification: String,
    pub data_transform_generative: String,
    pub data_transform_classification: String,
    pub question_brainstorm: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            error_detection_generative: include_str!("../templates/error_detection_generative.txt")
                .to_string(),
            error_detection_classification: include_str!(
                "../templates/error_detection_classification.txt"
            )
            .to_string(),
            schema_matching_generative: include_str!("../templates/schema_matching_generative.txt")
                .to_string(),
            schema_matching_classification: include_str!(
                "../templates/schema_matching_classification.txt"
            )
            .to_string(),
            nl_to_code_generative: include_str!("../templates/nl_to_code_generative.txt")
                .to_string(),
            nl_to_code_classification: include_str!("../templates/nl_to_code_classification.txt")
                .to_string(),
            data_transform_generative: include_str!("../templates/data_transform_generative.txt")
                .to_string(),
            data_transform_classification: include_str!(
                "../templates/data_transform_classification.txt"
            )
            .to_string(),
            question_brainstorm: include_str!("../templates/question_brainstorm.txt").to_string(),
        }
    }
}

impl TemplateSet {
    /// Load overrides from a directory; files are named like the embedded
    /// assets (`error_detection_generative.txt`, …). Missing files keep the
    /// default text.
    pub fn load_dir(dir: &Path) -> Result<TemplateSet> {
        let mut set = TemplateSet::default();
        let load = |name: &str, slot: &mut String| -> Result<()> {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
            Ok(())
        };
        load("error_detection_generative.txt", &mut set.error_detection_generative)?;
        load(
            "error_detection_classification.txt",
            &mut set.error_detection_classification,
        )?;
        load("schema_matching_generative.txt", &mut set.schema_matching_generative)?;
        load(
            "schema_matching_classification.txt",
            &mut set.schema_matching_classification,
        )?;
        load("nl_to_code_generative.txt", &mut set.nl_to_code_generative)?;
        load("nl_to_code_classification.txt", &mut set.nl_to_code_classification)?;
        load("data_transform_generative.txt", &mut set.data_transform_generative)?;
        load(
            "data_transform_classification.txt",
            &mut set.data_transform_classification,
        )?;
        load("question_brainstorm.txt", &mut set.question_brainstorm)?;
        Ok(set)
    }

    pub fn for_kind(&self, kind: &TaskKind) -> &str {
        match (&kind.family, kind.facet) {
            (TaskFamily::ErrorDetection, Facet::Generative) => &self.error_detection_generative,
            (TaskFamily::ErrorDetection, Facet::Classification) => {
                &self.error_detection_classification
            }
            (TaskFamily::SchemaMatching, Facet::Generative) => &self.schema_matching_generative,
            (TaskFamily::SchemaMatching, Facet::Classification) => {
                &self.schema_matching_classification
            }
            (TaskFamily::NlToCode { .. }, Facet::Generative) => &self.nl_to_code_generative,
            (TaskFamily::NlToCode { .. }, Facet::Classification) => {
                &self.nl_to_code_classification
            }
            (TaskFamily::DataTransform { .. }, Facet::Generative) => {
                &self.data_transform_generative
            }
            (TaskFamily::DataTransform { .. }, Facet::Classification) => {
                &self.data_transform_classification
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Task instances
// ---------------------------------------------------------------------------

/// Side information a task carries besides its tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskContext {
    None,
    /// Natural-language question for code tasks, produced by a prior
    /// brainstorm call.
    Question(String),
    /// Input/output example cell pairs for transform-by-example tasks.
    Examples(Vec<(String, String)>),
}

impl TaskContext {
    fn canonical(&self) -> String {
        match self {
            TaskContext::None => String::new(),
            TaskContext::Question(q) => collapse_whitespace(q).to_lowercase(),
            TaskContext::Examples(pairs) => pairs
                .iter()
                .map(|(i, o)| format!("{i}\x01{o}"))
                .collect::<Vec<_>>()
                .join("\x02"),
        }
    }
}

/// One concrete (instruction, table(s), expected completion) triple.
///
/// The instruction is fully rendered; the template it came from is kept so
/// the instance can be re-rendered after its tables are permuted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub instruction: String,
    pub template: String,
    pub tables: Vec<Table>,
    pub context: TaskContext,
    pub expected: Option<Completion>,
}

impl TaskInstance {
    fn render_instruction(
        kind: &TaskKind,
        template: &str,
        tables: &[Table],
        context: &TaskContext,
        expected: &Option<Completion>,
        caps: PromptCaps,
    ) -> String {
        let mut text = template.to_string();
        if let Some(t) = tables.first() {
            text = text.replace("{{table}}", &render_table_for_prompt(t, caps));
            text = text.replace("{{table_a}}", &render_table_for_prompt(t, caps));
        }
        if let Some(t) = tables.get(1) {
            text = text.replace("{{table_b}}", &render_table_for_prompt(t, caps));
        }
        match context {
            TaskContext::Question(q) => text = text.replace("{{question}}", q),
            TaskContext::Examples(pairs) => {
                let rendered: Vec<String> = pairs
                    .iter()
                    .map(|(i, o)| format!("{i} -> {o}"))
                    .collect();
                text = text.replace("{{examples}}", &rendered.join("\n"));
            }
            TaskContext::None => {}
        }
        if let Some(lang) = kind.family.language() {
            text = text.replace("{{language}}", lang);
        }
        if let Some(Completion::Code { source, .. }) = expected {
            if kind.facet == Facet::Classification {
                text = text.replace("{{code}}", source);
            }
        }
        text.trim_end().to_string()
    }

    fn build(
        kind: TaskKind,
        template: &str,
        tables: Vec<Table>,
        context: TaskContext,
        expected: Option<Completion>,
    ) -> TaskInstance {
        let instruction = TaskInstance::render_instruction(
            &kind,
            template,
            &tables,
            &context,
            &expected,
            PromptCaps::default(),
        );
        TaskInstance {
            kind,
            instruction,
            template: template.to_string(),
            tables,
            context,
            expected,
        }
    }

    /// Re-render the instruction from the current kind, template, tables,
    /// context and expected completion.
    pub fn rerender(&mut self) {
        self.instruction = TaskInstance::render_instruction(
            &self.kind,
            &self.template,
            &self.tables,
            &self.context,
            &self.expected,
            PromptCaps::default(),
        );
    }

    /// A copy with every table permuted under round-distinct seeds and the
    /// instruction re-rendered. Schema-matching permutes both tables.
    pub fn with_permuted_tables(&self, seed: u64) -> TaskInstance {
        let tables: Vec<Table> = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| permute(t, derive_seed(seed, "task-permute", &[i as u64])).0)
            .collect();
        let instruction = TaskInstance::render_instruction(
            &self.kind,
            &self.template,
            &tables,
            &self.context,
            &self.expected,
            PromptCaps::default(),
        );
        TaskInstance {
            kind: self.kind.clone(),
            instruction,
            template: self.template.clone(),
            tables,
            context: self.context.clone(),
            expected: self.expected.clone(),
        }
    }

    /// Fingerprint of this instance: the exact digest covers the current
    /// arrangement of the tables, the invariant digest is stable under any
    /// row/column permutation. Scripted models key on one or the other.
    pub fn fingerprint(&self) -> PromptFingerprint {
        let code = match &self.expected {
            Some(Completion::Code { source, .. }) if self.kind.facet == Facet::Classification => {
                source.clone()
            }
            _ => String::new(),
        };
        let mut exact = Sha256::new();
        exact.update(b"fp-exact\x00");
        exact.update(self.kind.tag().as_bytes());
        exact.update([0]);
        exact.update(self.context.canonical().as_bytes());
        exact.update([0]);
        exact.update(code.as_bytes());
        exact.update([0]);
        for t in &self.tables {
            exact.update(t.digest_exact().as_bytes());
            exact.update([1]);
        }
        let mut invariant = Sha256::new();
        invariant.update(b"fp-invariant\x00");
        invariant.update(self.kind.tag().as_bytes());
        invariant.update([0]);
        invariant.update(self.context.canonical().as_bytes());
        invariant.update([0]);
        invariant.update(code.as_bytes());
        invariant.update([0]);
        for t in &self.tables {
            invariant.update(t.digest_invariant().as_bytes());
            invariant.update([1]);
        }
        PromptFingerprint {
            kind: self.kind.tag(),
            exact: hex16(exact),
            invariant: hex16(invariant),
        }
    }

    /// Render the instance as a chat prompt.
    pub fn prompt(&self, decode: DecodeParams) -> ChatPrompt {
        let system = match self.kind.facet {
            Facet::Generative => {
                "You are a careful data assistant that creates table task answers.".to_string()
            }
            Facet::Classification => {
                "You are a careful data assistant that checks table task answers.".to_string()
            }
        };
        ChatPrompt {
            system,
            user: self.instruction.clone(),
            decode,
            fingerprint: self.fingerprint(),
        }
    }
}

fn hex16(h: Sha256) -> String {
    let out = h.finalize();
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fingerprint for the question-brainstorm preprocessing call on a table.
pub fn brainstorm_fingerprint(table: &Table) -> PromptFingerprint {
    let mut exact = Sha256::new();
    exact.update(b"fp-exact\x00brainstorm\x00");
    exact.update(table.digest_exact().as_bytes());
    let mut invariant = Sha256::new();
    invariant.update(b"fp-invariant\x00brainstorm\x00");
    invariant.update(table.digest_invariant().as_bytes());
    PromptFingerprint {
        kind: "brainstorm".to_string(),
        exact: hex16(exact),
        invariant: hex16(invariant),
    }
}

/// Render the brainstorm prompt asking for a question about `table`.
pub fn brainstorm_prompt(
    table: &Table,
    templates: &TemplateSet,
    decode: DecodeParams,
) -> ChatPrompt {
    let user = templates
        .question_brainstorm
        .replace(
            "{{table}}",
            &render_table_for_prompt(table, PromptCaps::default()),
        )
        .trim_end()
        .to_string();
    ChatPrompt {
        system: "You are a careful data assistant that creates table task answers.".to_string(),
        user,
        decode,
        fingerprint: brainstorm_fingerprint(table),
    }
}

// ---------------------------------------------------------------------------
// Instantiation
// ---------------------------------------------------------------------------

/// Build a generative task instance over table `r`.
///
/// Error detection samples one column by seed and asks for a realistic
/// error in it; schema matching presents the table as Table-A; code kinds
/// require a question (from a prior brainstorm call) or transform examples
/// in `context`.
pub fn instantiate_generative(
    family: &TaskFamily,
    r: &Table,
    seed: u64,
    context: TaskContext,
    templates: &TemplateSet,
) -> Result<TaskInstance> {
    if r.is_empty() {
        return Err(Error::EmptyTable(format!(
            "cannot instantiate {} over empty table '{}'",
            family.tag(),
            r.name
        )));
    }
    let kind = TaskKind::generative(family.clone());
    let template = templates.for_kind(&kind).to_string();
    match family {
        TaskFamily::ErrorDetection => {
            let col = SplitMix64::new(derive_seed(seed, "error-column", &[]))
                .next_below(r.column_count() as u64) as usize;
            let column = r.column_table(col)?;
            Ok(TaskInstance::build(
                kind,
                &template,
                vec![column],
                TaskContext::None,
                None,
            ))
        }
        TaskFamily::SchemaMatching => Ok(TaskInstance::build(
            kind,
            &template,
            vec![r.clone()],
            TaskContext::None,
            None,
        )),
        TaskFamily::NlToCode { .. } => {
            let ok = matches!(&context, TaskContext::Question(q) if !q.trim().is_empty());
            if !ok {
                return Err(Error::Config(
                    "nl-to-code tasks need a non-empty question in context".to_string(),
                ));
            }
            Ok(TaskInstance::build(
                kind,
                &template,
                vec![r.clone()],
                context,
                None,
            ))
        }
        TaskFamily::DataTransform { .. } => {
            let ok = matches!(&context, TaskContext::Examples(p) if !p.is_empty());
            if !ok {
                return Err(Error::Config(
                    "data-transform tasks need input/output examples in context".to_string(),
                ));
            }
            Ok(TaskInstance::build(
                kind,
                &template,
                vec![r.clone()],
                context,
                None,
            ))
        }
    }
}

/// Apply the dual transform: turn a generative instance plus its completion
/// into the classification instance whose expected answer is that same
/// completion.
///
/// * Error detection inserts the invented error into the source column at a
///   position derived from the content, so the construction is
///   deterministic without extra state.
/// * Schema matching pairs Table-A with the generated Table-B, shuffling
///   the columns of both.
/// * Code kinds frame (question or examples, table, code) for a verifier
///   whose expected answer is `yes` plus the code echo.
pub fn apply_dual_transform(gen: &TaskInstance, c: &Completion) -> Result<TaskInstance> {
    if gen.kind.facet != Facet::Generative {
        return Err(Error::VariantMismatch(
            "dual transform starts from a generative instance".to_string(),
        ));
    }
    let kind = TaskKind::classification(gen.kind.family.clone());
    match (&gen.kind.family, c) {
        (TaskFamily::ErrorDetection, Completion::ErrorSet { values }) => {
            if values.len() != 1 {
                return Err(Error::VariantMismatch(format!(
                    "error-detection generator must produce exactly one error, got {}",
                    values.len()
                )));
            }
            let error = values.iter().next().expect("one value").clone();
            let column = &gen.tables[0];
            let pos_seed = derive_seed(
                fold_str(&column.digest_exact()),
                "insert-position",
                &[fold_str(&error)],
            );
            let pos =
                SplitMix64::new(pos_seed).next_below(column.row_count() as u64 + 1) as usize;
            let mut rows = column.rows.clone();
            rows.insert(pos, vec![crate::table::CellValue::text(error)]);
            let table = Table {
                name: column.name.clone(),
                headers: column.headers.clone(),
                rows,
            };
            Ok(build_dual(gen, kind, vec![table], c.clone()))
        }
        (
            TaskFamily::SchemaMatching,
            Completion::GeneratedTableWithMappings { table, pairs },
        ) => {
            let shuffle_seed = derive_seed(
                fold_str(&gen.tables[0].digest_exact()),
                "schema-shuffle",
                &[fold_str(&table.digest_exact())],
            );
            let a = shuffle_columns(&gen.tables[0], derive_seed(shuffle_seed, "a", &[]));
            let b = shuffle_columns(table, derive_seed(shuffle_seed, "b", &[]));
            let expected = Completion::MappingList {
                pairs: pairs.clone(),
            };
            Ok(build_dual(gen, kind, vec![a, b], expected))
        }
        (TaskFamily::NlToCode { .. }, Completion::Code { .. })
        | (TaskFamily::DataTransform { .. }, Completion::Code { .. }) => {
            Ok(build_dual(gen, kind, gen.tables.clone(), c.clone()))
        }
        (family, completion) => Err(Error::VariantMismatch(format!(
            "{} cannot take a {} completion",
            family.tag(),
            completion.variant_name()
        ))),
    }
}

fn build_dual(
    gen: &TaskInstance,
    kind: TaskKind,
    tables: Vec<Table>,
    expected: Completion,
) -> TaskInstance {
    // The dual always renders from the default classification template;
    // template-set variation applies at instantiation time via the pipeline.
    let templates = TemplateSet::default();
    let template = templates.for_kind(&kind).to_string();
    TaskInstance::build(kind, &template, tables, gen.context.clone(), Some(expected))
}

fn shuffle_columns(t: &Table, seed: u64) -> Table {
    let mut order: Vec<usize> = (0..t.column_count()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let perm = crate::table::Permutation {
        row_order: (0..t.row_count()).collect(),
        col_order: order,
        seed,
    };
    crate::table::apply_permutation(t, &perm)
}

/// Build a classification instance straight from real data with an empty
/// expected answer: a clean column for error detection, or two unrelated
/// tables for schema matching. Still validated before entering a training
/// set.
pub fn sample_negative_instance(
    family: &TaskFamily,
    primary: &Table,
    secondary: Option<&Table>,
    seed: u64,
    templates: &TemplateSet,
) -> Result<(TaskInstance, Completion)> {
    if primary.is_empty() {
        return Err(Error::EmptyTable(format!(
            "cannot build negative over empty table '{}'",
            primary.name
        )));
    }
    match family {
        TaskFamily::ErrorDetection => {
            let col = SplitMix64::new(derive_seed(seed, "negative-column", &[]))
                .next_below(primary.column_count() as u64) as usize;
            let column = primary.column_table(col)?;
            let kind = TaskKind::classification(family.clone());
            let template = templates.for_kind(&kind).to_string();
            let expected = Completion::error_set(Vec::<String>::new());
            let inst = TaskInstance::build(
                kind,
                &template,
                vec![column],
                TaskContext::None,
                Some(expected.clone()),
            );
            Ok((inst, expected))
        }
        TaskFamily::SchemaMatching => {
            let other = secondary.ok_or_else(|| {
                Error::Config("schema-matching negatives need a second table".to_string())
            })?;
            let kind = TaskKind::classification(family.clone());
            let template = templates.for_kind(&kind).to_string();
            let expected = Completion::mapping_list(Vec::<(String, String)>::new());
            let inst = TaskInstance::build(
                kind,
                &template,
                vec![primary.clone(), other.clone()],
                TaskContext::None,
                Some(expected.clone()),
            );
            Ok((inst, expected))
        }
        other => Err(Error::UnsupportedKind(format!(
            "negatives are not defined for {}",
            other.tag()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Completion parsing
// ---------------------------------------------------------------------------

/// Parse a raw model answer into a typed completion for `kind`.
///
/// Free-text answers are scanned for their last JSON array (error sets,
/// mapping lists) or last fenced code block (code); an explicit "no error"
/// answer parses to an empty error set. Anything unusable is an
/// [`Error::UnparseableCompletion`], which callers treat as "discard the
/// candidate", never as a crash.
pub fn parse_completion(kind: &TaskKind, raw: &str) -> Result<Completion> {
    match (&kind.family, kind.facet) {
        (TaskFamily::ErrorDetection, facet) => {
            let values = match last_json_string_array(raw) {
                Some(v) => v,
                None if is_no_error_answer(raw) => Vec::new(),
                None => {
                    return Err(Error::UnparseableCompletion(format!(
                        "no JSON array in error-detection answer: {}",
                        snippet(raw)
                    )))
                }
            };
            if facet == Facet::Generative && values.len() != 1 {
                return Err(Error::UnparseableCompletion(format!(
                    "generative error answer must hold exactly one value, got {}",
                    values.len()
                )));
            }
            Ok(Completion::error_set(values))
        }
        (TaskFamily::SchemaMatching, Facet::Classification) => {
            let pairs = last_json_pair_array(raw).ok_or_else(|| {
                Error::UnparseableCompletion(format!(
                    "no JSON pair array in schema-matching answer: {}",
                    snippet(raw)
                ))
            })?;
            Ok(Completion::mapping_list(pairs))
        }
        (TaskFamily::SchemaMatching, Facet::Generative) => {
            let pairs = last_json_pair_array(raw).ok_or_else(|| {
                Error::UnparseableCompletion(format!(
                    "no mapping array in generated-table answer: {}",
                    snippet(raw)
                ))
            })?;
            let table = parse_table_markdown(raw, "table-b")?;
            Ok(Completion::GeneratedTableWithMappings {
                table,
                pairs: pairs.into_iter().collect(),
            })
        }
        (family, Facet::Generative) if family.is_code() => {
            let language = family.language().expect("code family").to_string();
            match last_fenced_block(raw) {
                Some((tag, body)) => Ok(Completion::code(
                    if tag.is_empty() { language } else { tag },
                    body,
                )),
                None if !raw.trim().is_empty() => Ok(Completion::code(language, raw.trim())),
                None => Err(Error::UnparseableCompletion(
                    "empty code answer".to_string(),
                )),
            }
        }
        (family, Facet::Classification) if family.is_code() => {
            let lowered = raw.trim_start().to_lowercase();
            if !lowered.starts_with("yes") {
                return Err(Error::UnparseableCompletion(format!(
                    "verifier answer did not affirm: {}",
                    snippet(raw)
                )));
            }
            let language = family.language().expect("code family").to_string();
            let (tag, body) = last_fenced_block(raw).ok_or_else(|| {
                Error::UnparseableCompletion("verifier answer has no code echo".to_string())
            })?;
            Ok(Completion::code(
                if tag.is_empty() { language } else { tag },
                body,
            ))
        }
        _ => Err(Error::UnsupportedKind(format!(
            "no parser for {}",
            kind.tag()
        ))),
    }
}

/// Parse a brainstormed question: first non-empty line, stripped of quotes.
pub fn parse_question(raw: &str) -> Result<Completion> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let text = line.trim_matches(['"', '\'']).trim().to_string();
    if text.is_empty() {
        return Err(Error::UnparseableCompletion(
            "empty brainstorm answer".to_string(),
        ));
    }
    Ok(Completion::Question { text })
}

fn snippet(raw: &str) -> String {
    let t = raw.trim();
    match t.char_indices().nth(60) {
        Some((i, _)) => format!("{}…", &t[..i]),
        None => t.to_string(),
    }
}

fn is_no_error_answer(raw: &str) -> bool {
    let lowered = raw.trim().to_lowercase();
    lowered == "none" || lowered.starts_with("no error")
}

/// Yield every balanced, string-aware `[…]` span in the text.
fn json_array_spans(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut depth = 0usize;
            let mut in_str = false;
            let mut escaped = false;
            let mut j = i;
            while j < bytes.len() {
                let b = bytes[j];
                if in_str {
                    if escaped {
                        escaped = false;
                    } else if b == b'\\' {
                        escaped = true;
                    } else if b == b'"' {
                        in_str = false;
                    }
                } else {
                    match b {
                        b'"' => in_str = true,
                        b'[' => depth += 1,
                        b']' => {
                            depth -= 1;
                            if depth == 0 {
                                spans.push(&raw[i..=j]);
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                j += 1;
            }
        }
        i += 1;
    }
    spans
}

fn last_json_string_array(raw: &str) -> Option<Vec<String>> {
    json_array_spans(raw)
        .into_iter()
        .filter_map(|span| {
            let values: Vec<serde_json::Value> = serde_json::from_str(span).ok()?;
            values
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Some(s),
                    serde_json::Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .collect::<Option<Vec<String>>>()
        })
        .next_back()
}

fn last_json_pair_array(raw: &str) -> Option<Vec<(String, String)>> {
    let non_empty = json_array_spans(raw)
        .into_iter()
        .filter_map(|span| {
            let values: Vec<serde_json::Value> = serde_json::from_str(span).ok()?;
            values
                .into_iter()
                .map(|v| {
                    let arr = v.as_array()?;
                    if arr.len() != 2 {
                        return None;
                    }
                    Some((arr[0].as_str()?.to_string(), arr[1].as_str()?.to_string()))
                })
                .collect::<Option<Vec<(String, String)>>>()
        }).rfind(|pairs| !pairs.is_empty());
    non_empty.or_else(|| {
        // A bare [] is a valid empty mapping answer.
        json_array_spans(raw).into_iter().rev().find_map(|span| {
            let values: Vec<serde_json::Value> = serde_json::from_str(span).ok()?;
            values.is_empty().then(Vec::new)
        })
    })
}

fn last_fenced_block(raw: &str) -> Option<(String, String)> {
    let mut blocks = Vec::new();
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim();
        if let Some(tag) = trimmed.strip_prefix("```") {
            let mut body = Vec::new();
            for inner in lines.by_ref() {
                if inner.trim().starts_with("```") {
                    break;
                }
                body.push(inner);
            }
            blocks.push((tag.trim().to_string(), body.join("\n").trim().to_string()));
        }
    }
    blocks
        .into_iter().rfind(|(_, b)| !b.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{parse_table_csv, CellValue};

    fn states_column() -> Table {
        parse_table_csv(
            b"states\nMississippi\nAlabama\nGeorgia\nTexas\nOhio\n",
            "states",
        )
        .unwrap()
    }

    fn football() -> Table {
        parse_table_csv(b"team,goals\nA,3\nB,5\n", "football").unwrap()
    }

    fn ed() -> TaskFamily {
        TaskFamily::ErrorDetection
    }

    #[test]
    fn instantiate_error_detection_embeds_column() {
        let t = states_column();
        let inst =
            instantiate_generative(&ed(), &t, 11, TaskContext::None, &TemplateSet::default())
                .unwrap();
        assert!(inst.instruction.contains("Mississippi"));
        assert_eq!(inst.kind.facet, Facet::Generative);
        assert_eq!(inst.tables.len(), 1);
        assert_eq!(inst.tables[0].column_count(), 1);
    }

    #[test]
    fn instantiate_nl_to_code_keeps_question() {
        let fam = TaskFamily::NlToCode {
            language: "sql-subset".to_string(),
        };
        let inst = instantiate_generative(
            &fam,
            &football(),
            0,
            TaskContext::Question("which team has the highest goal".to_string()),
            &TemplateSet::default(),
        )
        .unwrap();
        assert!(inst.instruction.contains("which team has the highest goal"));
        assert!(inst.instruction.contains("sql-subset"));
    }

    #[test]
    fn instantiate_rejects_empty_table() {
        let empty = Table::new("e", vec!["a".into()], vec![]).unwrap();
        let err =
            instantiate_generative(&ed(), &empty, 0, TaskContext::None, &TemplateSet::default())
                .unwrap_err();
        assert!(matches!(err, Error::EmptyTable(_)));
    }

    #[test]
    fn dual_transform_inserts_the_error() {
        let t = states_column();
        let gen =
            instantiate_generative(&ed(), &t, 11, TaskContext::None, &TemplateSet::default())
                .unwrap();
        let c = Completion::error_set(["Missisipi"]);
        let dual = apply_dual_transform(&gen, &c).unwrap();
        assert_eq!(dual.kind.facet, Facet::Classification);
        assert_eq!(dual.tables[0].row_count(), gen.tables[0].row_count() + 1);
        let inserted: Vec<String> = dual.tables[0]
            .rows
            .iter()
            .map(|r| r[0].render())
            .filter(|v| v == "Missisipi")
            .collect();
        assert_eq!(inserted.len(), 1);
        assert_eq!(dual.expected, Some(c));
        assert!(dual.instruction.contains("Missisipi"));
    }

    #[test]
    fn dual_transform_is_deterministic() {
        let t = states_column();
        let gen =
            instantiate_generative(&ed(), &t, 11, TaskContext::None, &TemplateSet::default())
                .unwrap();
        let c = Completion::error_set(["Missisipi"]);
        let d1 = apply_dual_transform(&gen, &c).unwrap();
        let d2 = apply_dual_transform(&gen, &c).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn dual_transform_schema_matching() {
        let a = parse_table_csv(b"company names,city\nAcme,Austin\n", "a").unwrap();
        let gen = instantiate_generative(
            &TaskFamily::SchemaMatching,
            &a,
            0,
            TaskContext::None,
            &TemplateSet::default(),
        )
        .unwrap();
        let b = parse_table_csv(b"enterprises,location\nAcme,Austin\n", "b").unwrap();
        let c = Completion::GeneratedTableWithMappings {
            table: b,
            pairs: [("company names".to_string(), "enterprises".to_string())]
                .into_iter()
                .collect(),
        };
        let dual = apply_dual_transform(&gen, &c).unwrap();
        assert_eq!(dual.tables.len(), 2);
        assert_eq!(
            dual.expected,
            Some(Completion::mapping_list([("company names", "enterprises")]))
        );
    }

    #[test]
    fn dual_transform_variant_mismatch() {
        let gen = instantiate_generative(
            &ed(),
            &states_column(),
            0,
            TaskContext::None,
            &TemplateSet::default(),
        )
        .unwrap();
        let err =
            apply_dual_transform(&gen, &Completion::code("sql-subset", "SELECT 1")).unwrap_err();
        assert!(matches!(err, Error::VariantMismatch(_)));
    }

    #[test]
    fn parse_error_set() {
        let kind = TaskKind::classification(ed());
        assert_eq!(
            parse_completion(&kind, "[\"Missisipi\"]").unwrap(),
            Completion::error_set(["Missisipi"])
        );
        assert_eq!(
            parse_completion(&kind, "[]").unwrap(),
            Completion::error_set(Vec::<String>::new())
        );
        assert!(matches!(
            parse_completion(&kind, "I think maybe"),
            Err(Error::UnparseableCompletion(_))
        ));
    }

    #[test]
    fn generative_error_set_requires_one_value() {
        let kind = TaskKind::generative(ed());
        assert!(parse_completion(&kind, "[\"a\",\"b\"]").is_err());
        assert!(parse_completion(&kind, "[\"a\"]").is_ok());
    }

    #[test]
    fn parse_takes_last_array() {
        let kind = TaskKind::classification(ed());
        let raw = "Candidates were [\"x\"] but the final answer is [\"y\"]";
        assert_eq!(
            parse_completion(&kind, raw).unwrap(),
            Completion::error_set(["y"])
        );
    }

    #[test]
    fn completions_equal_is_order_insensitive() {
        let a = Completion::mapping_list([("a", "b"), ("c", "d")]);
        let b = Completion::mapping_list([("c", "d"), ("a", "b")]);
        assert!(completions_equal(&a, &b).unwrap());
        let e1 = Completion::error_set(Vec::<String>::new());
        let e2 = Completion::error_set(Vec::<String>::new());
        assert!(completions_equal(&e1, &e2).unwrap());
        let d1 = Completion::error_set(["Missisipi"]);
        let d2 = Completion::error_set(["Mississippi"]);
        assert!(!completions_equal(&d1, &d2).unwrap());
        assert!(matches!(
            completions_equal(&a, &d1),
            Err(Error::VariantMismatch(_))
        ));
    }

    #[test]
    fn render_parse_round_trip_per_variant() {
        let kind_ed = TaskKind::classification(ed());
        let c = Completion::error_set(["Missisipi"]);
        assert_eq!(c.render(), "[\"Missisipi\"]");
        assert_eq!(parse_completion(&kind_ed, &c.render()).unwrap(), c);

        let kind_sm = TaskKind::classification(TaskFamily::SchemaMatching);
        let m = Completion::mapping_list([("a", "b")]);
        assert_eq!(parse_completion(&kind_sm, &m.render()).unwrap(), m);

        let fam_code = TaskFamily::NlToCode {
            language: "sql-subset".to_string(),
        };
        let code = Completion::code("sql-subset", "SELECT COUNT(*) FROM t");
        let kind_gen = TaskKind::generative(fam_code.clone());
        assert_eq!(parse_completion(&kind_gen, &code.render()).unwrap(), code);
        let kind_cls = TaskKind::classification(fam_code);
        assert_eq!(
            parse_completion(&kind_cls, &code.render_expected(&kind_cls)).unwrap(),
            code
        );

        let kind_smg = TaskKind::generative(TaskFamily::SchemaMatching);
        let table = parse_table_csv(b"enterprises\nAcme\n", "b").unwrap();
        let g = Completion::GeneratedTableWithMappings {
            table,
            pairs: [("company names".to_string(), "enterprises".to_string())]
                .into_iter()
                .collect(),
        };
        let parsed = parse_completion(&kind_smg, &g.render()).unwrap();
        assert!(completions_equal(&parsed, &g).unwrap());
    }

    #[test]
    fn verifier_no_answer_is_unparseable() {
        let kind = TaskKind::classification(TaskFamily::NlToCode {
            language: "sql-subset".to_string(),
        });
        assert!(parse_completion(&kind, "no, the code is wrong").is_err());
    }

    #[test]
    fn negative_instance_error_detection() {
        let (inst, expected) = sample_negative_instance(
            &ed(),
            &states_column(),
            None,
            5,
            &TemplateSet::default(),
        )
        .unwrap();
        assert_eq!(expected, Completion::error_set(Vec::<String>::new()));
        assert_eq!(inst.kind.facet, Facet::Classification);
        assert_eq!(inst.expected, Some(expected));
    }

    #[test]
    fn negative_unsupported_for_code() {
        let err = sample_negative_instance(
            &TaskFamily::NlToCode {
                language: "sql-subset".to_string(),
            },
            &football(),
            None,
            0,
            &TemplateSet::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedKind(_)));
    }

    #[test]
    fn fingerprint_invariant_under_permutation() {
        let gen = instantiate_generative(
            &ed(),
            &states_column(),
            11,
            TaskContext::None,
            &TemplateSet::default(),
        )
        .unwrap();
        let f0 = gen.fingerprint();
        let p1 = gen.with_permuted_tables(1);
        let p2 = gen.with_permuted_tables(2);
        assert_eq!(p1.fingerprint().invariant, f0.invariant);
        assert_eq!(p2.fingerprint().invariant, f0.invariant);
        if p1.tables != gen.tables {
            assert_ne!(p1.fingerprint().exact, f0.exact);
        }
        let reclassified = TaskInstance {
            kind: TaskKind::classification(ed()),
            ..gen.clone()
        };
        assert_ne!(
            f0.invariant,
            reclassified.fingerprint().invariant,
            "facet must be part of the fingerprint"
        );
    }

    #[test]
    fn permuted_instance_rerenders_instruction() {
        let t = parse_table_csv(b"a,b\n1,x\n2,y\n3,z\n", "t").unwrap();
        let gen = instantiate_generative(
            &TaskFamily::SchemaMatching,
            &t,
            0,
            TaskContext::None,
            &TemplateSet::default(),
        )
        .unwrap();
        let p = gen.with_permuted_tables(77);
        assert!(p.instruction.contains(&render_table_for_prompt(
            &p.tables[0],
            PromptCaps::default()
        )));
    }

    #[test]
    fn error_value_normalization_in_sets() {
        let a = Completion::error_set(["08"]);
        let b = Completion::error_set(["8"]);
        assert!(completions_equal(&a, &b).unwrap());
    }

    #[test]
    fn parse_question_strips_quotes() {
        assert_eq!(
            parse_question("\"which team has the highest goal\"\n").unwrap(),
            Completion::Question {
                text: "which team has the highest goal".to_string()
            }
        );
        assert!(parse_question("   \n \n").is_err());
    }

    #[test]
    fn number_cells_survive_dual_insert() {
        let t = parse_table_csv(b"n\n1\n2\n3\n", "t").unwrap();
        let gen =
            instantiate_generative(&ed(), &t, 0, TaskContext::None, &TemplateSet::default())
                .unwrap();
        let c = Completion::error_set(["99"]);
        let dual = apply_dual_transform(&gen, &c).unwrap();
        let count = dual.tables[0]
            .rows
            .iter()
            .filter(|r| matches!(&r[0], CellValue::Text(s) if s == "99"))
            .count();
        assert_eq!(count, 1);
    }
}
