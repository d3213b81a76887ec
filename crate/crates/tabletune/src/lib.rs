//! Self-training data pipeline for table-task language models.
//!
//! The crate builds fine-tuning data for table tasks (error detection,
//! schema matching, NL-to-code, data transformation by example) without
//! manual labeling, by pairing every generative task with a classification
//! dual and admitting only candidates that survive validation:
//!
//! * **Permutation-invariance validation** — reordering rows and columns of
//!   a table does not change task semantics, so a candidate completion is
//!   trusted only if the validator model reproduces it across N independent
//!   permutations of the input ([`validate::validate_classification`]).
//! * **Execution-invariance validation** — two programs in different
//!   languages answering the same question must produce identical results on
//!   every row subset of the input table, so code candidates are executed
//!   differentially across languages and row samples
//!   ([`validate::validate_generative_execution`]).
//!
//! Validated pairs are exported as chat-format JSONL and registered as
//! fine-tune jobs behind the [`model`] interface; the crate never performs
//! gradient updates itself. An embedded SQL-subset interpreter and a small
//! table-pipeline DSL ([`exec`]) make execution-based validation fully
//! testable offline, and [`eval`] scores models on benchmark files with
//! execution accuracy or pooled F1.
//!
//! Every run is driven by a single root seed: all sampling, permutation,
//! and insertion positions derive from it, so identical configurations
//! produce byte-identical exports and reports.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `tabletune` binary for batch operation.

pub mod cli;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod table;
pub mod task;
pub mod validate;

pub use error::{Error, Result};
