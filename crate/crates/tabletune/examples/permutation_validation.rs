//! Permutation-invariance validation with two scripted models: an oracle
//! that answers consistently under any table arrangement, and an adversary
//! whose answer depends on the exact arrangement. The oracle's candidate
//! validates; the adversary is rejected in round 1.
//!
//! ```bash
//! cargo run -p tabletune --example permutation_validation
//! ```

use std::path::Path;

use tabletune::model::script_gen::permutation_sensitive_validator;
use tabletune::model::scripted::{KeyMode, ScriptFile};
use tabletune::model::{ModelClient, ModelRef};
use tabletune::table::parse_table_csv;
use tabletune::task::{
    apply_dual_transform, instantiate_generative, Completion, TaskContext, TaskFamily,
    TemplateSet,
};
use tabletune::validate::{validate_classification, ValidationConfig, ValidationMode};

fn main() -> tabletune::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let table = parse_table_csv(&std::fs::read(fixtures.join("states.csv"))?, "states")?;
    let templates = TemplateSet::default();
    let family = TaskFamily::ErrorDetection;

    // Candidate: the generator claims "Missisipi" is a realistic error.
    let t_g = instantiate_generative(&family, &table, 11, TaskContext::None, &templates)?;
    let c = Completion::error_set(["Missisipi"]);
    let t_c = apply_dual_transform(&t_g, &c)?;

    let work = std::env::temp_dir().join("tabletune-example-permutation");
    std::fs::create_dir_all(&work)?;

    // Oracle validator: keyed on the permutation-invariant digest, so every
    // permuted variant of the task gets the same answer.
    let mut oracle = ScriptFile::new(KeyMode::PermutationInvariant);
    oracle.entries.insert(t_c.fingerprint().invariant, c.render());
    let oracle_path = work.join("oracle.json");
    oracle.write(&oracle_path)?;
    let oracle_model = ModelRef::scripted("oracle", &oracle_path);

    // Adversarial validator: its answer embeds the exact prompt digest, so
    // no two permutations ever agree.
    let adv_path = work.join("adversary.json");
    permutation_sensitive_validator().write(&adv_path)?;
    let adversary = ModelRef::scripted("adversary", &adv_path);

    let client = ModelClient::default();
    let cfg = ValidationConfig::new(ValidationMode::Permutation, 5, 42);

    let outcome = validate_classification(&client, &oracle_model, &t_c, &c, &cfg)?;
    println!(
        "oracle:    validated={} after {} rounds",
        outcome.validated, outcome.rounds_run
    );
    for round in &outcome.detail {
        println!("  round {}: {} matched={}", round.round, round.input, round.matched);
    }

    let outcome = validate_classification(&client, &adversary, &t_c, &c, &cfg)?;
    println!(
        "adversary: validated={} failure_round={:?}",
        outcome.validated, outcome.failure_round
    );
    println!("\nmodel calls made: {}", client.call_count());
    Ok(())
}
