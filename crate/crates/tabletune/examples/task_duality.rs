//! Task duality in miniature: build the generative error-detection task
//! over a real column, insert an invented error to form its classification
//! dual, and show that both sides expect the same completion.
//!
//! ```bash
//! cargo run -p tabletune --example task_duality
//! ```

use std::path::Path;

use tabletune::table::parse_table_csv;
use tabletune::task::{
    apply_dual_transform, instantiate_generative, parse_completion, sample_negative_instance,
    Completion, TaskContext, TaskFamily, TaskKind, TemplateSet,
};

fn main() -> tabletune::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let table = parse_table_csv(&std::fs::read(fixtures.join("states.csv"))?, "states")?;
    let templates = TemplateSet::default();
    let family = TaskFamily::ErrorDetection;

    // Generative side: ask for a realistic error in a sampled column.
    let t_g = instantiate_generative(&family, &table, 11, TaskContext::None, &templates)?;
    println!("generative prompt:\n---\n{}\n---", t_g.instruction);

    // Pretend a generator model answered with a plausible typo.
    let raw_answer = "[\"Missisipi\"]";
    let c = parse_completion(&TaskKind::generative(family.clone()), raw_answer)?;
    println!("\ngenerator completion: {}", c.render());

    // The dual transform inserts the error into the column; the expected
    // answer of the classification task is the very same completion.
    let t_c = apply_dual_transform(&t_g, &c)?;
    println!("\nclassification dual prompt:\n---\n{}\n---", t_c.instruction);
    println!(
        "\ndual expects: {}",
        t_c.expected.as_ref().map(Completion::render).unwrap_or_default()
    );
    assert_eq!(t_c.tables[0].row_count(), t_g.tables[0].row_count() + 1);

    // Negatives come straight from clean data with an empty expected set.
    let (negative, empty) = sample_negative_instance(&family, &table, None, 5, &templates)?;
    println!(
        "\nnegative instance over a clean column expects: {}",
        empty.render()
    );
    println!("negative prompt starts: {}…", &negative.instruction[..60]);
    Ok(())
}
