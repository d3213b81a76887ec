//! Table model tour: CSV ingestion, markdown rendering, seeded permutation
//! and row sampling.
//!
//! ```bash
//! cargo run -p tabletune --example tables
//! ```

use std::path::Path;

use tabletune::table::{
    parse_table_csv, permute, render_table_for_prompt, sample_rows, serialize_table_markdown,
    PromptCaps,
};

fn main() -> tabletune::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let bytes = std::fs::read(fixtures.join("football.csv"))?;
    let table = parse_table_csv(&bytes, "football")?;

    println!("loaded '{}' with {} rows x {} columns", table.name, table.row_count(), table.column_count());
    println!("\nmarkdown rendering:\n{}", serialize_table_markdown(&table));

    // Permutation is deterministic in the seed and preserves the cell
    // multiset — the foundation of permutation-invariance validation.
    let (shuffled, permutation) = permute(&table, 42);
    println!(
        "\npermuted with seed 42 (row order {:?}, column order {:?}):\n{}",
        permutation.row_order,
        permutation.col_order,
        serialize_table_markdown(&shuffled)
    );
    assert_eq!(shuffled.digest_invariant(), table.digest_invariant());
    println!(
        "\npermutation-invariant digest unchanged: {}",
        table.digest_invariant()
    );

    // Row sampling keeps the original order among chosen rows.
    let sample = sample_rows(&table, 3, 7);
    println!("\n3 rows sampled with seed 7:\n{}", serialize_table_markdown(&sample));

    // Prompt rendering caps the table size with an explicit footer.
    let caps = PromptCaps { max_rows: 4, max_cols: 20 };
    println!("\nprompt rendering capped at 4 rows:\n{}", render_table_for_prompt(&table, caps));
    Ok(())
}
