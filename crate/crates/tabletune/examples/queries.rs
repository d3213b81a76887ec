//! The two built-in executors side by side: every query is written in the
//! SQL subset and in the table DSL, executed on the same table, and
//! compared with the result-equality rules used by validation.
//!
//! ```bash
//! cargo run -p tabletune --example queries
//! ```

use std::path::Path;

use tabletune::exec::compare::results_equal;
use tabletune::exec::{CodeSnippet, ExecResult, ExecutorRegistry, LANG_DSL, LANG_SQL};
use tabletune::table::parse_table_csv;

fn show(result: &ExecResult) -> String {
    match result {
        ExecResult::Scalar { value } => value.render(),
        ExecResult::Table { table, .. } => format!(
            "{} rows: {}",
            table.row_count(),
            table
                .rows
                .iter()
                .map(|r| r.iter().map(|c| c.render()).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join(" | ")
        ),
        ExecResult::Error { phase, message } => format!("{phase:?} error: {message}"),
    }
}

fn main() -> tabletune::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let table = parse_table_csv(&std::fs::read(fixtures.join("football.csv"))?, "t")?;
    let registry = ExecutorRegistry::builtin();

    let pairs = [
        ("SELECT COUNT(*) FROM t", "count()"),
        ("SELECT SUM(goals) FROM t", "sum(goals)"),
        ("SELECT team FROM t ORDER BY goals DESC LIMIT 1", "top_by(goals) | project(team)"),
        ("SELECT team FROM t WHERE city = 'P'", "filter(city = 'P') | project(team)"),
        ("SELECT city, COUNT(*) FROM t GROUP BY city", "group_by(city; count(*))"),
        ("SELECT team FROM t WHERE goals >= 2 AND points < 10", "filter(goals >= 2) | filter(points < 10) | project(team)"),
    ];

    for (sql, dsl) in pairs {
        let r_sql = registry.execute(&CodeSnippet::new(LANG_SQL, sql), &table)?;
        let r_dsl = registry.execute(&CodeSnippet::new(LANG_DSL, dsl), &table)?;
        println!("sql: {sql}\n  -> {}", show(&r_sql));
        println!("dsl: {dsl}\n  -> {}", show(&r_dsl));
        println!("  results_equal: {}\n", results_equal(&r_sql, &r_dsl));
    }

    // Failures never panic; they come back as typed execution errors.
    let broken = registry.execute(&CodeSnippet::new(LANG_SQL, "SELEKT x"), &table)?;
    println!("broken query -> {}", show(&broken));
    Ok(())
}
