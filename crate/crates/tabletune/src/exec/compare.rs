//! Normalization and comparison rules that define when two execution
//! results (or two cells) count as equal.
//!
//! These rules stand in for the unstated cross-engine normalization real
//! SQL/R/Scala pipelines would need: numeric equality uses a relative
//! tolerance of 1e-9, text is trimmed, headers are ignored, and an
//! execution error never equals anything — including another error.

use std::cmp::Ordering;

use crate::exec::ExecResult;
use crate::table::CellValue;

/// Relative tolerance for numeric result equality:
/// |x − y| ≤ 1e-9 · max(1, |x|, |y|).
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

/// A cell reduced to its comparable form: null, a finite number, or trimmed
/// text. Numeric-looking text normalizes to a number; blank text to null.
#[derive(Debug, Clone, PartialEq)]
pub enum Norm {
    Null,
    Num(f64),
    Text(String),
}

pub fn normalize(cell: &CellValue) -> Norm {
    match cell {
        CellValue::Null => Norm::Null,
        CellValue::Number(x) => Norm::Num(if *x == 0.0 { 0.0 } else { *x }),
        CellValue::Text(s) => {
            let t = s.trim();
            if t.is_empty() {
                return Norm::Null;
            }
            match t.parse::<f64>() {
                Ok(x) if x.is_finite() => Norm::Num(if x == 0.0 { 0.0 } else { x }),
                _ => Norm::Text(t.to_string()),
            }
        }
    }
}

pub fn numbers_equal(x: f64, y: f64) -> bool {
    (x - y).abs() <= NUMERIC_TOLERANCE * 1f64.max(x.abs()).max(y.abs())
}

/// Semantic cell equality: null matches null, numbers match within the
/// relative tolerance, text matches after trimming (case-sensitive).
/// Cross-type (after normalization) never matches.
pub fn cells_equal(a: &CellValue, b: &CellValue) -> bool {
    match (normalize(a), normalize(b)) {
        (Norm::Null, Norm::Null) => true,
        (Norm::Num(x), Norm::Num(y)) => numbers_equal(x, y),
        (Norm::Text(x), Norm::Text(y)) => x == y,
        _ => false,
    }
}

/// Exact grouping/dedup key for a normalized cell. Grouping is exact (bit
/// equality for numbers), unlike tolerant result comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellKey {
    Null,
    Num(u64),
    Text(String),
}

pub fn cell_key(cell: &CellValue) -> CellKey {
    match normalize(cell) {
        Norm::Null => CellKey::Null,
        Norm::Num(x) => CellKey::Num(x.to_bits()),
        Norm::Text(s) => CellKey::Text(s),
    }
}

/// Total order over normalized cells used by sorting, MIN and MAX:
/// null < numbers (by value) < text (lexicographic by code point).
pub fn compare_cells(a: &CellValue, b: &CellValue) -> Ordering {
    match (normalize(a), normalize(b)) {
        (Norm::Null, Norm::Null) => Ordering::Equal,
        (Norm::Null, _) => Ordering::Less,
        (_, Norm::Null) => Ordering::Greater,
        (Norm::Num(x), Norm::Num(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        (Norm::Num(_), Norm::Text(_)) => Ordering::Less,
        (Norm::Text(_), Norm::Num(_)) => Ordering::Greater,
        (Norm::Text(x), Norm::Text(y)) => x.cmp(&y),
    }
}

fn row_sort_key(row: &[CellValue]) -> Vec<CellKey> {
    row.iter().map(cell_key).collect()
}

/// Compare two row sets; as sequences when `order_sensitive`, otherwise as
/// multisets (both sides sorted by a canonical key first).
pub fn rows_equal(
    a: &[Vec<CellValue>],
    b: &[Vec<CellValue>],
    order_sensitive: bool,
) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let pairwise = |x: &[Vec<CellValue>], y: &[Vec<CellValue>]| {
        x.iter().zip(y).all(|(r, s)| {
            r.len() == s.len() && r.iter().zip(s).all(|(c, d)| cells_equal(c, d))
        })
    };
    if order_sensitive {
        return pairwise(a, b);
    }
    let mut sa: Vec<&Vec<CellValue>> = a.iter().collect();
    let mut sb: Vec<&Vec<CellValue>> = b.iter().collect();
    sa.sort_by_key(|r| row_sort_key(r));
    sb.sort_by_key(|r| row_sort_key(r));
    sa.iter().zip(&sb).all(|(r, s)| {
        r.len() == s.len() && r.iter().zip(s.iter()).all(|(c, d)| cells_equal(c, d))
    })
}

/// Result equality per the validation contract:
///
/// * an execution error equals nothing, not even an identical error —
///   a shared crash is not evidence of correctness;
/// * a scalar equals a 1×1 table holding an equal cell;
/// * tables compare by shape and cells, order-sensitively only when **both**
///   programs declared an explicit ordering; headers are ignored because
///   different languages name projected columns differently.
pub fn results_equal(a: &ExecResult, b: &ExecResult) -> bool {
    use ExecResult::*;
    match (a, b) {
        (Error { .. }, _) | (_, Error { .. }) => false,
        (Scalar { value: x }, Scalar { value: y }) => cells_equal(x, y),
        (Scalar { value }, Table { table, .. }) | (Table { table, .. }, Scalar { value }) => {
            table.row_count() == 1
                && table.column_count() == 1
                && cells_equal(value, &table.rows[0][0])
        }
        (Table { table: ta, ordered: oa }, Table { table: tb, ordered: ob }) => {
            ta.column_count() == tb.column_count()
                && rows_equal(&ta.rows, &tb.rows, *oa && *ob)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Table;

    fn scalar(c: CellValue) -> ExecResult {
        ExecResult::Scalar { value: c }
    }

    #[test]
    fn scalar_equals_single_cell_table() {
        let t = Table::new(
            "r",
            vec!["x".into()],
            vec![vec![CellValue::number(8.0)]],
        )
        .unwrap();
        assert!(results_equal(
            &scalar(CellValue::number(8.0)),
            &ExecResult::Table { table: t, ordered: false }
        ));
    }

    #[test]
    fn numeric_tolerance() {
        assert!(results_equal(
            &scalar(CellValue::number(8.000_000_000_1)),
            &scalar(CellValue::number(8.0))
        ));
        assert!(!results_equal(
            &scalar(CellValue::number(8.1)),
            &scalar(CellValue::number(8.0))
        ));
    }

    #[test]
    fn errors_never_equal() {
        let e = ExecResult::parse_error("boom");
        assert!(!results_equal(&e, &e));
        assert!(!results_equal(&e, &scalar(CellValue::number(1.0))));
    }

    #[test]
    fn text_trimmed_numeric_text_coerced() {
        assert!(cells_equal(&CellValue::text(" x "), &CellValue::text("x")));
        assert!(cells_equal(&CellValue::text("7"), &CellValue::number(7.0)));
        assert!(!cells_equal(&CellValue::text("x"), &CellValue::text("X")));
        assert!(cells_equal(&CellValue::text("  "), &CellValue::Null));
    }

    #[test]
    fn order_sensitivity_requires_both_ordered() {
        let t1 = Table::new(
            "a",
            vec!["x".into()],
            vec![vec![CellValue::number(1.0)], vec![CellValue::number(2.0)]],
        )
        .unwrap();
        let t2 = Table::new(
            "b",
            vec!["y".into()],
            vec![vec![CellValue::number(2.0)], vec![CellValue::number(1.0)]],
        )
        .unwrap();
        let mk = |t: &Table, ordered| ExecResult::Table { table: t.clone(), ordered };
        assert!(results_equal(&mk(&t1, false), &mk(&t2, false)));
        assert!(results_equal(&mk(&t1, true), &mk(&t2, false)));
        assert!(!results_equal(&mk(&t1, true), &mk(&t2, true)));
    }

    #[test]
    fn total_order_ranks_null_num_text() {
        let mut cells = [CellValue::text("b"),
            CellValue::Null,
            CellValue::number(2.0),
            CellValue::text("a"),
            CellValue::number(-1.0)];
        cells.sort_by(compare_cells);
        let rendered: Vec<String> = cells.iter().map(|c| c.render()).collect();
        assert_eq!(rendered, vec!["", "-1", "2", "a", "b"]);
    }
}
