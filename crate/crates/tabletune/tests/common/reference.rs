//! Independent brute-force reference evaluator for the SQL-subset
//! differential.
//!
//! Evaluates the generator's query AST directly with plain nested loops,
//! deliberately sharing no evaluation code with the interpreter under
//! test: normalization, predicates, aggregates, grouping and ordering are
//! all re-implemented here from the documented semantics. The interpreter
//! must reproduce these results exactly (not just within tolerance) on
//! every generated case.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use tabletune::exec::ExecResult;
use tabletune::table::{CellValue, Table};

use super::gen::{Agg, AggTarget, Cond, Op, Query, Select};

/// A reference result: a scalar or a row set with an ordering promise.
#[derive(Debug, Clone, PartialEq)]
pub enum RefResult {
    Scalar(CellValue),
    Rows {
        rows: Vec<Vec<CellValue>>,
        ordered: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Null,
    Num(f64),
    Text(String),
}

fn norm(cell: &CellValue) -> Val {
    match cell {
        CellValue::Null => Val::Null,
        CellValue::Number(x) => Val::Num(if *x == 0.0 { 0.0 } else { *x }),
        CellValue::Text(s) => {
            let t = s.trim();
            if t.is_empty() {
                Val::Null
            } else if let Ok(x) = t.parse::<f64>() {
                if x.is_finite() {
                    Val::Num(if x == 0.0 { 0.0 } else { x })
                } else {
                    Val::Text(t.to_string())
                }
            } else {
                Val::Text(t.to_string())
            }
        }
    }
}

fn val_order(a: &Val, b: &Val) -> Ordering {
    match (a, b) {
        (Val::Null, Val::Null) => Ordering::Equal,
        (Val::Null, _) => Ordering::Less,
        (_, Val::Null) => Ordering::Greater,
        (Val::Num(x), Val::Num(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Val::Num(_), Val::Text(_)) => Ordering::Less,
        (Val::Text(_), Val::Num(_)) => Ordering::Greater,
        (Val::Text(x), Val::Text(y)) => x.cmp(y),
    }
}

fn val_to_cell(v: &Val) -> CellValue {
    match v {
        Val::Null => CellValue::Null,
        Val::Num(x) => CellValue::number(*x),
        Val::Text(s) => CellValue::Text(s.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Null,
    Num(u64),
    Text(String),
}

fn key_of(v: &Val) -> Key {
    match v {
        Val::Null => Key::Null,
        Val::Num(x) => Key::Num(x.to_bits()),
        Val::Text(s) => Key::Text(s.clone()),
    }
}

fn cond_holds(cond: &Cond, row: &[CellValue], table: &Table) -> bool {
    match cond {
        Cond::Cmp { col, op, num, text } => {
            let idx = table.headers.iter().position(|h| h == col).expect("column");
            match (norm(&row[idx]), num, text) {
                (Val::Num(x), Some(y), None) => match op {
                    Op::Eq => x == *y,
                    Op::Ne => x != *y,
                    Op::Lt => x < *y,
                    Op::Le => x <= *y,
                    Op::Gt => x > *y,
                    Op::Ge => x >= *y,
                },
                (Val::Text(x), None, Some(y)) => {
                    let ord = x.as_str().cmp(y.as_str());
                    match op {
                        Op::Eq => ord == Ordering::Equal,
                        Op::Ne => ord != Ordering::Equal,
                        Op::Lt => ord == Ordering::Less,
                        Op::Le => ord != Ordering::Greater,
                        Op::Gt => ord == Ordering::Greater,
                        Op::Ge => ord != Ordering::Less,
                    }
                }
                _ => false,
            }
        }
        Cond::And(a, b) => cond_holds(a, row, table) && cond_holds(b, row, table),
        Cond::Or(a, b) => cond_holds(a, row, table) || cond_holds(b, row, table),
        Cond::Not(inner) => !cond_holds(inner, row, table),
    }
}

fn col_index(table: &Table, name: &str) -> usize {
    table.headers.iter().position(|h| h == name).expect("column")
}

fn fold(agg: &Agg, rows: &[&Vec<CellValue>], table: &Table) -> CellValue {
    match &agg.target {
        AggTarget::Star => CellValue::number(rows.len() as f64),
        AggTarget::Column(name) => {
            let idx = col_index(table, name);
            let values: Vec<Val> = rows.iter().map(|r| norm(&r[idx])).collect();
            match agg.func {
                super::gen::AggFunc::Count => {
                    if agg.distinct {
                        let keys: BTreeSet<Key> = values
                            .iter()
                            .filter(|v| !matches!(v, Val::Null))
                            .map(key_of)
                            .collect();
                        CellValue::number(keys.len() as f64)
                    } else {
                        let n = values.iter().filter(|v| !matches!(v, Val::Null)).count();
                        CellValue::number(n as f64)
                    }
                }
                super::gen::AggFunc::Sum | super::gen::AggFunc::Avg => {
                    let mut nums = Vec::new();
                    let mut seen = BTreeSet::new();
                    for v in &values {
                        if let Val::Num(x) = v {
                            if agg.distinct && !seen.insert(x.to_bits()) {
                                continue;
                            }
                            nums.push(*x);
                        }
                    }
                    if nums.is_empty() {
                        return CellValue::Null;
                    }
                    let mut total = 0.0;
                    for x in &nums {
                        total += x;
                    }
                    if agg.func == super::gen::AggFunc::Sum {
                        CellValue::number(total)
                    } else {
                        CellValue::number(total / nums.len() as f64)
                    }
                }
                super::gen::AggFunc::Min | super::gen::AggFunc::Max => {
                    let mut best: Option<&Val> = None;
                    for v in &values {
                        if matches!(v, Val::Null) {
                            continue;
                        }
                        best = Some(match best {
                            None => v,
                            Some(cur) => {
                                let take = if agg.func == super::gen::AggFunc::Min {
                                    val_order(v, cur) == Ordering::Less
                                } else {
                                    val_order(v, cur) == Ordering::Greater
                                };
                                if take {
                                    v
                                } else {
                                    cur
                                }
                            }
                        });
                    }
                    best.map(val_to_cell).unwrap_or(CellValue::Null)
                }
            }
        }
    }
}

/// Evaluate a generated query on a table by direct row scanning.
pub fn ref_eval(query: &Query, table: &Table) -> RefResult {
    // Filter.
    let rows: Vec<&Vec<CellValue>> = table
        .rows
        .iter()
        .filter(|row| match &query.filter {
            Some(cond) => cond_holds(cond, row, table),
            None => true,
        })
        .collect();

    let (mut out, ordered): (Vec<Vec<CellValue>>, bool) = match &query.select {
        Select::Star => {
            let mut sorted = rows.clone();
            let ordered = sort_rows(&mut sorted, query, table);
            (sorted.into_iter().cloned().collect(), ordered)
        }
        Select::Columns(names) => {
            let idxs: Vec<usize> = names.iter().map(|n| col_index(table, n)).collect();
            let mut sorted = rows.clone();
            let ordered = sort_rows(&mut sorted, query, table);
            (
                sorted
                    .iter()
                    .map(|r| idxs.iter().map(|&i| r[i].clone()).collect())
                    .collect(),
                ordered,
            )
        }
        Select::Aggregates(aggs) => {
            let row: Vec<CellValue> = aggs.iter().map(|a| fold(a, &rows, table)).collect();
            (vec![row], false)
        }
        Select::GroupBy { key, items } => {
            let kidx = col_index(table, key);
            let mut order: Vec<Key> = Vec::new();
            let mut members: std::collections::BTreeMap<Key, Vec<&Vec<CellValue>>> =
                std::collections::BTreeMap::new();
            for row in &rows {
                let k = key_of(&norm(&row[kidx]));
                if !members.contains_key(&k) {
                    order.push(k.clone());
                }
                members.entry(k).or_default().push(row);
            }
            let mut groups: Vec<(Val, Vec<&Vec<CellValue>>)> = order
                .iter()
                .map(|k| {
                    let rs = members[k].clone();
                    (norm(&rs[0][kidx]), rs)
                })
                .collect();
            let mut ordered = false;
            if let Some(ob) = &query.order_by {
                // Generator only orders grouped queries by the key.
                assert_eq!(&ob.column, key);
                groups.sort_by(|a, b| {
                    let ord = val_order(&a.0, &b.0);
                    if ob.descending {
                        ord.reverse()
                    } else {
                        ord
                    }
                });
                ordered = true;
            }
            let out = groups
                .iter()
                .map(|(rep, rs)| {
                    items
                        .iter()
                        .map(|item| match item {
                            super::gen::GroupItem::Key => val_to_cell(rep),
                            super::gen::GroupItem::Agg(a) => fold(a, rs, table),
                        })
                        .collect()
                })
                .collect();
            (out, ordered)
        }
    };

    if let Some(limit) = query.limit {
        out.truncate(limit);
    }
    if out.len() == 1 && out[0].len() == 1 {
        return RefResult::Scalar(out[0][0].clone());
    }
    RefResult::Rows { rows: out, ordered }
}

fn sort_rows(
    rows: &mut [&Vec<CellValue>],
    query: &Query,
    table: &Table,
) -> bool {
    if let Some(ob) = &query.order_by {
        let idx = col_index(table, &ob.column);
        rows.sort_by(|a, b| {
            let ord = val_order(&norm(&a[idx]), &norm(&b[idx]));
            if ob.descending {
                ord.reverse()
            } else {
                ord
            }
        });
        true
    } else {
        false
    }
}

/// Exact comparison of the interpreter's result against the reference.
/// Errors never match; scalars must be identical cells; rows must be
/// identical as sequences when the query promises an order, else after a
/// canonical sort of both sides.
pub fn matches_reference(actual: &ExecResult, expected: &RefResult) -> bool {
    match (actual, expected) {
        (ExecResult::Error { .. }, _) => false,
        (ExecResult::Scalar { value }, RefResult::Scalar(cell)) => value == cell,
        (ExecResult::Table { .. }, RefResult::Scalar(_)) => false,
        (ExecResult::Scalar { .. }, RefResult::Rows { .. }) => false,
        (
            ExecResult::Table { table, .. },
            RefResult::Rows { rows, ordered },
        ) => {
            if table.rows.len() != rows.len() {
                return false;
            }
            if table.rows.iter().any(|r| r.len() != rows.first().map_or(0, |x| x.len())) {
                return false;
            }
            let mut actual_rows: Vec<Vec<CellValue>> = table.rows.clone();
            let mut expected_rows: Vec<Vec<CellValue>> = rows.clone();
            if !ordered {
                let keyfn = |row: &Vec<CellValue>| -> Vec<Key> {
                    row.iter().map(|c| key_of(&norm(c))).collect()
                };
                actual_rows.sort_by_key(keyfn);
                expected_rows.sort_by_key(keyfn);
            }
            actual_rows == expected_rows
        }
    }
}
