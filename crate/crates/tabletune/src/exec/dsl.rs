//! Interpreter for the `table-dsl` language: a pipeline of stages separated
//! by `|`, standing in for a second target language so execution-invariance
//! checks can run fully offline.
//!
//! Stages: `filter(col OP literal)`, `project(col, …)`, `sort_by(col
//! [desc])`, `top_by(col)`, `limit(n)`, `count()`, `sum(col)`, `avg(col)`,
//! `min(col)`, `max(col)`, `group_by(col; AGG(col2))`. Cell normalization,
//! predicate, aggregate and ordering semantics are identical to the SQL
//! subset. `count`/`sum`/`avg`/`min`/`max`/`group_by` must be the final
//! stage; a 1×1 result collapses to a scalar.

use crate::exec::compare::{self, CellKey, Norm};
use crate::exec::sql::{self, AggArg, AggFunc, Aggregate, CmpOp, Literal};
use crate::exec::{Deadline, ExecLimits, ExecResult, Executor};
use crate::table::{CellValue, Table};

pub struct DslExecutor;

/// Run one table-dsl pipeline on a table under default limits.
pub fn execute_table_dsl(source: &str, table: &Table) -> ExecResult {
    DslExecutor.execute(source, table, ExecLimits::default())
}

impl Executor for DslExecutor {
    fn execute(&self, source: &str, table: &Table, limits: ExecLimits) -> ExecResult {
        let stages = match parse(source) {
            Ok(s) => s,
            Err(msg) => return ExecResult::parse_error(msg),
        };
        let deadline = Deadline::new(limits);
        match eval(&stages, table, &deadline) {
            Ok(r) => r,
            Err(msg) => {
                if deadline.exceeded() {
                    ExecResult::Error {
                        phase: crate::exec::ExecPhase::Timeout,
                        message: msg,
                    }
                } else {
                    ExecResult::runtime_error(msg)
                }
            }
        }
    }

    fn has_explicit_ordering(&self, source: &str) -> bool {
        parse(source)
            .map(|stages| stages.iter().any(|s| matches!(s, Stage::SortBy { .. })))
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Filter {
        column: String,
        op: CmpOp,
        literal: Literal,
    },
    Project(Vec<String>),
    SortBy {
        column: String,
        descending: bool,
    },
    TopBy(String),
    Limit(usize),
    Scalar(Aggregate),
    GroupBy {
        column: String,
        aggregate: Aggregate,
    },
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Split the pipeline on top-level `|`, respecting single-quoted strings.
fn split_stages(src: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    for ch in src.chars() {
        match ch {
            '\'' => {
                in_str = !in_str;
                cur.push(ch);
            }
            '|' if !in_str => {
                parts.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    parts.push(cur.trim().to_string());
    parts
}

pub fn parse(src: &str) -> Result<Vec<Stage>, String> {
    if src.trim().is_empty() {
        return Err("empty pipeline".into());
    }
    split_stages(src).iter().map(|s| parse_stage(s)).collect()
}

/// `name(args)` with a trimmed argument body.
fn stage_parts(stage: &str) -> Result<(String, String), String> {
    let open = stage
        .find('(')
        .ok_or_else(|| format!("stage '{stage}' is missing '('"))?;
    if !stage.ends_with(')') {
        return Err(format!("stage '{stage}' is missing closing ')'"));
    }
    let name = stage[..open].trim().to_string();
    let args = stage[open + 1..stage.len() - 1].trim().to_string();
    Ok((name, args))
}

fn parse_column(arg: &str) -> Result<String, String> {
    let a = arg.trim();
    if a.is_empty() {
        return Err("expected a column name".into());
    }
    if a.starts_with('"') && a.ends_with('"') && a.len() >= 2 {
        return Ok(a[1..a.len() - 1].replace("\"\"", "\""));
    }
    if a.chars().all(|c| c.is_alphanumeric() || c == '_') {
        Ok(a.to_string())
    } else {
        Err(format!("bad column name '{a}'"))
    }
}

fn parse_literal(arg: &str) -> Result<Literal, String> {
    let a = arg.trim();
    if a.starts_with('\'') && a.ends_with('\'') && a.len() >= 2 {
        return Ok(Literal::Text(a[1..a.len() - 1].replace("''", "'")));
    }
    match a.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Literal::Number(x)),
        _ => Err(format!("bad literal '{a}' (strings use single quotes)")),
    }
}

fn parse_comparison(args: &str) -> Result<(String, CmpOp, Literal), String> {
    // Longest operators first so `<=` is not read as `<`.
    for (text, op) in [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("!=", CmpOp::Ne),
        ("<>", CmpOp::Ne),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
        ("=", CmpOp::Eq),
    ] {
        if let Some(pos) = find_outside_quotes(args, text) {
            let column = parse_column(&args[..pos])?;
            let literal = parse_literal(&args[pos + text.len()..])?;
            return Ok((column, op, literal));
        }
    }
    Err(format!("no comparison operator in '{args}'"))
}

fn find_outside_quotes(s: &str, needle: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let nb = needle.as_bytes();
    let mut in_str = false;
    let mut i = 0;
    while i + nb.len() <= bytes.len() {
        if bytes[i] == b'\'' {
            in_str = !in_str;
            i += 1;
            continue;
        }
        if !in_str && &bytes[i..i + nb.len()] == nb {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn parse_aggregate_call(text: &str) -> Result<Aggregate, String> {
    let (name, args) = stage_parts(text.trim())?;
    let func = agg_func(&name)?;
    let arg = if args == "*" {
        if func != AggFunc::Count {
            return Err(format!("{name}(*) is not supported"));
        }
        AggArg::Star
    } else if args.is_empty() && func == AggFunc::Count {
        AggArg::Star
    } else {
        AggArg::Column(parse_column(&args)?)
    };
    Ok(Aggregate {
        func,
        distinct: false,
        arg,
    })
}

fn agg_func(name: &str) -> Result<AggFunc, String> {
    match name.to_ascii_lowercase().as_str() {
        "count" => Ok(AggFunc::Count),
        "sum" => Ok(AggFunc::Sum),
        "avg" => Ok(AggFunc::Avg),
        "min" => Ok(AggFunc::Min),
        "max" => Ok(AggFunc::Max),
        _ => Err(format!("unknown aggregate '{name}'")),
    }
}

fn parse_stage(stage: &str) -> Result<Stage, String> {
    let (name, args) = stage_parts(stage)?;
    match name.to_ascii_lowercase().as_str() {
        "filter" => {
            let (column, op, literal) = parse_comparison(&args)?;
            Ok(Stage::Filter { column, op, literal })
        }
        "project" => {
            let cols: Result<Vec<String>, String> =
                args.split(',').map(parse_column).collect();
            let cols = cols?;
            if cols.is_empty() {
                return Err("project() needs at least one column".into());
            }
            Ok(Stage::Project(cols))
        }
        "sort_by" => {
            let (col_part, descending) = match args.strip_suffix("desc") {
                Some(rest) if rest.ends_with(char::is_whitespace) => (rest.trim(), true),
                _ => (args.as_str(), false),
            };
            Ok(Stage::SortBy {
                column: parse_column(col_part)?,
                descending,
            })
        }
        "top_by" => Ok(Stage::TopBy(parse_column(&args)?)),
        "limit" => {
            let n: usize = args
                .trim()
                .parse()
                .map_err(|_| format!("limit wants a nonnegative integer, got '{args}'"))?;
            Ok(Stage::Limit(n))
        }
        "count" | "sum" | "avg" | "min" | "max" => {
            let func = agg_func(&name)?;
            let arg = if args.is_empty() || args == "*" {
                if func != AggFunc::Count {
                    return Err(format!("{name}() needs a column"));
                }
                AggArg::Star
            } else {
                AggArg::Column(parse_column(&args)?)
            };
            Ok(Stage::Scalar(Aggregate {
                func,
                distinct: false,
                arg,
            }))
        }
        "group_by" => {
            let (col_part, agg_part) = args
                .split_once(';')
                .ok_or_else(|| "group_by wants 'group_by(col; AGG(col2))'".to_string())?;
            Ok(Stage::GroupBy {
                column: parse_column(col_part)?,
                aggregate: parse_aggregate_call(agg_part)?,
            })
        }
        other => Err(format!("unknown stage '{other}'")),
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn resolve(headers: &[String], name: &str) -> Result<usize, String> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format!("unknown column '{name}'"))
}

fn eval(stages: &[Stage], input: &Table, deadline: &Deadline) -> Result<ExecResult, String> {
    let mut current = input.clone();
    let mut ordered = false;
    for (i, stage) in stages.iter().enumerate() {
        if deadline.exceeded() {
            return Err("timeout in pipeline".into());
        }
        let terminal = matches!(stage, Stage::Scalar(_) | Stage::GroupBy { .. });
        if terminal && i + 1 != stages.len() {
            return Err("aggregate stages must come last in the pipeline".into());
        }
        match stage {
            Stage::Filter { column, op, literal } => {
                let idx = resolve(&current.headers, column)?;
                current.rows.retain(|r| sql::predicate_matches(&r[idx], *op, literal));
            }
            Stage::Project(cols) => {
                let idxs: Result<Vec<usize>, String> =
                    cols.iter().map(|c| resolve(&current.headers, c)).collect();
                let idxs = idxs?;
                current = Table {
                    name: current.name.clone(),
                    headers: cols.clone(),
                    rows: current
                        .rows
                        .iter()
                        .map(|r| idxs.iter().map(|&i| r[i].clone()).collect())
                        .collect(),
                };
            }
            Stage::SortBy { column, descending } => {
                let idx = resolve(&current.headers, column)?;
                current.rows.sort_by(|a, b| {
                    let ord = compare::compare_cells(&a[idx], &b[idx]);
                    if *descending {
                        ord.reverse()
                    } else {
                        ord
                    }
                });
                ordered = true;
            }
            Stage::TopBy(column) => {
                let idx = resolve(&current.headers, column)?;
                let mut best: Option<usize> = None;
                for (r, row) in current.rows.iter().enumerate() {
                    let better = match best {
                        None => true,
                        Some(b) => {
                            compare::compare_cells(&row[idx], &current.rows[b][idx])
                                == std::cmp::Ordering::Greater
                        }
                    };
                    if better {
                        best = Some(r);
                    }
                }
                current.rows = match best {
                    Some(b) => vec![current.rows[b].clone()],
                    None => Vec::new(),
                };
            }
            Stage::Limit(n) => current.rows.truncate(*n),
            Stage::Scalar(agg) => {
                let cells: Vec<&CellValue> = match &agg.arg {
                    AggArg::Star => Vec::new(),
                    AggArg::Column(name) => {
                        let idx = resolve(&current.headers, name)?;
                        current.rows.iter().map(|r| &r[idx]).collect()
                    }
                };
                let value = sql::fold_aggregate(agg, &cells, current.rows.len());
                return Ok(ExecResult::Scalar { value });
            }
            Stage::GroupBy { column, aggregate } => {
                let gidx = resolve(&current.headers, column)?;
                let mut order: Vec<CellKey> = Vec::new();
                let mut groups: std::collections::BTreeMap<CellKey, Vec<usize>> =
                    std::collections::BTreeMap::new();
                for (r, row) in current.rows.iter().enumerate() {
                    let key = compare::cell_key(&row[gidx]);
                    if !groups.contains_key(&key) {
                        order.push(key.clone());
                    }
                    groups.entry(key).or_default().push(r);
                }
                let agg_idx = match &aggregate.arg {
                    AggArg::Star => None,
                    AggArg::Column(name) => Some(resolve(&current.headers, name)?),
                };
                let mut rows = Vec::with_capacity(order.len());
                for key in &order {
                    let members = &groups[key];
                    let rep = match compare::normalize(&current.rows[members[0]][gidx]) {
                        Norm::Null => CellValue::Null,
                        Norm::Num(x) => CellValue::number(x),
                        Norm::Text(s) => CellValue::Text(s),
                    };
                    let cells: Vec<&CellValue> = match agg_idx {
                        Some(idx) => members.iter().map(|&r| &current.rows[r][idx]).collect(),
                        None => Vec::new(),
                    };
                    let value = sql::fold_aggregate(aggregate, &cells, members.len());
                    rows.push(vec![rep, value]);
                }
                let result = Table {
                    name: "result".to_string(),
                    headers: vec![column.clone(), format!("{:?}", aggregate.func).to_lowercase()],
                    rows,
                };
                return Ok(ExecResult::Table { table: result, ordered: false }.collapse());
            }
        }
    }
    Ok(ExecResult::Table { table: current, ordered }.collapse())
}
