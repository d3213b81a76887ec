//! Interpreter for the `sql-subset` language: single-table SELECT with
//! projection, aggregates (COUNT/SUM/AVG/MIN/MAX, optional DISTINCT),
//! WHERE comparisons combined with AND/OR/NOT, single-column GROUP BY,
//! stable ORDER BY, and LIMIT. The input table is always bound to `t`.
//!
//! Semantics worth pinning down because the cross-language validator
//! depends on them:
//!
//! * cells normalize before use: blank text is null, numeric text is a
//!   number (see [`compare::normalize`]);
//! * comparisons between a number and text are false, and null never
//!   satisfies any predicate;
//! * SUM/AVG fold only numeric cells and yield null over none; MIN/MAX use
//!   the total order null < numbers < text (nulls excluded);
//! * GROUP BY groups by exact normalized key, groups appear in first-seen
//!   order; ORDER BY is a stable sort and may only reference the grouped
//!   column when grouping;
//! * a 1×1 result collapses to a scalar.

use std::collections::BTreeSet;

use crate::exec::compare::{self, CellKey, Norm};
use crate::exec::{Deadline, ExecLimits, ExecResult, Executor};
use crate::table::{CellValue, Table};

pub struct SqlExecutor;

/// Run one sql-subset program on a table under default limits.
pub fn execute_sql_subset(source: &str, table: &Table) -> ExecResult {
    SqlExecutor.execute(source, table, ExecLimits::default())
}

impl Executor for SqlExecutor {
    fn execute(&self, source: &str, table: &Table, limits: ExecLimits) -> ExecResult {
        let query = match parse(source) {
            Ok(q) => q,
            Err(msg) => return ExecResult::parse_error(msg),
        };
        let deadline = Deadline::new(limits);
        match eval(&query, table, &deadline) {
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
        parse(source).map(|q| q.order_by.is_some()).unwrap_or(false)
    }
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub items: SelectList,
    pub filter: Option<Condition>,
    pub group_by: Option<String>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectList {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Column(String),
    Aggregate(Aggregate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub func: AggFunc,
    pub distinct: bool,
    pub arg: AggArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggArg {
    Star,
    Column(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Cmp {
        column: String,
        op: CmpOp,
        literal: Literal,
    },
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
    Not(Box<Condition>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderBy {
    pub column: String,
    pub descending: bool,
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    Symbol(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '(' | ')' | ',' | '*' => {
                out.push(Token::Symbol(match c {
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    _ => "*",
                }));
                i += 1;
            }
            '=' => {
                out.push(Token::Symbol("="));
                i += 1;
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(Token::Symbol("!="));
                    i += 2;
                } else {
                    return Err("unexpected '!'".into());
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(Token::Symbol("<="));
                    i += 2;
                } else if chars.get(i + 1) == Some(&'>') {
                    out.push(Token::Symbol("!="));
                    i += 2;
                } else {
                    out.push(Token::Symbol("<"));
                    i += 1;
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    out.push(Token::Symbol(">="));
                    i += 2;
                } else {
                    out.push(Token::Symbol(">"));
                    i += 1;
                }
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                        None => return Err("unterminated string literal".into()),
                    }
                }
                out.push(Token::Str(s));
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                        None => return Err("unterminated quoted identifier".into()),
                    }
                }
                out.push(Token::Ident(s));
            }
            _ if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.'))
                || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) =>
            {
                let start = i;
                if c == '-' {
                    i += 1;
                }
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && matches!(chars.get(i - 1), Some('e') | Some('E'))))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| format!("bad number literal '{text}'"))?;
                if !value.is_finite() {
                    return Err(format!("non-finite number literal '{text}'"));
                }
                out.push(Token::Number(value));
            }
            _ if c.is_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            _ => return Err(format!("unexpected character '{c}'")),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

pub fn parse(src: &str) -> Result<Query, String> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let q = p.query()?;
    if p.pos != p.tokens.len() {
        return Err(format!("trailing tokens after query: {:?}", p.tokens[p.pos]));
    }
    Ok(q)
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if let Some(Token::Ident(s)) = self.peek() {
            if s.eq_ignore_ascii_case(kw) {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), String> {
        if self.keyword(kw) {
            Ok(())
        } else {
            Err(format!("expected {kw} at token {:?}", self.peek()))
        }
    }

    fn symbol(&mut self, sym: &str) -> bool {
        if let Some(Token::Symbol(s)) = self.peek() {
            if *s == sym {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<(), String> {
        if self.symbol(sym) {
            Ok(())
        } else {
            Err(format!("expected '{sym}' at token {:?}", self.peek()))
        }
    }

    fn identifier(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Token::Ident(s)) => {
                if is_reserved(&s) {
                    Err(format!("'{s}' is a keyword, quote it to use as a column"))
                } else {
                    Ok(s)
                }
            }
            other => Err(format!("expected identifier, found {other:?}")),
        }
    }

    fn query(&mut self) -> Result<Query, String> {
        self.expect_keyword("SELECT")?;
        let items = self.select_list()?;
        self.expect_keyword("FROM")?;
        match self.next() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case("t") => {}
            other => {
                return Err(format!(
                    "the input table is bound to 't'; cannot select from {other:?}"
                ))
            }
        }
        let filter = if self.keyword("WHERE") {
            Some(self.condition()?)
        } else {
            None
        };
        let group_by = if self.keyword("GROUP") {
            self.expect_keyword("BY")?;
            Some(self.identifier()?)
        } else {
            None
        };
        let order_by = if self.keyword("ORDER") {
            self.expect_keyword("BY")?;
            let column = self.identifier()?;
            let descending = if self.keyword("DESC") {
                true
            } else {
                self.keyword("ASC");
                false
            };
            Some(OrderBy { column, descending })
        } else {
            None
        };
        let limit = if self.keyword("LIMIT") {
            match self.next() {
                Some(Token::Number(n)) if n >= 0.0 && n.fract() == 0.0 => Some(n as usize),
                other => return Err(format!("LIMIT wants a nonnegative integer, found {other:?}")),
            }
        } else {
            None
        };
        Ok(Query {
            items,
            filter,
            group_by,
            order_by,
            limit,
        })
    }

    fn select_list(&mut self) -> Result<SelectList, String> {
        if self.symbol("*") {
            return Ok(SelectList::Star);
        }
        let mut items = vec![self.select_item()?];
        while self.symbol(",") {
            items.push(self.select_item()?);
        }
        Ok(SelectList::Items(items))
    }

    fn select_item(&mut self) -> Result<SelectItem, String> {
        if let Some(Token::Ident(s)) = self.peek() {
            let func = match s.to_ascii_uppercase().as_str() {
                "COUNT" => Some(AggFunc::Count),
                "SUM" => Some(AggFunc::Sum),
                "AVG" => Some(AggFunc::Avg),
                "MIN" => Some(AggFunc::Min),
                "MAX" => Some(AggFunc::Max),
                _ => None,
            };
            if let Some(func) = func {
                self.pos += 1;
                self.expect_symbol("(")?;
                let distinct = self.keyword("DISTINCT");
                let arg = if self.symbol("*") {
                    if func != AggFunc::Count {
                        return Err(format!("{}(*) is not supported", func.name()));
                    }
                    if distinct {
                        return Err("COUNT(DISTINCT *) is not supported".into());
                    }
                    AggArg::Star
                } else {
                    AggArg::Column(self.identifier()?)
                };
                self.expect_symbol(")")?;
                return Ok(SelectItem::Aggregate(Aggregate { func, distinct, arg }));
            }
        }
        Ok(SelectItem::Column(self.identifier()?))
    }

    fn condition(&mut self) -> Result<Condition, String> {
        let mut left = self.conjunction()?;
        while self.keyword("OR") {
            let right = self.conjunction()?;
            left = Condition::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Condition, String> {
        let mut left = self.negation()?;
        while self.keyword("AND") {
            let right = self.negation()?;
            left = Condition::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn negation(&mut self) -> Result<Condition, String> {
        if self.keyword("NOT") {
            return Ok(Condition::Not(Box::new(self.negation()?)));
        }
        if self.symbol("(") {
            let inner = self.condition()?;
            self.expect_symbol(")")?;
            return Ok(inner);
        }
        let column = self.identifier()?;
        let op = match self.next() {
            Some(Token::Symbol("=")) => CmpOp::Eq,
            Some(Token::Symbol("!=")) => CmpOp::Ne,
            Some(Token::Symbol("<")) => CmpOp::Lt,
            Some(Token::Symbol("<=")) => CmpOp::Le,
            Some(Token::Symbol(">")) => CmpOp::Gt,
            Some(Token::Symbol(">=")) => CmpOp::Ge,
            other => return Err(format!("expected comparison operator, found {other:?}")),
        };
        let literal = match self.next() {
            Some(Token::Number(n)) => Literal::Number(n),
            Some(Token::Str(s)) => Literal::Text(s),
            other => return Err(format!("expected literal, found {other:?}")),
        };
        Ok(Condition::Cmp { column, op, literal })
    }
}

fn is_reserved(s: &str) -> bool {
    matches!(
        s.to_ascii_uppercase().as_str(),
        "SELECT"
            | "FROM"
            | "WHERE"
            | "GROUP"
            | "BY"
            | "ORDER"
            | "ASC"
            | "DESC"
            | "LIMIT"
            | "AND"
            | "OR"
            | "NOT"
            | "DISTINCT"
    )
}

// ---------------------------------------------------------------------------
// Evaluator
// ---------------------------------------------------------------------------

fn resolve(table: &Table, name: &str) -> Result<usize, String> {
    table
        .headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format!("unknown column '{name}'"))
}

pub fn predicate_matches(cell: &CellValue, op: CmpOp, literal: &Literal) -> bool {
    let norm = compare::normalize(cell);
    match (norm, literal) {
        (Norm::Num(x), Literal::Number(y)) => apply_num(op, x, *y),
        (Norm::Text(x), Literal::Text(y)) => apply_ord(op, x.as_str().cmp(y.as_str())),
        _ => false,
    }
}

fn apply_num(op: CmpOp, x: f64, y: f64) -> bool {
    match op {
        CmpOp::Eq => x == y,
        CmpOp::Ne => x != y,
        CmpOp::Lt => x < y,
        CmpOp::Le => x <= y,
        CmpOp::Gt => x > y,
        CmpOp::Ge => x >= y,
    }
}

fn apply_ord(op: CmpOp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CmpOp::Eq => ord == Equal,
        CmpOp::Ne => ord != Equal,
        CmpOp::Lt => ord == Less,
        CmpOp::Le => ord != Greater,
        CmpOp::Gt => ord == Greater,
        CmpOp::Ge => ord != Less,
    }
}

fn condition_matches(cond: &Condition, table: &Table, row: &[CellValue]) -> Result<bool, String> {
    match cond {
        Condition::Cmp { column, op, literal } => {
            let idx = resolve(table, column)?;
            Ok(predicate_matches(&row[idx], *op, literal))
        }
        Condition::And(a, b) => {
            Ok(condition_matches(a, table, row)? && condition_matches(b, table, row)?)
        }
        Condition::Or(a, b) => {
            Ok(condition_matches(a, table, row)? || condition_matches(b, table, row)?)
        }
        Condition::Not(inner) => Ok(!condition_matches(inner, table, row)?),
    }
}

/// Fold an aggregate over the cells of one column (or row count for
/// COUNT(*)). Shared by grouped and whole-table aggregation.
pub fn fold_aggregate(agg: &Aggregate, cells: &[&CellValue], row_count: usize) -> CellValue {
    match (&agg.func, &agg.arg) {
        (AggFunc::Count, AggArg::Star) => CellValue::number(row_count as f64),
        (AggFunc::Count, AggArg::Column(_)) => {
            if agg.distinct {
                let keys: BTreeSet<CellKey> = cells
                    .iter()
                    .filter(|c| !matches!(compare::normalize(c), Norm::Null))
                    .map(|c| compare::cell_key(c))
                    .collect();
                CellValue::number(keys.len() as f64)
            } else {
                let n = cells
                    .iter()
                    .filter(|c| !matches!(compare::normalize(c), Norm::Null))
                    .count();
                CellValue::number(n as f64)
            }
        }
        (AggFunc::Sum, _) | (AggFunc::Avg, _) => {
            let mut values: Vec<f64> = Vec::new();
            let mut seen: BTreeSet<u64> = BTreeSet::new();
            for c in cells {
                if let Norm::Num(x) = compare::normalize(c) {
                    if agg.distinct && !seen.insert(x.to_bits()) {
                        continue;
                    }
                    values.push(x);
                }
            }
            if values.is_empty() {
                return CellValue::Null;
            }
            let sum: f64 = values.iter().sum();
            if agg.func == AggFunc::Sum {
                CellValue::number(sum)
            } else {
                CellValue::number(sum / values.len() as f64)
            }
        }
        (AggFunc::Min, _) | (AggFunc::Max, _) => {
            let mut best: Option<CellValue> = None;
            for c in cells {
                let norm = compare::normalize(c);
                if matches!(norm, Norm::Null) {
                    continue;
                }
                let candidate = match norm {
                    Norm::Num(x) => CellValue::number(x),
                    Norm::Text(s) => CellValue::Text(s),
                    Norm::Null => unreachable!(),
                };
                best = Some(match best {
                    None => candidate,
                    Some(cur) => {
                        let ord = compare::compare_cells(&candidate, &cur);
                        let take = if agg.func == AggFunc::Min {
                            ord == std::cmp::Ordering::Less
                        } else {
                            ord == std::cmp::Ordering::Greater
                        };
                        if take {
                            candidate
                        } else {
                            cur
                        }
                    }
                });
            }
            best.unwrap_or(CellValue::Null)
        }
    }
}

fn aggregate_header(agg: &Aggregate) -> String {
    let arg = match &agg.arg {
        AggArg::Star => "*".to_string(),
        AggArg::Column(c) => c.clone(),
    };
    if agg.distinct {
        format!("{}(distinct {arg})", agg.func.name())
    } else {
        format!("{}({arg})", agg.func.name())
    }
}

fn eval(query: &Query, table: &Table, deadline: &Deadline) -> Result<ExecResult, String> {
    // Filter.
    let mut rows: Vec<&Vec<CellValue>> = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        if i % 1024 == 0 && deadline.exceeded() {
            return Err("timeout while filtering".into());
        }
        let keep = match &query.filter {
            Some(cond) => condition_matches(cond, table, row)?,
            None => true,
        };
        if keep {
            rows.push(row);
        }
    }

    let items: Vec<SelectItem> = match &query.items {
        SelectList::Star => {
            if query.group_by.is_some() {
                return Err("SELECT * cannot be combined with GROUP BY".into());
            }
            table
                .headers
                .iter()
                .map(|h| SelectItem::Column(h.clone()))
                .collect()
        }
        SelectList::Items(items) => items.clone(),
    };
    let has_aggregate = items
        .iter()
        .any(|i| matches!(i, SelectItem::Aggregate(_)));

    let (mut headers, mut out_rows, ordered) = if let Some(group_col) = &query.group_by {
        eval_grouped(query, table, &rows, &items, group_col)?
    } else if has_aggregate {
        eval_whole_table_aggregate(query, table, &rows, &items)?
    } else {
        eval_plain(query, table, &rows, &items)?
    };

    if let Some(limit) = query.limit {
        out_rows.truncate(limit);
    }
    if headers.is_empty() {
        headers = vec!["value".to_string()];
    }
    let result = Table {
        name: "result".to_string(),
        headers,
        rows: out_rows,
    };
    Ok(ExecResult::Table { table: result, ordered }.collapse())
}

type Projected = (Vec<String>, Vec<Vec<CellValue>>, bool);

fn eval_plain(
    query: &Query,
    table: &Table,
    rows: &[&Vec<CellValue>],
    items: &[SelectItem],
) -> Result<Projected, String> {
    let mut cols = Vec::with_capacity(items.len());
    let mut headers = Vec::with_capacity(items.len());
    for item in items {
        match item {
            SelectItem::Column(name) => {
                cols.push(resolve(table, name)?);
                headers.push(name.clone());
            }
            SelectItem::Aggregate(_) => {
                return Err("aggregates cannot be mixed with plain columns without GROUP BY".into())
            }
        }
    }
    let mut ordered_rows: Vec<&Vec<CellValue>> = rows.to_vec();
    let mut ordered = false;
    if let Some(ob) = &query.order_by {
        let idx = resolve(table, &ob.column)?;
        ordered_rows.sort_by(|a, b| {
            let ord = compare::compare_cells(&a[idx], &b[idx]);
            if ob.descending {
                ord.reverse()
            } else {
                ord
            }
        });
        ordered = true;
    }
    let out = ordered_rows
        .iter()
        .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
        .collect();
    Ok((headers, out, ordered))
}

fn eval_whole_table_aggregate(
    query: &Query,
    table: &Table,
    rows: &[&Vec<CellValue>],
    items: &[SelectItem],
) -> Result<Projected, String> {
    if query.order_by.is_some() {
        return Err("ORDER BY is not allowed in a whole-table aggregate".into());
    }
    let mut headers = Vec::with_capacity(items.len());
    let mut row = Vec::with_capacity(items.len());
    for item in items {
        let agg = match item {
            SelectItem::Aggregate(a) => a,
            SelectItem::Column(_) => {
                return Err("aggregates cannot be mixed with plain columns without GROUP BY".into())
            }
        };
        let cells: Vec<&CellValue> = match &agg.arg {
            AggArg::Star => Vec::new(),
            AggArg::Column(name) => {
                let idx = resolve(table, name)?;
                rows.iter().map(|r| &r[idx]).collect()
            }
        };
        headers.push(aggregate_header(agg));
        row.push(fold_aggregate(agg, &cells, rows.len()));
    }
    Ok((headers, vec![row], false))
}

fn eval_grouped(
    query: &Query,
    table: &Table,
    rows: &[&Vec<CellValue>],
    items: &[SelectItem],
    group_col: &str,
) -> Result<Projected, String> {
    let gidx = resolve(table, group_col)?;
    // Groups in first-appearance order of the normalized key.
    let mut order: Vec<CellKey> = Vec::new();
    let mut groups: std::collections::BTreeMap<CellKey, Vec<&Vec<CellValue>>> =
        std::collections::BTreeMap::new();
    for row in rows {
        let key = compare::cell_key(&row[gidx]);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }

    for item in items {
        match item {
            SelectItem::Column(name) if name == group_col => {}
            SelectItem::Column(name) => {
                return Err(format!(
                    "column '{name}' must be the grouped column or inside an aggregate"
                ))
            }
            SelectItem::Aggregate(_) => {}
        }
    }

    let mut group_rows: Vec<(CellValue, Vec<&Vec<CellValue>>)> = Vec::new();
    for key in &order {
        let members = groups.get(key).expect("group listed in order").clone();
        // Representative group cell: normalized form of the first member.
        let rep = match compare::normalize(&members[0][gidx]) {
            Norm::Null => CellValue::Null,
            Norm::Num(x) => CellValue::number(x),
            Norm::Text(s) => CellValue::Text(s),
        };
        group_rows.push((rep, members));
    }

    let mut ordered = false;
    if let Some(ob) = &query.order_by {
        if ob.column != group_col {
            return Err(format!(
                "ORDER BY '{}' must reference the grouped column '{group_col}'",
                ob.column
            ));
        }
        group_rows.sort_by(|a, b| {
            let ord = compare::compare_cells(&a.0, &b.0);
            if ob.descending {
                ord.reverse()
            } else {
                ord
            }
        });
        ordered = true;
    }

    let mut headers = Vec::with_capacity(items.len());
    let mut out = Vec::with_capacity(group_rows.len());
    for (rep, members) in &group_rows {
        let mut row = Vec::with_capacity(items.len());
        for item in items {
            match item {
                SelectItem::Column(_) => row.push(rep.clone()),
                SelectItem::Aggregate(agg) => {
                    let cells: Vec<&CellValue> = match &agg.arg {
                        AggArg::Star => Vec::new(),
                        AggArg::Column(name) => {
                            let idx = resolve(table, name)?;
                            members.iter().map(|r| &r[idx]).collect()
                        }
                    };
                    row.push(fold_aggregate(agg, &cells, members.len()));
                }
            }
        }
        out.push(row);
    }
    for item in items {
        headers.push(match item {
            SelectItem::Column(name) => name.clone(),
            SelectItem::Aggregate(agg) => aggregate_header(agg),
        });
    }
    Ok((headers, out, ordered))
}
