//! Seeded random generator of (query, table) pairs covering the full
//! supported SQL-subset grammar. Queries are built as an AST (which the
//! reference evaluator consumes directly) and rendered to SQL text for the
//! interpreter, so both the parser and the evaluator are exercised.

use tabletune::rng::SplitMix64;
use tabletune::table::{CellValue, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggTarget {
    Star,
    Column(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agg {
    pub func: AggFunc,
    pub distinct: bool,
    pub target: AggTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupItem {
    Key,
    Agg(Agg),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Select {
    Star,
    Columns(Vec<String>),
    Aggregates(Vec<Agg>),
    GroupBy { key: String, items: Vec<GroupItem> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn sql(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    Cmp {
        col: String,
        op: Op,
        num: Option<f64>,
        text: Option<String>,
    },
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
    Not(Box<Cond>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderBy {
    pub column: String,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: Select,
    pub filter: Option<Cond>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<usize>,
}

const WORDS: &[&str] = &[
    "apple", "pear", "kiwi", "fig", "plum", "Lee", "lee", "zeta",
];
const NUMS: &[f64] = &[-3.0, -1.0, 0.0, 1.0, 2.0, 2.5, 3.0, 5.0, 7.0, 12.0];

/// A random table, up to 8 rows x 4 columns, mixing numeric and text
/// columns with nulls and numeric-looking padded text.
pub fn random_table(rng: &mut SplitMix64) -> Table {
    let cols = 1 + rng.next_below(4) as usize;
    let rows = rng.next_below(9) as usize;
    let profiles: Vec<u64> = (0..cols).map(|_| rng.next_below(3)).collect();
    let headers: Vec<String> = (0..cols).map(|c| format!("c{c}")).collect();
    let data = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|c| random_cell(rng, profiles[c]))
                .collect::<Vec<CellValue>>()
        })
        .collect();
    Table::new("t", headers, data).unwrap()
}

fn random_cell(rng: &mut SplitMix64, profile: u64) -> CellValue {
    match profile {
        // Numeric column with occasional nulls and padded numeric text.
        0 => match rng.next_below(10) {
            0 => CellValue::Null,
            1 => CellValue::text(format!(" {} ", NUMS[rng.next_below(NUMS.len() as u64) as usize])),
            _ => CellValue::number(NUMS[rng.next_below(NUMS.len() as u64) as usize]),
        },
        // Text column with occasional nulls.
        1 => match rng.next_below(8) {
            0 => CellValue::Null,
            _ => CellValue::text(WORDS[rng.next_below(WORDS.len() as u64) as usize]),
        },
        // Mixed column.
        _ => match rng.next_below(6) {
            0 => CellValue::Null,
            1 | 2 => CellValue::number(NUMS[rng.next_below(NUMS.len() as u64) as usize]),
            _ => CellValue::text(WORDS[rng.next_below(WORDS.len() as u64) as usize]),
        },
    }
}

fn random_column(rng: &mut SplitMix64, table: &Table) -> String {
    table.headers[rng.next_below(table.column_count() as u64) as usize].clone()
}

fn random_agg(rng: &mut SplitMix64, table: &Table) -> Agg {
    let func = match rng.next_below(5) {
        0 => AggFunc::Count,
        1 => AggFunc::Sum,
        2 => AggFunc::Avg,
        3 => AggFunc::Min,
        _ => AggFunc::Max,
    };
    let star = func == AggFunc::Count && rng.next_below(2) == 0;
    if star {
        return Agg {
            func,
            distinct: false,
            target: AggTarget::Star,
        };
    }
    Agg {
        func,
        distinct: rng.next_below(4) == 0,
        target: AggTarget::Column(random_column(rng, table)),
    }
}

fn random_cond(rng: &mut SplitMix64, table: &Table, depth: u32) -> Cond {
    if depth > 0 && rng.next_below(3) == 0 {
        let a = Box::new(random_cond(rng, table, depth - 1));
        let b = Box::new(random_cond(rng, table, depth - 1));
        return match rng.next_below(3) {
            0 => Cond::And(a, b),
            1 => Cond::Or(a, b),
            _ => Cond::Not(a),
        };
    }
    let col = random_column(rng, table);
    let op = match rng.next_below(6) {
        0 => Op::Eq,
        1 => Op::Ne,
        2 => Op::Lt,
        3 => Op::Le,
        4 => Op::Gt,
        _ => Op::Ge,
    };
    if rng.next_below(2) == 0 {
        Cond::Cmp {
            col,
            op,
            num: Some(NUMS[rng.next_below(NUMS.len() as u64) as usize]),
            text: None,
        }
    } else {
        Cond::Cmp {
            col,
            op,
            num: None,
            text: Some(WORDS[rng.next_below(WORDS.len() as u64) as usize].to_string()),
        }
    }
}

/// A random query over `table`'s columns, covering every grammar feature:
/// star/column/aggregate/grouped selects, DISTINCT aggregates, boolean
/// filter trees with NOT and parentheses, ORDER BY with directions, LIMIT.
pub fn random_query(rng: &mut SplitMix64, table: &Table) -> Query {
    let select = match rng.next_below(10) {
        0 => Select::Star,
        1..=3 => {
            let n = 1 + rng.next_below(table.column_count() as u64) as usize;
            Select::Columns((0..n).map(|_| random_column(rng, table)).collect())
        }
        4..=6 => {
            let n = 1 + rng.next_below(2) as usize;
            Select::Aggregates((0..n).map(|_| random_agg(rng, table)).collect())
        }
        _ => {
            let key = random_column(rng, table);
            let mut items = Vec::new();
            if rng.next_below(5) != 0 {
                items.push(GroupItem::Key);
            }
            for _ in 0..=rng.next_below(2) {
                items.push(GroupItem::Agg(random_agg(rng, table)));
            }
            if items.is_empty() {
                items.push(GroupItem::Key);
            }
            Select::GroupBy { key, items }
        }
    };
    let filter = if rng.next_below(5) < 3 {
        Some(random_cond(rng, table, 2))
    } else {
        None
    };
    let order_by = match &select {
        Select::Star | Select::Columns(_) if rng.next_below(2) == 0 => Some(OrderBy {
            column: random_column(rng, table),
            descending: rng.next_below(2) == 0,
        }),
        Select::GroupBy { key, .. } if rng.next_below(5) < 2 => Some(OrderBy {
            column: key.clone(),
            descending: rng.next_below(2) == 0,
        }),
        _ => None,
    };
    let limit = if rng.next_below(5) < 2 {
        Some(rng.next_below(6) as usize)
    } else {
        None
    };
    Query {
        select,
        filter,
        order_by,
        limit,
    }
}

fn render_agg(agg: &Agg) -> String {
    let func = match agg.func {
        AggFunc::Count => "COUNT",
        AggFunc::Sum => "SUM",
        AggFunc::Avg => "AVG",
        AggFunc::Min => "MIN",
        AggFunc::Max => "MAX",
    };
    match &agg.target {
        AggTarget::Star => format!("{func}(*)"),
        AggTarget::Column(c) => {
            if agg.distinct {
                format!("{func}(DISTINCT {c})")
            } else {
                format!("{func}({c})")
            }
        }
    }
}

fn render_cond(cond: &Cond) -> String {
    match cond {
        Cond::Cmp { col, op, num, text } => {
            let lit = match (num, text) {
                (Some(n), None) => n.to_string(),
                (None, Some(t)) => format!("'{}'", t.replace('\'', "''")),
                _ => unreachable!("literal is number or text"),
            };
            format!("{col} {} {lit}", op.sql())
        }
        Cond::And(a, b) => format!("({} AND {})", render_cond(a), render_cond(b)),
        Cond::Or(a, b) => format!("({} OR {})", render_cond(a), render_cond(b)),
        Cond::Not(a) => format!("NOT ({})", render_cond(a)),
    }
}

/// Render the AST to SQL text for the interpreter under test.
pub fn render_sql(query: &Query) -> String {
    let select = match &query.select {
        Select::Star => "*".to_string(),
        Select::Columns(names) => names.join(", "),
        Select::Aggregates(aggs) => aggs
            .iter()
            .map(render_agg)
            .collect::<Vec<_>>()
            .join(", "),
        Select::GroupBy { key, items } => items
            .iter()
            .map(|item| match item {
                GroupItem::Key => key.clone(),
                GroupItem::Agg(a) => render_agg(a),
            })
            .collect::<Vec<_>>()
            .join(", "),
    };
    let mut sql = format!("SELECT {select} FROM t");
    if let Some(cond) = &query.filter {
        sql.push_str(&format!(" WHERE {}", render_cond(cond)));
    }
    if let Select::GroupBy { key, .. } = &query.select {
        sql.push_str(&format!(" GROUP BY {key}"));
    }
    if let Some(ob) = &query.order_by {
        sql.push_str(&format!(
            " ORDER BY {}{}",
            ob.column,
            if ob.descending { " DESC" } else { " ASC" }
        ));
    }
    if let Some(limit) = query.limit {
        sql.push_str(&format!(" LIMIT {limit}"));
    }
    sql
}
