//! Statement trees for the supported SQL subset. The same tree type is
//! produced by the parser and by the script emitter.

use serde::{Deserialize, Serialize};

use crate::expr::{BinaryOp, UnaryOp};
use crate::ops::AggKind;
use crate::value::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Column {
        table: Option<String>,
        name: String,
    },
    Literal(Value),
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    IsDistinctFrom {
        left: Box<Expr>,
        right: Box<Expr>,
        negated: bool,
    },
    Case {
        branches: Vec<(Expr, Expr)>,
        otherwise: Option<Box<Expr>>,
    },
    Coalesce(Vec<Expr>),
    /// `SUM(expr)`, `COUNT(expr)` or `COUNT(*)` (argument `None`).
    Aggregate {
        kind: AggKind,
        arg: Option<Box<Expr>>,
    },
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Self {
        Expr::Column {
            table: None,
            name: name.into(),
        }
    }

    pub fn qcol(table: impl Into<String>, name: impl Into<String>) -> Self {
        Expr::Column {
            table: Some(table.into()),
            name: name.into(),
        }
    }

    pub fn lit(v: impl Into<Value>) -> Self {
        Expr::Literal(v.into())
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Self {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn neg(e: Expr) -> Self {
        Expr::Unary {
            op: UnaryOp::Neg,
            expr: Box::new(e),
        }
    }

    pub fn sum(e: Expr) -> Self {
        Expr::Aggregate {
            kind: AggKind::Sum,
            arg: Some(Box::new(e)),
        }
    }

    pub fn count_star() -> Self {
        Expr::Aggregate {
            kind: AggKind::Count,
            arg: None,
        }
    }

    /// Left-deep conjunction; `None` for an empty list.
    pub fn and_all(mut parts: Vec<Expr>) -> Option<Expr> {
        if parts.is_empty() {
            return None;
        }
        let first = parts.remove(0);
        Some(
            parts
                .into_iter()
                .fold(first, |acc, p| Expr::binary(BinaryOp::And, acc, p)),
        )
    }

    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Aggregate { .. } => true,
            Expr::Column { .. } | Expr::Literal(_) => false,
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => expr.contains_aggregate(),
            Expr::Binary { left, right, .. } | Expr::IsDistinctFrom { left, right, .. } => {
                left.contains_aggregate() || right.contains_aggregate()
            }
            Expr::Case {
                branches,
                otherwise,
            } => {
                branches
                    .iter()
                    .any(|(c, t)| c.contains_aggregate() || t.contains_aggregate())
                    || otherwise.as_ref().is_some_and(|e| e.contains_aggregate())
            }
            Expr::Coalesce(args) => args.iter().any(Expr::contains_aggregate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

impl SelectItem {
    pub fn new(expr: Expr) -> Self {
        Self { expr, alias: None }
    }

    pub fn aliased(expr: Expr, alias: impl Into<String>) -> Self {
        Self {
            expr,
            alias: Some(alias.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            alias: None,
        }
    }

    pub fn aliased(name: impl Into<String>, alias: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            alias: Some(alias.into()),
        }
    }

    /// Name the table's columns are visible under.
    pub fn visible_name(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    pub on: Expr,
}

/// One `SELECT ... FROM ... [JOIN] [WHERE] [GROUP BY]` block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Select {
    pub items: Vec<SelectItem>,
    pub from: Option<TableRef>,
    pub join: Option<Join>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cte {
    pub name: String,
    pub query: SelectQuery,
}

/// `[WITH ...] select [UNION ALL select]*`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectQuery {
    pub ctes: Vec<Cte>,
    pub body: Vec<Select>,
}

impl SelectQuery {
    pub fn simple(select: Select) -> Self {
        Self {
            ctes: Vec::new(),
            body: vec![select],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertSource {
    Values(Vec<Vec<Expr>>),
    Query(SelectQuery),
}

/// `ON CONFLICT (target) DO UPDATE SET col = expr, ...`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnConflict {
    pub target: Vec<String>,
    pub assignments: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insert {
    pub table: String,
    pub columns: Option<Vec<String>>,
    pub source: InsertSource,
    /// `INSERT OR REPLACE`
    pub or_replace: bool,
    pub on_conflict: Option<OnConflict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statement {
    CreateTable {
        name: String,
        columns: Vec<ColumnDef>,
        primary_key: Option<Vec<String>>,
        if_not_exists: bool,
    },
    CreateView {
        name: String,
        query: SelectQuery,
        materialized: bool,
    },
    CreateIndex {
        name: String,
        table: String,
        columns: Vec<String>,
        unique: bool,
    },
    Insert(Insert),
    Delete {
        table: String,
        selection: Option<Expr>,
    },
    Select(SelectQuery),
    Begin,
    Commit,
}

impl Statement {
    /// Table written by the statement, if any.
    pub fn target_table(&self) -> Option<&str> {
        match self {
            Statement::CreateTable { name, .. } => Some(name),
            Statement::Insert(i) => Some(&i.table),
            Statement::Delete { table, .. } => Some(table),
            Statement::CreateIndex { table, .. } => Some(table),
            _ => None,
        }
    }
}
