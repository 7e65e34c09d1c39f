//! Resolved scalar expressions: column references are positions in the
//! input row. Shared by plan evaluation and the SQL engine.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarExpr {
    Column(usize),
    Literal(Value),
    Unary {
        op: UnaryOp,
        expr: Box<ScalarExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<ScalarExpr>,
        right: Box<ScalarExpr>,
    },
    IsNull {
        expr: Box<ScalarExpr>,
        negated: bool,
    },
    /// `IS [NOT] DISTINCT FROM`; `negated` is the `NOT` form (null-safe equality).
    IsDistinctFrom {
        left: Box<ScalarExpr>,
        right: Box<ScalarExpr>,
        negated: bool,
    },
    Case {
        branches: Vec<(ScalarExpr, ScalarExpr)>,
        otherwise: Option<Box<ScalarExpr>>,
    },
    Coalesce(Vec<ScalarExpr>),
}

impl ScalarExpr {
    pub fn column(i: usize) -> Self {
        ScalarExpr::Column(i)
    }

    pub fn binary(op: BinaryOp, left: ScalarExpr, right: ScalarExpr) -> Self {
        ScalarExpr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn eval(&self, row: &[Value]) -> Result<Value> {
        match self {
            ScalarExpr::Column(i) => row
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::Execution(format!("column #{i} out of range"))),
            ScalarExpr::Literal(v) => Ok(v.clone()),
            ScalarExpr::Unary { op, expr } => {
                let v = expr.eval(row)?;
                match op {
                    UnaryOp::Neg => v.neg(),
                    UnaryOp::Not => Ok(match v.as_bool()? {
                        Some(b) => Value::Bool(!b),
                        None => Value::Null,
                    }),
                }
            }
            ScalarExpr::Binary { op, left, right } => eval_binary(*op, left, right, row),
            ScalarExpr::IsNull { expr, negated } => {
                Ok(Value::Bool(expr.eval(row)?.is_null() != *negated))
            }
            ScalarExpr::IsDistinctFrom {
                left,
                right,
                negated,
            } => {
                let (l, r) = (left.eval(row)?, right.eval(row)?);
                if !l.is_null() && !r.is_null() {
                    l.sql_cmp(&r)?;
                }
                Ok(Value::Bool((l != r) != *negated))
            }
            ScalarExpr::Case {
                branches,
                otherwise,
            } => {
                for (cond, then) in branches {
                    if cond.eval(row)?.as_bool()? == Some(true) {
                        return then.eval(row);
                    }
                }
                match otherwise {
                    Some(e) => e.eval(row),
                    None => Ok(Value::Null),
                }
            }
            ScalarExpr::Coalesce(args) => {
                for a in args {
                    let v = a.eval(row)?;
                    if !v.is_null() {
                        return Ok(v);
                    }
                }
                Ok(Value::Null)
            }
        }
    }

    /// Evaluates as a filter predicate: NULL counts as false.
    pub fn eval_predicate(&self, row: &[Value]) -> Result<bool> {
        Ok(self.eval(row)?.as_bool()? == Some(true))
    }

    /// Static type over the given input column types. `None` means the
    /// expression is the untyped NULL literal.
    pub fn data_type(&self, input: &[DataType]) -> Result<Option<DataType>> {
        match self {
            ScalarExpr::Column(i) => input
                .get(*i)
                .copied()
                .map(Some)
                .ok_or_else(|| Error::UnknownColumn(format!("#{i}"))),
            ScalarExpr::Literal(v) => Ok(v.data_type()),
            ScalarExpr::Unary { op, expr } => {
                let t = expr.data_type(input)?;
                match (op, t) {
                    (_, None) => Ok(None),
                    (UnaryOp::Neg, Some(t)) if t.is_numeric() => Ok(Some(t)),
                    (UnaryOp::Not, Some(DataType::Bool)) => Ok(Some(DataType::Bool)),
                    (op, Some(t)) => Err(Error::Type(format!("operator {op:?} not defined on {t}"))),
                }
            }
            ScalarExpr::Binary { op, left, right } => {
                let (l, r) = (left.data_type(input)?, right.data_type(input)?);
                match op {
                    BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                        match (l, r) {
                            (None, None) => Ok(None),
                            (Some(t), None) | (None, Some(t)) if t.is_numeric() => Ok(Some(t)),
                            (Some(a), Some(b)) => DataType::numeric_join(a, b)
                                .map(Some)
                                .ok_or_else(|| {
                                    Error::Type(format!("operator {} on {a} and {b}", op.symbol()))
                                }),
                            (Some(t), None) | (None, Some(t)) => {
                                Err(Error::Type(format!("operator {} on {t}", op.symbol())))
                            }
                        }
                    }
                    BinaryOp::And | BinaryOp::Or => {
                        for t in [l, r].into_iter().flatten() {
                            if t != DataType::Bool {
                                return Err(Error::Type(format!(
                                    "{} expects booleans, found {t}",
                                    op.symbol()
                                )));
                            }
                        }
                        Ok(Some(DataType::Bool))
                    }
                    _ => {
                        comparable(l, r)?;
                        Ok(Some(DataType::Bool))
                    }
                }
            }
            ScalarExpr::IsNull { expr, .. } => {
                expr.data_type(input)?;
                Ok(Some(DataType::Bool))
            }
            ScalarExpr::IsDistinctFrom { left, right, .. } => {
                comparable(left.data_type(input)?, right.data_type(input)?)?;
                Ok(Some(DataType::Bool))
            }
            ScalarExpr::Case {
                branches,
                otherwise,
            } => {
                let mut result: Option<DataType> = None;
                let mut arms: Vec<&ScalarExpr> = Vec::new();
                for (cond, then) in branches {
                    match cond.data_type(input)? {
                        None | Some(DataType::Bool) => {}
                        Some(t) => {
                            return Err(Error::Type(format!("CASE condition of type {t}")))
                        }
                    }
                    arms.push(then);
                }
                arms.extend(otherwise.as_deref());
                for arm in arms {
                    result = unify(result, arm.data_type(input)?)?;
                }
                Ok(result)
            }
            ScalarExpr::Coalesce(args) => {
                let mut result = None;
                for a in args {
                    result = unify(result, a.data_type(input)?)?;
                }
                Ok(result)
            }
        }
    }

    /// Rewrites every column index through `f`.
    pub fn map_columns(&self, f: &impl Fn(usize) -> usize) -> ScalarExpr {
        match self {
            ScalarExpr::Column(i) => ScalarExpr::Column(f(*i)),
            ScalarExpr::Literal(v) => ScalarExpr::Literal(v.clone()),
            ScalarExpr::Unary { op, expr } => ScalarExpr::Unary {
                op: *op,
                expr: Box::new(expr.map_columns(f)),
            },
            ScalarExpr::Binary { op, left, right } => {
                ScalarExpr::binary(*op, left.map_columns(f), right.map_columns(f))
            }
            ScalarExpr::IsNull { expr, negated } => ScalarExpr::IsNull {
                expr: Box::new(expr.map_columns(f)),
                negated: *negated,
            },
            ScalarExpr::IsDistinctFrom {
                left,
                right,
                negated,
            } => ScalarExpr::IsDistinctFrom {
                left: Box::new(left.map_columns(f)),
                right: Box::new(right.map_columns(f)),
                negated: *negated,
            },
            ScalarExpr::Case {
                branches,
                otherwise,
            } => ScalarExpr::Case {
                branches: branches
                    .iter()
                    .map(|(c, t)| (c.map_columns(f), t.map_columns(f)))
                    .collect(),
                otherwise: otherwise.as_ref().map(|e| Box::new(e.map_columns(f))),
            },
            ScalarExpr::Coalesce(args) => {
                ScalarExpr::Coalesce(args.iter().map(|a| a.map_columns(f)).collect())
            }
        }
    }

    /// Renders the expression with `name(i)` supplying column text.
    pub fn display_with(&self, name: &dyn Fn(usize) -> String) -> String {
        match self {
            ScalarExpr::Column(i) => name(*i),
            ScalarExpr::Literal(Value::Text(s)) => format!("'{}'", s.replace('\'', "''")),
            ScalarExpr::Literal(Value::Null) => "NULL".into(),
            ScalarExpr::Literal(Value::Bool(b)) => if *b { "TRUE" } else { "FALSE" }.into(),
            ScalarExpr::Literal(v) => v.to_string(),
            ScalarExpr::Unary { op: UnaryOp::Neg, expr } => format!("-({})", expr.display_with(name)),
            ScalarExpr::Unary { op: UnaryOp::Not, expr } => format!("NOT ({})", expr.display_with(name)),
            ScalarExpr::Binary { op, left, right } => format!(
                "({} {} {})",
                left.display_with(name),
                op.symbol(),
                right.display_with(name)
            ),
            ScalarExpr::IsNull { expr, negated } => format!(
                "({} IS {}NULL)",
                expr.display_with(name),
                if *negated { "NOT " } else { "" }
            ),
            ScalarExpr::IsDistinctFrom {
                left,
                right,
                negated,
            } => format!(
                "({} IS {}DISTINCT FROM {})",
                left.display_with(name),
                if *negated { "NOT " } else { "" },
                right.display_with(name)
            ),
            ScalarExpr::Case {
                branches,
                otherwise,
            } => {
                let mut s = String::from("CASE");
                for (c, t) in branches {
                    s += &format!(" WHEN {} THEN {}", c.display_with(name), t.display_with(name));
                }
                if let Some(e) = otherwise {
                    s += &format!(" ELSE {}", e.display_with(name));
                }
                s + " END"
            }
            ScalarExpr::Coalesce(args) => format!(
                "COALESCE({})",
                args.iter()
                    .map(|a| a.display_with(name))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        }
    }
}

fn comparable(l: Option<DataType>, r: Option<DataType>) -> Result<()> {
    match (l, r) {
        (Some(a), Some(b)) if a != b && !(a.is_numeric() && b.is_numeric()) => {
            Err(Error::Type(format!("cannot compare {a} with {b}")))
        }
        _ => Ok(()),
    }
}

fn unify(acc: Option<DataType>, next: Option<DataType>) -> Result<Option<DataType>> {
    match (acc, next) {
        (None, t) | (t, None) => Ok(t),
        (Some(a), Some(b)) if a == b => Ok(Some(a)),
        (Some(a), Some(b)) => DataType::numeric_join(a, b)
            .map(Some)
            .ok_or_else(|| Error::Type(format!("incompatible branch types {a} and {b}"))),
    }
}

fn eval_binary(op: BinaryOp, left: &ScalarExpr, right: &ScalarExpr, row: &[Value]) -> Result<Value> {
    match op {
        BinaryOp::And => {
            let l = left.eval(row)?.as_bool()?;
            if l == Some(false) {
                return Ok(Value::Bool(false));
            }
            let r = right.eval(row)?.as_bool()?;
            Ok(match (l, r) {
                (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => Value::Null,
            })
        }
        BinaryOp::Or => {
            let l = left.eval(row)?.as_bool()?;
            if l == Some(true) {
                return Ok(Value::Bool(true));
            }
            let r = right.eval(row)?.as_bool()?;
            Ok(match (l, r) {
                (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => Value::Null,
            })
        }
        _ => {
            let (l, r) = (left.eval(row)?, right.eval(row)?);
            match op {
                BinaryOp::Add => l.add(&r),
                BinaryOp::Sub => l.sub(&r),
                BinaryOp::Mul => l.mul(&r),
                BinaryOp::Div => l.div(&r),
                cmp => Ok(match l.sql_cmp(&r)? {
                    None => Value::Null,
                    Some(ord) => Value::Bool(match cmp {
                        BinaryOp::Eq => ord == Ordering::Equal,
                        BinaryOp::NotEq => ord != Ordering::Equal,
                        BinaryOp::Lt => ord == Ordering::Less,
                        BinaryOp::LtEq => ord != Ordering::Greater,
                        BinaryOp::Gt => ord == Ordering::Greater,
                        BinaryOp::GtEq => ord != Ordering::Less,
                        _ => unreachable!(),
                    }),
                }),
            }
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with(&|i| format!("#{i}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(v: impl Into<Value>) -> ScalarExpr {
        ScalarExpr::Literal(v.into())
    }

    #[test]
    fn three_valued_logic() {
        let null = ScalarExpr::Literal(Value::Null);
        let t = lit(true);
        let f = lit(false);
        let and = |a: &ScalarExpr, b: &ScalarExpr| {
            ScalarExpr::binary(BinaryOp::And, a.clone(), b.clone()).eval(&[]).unwrap()
        };
        let or = |a: &ScalarExpr, b: &ScalarExpr| {
            ScalarExpr::binary(BinaryOp::Or, a.clone(), b.clone()).eval(&[]).unwrap()
        };
        assert_eq!(and(&null, &f), Value::Bool(false));
        assert!(and(&null, &t).is_null());
        assert_eq!(or(&null, &t), Value::Bool(true));
        assert!(or(&null, &f).is_null());
    }

    #[test]
    fn case_coalesce_and_null_safe_equality() {
        let row = [Value::Bool(false), Value::Int(3), Value::Null];
        let case = ScalarExpr::Case {
            branches: vec![(
                ScalarExpr::binary(BinaryOp::Eq, ScalarExpr::Column(0), lit(false)),
                ScalarExpr::Unary {
                    op: UnaryOp::Neg,
                    expr: Box::new(ScalarExpr::Column(1)),
                },
            )],
            otherwise: Some(Box::new(ScalarExpr::Column(1))),
        };
        assert_eq!(case.eval(&row).unwrap(), Value::Int(-3));
        let coalesce = ScalarExpr::Coalesce(vec![ScalarExpr::Column(2), lit(0)]);
        assert_eq!(coalesce.eval(&row).unwrap(), Value::Int(0));
        let nsafe = ScalarExpr::IsDistinctFrom {
            left: Box::new(ScalarExpr::Column(2)),
            right: Box::new(ScalarExpr::Literal(Value::Null)),
            negated: true,
        };
        assert_eq!(nsafe.eval(&row).unwrap(), Value::Bool(true));
        let eq = ScalarExpr::binary(BinaryOp::Eq, ScalarExpr::Column(2), ScalarExpr::Literal(Value::Null));
        assert!(eq.eval(&row).unwrap().is_null());
        assert!(!eq.eval_predicate(&row).unwrap());
    }

    #[test]
    fn typing() {
        let types = [DataType::Int, DataType::Decimal, DataType::Text];
        let sum = ScalarExpr::binary(BinaryOp::Add, ScalarExpr::Column(0), ScalarExpr::Column(1));
        assert_eq!(sum.data_type(&types).unwrap(), Some(DataType::Decimal));
        let bad = ScalarExpr::binary(BinaryOp::Add, ScalarExpr::Column(0), ScalarExpr::Column(2));
        assert!(bad.data_type(&types).is_err());
        let cmp = ScalarExpr::binary(BinaryOp::Gt, ScalarExpr::Column(2), lit(1));
        assert!(cmp.data_type(&types).is_err());
    }
}
