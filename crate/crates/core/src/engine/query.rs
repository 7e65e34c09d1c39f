//! Query evaluation over weighted rows.

use std::borrow::Cow;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, ScalarExpr};
use crate::ops::AggKind;
use crate::plan::bind_expr;
use crate::schema::Column;
use crate::sql::ast::{Expr, JoinKind, Select, SelectQuery, TableRef};
use crate::value::{DataType, Value};
use crate::zset::Tuple;

use super::par;
use super::table::Table;
use super::ExecOptions;

pub(crate) type Row<'a> = (Cow<'a, [Value]>, u64);

/// Intermediate relation; rows borrow from tables where possible.
pub(crate) struct Rel<'a> {
    pub columns: Vec<Column>,
    pub rows: Vec<Row<'a>>,
}

/// Materialized query output: each distinct-or-not row with its copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub columns: Vec<Column>,
    pub rows: Vec<(Tuple, u64)>,
}

impl QueryResult {
    /// Rows with copies expanded, sorted.
    pub fn expanded_sorted(&self) -> Vec<Tuple> {
        let mut out = Vec::new();
        for (t, c) in &self.rows {
            for _ in 0..*c {
                out.push(t.clone());
            }
        }
        out.sort();
        out
    }

    pub fn total_rows(&self) -> u64 {
        self.rows.iter().map(|r| r.1).sum()
    }
}

pub(crate) struct Ctx<'a> {
    pub tables: &'a IndexMap<String, Table>,
    pub ctes: Vec<(String, QueryResult)>,
    pub opts: ExecOptions,
}

pub(crate) fn eval_query<'a>(ctx: &mut Ctx<'a>, q: &SelectQuery) -> Result<QueryResult> {
    let depth = ctx.ctes.len();
    let out = eval_query_inner(ctx, q);
    ctx.ctes.truncate(depth);
    out
}

fn eval_query_inner<'a>(ctx: &mut Ctx<'a>, q: &SelectQuery) -> Result<QueryResult> {
    for cte in &q.ctes {
        let r = eval_query(ctx, &cte.query)?;
        ctx.ctes.push((cte.name.clone(), r));
    }
    let mut result: Option<QueryResult> = None;
    for s in &q.body {
        let rel = eval_select(ctx, s)?;
        let rows: Vec<(Tuple, u64)> = rel.rows.into_iter().map(|(t, c)| (t.into_owned(), c)).collect();
        match &mut result {
            None => {
                result = Some(QueryResult {
                    columns: rel.columns,
                    rows,
                })
            }
            Some(r) => {
                if r.columns.len() != rel.columns.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "UNION ALL branches have {} and {} columns",
                        r.columns.len(),
                        rel.columns.len()
                    )));
                }
                r.rows.extend(rows);
            }
        }
    }
    result.ok_or_else(|| Error::Execution("empty query".into()))
}

fn lookup<'a>(ctx: &Ctx<'a>, t: &TableRef) -> Result<Rel<'a>> {
    let visible = t.visible_name();
    let requalify = |cols: &[Column]| -> Vec<Column> {
        cols.iter()
            .map(|c| Column::qualified(visible, c.name.clone(), c.ty))
            .collect()
    };
    if let Some((_, r)) = ctx.ctes.iter().rev().find(|(n, _)| *n == t.name) {
        return Ok(Rel {
            columns: requalify(&r.columns),
            rows: r.rows.iter().map(|(t, c)| (Cow::Owned(t.clone()), *c)).collect(),
        });
    }
    let tables: &'a IndexMap<String, Table> = ctx.tables;
    let table = tables.get(&t.name).ok_or_else(|| Error::UnknownTable(t.name.clone()))?;
    Ok(Rel {
        columns: requalify(&table.schema.columns),
        rows: table.rows().map(|(t, c)| (Cow::Borrowed(t.as_slice()), c)).collect(),
    })
}

fn eval_select<'a>(ctx: &Ctx<'a>, s: &Select) -> Result<Rel<'a>> {
    let mut rel = match &s.from {
        Some(t) => lookup(ctx, t)?,
        None => Rel {
            columns: Vec::new(),
            rows: vec![(Cow::Owned(Vec::new()), 1)],
        },
    };
    if let Some(j) = &s.join {
        let right = lookup(ctx, &j.table)?;
        rel = join(rel, right, j.kind, &j.on)?;
    }
    if let Some(p) = &s.selection {
        let pred = bind_expr(p, &rel.columns)?;
        rel.rows = par::filter(rel.rows, &pred, ctx.opts)?;
    }
    let grouped = !s.group_by.is_empty() || s.items.iter().any(|i| i.expr.contains_aggregate());
    if grouped {
        eval_grouped(rel, s, ctx.opts)
    } else {
        let exprs: Vec<ScalarExpr> = s
            .items
            .iter()
            .map(|i| bind_expr(&i.expr, &rel.columns))
            .collect::<Result<_>>()?;
        let columns = output_columns(s, &exprs, &rel.columns)?;
        let rows = par::project(rel.rows, &exprs, ctx.opts)?;
        Ok(Rel { columns, rows })
    }
}

fn output_columns(s: &Select, exprs: &[ScalarExpr], input: &[Column]) -> Result<Vec<Column>> {
    let types: Vec<DataType> = input.iter().map(|c| c.ty).collect();
    s.items
        .iter()
        .zip(exprs)
        .enumerate()
        .map(|(i, (item, e))| {
            let name = match (&item.alias, &item.expr) {
                (Some(a), _) => a.clone(),
                (None, Expr::Column { name, .. }) => name.clone(),
                _ => format!("column{i}"),
            };
            let ty = e.data_type(&types)?.unwrap_or(DataType::Int);
            Ok(Column::new(name, ty))
        })
        .collect()
}

struct KeyPart {
    left: ScalarExpr,
    right: ScalarExpr,
    null_safe: bool,
}

fn conjuncts(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            conjuncts(left, out);
            conjuncts(right, out);
        }
        other => out.push(other.clone()),
    }
}

/// Splits `a = b` / `a IS NOT DISTINCT FROM b` with one side per input.
fn key_part(e: &Expr, l: &[Column], r: &[Column]) -> Option<KeyPart> {
    let (a, b, null_safe) = match e {
        Expr::Binary {
            op: BinaryOp::Eq,
            left,
            right,
        } => (left, right, false),
        Expr::IsDistinctFrom {
            left,
            right,
            negated: true,
        } => (left, right, true),
        _ => return None,
    };
    if let (Ok(x), Ok(y)) = (bind_expr(a, l), bind_expr(b, r)) {
        if bind_expr(a, r).is_err() && bind_expr(b, l).is_err() {
            return Some(KeyPart { left: x, right: y, null_safe });
        }
    }
    if let (Ok(x), Ok(y)) = (bind_expr(b, l), bind_expr(a, r)) {
        if bind_expr(b, r).is_err() && bind_expr(a, l).is_err() {
            return Some(KeyPart { left: x, right: y, null_safe });
        }
    }
    None
}

/// Key of a row, or `None` when a plain-equality part is NULL.
fn row_key(row: &[Value], exprs: &[&ScalarExpr], null_safe: &[bool]) -> Result<Option<Tuple>> {
    let mut key = Vec::with_capacity(exprs.len());
    for (e, &ns) in exprs.iter().zip(null_safe) {
        let v = e.eval(row)?;
        if v.is_null() && !ns {
            return Ok(None);
        }
        key.push(v);
    }
    Ok(Some(key))
}

fn join<'a>(l: Rel<'a>, r: Rel<'a>, kind: JoinKind, on: &Expr) -> Result<Rel<'a>> {
    let mut parts = Vec::new();
    conjuncts(on, &mut parts);
    let mut keys = Vec::new();
    let mut residual = Vec::new();
    for p in parts {
        match key_part(&p, &l.columns, &r.columns) {
            Some(k) => keys.push(k),
            None => residual.push(p),
        }
    }
    let mut columns = l.columns.clone();
    columns.extend(r.columns.iter().cloned());
    let residual = match Expr::and_all(residual) {
        Some(e) => Some(bind_expr(&e, &columns)?),
        None => None,
    };
    let null_safe: Vec<bool> = keys.iter().map(|k| k.null_safe).collect();
    let lk: Vec<&ScalarExpr> = keys.iter().map(|k| &k.left).collect();
    let rk: Vec<&ScalarExpr> = keys.iter().map(|k| &k.right).collect();
    let rwidth = r.columns.len();

    let combine = |a: &[Value], b: &[Value]| -> Tuple {
        let mut t = Vec::with_capacity(a.len() + b.len());
        t.extend_from_slice(a);
        t.extend_from_slice(b);
        t
    };
    let accept = |t: &Tuple| -> Result<bool> {
        match &residual {
            Some(p) => p.eval_predicate(t),
            None => Ok(true),
        }
    };

    // Build on the smaller input; a left join built on its left side
    // tracks which left rows found a partner.
    let build_left = l.rows.len() < r.rows.len();
    let (build, build_keys, probe, probe_keys) = if build_left {
        (&l.rows, &lk, &r.rows, &rk)
    } else {
        (&r.rows, &rk, &l.rows, &lk)
    };
    let mut table: std::collections::HashMap<Tuple, Vec<usize>> = std::collections::HashMap::new();
    for (i, (row, _)) in build.iter().enumerate() {
        if let Some(k) = row_key(row, build_keys, &null_safe)? {
            table.entry(k).or_default().push(i);
        }
    }
    let mut rows: Vec<Row<'a>> = Vec::new();
    let mut left_matched = vec![false; l.rows.len()];
    for (pi, (prow, pc)) in probe.iter().enumerate() {
        let Some(k) = row_key(prow, probe_keys, &null_safe)? else {
            continue;
        };
        let Some(hits) = table.get(&k) else {
            continue;
        };
        for &bi in hits {
            let (brow, bc) = &build[bi];
            let (li, t) = if build_left {
                (bi, combine(brow, prow))
            } else {
                (pi, combine(prow, brow))
            };
            if accept(&t)? {
                left_matched[li] = true;
                rows.push((Cow::Owned(t), pc * bc));
            }
        }
    }
    if kind == JoinKind::Left {
        let pad = vec![Value::Null; rwidth];
        for (i, (row, c)) in l.rows.iter().enumerate() {
            if !left_matched[i] {
                rows.push((Cow::Owned(combine(row, &pad)), *c));
            }
        }
    }
    Ok(Rel { columns, rows })
}

/// Running aggregate state.
#[derive(Debug, Clone)]
pub(crate) enum Acc {
    Sum(Value),
    Count(i64),
}

impl Acc {
    fn new(kind: AggKind) -> Self {
        match kind {
            AggKind::Sum => Acc::Sum(Value::Null),
            AggKind::Count => Acc::Count(0),
        }
    }

    pub(crate) fn update(&mut self, v: Option<Value>, copies: u64) -> Result<()> {
        let w = i64::try_from(copies).map_err(|_| Error::Overflow)?;
        match self {
            Acc::Count(n) => {
                if v.as_ref().is_none_or(|v| !v.is_null()) {
                    *n = n.checked_add(w).ok_or(Error::Overflow)?;
                }
            }
            Acc::Sum(total) => {
                let v = v.unwrap_or(Value::Null);
                if !v.is_null() {
                    let c = if w == 1 { v } else { v.mul(&Value::Int(w))? };
                    *total = if total.is_null() { c } else { total.add(&c)? };
                }
            }
        }
        Ok(())
    }

    #[cfg(feature = "parallel")]
    pub(crate) fn merge(&mut self, o: &Acc) -> Result<()> {
        match (self, o) {
            (Acc::Count(a), Acc::Count(b)) => *a = a.checked_add(*b).ok_or(Error::Overflow)?,
            (Acc::Sum(a), Acc::Sum(b)) => {
                if !b.is_null() {
                    *a = if a.is_null() { b.clone() } else { a.add(b)? };
                }
            }
            _ => return Err(Error::Execution("mismatched aggregate states".into())),
        }
        Ok(())
    }

    fn finish(self) -> Value {
        match self {
            Acc::Sum(v) => v,
            Acc::Count(n) => Value::Int(n),
        }
    }
}

pub(crate) struct Grouping {
    pub keys: Vec<ScalarExpr>,
    pub aggs: Vec<(AggKind, Option<ScalarExpr>)>,
}

const KEY_QUAL: &str = "#key";
const AGG_QUAL: &str = "#agg";

/// Rewrites a select item over post-aggregation columns: aggregate calls
/// become `#agg` columns, subexpressions equal to a group key `#key` columns.
fn to_post(e: &Expr, input: &[Column], g: &mut Grouping) -> Result<Expr> {
    if let Expr::Aggregate { kind, arg } = e {
        let arg = match arg {
            Some(a) => {
                if a.contains_aggregate() {
                    return Err(Error::AggregateMisuse("nested aggregate".into()));
                }
                Some(bind_expr(a, input)?)
            }
            None => None,
        };
        let i = match g.aggs.iter().position(|(k, a)| *k == *kind && *a == arg) {
            Some(i) => i,
            None => {
                g.aggs.push((*kind, arg));
                g.aggs.len() - 1
            }
        };
        return Ok(Expr::qcol(AGG_QUAL, i.to_string()));
    }
    if !e.contains_aggregate() {
        if let Ok(bound) = bind_expr(e, input) {
            if let Some(i) = g.keys.iter().position(|k| *k == bound) {
                return Ok(Expr::qcol(KEY_QUAL, i.to_string()));
            }
        }
    }
    let rec = |x: &Expr, g: &mut Grouping| to_post(x, input, g).map(Box::new);
    Ok(match e {
        Expr::Column { table, name } => {
            let shown = match table {
                Some(t) => format!("{t}.{name}"),
                None => name.clone(),
            };
            return Err(Error::AggregateMisuse(format!(
                "column {shown} must appear in GROUP BY or inside an aggregate"
            )));
        }
        Expr::Literal(_) => e.clone(),
        Expr::Unary { op, expr } => Expr::Unary {
            op: *op,
            expr: rec(expr, g)?,
        },
        Expr::Binary { op, left, right } => Expr::Binary {
            op: *op,
            left: rec(left, g)?,
            right: rec(right, g)?,
        },
        Expr::IsNull { expr, negated } => Expr::IsNull {
            expr: rec(expr, g)?,
            negated: *negated,
        },
        Expr::IsDistinctFrom { left, right, negated } => Expr::IsDistinctFrom {
            left: rec(left, g)?,
            right: rec(right, g)?,
            negated: *negated,
        },
        Expr::Case { branches, otherwise } => {
            let mut bs = Vec::new();
            for (c, t) in branches {
                bs.push((*rec(c, g)?, *rec(t, g)?));
            }
            Expr::Case {
                branches: bs,
                otherwise: match otherwise {
                    Some(o) => Some(rec(o, g)?),
                    None => None,
                },
            }
        }
        Expr::Coalesce(args) => Expr::Coalesce(
            args.iter()
                .map(|a| to_post(a, input, g))
                .collect::<Result<_>>()?,
        ),
        Expr::Aggregate { .. } => unreachable!("handled above"),
    })
}

fn eval_grouped<'a>(rel: Rel<'a>, s: &Select, opts: ExecOptions) -> Result<Rel<'a>> {
    let mut g = Grouping {
        keys: s
            .group_by
            .iter()
            .map(|e| bind_expr(e, &rel.columns))
            .collect::<Result<_>>()?,
        aggs: Vec::new(),
    };
    let post_items: Vec<Expr> = s
        .items
        .iter()
        .map(|i| to_post(&i.expr, &rel.columns, &mut g))
        .collect::<Result<_>>()?;
    let in_types: Vec<DataType> = rel.columns.iter().map(|c| c.ty).collect();
    let mut post_cols = Vec::new();
    for (i, k) in g.keys.iter().enumerate() {
        let ty = k.data_type(&in_types)?.unwrap_or(DataType::Int);
        post_cols.push(Column::qualified(KEY_QUAL, i.to_string(), ty));
    }
    for (i, (kind, arg)) in g.aggs.iter().enumerate() {
        let ty = match (kind, arg) {
            (AggKind::Count, _) => DataType::Int,
            (AggKind::Sum, Some(a)) => {
                let t = a.data_type(&in_types)?.unwrap_or(DataType::Int);
                if !t.is_numeric() {
                    return Err(Error::Type(format!("SUM over {}", t.name())));
                }
                t
            }
            (AggKind::Sum, None) => return Err(Error::AggregateMisuse("SUM(*)".into())),
        };
        post_cols.push(Column::qualified(AGG_QUAL, i.to_string(), ty));
    }
    let exprs: Vec<ScalarExpr> = post_items
        .iter()
        .map(|e| bind_expr(e, &post_cols))
        .collect::<Result<_>>()?;

    let init: Vec<Acc> = g.aggs.iter().map(|(k, _)| Acc::new(*k)).collect();
    let mut groups = par::group(&rel.rows, &g, &init, opts)?;
    if s.group_by.is_empty() && groups.is_empty() {
        groups.insert(Vec::new(), init);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (key, accs) in groups {
        let mut post = key;
        post.extend(accs.into_iter().map(Acc::finish));
        let out: Tuple = exprs.iter().map(|e| e.eval(&post)).collect::<Result<_>>()?;
        rows.push((Cow::Owned(out), 1));
    }
    let columns = output_columns(s, &exprs, &post_cols)?;
    Ok(Rel { columns, rows })
}
