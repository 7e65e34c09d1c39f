use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, ScalarExpr, UnaryOp};
use crate::ops::{AggInput, AggKind, AggregateSpec};
use crate::plan::logical::LogicalPlan;
use crate::schema::{Column, Schema};
use crate::sql::ast::{Expr, JoinKind, SelectQuery};
use crate::value::{DataType, Value};

/// Read-only table lookup used by the planner.
pub trait TableCatalog {
    fn table_schema(&self, name: &str) -> Option<Schema>;
}

impl TableCatalog for HashMap<String, Schema> {
    fn table_schema(&self, name: &str) -> Option<Schema> {
        self.get(name).cloned()
    }
}

impl TableCatalog for IndexMap<String, Schema> {
    fn table_schema(&self, name: &str) -> Option<Schema> {
        self.get(name).cloned()
    }
}

impl TableCatalog for [Schema] {
    fn table_schema(&self, name: &str) -> Option<Schema> {
        self.iter().find(|s| s.name == name).cloned()
    }
}

impl TableCatalog for Vec<Schema> {
    fn table_schema(&self, name: &str) -> Option<Schema> {
        self.as_slice().table_schema(name)
    }
}

/// Resolves column names of an aggregate-free expression against `columns`.
/// Negated numeric literals are folded so that `-3` and the literal `-3`
/// bind identically.
pub fn bind_expr(e: &Expr, columns: &[Column]) -> Result<ScalarExpr> {
    Ok(match e {
        Expr::Column { table, name } => ScalarExpr::Column(resolve(columns, table.as_deref(), name)?),
        Expr::Literal(v) => ScalarExpr::Literal(v.clone()),
        Expr::Unary { op, expr } => {
            let inner = bind_expr(expr, columns)?;
            match (op, inner) {
                (UnaryOp::Neg, ScalarExpr::Literal(v @ (Value::Int(_) | Value::Decimal(_)))) => {
                    ScalarExpr::Literal(v.neg()?)
                }
                (op, inner) => ScalarExpr::Unary {
                    op: *op,
                    expr: Box::new(inner),
                },
            }
        }
        Expr::Binary { op, left, right } => {
            ScalarExpr::binary(*op, bind_expr(left, columns)?, bind_expr(right, columns)?)
        }
        Expr::IsNull { expr, negated } => ScalarExpr::IsNull {
            expr: Box::new(bind_expr(expr, columns)?),
            negated: *negated,
        },
        Expr::IsDistinctFrom {
            left,
            right,
            negated,
        } => ScalarExpr::IsDistinctFrom {
            left: Box::new(bind_expr(left, columns)?),
            right: Box::new(bind_expr(right, columns)?),
            negated: *negated,
        },
        Expr::Case {
            branches,
            otherwise,
        } => ScalarExpr::Case {
            branches: branches
                .iter()
                .map(|(c, t)| Ok((bind_expr(c, columns)?, bind_expr(t, columns)?)))
                .collect::<Result<_>>()?,
            otherwise: match otherwise {
                Some(o) => Some(Box::new(bind_expr(o, columns)?)),
                None => None,
            },
        },
        Expr::Coalesce(args) => ScalarExpr::Coalesce(
            args.iter()
                .map(|a| bind_expr(a, columns))
                .collect::<Result<_>>()?,
        ),
        Expr::Aggregate { kind, .. } => {
            return Err(Error::AggregateMisuse(format!(
                "{} not allowed here",
                kind.sql_name()
            )))
        }
    })
}

pub(crate) fn resolve(columns: &[Column], table: Option<&str>, name: &str) -> Result<usize> {
    let mut hit = None;
    for (i, c) in columns.iter().enumerate() {
        let table_ok = match table {
            Some(t) => c.table.as_deref() == Some(t),
            None => true,
        };
        if c.name == name && table_ok {
            if hit.is_some() {
                return Err(Error::AmbiguousColumn(qualified(table, name)));
            }
            hit = Some(i);
        }
    }
    hit.ok_or_else(|| Error::UnknownColumn(qualified(table, name)))
}

fn qualified(table: Option<&str>, name: &str) -> String {
    match table {
        Some(t) => format!("{t}.{name}"),
        None => name.to_string(),
    }
}

fn shape(msg: impl Into<String>) -> Error {
    Error::UnsupportedShape(msg.into())
}

fn check_predicate(pred: &ScalarExpr, schema: &Schema) -> Result<()> {
    match pred.data_type(&schema.types())? {
        None | Some(DataType::Bool) => Ok(()),
        Some(t) => Err(Error::Type(format!("WHERE predicate of type {t}"))),
    }
}

/// Plans a view query into the canonical shape
/// `Project/Aggregate -> Filter -> (Scan | Join(Scan, Scan))`.
pub fn plan_select(q: &SelectQuery, catalog: &dyn TableCatalog) -> Result<LogicalPlan> {
    if !q.ctes.is_empty() {
        return Err(shape("WITH in a view definition"));
    }
    let [select] = q.body.as_slice() else {
        return Err(shape("UNION ALL in a view definition"));
    };
    let from = select
        .from
        .as_ref()
        .ok_or_else(|| shape("SELECT without FROM"))?;
    let lookup = |name: &str| {
        catalog
            .table_schema(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    };

    let mut plan = LogicalPlan::scan(&lookup(&from.name)?, from.alias.as_deref());
    if let Some(join) = &select.join {
        if join.kind != JoinKind::Inner {
            return Err(shape("LEFT JOIN in a view definition"));
        }
        if join.table.visible_name() == from.visible_name() {
            return Err(shape(format!(
                "both join inputs are visible as {}; alias one of them",
                from.visible_name()
            )));
        }
        let right = LogicalPlan::scan(&lookup(&join.table.name)?, join.table.alias.as_deref());
        let ls = plan.schema()?;
        let rs = right.schema()?;
        let on = join_keys(&join.on, &ls, &rs)?;
        for &(a, b) in &on {
            let (lt, rt) = (ls.columns[a].ty, rs.columns[b].ty);
            if lt != rt && DataType::numeric_join(lt, rt).is_none() {
                return Err(Error::Type(format!(
                    "join key {} {lt} vs {} {rt}",
                    ls.columns[a].display_name(),
                    rs.columns[b].display_name()
                )));
            }
        }
        plan = LogicalPlan::Join {
            left: Box::new(plan),
            right: Box::new(right),
            on,
        };
    }

    let input = plan.schema()?;
    if let Some(pred) = &select.selection {
        if pred.contains_aggregate() {
            return Err(Error::AggregateMisuse("aggregate in WHERE".into()));
        }
        let predicate = bind_expr(pred, &input.columns)?;
        check_predicate(&predicate, &input)?;
        plan = LogicalPlan::Filter {
            input: Box::new(plan),
            predicate,
        };
    }

    let names: Vec<String> = select
        .items
        .iter()
        .enumerate()
        .map(|(n, i)| output_name(i.alias.as_deref(), &i.expr, n))
        .collect();
    check_output_names(&names)?;
    let aggregate = select.items.iter().any(|i| i.expr.contains_aggregate());
    let out = if aggregate || !select.group_by.is_empty() {
        plan_aggregate(plan, select, &input)?
    } else {
        let mut exprs = Vec::with_capacity(select.items.len());
        for (n, item) in select.items.iter().enumerate() {
            let e = bind_expr(&item.expr, &input.columns)?;
            e.data_type(&input.types())?;
            let name = output_name(item.alias.as_deref(), &item.expr, n);
            exprs.push((e, name));
        }
        LogicalPlan::Project {
            input: Box::new(plan),
            exprs,
        }
    };
    out.schema()?;
    Ok(out)
}

fn output_name(alias: Option<&str>, e: &Expr, n: usize) -> String {
    match (alias, e) {
        (Some(a), _) => a.to_string(),
        (None, Expr::Column { name, .. }) => name.clone(),
        (None, Expr::Aggregate { kind, arg: None }) => format!("{}_star", kind.sql_name().to_lowercase()),
        (None, Expr::Aggregate { kind, arg: Some(a) }) => match a.as_ref() {
            Expr::Column { name, .. } => format!("{}_{name}", kind.sql_name().to_lowercase()),
            _ => format!("{}_{}", kind.sql_name().to_lowercase(), n + 1),
        },
        (None, _) => format!("column{}", n + 1),
    }
}

fn check_output_names(names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::NameCollision(format!(
                "output column {n} appears twice; give one an alias"
            )));
        }
    }
    Ok(())
}

/// Splits `ON a = b AND ...` into (left, right) column pairs.
fn join_keys(on: &Expr, left: &Schema, right: &Schema) -> Result<Vec<(usize, usize)>> {
    let mut conjuncts = Vec::new();
    fn split<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
        match e {
            Expr::Binary {
                op: BinaryOp::And,
                left,
                right,
            } => {
                split(left, out);
                split(right, out);
            }
            other => out.push(other),
        }
    }
    split(on, &mut conjuncts);
    let mut keys = Vec::new();
    for c in conjuncts {
        let Expr::Binary {
            op: BinaryOp::Eq,
            left: a,
            right: b,
        } = c
        else {
            return Err(shape("join condition must be a conjunction of column equalities"));
        };
        let (Expr::Column { table: ta, name: na }, Expr::Column { table: tb, name: nb }) =
            (a.as_ref(), b.as_ref())
        else {
            return Err(shape("join condition must compare columns"));
        };
        let side = |t: &Option<String>, n: &str| -> Result<(Option<usize>, Option<usize>)> {
            let l = resolve(&left.columns, t.as_deref(), n);
            let r = resolve(&right.columns, t.as_deref(), n);
            match (&l, &r) {
                (Err(Error::AmbiguousColumn(_)), _) | (_, Err(Error::AmbiguousColumn(_))) => {
                    Err(Error::AmbiguousColumn(qualified(t.as_deref(), n)))
                }
                (Ok(_), Ok(_)) => Err(Error::AmbiguousColumn(qualified(t.as_deref(), n))),
                (Err(_), Err(_)) => Err(Error::UnknownColumn(qualified(t.as_deref(), n))),
                _ => Ok((l.ok(), r.ok())),
            }
        };
        match (side(ta, na)?, side(tb, nb)?) {
            ((Some(l), None), (None, Some(r))) | ((None, Some(r)), (Some(l), None)) => keys.push((l, r)),
            _ => return Err(shape("join equality must reference one column from each side")),
        }
    }
    Ok(keys)
}

fn plan_aggregate(
    input_plan: LogicalPlan,
    select: &crate::sql::ast::Select,
    input: &Schema,
) -> Result<LogicalPlan> {
    if select.group_by.is_empty() {
        return Err(shape("aggregate without GROUP BY"));
    }
    let mut group_keys: Vec<usize> = Vec::new();
    for g in &select.group_by {
        let Expr::Column { table, name } = g else {
            return Err(shape("GROUP BY expression other than a column"));
        };
        let k = resolve(&input.columns, table.as_deref(), name)?;
        if !group_keys.contains(&k) {
            group_keys.push(k);
        }
    }

    enum Item {
        Key(usize),
        Agg(usize),
    }
    let mut items = Vec::new();
    let mut aggs: Vec<AggregateSpec> = Vec::new();
    for (n, item) in select.items.iter().enumerate() {
        let name = output_name(item.alias.as_deref(), &item.expr, n);
        match &item.expr {
            Expr::Aggregate { kind, arg } => {
                let input_ref = match arg.as_deref() {
                    None => AggInput::Star,
                    Some(Expr::Column { table, name }) => {
                        AggInput::Column(resolve(&input.columns, table.as_deref(), name)?)
                    }
                    Some(_) => {
                        return Err(shape(format!("{} over an expression", kind.sql_name())))
                    }
                };
                if *kind == AggKind::Sum && input_ref == AggInput::Star {
                    return Err(Error::AggregateMisuse("SUM(*)".into()));
                }
                let spec = AggregateSpec {
                    kind: *kind,
                    input: input_ref,
                    output: name.clone(),
                };
                spec.output_type(input)?;
                items.push((Item::Agg(aggs.len()), name));
                aggs.push(spec);
            }
            Expr::Column { table, name: col } => {
                let idx = resolve(&input.columns, table.as_deref(), col)?;
                let pos = group_keys.iter().position(|&k| k == idx).ok_or_else(|| {
                    Error::AggregateMisuse(format!(
                        "column {} must appear in GROUP BY",
                        qualified(table.as_deref(), col)
                    ))
                })?;
                items.push((Item::Key(pos), name));
            }
            e if e.contains_aggregate() => return Err(shape("expression over an aggregate")),
            _ => return Err(shape("expression over group keys in an aggregate view")),
        }
    }
    if aggs.is_empty() {
        return Err(shape("GROUP BY without aggregates"));
    }
    for (pos, &k) in group_keys.iter().enumerate() {
        if !items.iter().any(|(i, _)| matches!(i, Item::Key(p) if *p == pos)) {
            return Err(shape(format!(
                "group key {} must appear in the select list",
                input.columns[k].display_name()
            )));
        }
    }

    let nkeys = group_keys.len();
    let identity = items.len() == nkeys + aggs.len()
        && items.iter().enumerate().all(|(i, (item, name))| match item {
            Item::Key(p) => *p == i && input.columns[group_keys[*p]].name == *name,
            Item::Agg(a) => nkeys + *a == i,
        });
    let agg = LogicalPlan::Aggregate {
        input: Box::new(input_plan),
        group_keys,
        aggs,
    };
    if identity {
        return Ok(agg);
    }
    let exprs = items
        .into_iter()
        .map(|(item, name)| {
            let col = match item {
                Item::Key(p) => p,
                Item::Agg(a) => nkeys + a,
            };
            (ScalarExpr::Column(col), name)
        })
        .collect();
    Ok(LogicalPlan::Project {
        input: Box::new(agg),
        exprs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::logical::{classify, QueryClass};
    use crate::sql::parser::{parse_query, strip_materialized};

    fn catalog() -> Vec<Schema> {
        vec![
            Schema::new(
                "groups",
                vec![
                    Column::new("group_index", DataType::Text),
                    Column::new("group_value", DataType::Int),
                ],
            )
            .unwrap(),
            Schema::new(
                "t",
                vec![Column::new("a", DataType::Int), Column::new("b", DataType::Int)],
            )
            .unwrap(),
            Schema::new(
                "u",
                vec![Column::new("a", DataType::Int), Column::new("c", DataType::Text)],
            )
            .unwrap(),
        ]
    }

    fn plan(sql: &str) -> Result<LogicalPlan> {
        plan_select(&parse_query(sql)?, &catalog())
    }

    #[test]
    fn listing_one_plans_to_aggregate_over_scan() {
        let (_, q) = strip_materialized(
            "CREATE MATERIALIZED VIEW query_groups AS SELECT group_index, SUM(group_value) AS total_value FROM groups GROUP BY group_index;",
        )
        .unwrap();
        let p = plan_select(&q, &catalog()).unwrap();
        assert_eq!(
            p.to_text().unwrap(),
            "Aggregate keys=[group_index] aggs=[SUM(group_value) AS total_value]\n  Scan groups [group_index VARCHAR, group_value INTEGER]\n"
        );
        assert_eq!(classify(&p).unwrap(), QueryClass::GroupAggregate);
    }

    #[test]
    fn simple_projection() {
        let p = plan("SELECT a FROM t").unwrap();
        assert_eq!(p.to_text().unwrap(), "Project a\n  Scan t [a INTEGER, b INTEGER]\n");
        assert_eq!(classify(&p).unwrap(), QueryClass::ProjectionFilter);
        assert!(matches!(plan("SELECT a FROM missing"), Err(Error::UnknownTable(t)) if t == "missing"));
    }

    #[test]
    fn filter_and_join_classes() {
        let p = plan("SELECT a, b * 2 AS b2 FROM t WHERE b > 1").unwrap();
        assert_eq!(classify(&p).unwrap(), QueryClass::ProjectionFilter);
        let p = plan("SELECT t.a, u.c FROM t JOIN u ON t.a = u.a").unwrap();
        assert_eq!(classify(&p).unwrap(), QueryClass::Join);
        let p = plan("SELECT u.c, SUM(t.b) AS s FROM t JOIN u ON u.a = t.a GROUP BY u.c").unwrap();
        assert_eq!(classify(&p).unwrap(), QueryClass::JoinAggregate);
        let LogicalPlan::Aggregate { input, .. } = &p else { panic!() };
        let LogicalPlan::Join { on, .. } = input.as_ref() else { panic!() };
        assert_eq!(on, &vec![(0, 0)]);
    }

    #[test]
    fn reordered_select_list_adds_projection() {
        let p = plan("SELECT SUM(b) AS s, a FROM t GROUP BY a").unwrap();
        let LogicalPlan::Project { exprs, .. } = &p else { panic!("{p:?}") };
        assert_eq!(exprs[0], (ScalarExpr::Column(1), "s".to_string()));
        assert_eq!(exprs[1], (ScalarExpr::Column(0), "a".to_string()));
        assert_eq!(
            p.schema().unwrap().names(),
            vec!["s".to_string(), "a".to_string()]
        );
    }

    #[test]
    fn planner_errors() {

        assert!(matches!(plan("SELECT a, SUM(b) FROM t GROUP BY b"), Err(Error::AggregateMisuse(_))));
        assert!(matches!(plan("SELECT SUM(b) FROM t"), Err(Error::UnsupportedShape(_))));
        assert!(matches!(plan("SELECT a FROM t GROUP BY a"), Err(Error::UnsupportedShape(_))));
        assert!(matches!(plan("SELECT SUM(b) FROM t GROUP BY a"), Err(Error::UnsupportedShape(_))));
        assert!(matches!(plan("SELECT a FROM t JOIN u ON t.a = u.a"), Err(Error::AmbiguousColumn(_))));
        assert!(matches!(plan("SELECT t.a, u.a FROM t JOIN u ON t.a = u.a"), Err(Error::NameCollision(_))));
        assert!(matches!(plan("SELECT t.a FROM t JOIN u ON t.a < u.a"), Err(Error::UnsupportedShape(_))));
        assert!(matches!(plan("SELECT t.a FROM t JOIN u ON t.a = u.c"), Err(Error::Type(_))));
        assert!(matches!(plan("SELECT a FROM t WHERE a + 1"), Err(Error::Type(_))));
        assert!(matches!(plan("SELECT t.a FROM t JOIN t ON t.a = t.a"), Err(Error::UnsupportedShape(_))));
        assert!(matches!(plan("SELECT SUM(c) FROM u GROUP BY a"), Err(_)));
    }

    #[test]
    fn planning_is_deterministic() {
        let sql = "SELECT x.a, SUM(y.a) AS s FROM t AS x JOIN u AS y ON x.a = y.a WHERE y.c <> 'z' GROUP BY x.a";
        assert_eq!(plan(sql).unwrap().to_text().unwrap(), plan(sql).unwrap().to_text().unwrap());
    }
}
