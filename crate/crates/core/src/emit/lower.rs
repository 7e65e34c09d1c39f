//! Plans and view layouts to statement trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{BinaryOp, ScalarExpr};
use crate::ops::AggInput;
use crate::plan::{LogicalPlan, ScanSource, HIDDEN_COUNT};
use crate::sql::ast::{
    Cte, Expr, Insert, InsertSource, Join, JoinKind, OnConflict, Select, SelectItem, SelectQuery, Statement,
    TableRef,
};
use crate::value::Value;

use super::{Dialect, Emptiness, Materialize, UpsertStyle, ViewDefinition};

/// One propagation statement and the step it belongs to (1 to 4).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationStatement {
    pub step: u8,
    pub statement: Statement,
}

/// A SELECT block under construction with the SQL text of each output column.
struct Block {
    select: Select,
    cols: Vec<Expr>,
    mult: Option<Expr>,
    grouped: bool,
    projected: bool,
}

fn lowering(msg: &str) -> Error {
    Error::Lowering(msg.to_string())
}

fn contains_join(p: &LogicalPlan) -> bool {
    matches!(p, LogicalPlan::Join { .. }) || p.children().into_iter().any(contains_join)
}

fn block(p: &LogicalPlan, qualify: bool) -> Result<Block> {
    match p {
        LogicalPlan::Scan {
            table,
            alias,
            schema,
            source,
        } => {
            let visible = alias.as_deref().unwrap_or(table);
            let (name, mult) = match source {
                ScanSource::Base => (table.as_str(), None),
                ScanSource::Delta { table: d, mult_col } => (d.as_str(), Some(mult_col.as_str())),
            };
            let from = if qualify {
                TableRef {
                    name: name.to_string(),
                    alias: (name != visible).then(|| visible.to_string()),
                }
            } else {
                TableRef {
                    name: name.to_string(),
                    alias: alias.clone(),
                }
            };
            let column = |c: &str| {
                if qualify {
                    Expr::qcol(visible, c)
                } else {
                    Expr::col(c)
                }
            };
            Ok(Block {
                select: Select {
                    items: Vec::new(),
                    from: Some(from),
                    join: None,
                    selection: None,
                    group_by: Vec::new(),
                },
                cols: schema.columns.iter().map(|c| column(&c.name)).collect(),
                mult: mult.map(column),
                grouped: false,
                projected: false,
            })
        }
        LogicalPlan::Filter { input, predicate } => {
            let mut b = block(input, qualify)?;
            if b.grouped || b.projected {
                return Err(lowering("filter above a projection or aggregate"));
            }
            let pred = to_ast(predicate, &b.cols)?;
            b.select.selection = Some(match b.select.selection.take() {
                Some(prev) => Expr::binary(BinaryOp::And, prev, pred),
                None => pred,
            });
            Ok(b)
        }
        LogicalPlan::Project { input, exprs } => {
            let mut b = block(input, qualify)?;
            if b.projected {
                return Err(lowering("nested projection"));
            }
            b.cols = exprs.iter().map(|(e, _)| to_ast(e, &b.cols)).collect::<Result<_>>()?;
            b.projected = true;
            Ok(b)
        }
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => {
            let mut b = block(input, qualify)?;
            if b.grouped || b.projected {
                return Err(lowering("nested aggregate"));
            }
            let col = |i: usize| b.cols.get(i).cloned().ok_or_else(|| lowering("aggregate column out of range"));
            let mut group_by: Vec<Expr> = group_keys.iter().map(|&k| col(k)).collect::<Result<_>>()?;
            let mut cols = group_by.clone();
            for a in aggs {
                let arg = match a.input {
                    AggInput::Star => None,
                    AggInput::Column(i) => Some(Box::new(col(i)?)),
                };
                cols.push(Expr::Aggregate { kind: a.kind, arg });
            }
            group_by.extend(b.mult.clone());
            b.select.group_by = group_by;
            b.cols = cols;
            b.grouped = true;
            Ok(b)
        }
        LogicalPlan::Join { left, right, on } => {
            let l = block(left, qualify)?;
            let r = block(right, qualify)?;
            let plain = |b: &Block| {
                !b.grouped && !b.projected && b.select.selection.is_none() && b.select.join.is_none()
            };
            if !plain(&l) || !plain(&r) {
                return Err(lowering("join inputs must be table scans"));
            }
            let conds: Vec<Expr> = on
                .iter()
                .map(|&(a, b)| Expr::binary(BinaryOp::Eq, l.cols[a].clone(), r.cols[b].clone()))
                .collect();
            let on = Expr::and_all(conds).ok_or_else(|| lowering("join without keys"))?;
            let mult = match (l.mult, r.mult) {
                (Some(a), Some(b)) => Some(Expr::binary(BinaryOp::Eq, a, b)),
                (a, b) => a.or(b),
            };
            let mut cols = l.cols;
            cols.extend(r.cols);
            Ok(Block {
                select: Select {
                    items: Vec::new(),
                    from: l.select.from,
                    join: Some(Join {
                        kind: JoinKind::Inner,
                        table: r.select.from.ok_or_else(|| lowering("join input without table"))?,
                        on,
                    }),
                    selection: None,
                    group_by: Vec::new(),
                },
                cols,
                mult,
                grouped: false,
                projected: false,
            })
        }
        LogicalPlan::Union(_) => Err(lowering("union below the top of a plan")),
    }
}

fn finish(b: Block, names: &[String], mult_col: Option<&str>) -> Select {
    let mut select = b.select;
    let item = |e: Expr, name: &str| match &e {
        Expr::Column { name: n, .. } if n == name => SelectItem::new(e),
        _ => SelectItem::aliased(e, name),
    };
    select.items = b.cols.into_iter().zip(names).map(|(e, n)| item(e, n)).collect();
    if let (Some(m), Some(name)) = (b.mult, mult_col) {
        select.items.push(item(m, name));
    }
    select
}

/// Lowers a base or delta-bound plan to a query. Delta-bound plans output
/// their multiplicity column last.
pub fn lower_query(plan: &LogicalPlan) -> Result<SelectQuery> {
    let names = plan.schema()?.names();
    let qualify = contains_join(plan);
    let mult = plan.mult_col();
    let parts: Vec<&LogicalPlan> = match plan {
        LogicalPlan::Union(children) => children.iter().collect(),
        p => vec![p],
    };
    let body = parts
        .into_iter()
        .map(|p| Ok(finish(block(p, qualify)?, &names, mult)))
        .collect::<Result<_>>()?;
    Ok(SelectQuery {
        ctes: Vec::new(),
        body,
    })
}

/// Scalar expression to AST over the given column texts. Negative numeric
/// literals become negations so that rendered text parses back equal.
pub fn to_ast(e: &ScalarExpr, cols: &[Expr]) -> Result<Expr> {
    let rec = |x: &ScalarExpr| to_ast(x, cols);
    Ok(match e {
        ScalarExpr::Column(i) => cols.get(*i).cloned().ok_or_else(|| lowering("column out of range"))?,
        ScalarExpr::Literal(Value::Int(i)) if *i < 0 && *i != i64::MIN => Expr::neg(Expr::lit(Value::Int(-i))),
        ScalarExpr::Literal(Value::Decimal(d)) if d.scaled() < 0 => {
            Expr::neg(Expr::lit(Value::Decimal(crate::value::Decimal::from_scaled(-d.scaled()))))
        }
        ScalarExpr::Literal(v) => Expr::Literal(v.clone()),
        ScalarExpr::Unary { op, expr } => Expr::Unary {
            op: *op,
            expr: Box::new(rec(expr)?),
        },
        ScalarExpr::Binary { op, left, right } => Expr::binary(*op, rec(left)?, rec(right)?),
        ScalarExpr::IsNull { expr, negated } => Expr::IsNull {
            expr: Box::new(rec(expr)?),
            negated: *negated,
        },
        ScalarExpr::IsDistinctFrom { left, right, negated } => Expr::IsDistinctFrom {
            left: Box::new(rec(left)?),
            right: Box::new(rec(right)?),
            negated: *negated,
        },
        ScalarExpr::Case { branches, otherwise } => Expr::Case {
            branches: branches
                .iter()
                .map(|(c, t)| Ok((rec(c)?, rec(t)?)))
                .collect::<Result<_>>()?,
            otherwise: otherwise.as_ref().map(|o| rec(o).map(Box::new)).transpose()?,
        },
        ScalarExpr::Coalesce(args) => Expr::Coalesce(args.iter().map(rec).collect::<Result<_>>()?),
    })
}

fn signed(mult_col: &str, positive: Expr, negative: Expr) -> Expr {
    Expr::Case {
        branches: vec![(
            Expr::binary(BinaryOp::Eq, Expr::col(mult_col), Expr::lit(false)),
            negative,
        )],
        otherwise: Some(Box::new(positive)),
    }
}

fn key_eq(v: &ViewDefinition, left: Expr, right: Expr) -> Expr {
    if v.counted || v.options.emptiness == Emptiness::Sound {
        Expr::IsDistinctFrom {
            left: Box::new(left),
            right: Box::new(right),
            negated: true,
        }
    } else {
        Expr::binary(BinaryOp::Eq, left, right)
    }
}

/// The merge of the view delta into the view.
fn upsert(v: &ViewDefinition, dialect: Dialect, delta_source: Option<SelectQuery>) -> Statement {
    let dv = v.delta_view();
    let mult = v.options.mult_col.as_str();
    let is_key = |i: usize| v.keys.contains(&i);
    let mut cte_items = Vec::new();
    let mut outer_items = Vec::new();
    for (i, c) in v.columns.iter().enumerate() {
        if is_key(i) {
            cte_items.push(SelectItem::new(Expr::col(&c.name)));
            outer_items.push(SelectItem::new(Expr::qcol(&dv, &c.name)));
            continue;
        }
        let contribution = if v.counted {
            signed(mult, Expr::lit(1i64), Expr::neg(Expr::lit(1i64)))
        } else {
            signed(mult, Expr::col(&c.name), Expr::neg(Expr::col(&c.name)))
        };
        cte_items.push(SelectItem::aliased(Expr::sum(contribution), &c.name));
        let merged = Expr::binary(
            BinaryOp::Add,
            Expr::Coalesce(vec![Expr::qcol(&v.name, &c.name), Expr::lit(0i64)]),
            Expr::qcol(&dv, &c.name),
        );
        outer_items.push(SelectItem::new(Expr::sum(merged)));
    }
    let key_names: Vec<String> = v.keys.iter().map(|&k| v.columns[k].name.clone()).collect();
    let cte = SelectQuery::simple(Select {
        items: cte_items,
        from: Some(TableRef::new(&dv)),
        join: None,
        selection: None,
        group_by: key_names.iter().map(Expr::col).collect(),
    });
    let on = Expr::and_all(
        key_names
            .iter()
            .map(|k| key_eq(v, Expr::qcol(&v.name, k), Expr::qcol(&dv, k)))
            .collect(),
    )
    .expect("views have at least one key column");
    let outer = Select {
        items: outer_items,
        from: Some(TableRef::aliased("ivm_cte", &dv)),
        join: Some(Join {
            kind: JoinKind::Left,
            table: TableRef::new(&v.name),
            on,
        }),
        selection: None,
        group_by: key_names.iter().map(|k| Expr::qcol(&dv, k)).collect(),
    };
    let mut ctes = Vec::new();
    if let Some(q) = delta_source {
        ctes.push(Cte {
            name: dv.clone(),
            query: q,
        });
    }
    ctes.push(Cte {
        name: "ivm_cte".into(),
        query: cte,
    });
    let query = SelectQuery {
        ctes,
        body: vec![outer],
    };
    let names = v.column_names();
    Statement::Insert(match dialect.upsert() {
        UpsertStyle::InsertOrReplace => Insert {
            table: v.name.clone(),
            columns: None,
            source: InsertSource::Query(query),
            or_replace: true,
            on_conflict: None,
        },
        UpsertStyle::OnConflictUpdate => Insert {
            table: v.name.clone(),
            columns: Some(names.clone()),
            source: InsertSource::Query(query),
            or_replace: false,
            on_conflict: Some(OnConflict {
                target: key_names.clone(),
                assignments: names
                    .iter()
                    .filter(|n| !key_names.contains(n))
                    .map(|n| (n.clone(), Expr::qcol("excluded", n)))
                    .collect(),
            }),
        },
    })
}

fn dead_rows(v: &ViewDefinition) -> Statement {
    let zero = |name: &str| Expr::binary(BinaryOp::Eq, Expr::col(name), Expr::lit(0i64));
    let selection = if v.uses_hidden_count() {
        zero(HIDDEN_COUNT)
    } else {
        v.merged
            .iter()
            .map(|&(i, _)| zero(&v.columns[i].name))
            .reduce(|a, b| Expr::binary(BinaryOp::Or, a, b))
            .expect("aggregate views have at least one aggregate")
    };
    Statement::Delete {
        table: v.name.clone(),
        selection: Some(selection),
    }
}

/// Propagation statements of a compiled view, in execution order.
pub fn lower_to_ast(v: &ViewDefinition, dialect: Dialect) -> Result<Vec<PropagationStatement>> {
    let delta_query = lower_query(&v.incremental.plan)?;
    let mut out = Vec::new();
    let eager = v.options.materialize == Materialize::Eager;
    let at = |step: u8, statement: Statement| PropagationStatement { step, statement };
    if eager {
        out.push(at(
            1,
            Statement::Insert(Insert {
                table: v.delta_view(),
                columns: None,
                source: InsertSource::Query(delta_query),
                or_replace: false,
                on_conflict: None,
            }),
        ));
        out.push(at(2, upsert(v, dialect, None)));
    } else {
        out.push(at(2, upsert(v, dialect, Some(delta_query))));
    }
    out.push(at(3, dead_rows(v)));
    if eager {
        out.push(at(
            4,
            Statement::Delete {
                table: v.delta_view(),
                selection: None,
            },
        ));
    }
    for t in &v.base_tables {
        out.push(at(
            4,
            Statement::Delete {
                table: super::delta_table_name(&t.name),
                selection: None,
            },
        ));
    }
    Ok(out)
}

/// Population query for the view table.
pub(crate) fn population_query(v: &ViewDefinition) -> Result<SelectQuery> {
    let q = lower_query(&v.plan)?;
    if !v.counted {
        return Ok(q);
    }
    let visible: Vec<Expr> = v.visible_columns().iter().map(|c| Expr::col(&c.name)).collect();
    let mut items: Vec<SelectItem> = visible.iter().cloned().map(SelectItem::new).collect();
    items.push(SelectItem::aliased(Expr::count_star(), HIDDEN_COUNT));
    Ok(SelectQuery {
        ctes: vec![Cte {
            name: "ivm_src".into(),
            query: q,
        }],
        body: vec![Select {
            items,
            from: Some(TableRef::new("ivm_src")),
            join: None,
            selection: None,
            group_by: visible,
        }],
    })
}
