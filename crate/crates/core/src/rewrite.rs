//! Incremental rewriting: rebinds scans to delta tables and turns the plan
//! into one that computes the view delta from the table deltas.
//!
//! Filter, projection and (flag-grouped) aggregation are linear, so they
//! stay in place over the delta scans. A join of A and B expands into the
//! three-term union `dA ⋈ B + A ⋈ dB + dA ⋈ dB`, where A and B are the
//! pre-refresh table states. Operators above a join are distributed over
//! the union terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::ops::{AggInput, AggKind, AggregateSpec, CombineSpec, Liveness};
use crate::plan::{classify, LogicalPlan, QueryClass, ScanSource, HIDDEN_COUNT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementalPlan {
    /// Computes the view delta; output columns are the view columns plus
    /// the implicit multiplicity column.
    pub plan: LogicalPlan,
    pub combine: CombineSpec,
    pub class: QueryClass,
}

/// Replaces every base scan with a scan of the table's delta relation.
pub fn bind_deltas(
    p: &LogicalPlan,
    delta_of: &dyn Fn(&str) -> Option<String>,
    mult_col: &str,
) -> Result<LogicalPlan> {
    Ok(match p {
        LogicalPlan::Scan {
            table,
            alias,
            schema,
            source: ScanSource::Base,
        } => {
            let delta = delta_of(table).ok_or_else(|| Error::MissingDelta(table.clone()))?;
            LogicalPlan::Scan {
                table: table.clone(),
                alias: alias.clone(),
                schema: schema.clone(),
                source: ScanSource::Delta {
                    table: delta,
                    mult_col: mult_col.to_string(),
                },
            }
        }
        LogicalPlan::Scan { .. } => p.clone(),
        LogicalPlan::Filter { input, predicate } => LogicalPlan::Filter {
            input: Box::new(bind_deltas(input, delta_of, mult_col)?),
            predicate: predicate.clone(),
        },
        LogicalPlan::Project { input, exprs } => LogicalPlan::Project {
            input: Box::new(bind_deltas(input, delta_of, mult_col)?),
            exprs: exprs.clone(),
        },
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => LogicalPlan::Aggregate {
            input: Box::new(bind_deltas(input, delta_of, mult_col)?),
            group_keys: group_keys.clone(),
            aggs: aggs.clone(),
        },
        LogicalPlan::Join { left, right, on } => LogicalPlan::Join {
            left: Box::new(bind_deltas(left, delta_of, mult_col)?),
            right: Box::new(bind_deltas(right, delta_of, mult_col)?),
            on: on.clone(),
        },
        LogicalPlan::Union(children) => LogicalPlan::Union(
            children
                .iter()
                .map(|c| bind_deltas(c, delta_of, mult_col))
                .collect::<Result<_>>()?,
        ),
    })
}

/// The same plan reading base tables again.
pub fn unbind_deltas(p: &LogicalPlan) -> LogicalPlan {
    match p {
        LogicalPlan::Scan {
            table,
            alias,
            schema,
            ..
        } => LogicalPlan::Scan {
            table: table.clone(),
            alias: alias.clone(),
            schema: schema.clone(),
            source: ScanSource::Base,
        },
        LogicalPlan::Filter { input, predicate } => LogicalPlan::Filter {
            input: Box::new(unbind_deltas(input)),
            predicate: predicate.clone(),
        },
        LogicalPlan::Project { input, exprs } => LogicalPlan::Project {
            input: Box::new(unbind_deltas(input)),
            exprs: exprs.clone(),
        },
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => LogicalPlan::Aggregate {
            input: Box::new(unbind_deltas(input)),
            group_keys: group_keys.clone(),
            aggs: aggs.clone(),
        },
        LogicalPlan::Join { left, right, on } => LogicalPlan::Join {
            left: Box::new(unbind_deltas(left)),
            right: Box::new(unbind_deltas(right)),
            on: on.clone(),
        },
        LogicalPlan::Union(children) => LogicalPlan::Union(children.iter().map(unbind_deltas).collect()),
    }
}

/// Adds a hidden `COUNT(*)` to an aggregate view so that group liveness
/// does not depend on aggregate values. Non-aggregate plans are returned
/// unchanged.
pub fn with_liveness_count(p: LogicalPlan) -> Result<LogicalPlan> {
    let add = |group_keys: Vec<usize>, mut aggs: Vec<AggregateSpec>, input| {
        if aggs.iter().any(|a| a.output == HIDDEN_COUNT) {
            return Err(Error::NameCollision(format!("{HIDDEN_COUNT} is reserved")));
        }
        aggs.push(AggregateSpec::count_star(HIDDEN_COUNT));
        Ok(LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        })
    };
    match p {
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => add(group_keys, aggs, input),
        LogicalPlan::Project { input, mut exprs } => match *input {
            LogicalPlan::Aggregate {
                input: inner,
                group_keys,
                aggs,
            } => {
                let pos = group_keys.len() + aggs.len();
                let agg = add(group_keys, aggs, inner)?;
                exprs.push((ScalarExpr::Column(pos), HIDDEN_COUNT.to_string()));
                Ok(LogicalPlan::Project {
                    input: Box::new(agg),
                    exprs,
                })
            }
            other => Ok(LogicalPlan::Project {
                input: Box::new(other),
                exprs,
            }),
        },
        other => Ok(other),
    }
}

/// Rewrites a delta-bound plan into its incremental form.
pub fn rewrite_incremental(p: &LogicalPlan) -> Result<IncrementalPlan> {
    let class = classify(p)?;
    let mut unbound = false;
    p.visit_scans(&mut |_, _, s| unbound |= *s == ScanSource::Base);
    if unbound {
        return Err(Error::UnsupportedShape(
            "incremental rewrite needs every scan bound to a delta table".into(),
        ));
    }
    let mut terms = incremental_terms(p)?;
    let plan = if terms.len() == 1 {
        terms.remove(0)
    } else {
        LogicalPlan::Union(terms)
    };
    Ok(IncrementalPlan {
        combine: combine_spec(p)?,
        plan,
        class,
    })
}

/// Union terms whose sum is the delta of `p`.
fn incremental_terms(p: &LogicalPlan) -> Result<Vec<LogicalPlan>> {
    Ok(match p {
        LogicalPlan::Scan { .. } => vec![p.clone()],
        LogicalPlan::Filter { input, predicate } => incremental_terms(input)?
            .into_iter()
            .map(|t| LogicalPlan::Filter {
                input: Box::new(t),
                predicate: predicate.clone(),
            })
            .collect(),
        LogicalPlan::Project { input, exprs } => incremental_terms(input)?
            .into_iter()
            .map(|t| LogicalPlan::Project {
                input: Box::new(t),
                exprs: exprs.clone(),
            })
            .collect(),
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => incremental_terms(input)?
            .into_iter()
            .map(|t| LogicalPlan::Aggregate {
                input: Box::new(t),
                group_keys: group_keys.clone(),
                aggs: aggs.clone(),
            })
            .collect(),
        LogicalPlan::Join { left, right, on } => {
            let join = |l: LogicalPlan, r: LogicalPlan| LogicalPlan::Join {
                left: Box::new(l),
                right: Box::new(r),
                on: on.clone(),
            };
            let mut out = Vec::new();
            for dl in incremental_terms(left)? {
                out.push(join(dl, unbind_deltas(right)));
            }
            for dr in incremental_terms(right)? {
                out.push(join(unbind_deltas(left), dr));
            }
            for dl in incremental_terms(left)? {
                for dr in incremental_terms(right)? {
                    out.push(join(dl.clone(), dr));
                }
            }
            out
        }
        LogicalPlan::Union(children) => {
            let mut out = Vec::new();
            for c in children {
                out.extend(incremental_terms(c)?);
            }
            out
        }
    })
}

/// How the view delta of `p` merges into the stored view.
pub fn combine_spec(p: &LogicalPlan) -> Result<CombineSpec> {
    let (proj, agg) = match p {
        LogicalPlan::Project { input, exprs } => match input.as_ref() {
            LogicalPlan::Aggregate {
                group_keys, aggs, ..
            } => (Some(exprs), Some((group_keys, aggs))),
            _ => (Some(exprs), None),
        },
        LogicalPlan::Aggregate {
            group_keys, aggs, ..
        } => (None, Some((group_keys, aggs))),
        _ => (None, None),
    };
    let Some((group_keys, aggs)) = agg else {
        return Ok(CombineSpec::UnionDifference);
    };
    let nkeys = group_keys.len();
    // Position of each aggregate-node output column in the view.
    let out_pos: Vec<usize> = match proj {
        None => (0..nkeys + aggs.len()).collect(),
        Some(exprs) => (0..nkeys + aggs.len())
            .map(|src| {
                exprs
                    .iter()
                    .position(|(e, _)| *e == ScalarExpr::Column(src))
                    .ok_or_else(|| {
                        Error::UnsupportedShape("aggregate output missing from the view".into())
                    })
            })
            .collect::<Result<_>>()?,
    };
    let keys = (0..nkeys).map(|k| out_pos[k]).collect();
    let aggregates: Vec<(usize, AggKind)> = aggs
        .iter()
        .enumerate()
        .map(|(i, a)| (out_pos[nkeys + i], a.kind))
        .collect();
    let liveness = aggs
        .iter()
        .position(|a| a.output == HIDDEN_COUNT && a.kind == AggKind::Count && a.input == AggInput::Star)
        .map(|i| Liveness::CountColumn(out_pos[nkeys + i]))
        .unwrap_or(Liveness::AnyAggregateZero);
    Ok(CombineSpec::AggregateMerge {
        group_keys: keys,
        aggregates,
        liveness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::plan_select;
    use crate::schema::{Column, Schema};
    use crate::sql::parse_query;
    use crate::value::DataType;

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
            Schema::new("t", vec![Column::new("a", DataType::Int), Column::new("b", DataType::Int)]).unwrap(),
            Schema::new("u", vec![Column::new("a", DataType::Int), Column::new("c", DataType::Text)]).unwrap(),
        ]
    }

    fn delta_of(t: &str) -> Option<String> {
        (t != "unknown").then(|| format!("delta_{t}"))
    }

    fn bound(sql: &str) -> LogicalPlan {
        let p = plan_select(&parse_query(sql).unwrap(), &catalog()).unwrap();
        bind_deltas(&p, &delta_of, "_m").unwrap()
    }

    #[test]
    fn listing_one_rewrite() {
        let b = bound("SELECT group_index, SUM(group_value) AS total_value FROM groups GROUP BY group_index");
        let ip = rewrite_incremental(&b).unwrap();
        assert_eq!(
            ip.plan.to_text().unwrap(),
            "Aggregate keys=[group_index, +_m] aggs=[SUM(group_value) AS total_value]\n  Scan delta_groups <- groups [group_index VARCHAR, group_value INTEGER, +_m]\n"
        );
        assert_eq!(
            ip.combine,
            CombineSpec::AggregateMerge {
                group_keys: vec![0],
                aggregates: vec![(1, AggKind::Sum)],
                liveness: Liveness::AnyAggregateZero
            }
        );
        assert_eq!(ip.class, QueryClass::GroupAggregate);
    }

    #[test]
    fn projection_keeps_shape() {
        let b = bound("SELECT a FROM t WHERE b > 1");
        let ip = rewrite_incremental(&b).unwrap();
        assert_eq!(ip.plan, b);
        assert_eq!(ip.combine, CombineSpec::UnionDifference);
        assert_eq!(ip.class, QueryClass::ProjectionFilter);
    }

    #[test]
    fn join_expands_into_three_terms() {
        let b = bound("SELECT t.b, u.c FROM t JOIN u ON t.a = u.a");
        let ip = rewrite_incremental(&b).unwrap();
        let LogicalPlan::Union(terms) = &ip.plan else { panic!() };
        assert_eq!(terms.len(), 3);
        let sources: Vec<Vec<bool>> = terms
            .iter()
            .map(|t| {
                let mut v = Vec::new();
                t.visit_scans(&mut |_, _, s| v.push(*s != ScanSource::Base));
                v
            })
            .collect();
        assert_eq!(sources, vec![vec![true, false], vec![false, true], vec![true, true]]);
        assert_eq!(ip.class, QueryClass::Join);
    }

    #[test]
    fn binding_rebinds_all_leaves_or_fails() {
        let b = bound("SELECT t.b, u.c FROM t JOIN u ON t.a = u.a");
        let mut deltas = Vec::new();
        b.visit_scans(&mut |_, _, s| {
            if let ScanSource::Delta { table, .. } = s {
                deltas.push(table.clone())
            }
        });
        assert_eq!(deltas, vec!["delta_t".to_string(), "delta_u".to_string()]);
        let p = plan_select(&parse_query("SELECT a FROM t").unwrap(), &catalog()).unwrap();
        assert!(matches!(bind_deltas(&p, &|_| None, "_m"), Err(Error::MissingDelta(t)) if t == "t"));
        assert!(rewrite_incremental(&p).is_err());
    }

    #[test]
    fn liveness_count_changes_combine() {
        let p = plan_select(
            &parse_query("SELECT SUM(b) AS s, a FROM t GROUP BY a").unwrap(),
            &catalog(),
        )
        .unwrap();
        let p = with_liveness_count(p).unwrap();
        assert_eq!(p.schema().unwrap().names(), vec!["s", "a", HIDDEN_COUNT]);
        let ip = rewrite_incremental(&bind_deltas(&p, &delta_of, "_m").unwrap()).unwrap();
        assert_eq!(
            ip.combine,
            CombineSpec::AggregateMerge {
                group_keys: vec![1],
                aggregates: vec![(0, AggKind::Sum), (2, AggKind::Count)],
                liveness: Liveness::CountColumn(2)
            }
        );
    }
}
