//! Direct evaluation of logical plans over Z-sets.

use crate::error::{Error, Result};
use crate::ops::{eval_aggregate, eval_join, eval_project, eval_select};
use crate::plan::logical::{LogicalPlan, ScanSource};
use crate::zset::ZSet;

/// Evaluates `plan`; `lookup(table, source)` supplies the relation for every
/// scan: the table state for base scans, the flagged delta for delta scans.
/// The multiplicity column is carried as each entry's flag.
pub fn eval_plan(
    plan: &LogicalPlan,
    lookup: &dyn Fn(&str, &ScanSource) -> Result<ZSet>,
) -> Result<ZSet> {
    match plan {
        LogicalPlan::Scan {
            table,
            schema,
            source,
            ..
        } => {
            let r = lookup(table, source)?;
            if r.schema().len() != schema.len() {
                return Err(Error::SchemaMismatch(format!("relation supplied for {table}")));
            }
            Ok(r.with_schema(schema.clone()))
        }
        LogicalPlan::Filter { input, predicate } => eval_select(predicate, &eval_plan(input, lookup)?),
        LogicalPlan::Project { input, exprs } => eval_project(exprs, &eval_plan(input, lookup)?),
        LogicalPlan::Aggregate {
            input,
            group_keys,
            aggs,
        } => eval_aggregate(group_keys, aggs, &eval_plan(input, lookup)?),
        LogicalPlan::Join { left, right, on } => {
            eval_join(&eval_plan(left, lookup)?, &eval_plan(right, lookup)?, on)
        }
        LogicalPlan::Union(children) => {
            let schema = plan.schema()?;
            let mut rows = Vec::new();
            for c in children {
                rows.extend(eval_plan(c, lookup)?.into_rows());
            }
            Ok(ZSet::from_rows_unchecked(schema, rows))
        }
    }
}
