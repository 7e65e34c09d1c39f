//! Executable semantics of the relational operators over Z-sets.
//!
//! Selection and projection are applied entry by entry and leave flags
//! alone, so they are linear. Join multiplies flags. Aggregation groups by
//! the key columns *and* the flag, which is the incremental form of
//! grouping: insertions and deletions of a group are summarised separately
//! and merged into the view by [`combine_view`].

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::schema::{Column, Schema};
use crate::value::{DataType, Value};
use crate::zset::{integrate, normalize, Multiplicity, Tuple, ZSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggKind {
    Sum,
    Count,
}

impl AggKind {
    pub fn sql_name(self) -> &'static str {
        match self {
            AggKind::Sum => "SUM",
            AggKind::Count => "COUNT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggInput {
    Star,
    Column(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregateSpec {
    pub kind: AggKind,
    pub input: AggInput,
    pub output: String,
}

impl AggregateSpec {
    pub fn sum(column: usize, output: impl Into<String>) -> Self {
        Self {
            kind: AggKind::Sum,
            input: AggInput::Column(column),
            output: output.into(),
        }
    }

    pub fn count_star(output: impl Into<String>) -> Self {
        Self {
            kind: AggKind::Count,
            input: AggInput::Star,
            output: output.into(),
        }
    }

    pub fn output_type(&self, input: &Schema) -> Result<DataType> {
        match (self.kind, self.input) {
            (AggKind::Count, _) => Ok(DataType::Int),
            (AggKind::Sum, AggInput::Star) => Err(Error::AggregateMisuse("SUM(*)".into())),
            (AggKind::Sum, AggInput::Column(i)) => {
                let col = input
                    .columns
                    .get(i)
                    .ok_or_else(|| Error::UnknownColumn(format!("#{i}")))?;
                if col.ty.is_numeric() {
                    Ok(col.ty)
                } else {
                    Err(Error::Type(format!(
                        "SUM over non-numeric column {} of type {}",
                        col.name, col.ty
                    )))
                }
            }
        }
    }
}

/// Running state of one aggregate within one group.
#[derive(Debug, Clone)]
enum Acc {
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

    fn update(&mut self, spec: &AggregateSpec, row: &[Value]) -> Result<()> {
        match self {
            Acc::Count(n) => {
                let counts = match spec.input {
                    AggInput::Star => true,
                    AggInput::Column(i) => !row[i].is_null(),
                };
                if counts {
                    *n += 1;
                }
            }
            Acc::Sum(total) => {
                if let AggInput::Column(i) = spec.input {
                    let v = &row[i];
                    if !v.is_null() {
                        *total = if total.is_null() { v.clone() } else { total.add(v)? };
                    }
                }
            }
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

pub fn eval_select(pred: &ScalarExpr, r: &ZSet) -> Result<ZSet> {
    match pred.data_type(&r.schema().types())? {
        None | Some(DataType::Bool) => {}
        Some(t) => return Err(Error::Type(format!("predicate of type {t}"))),
    }
    let mut rows = Vec::new();
    for (t, m) in r.rows() {
        if pred.eval_predicate(t)? {
            rows.push((t.clone(), *m));
        }
    }
    Ok(ZSet::from_rows_unchecked(r.schema().clone(), rows))
}

/// Output schema of a projection; untyped NULL expressions become text.
pub fn project_schema(exprs: &[(ScalarExpr, String)], input: &Schema) -> Result<Schema> {
    let types = input.types();
    let mut cols = Vec::with_capacity(exprs.len());
    for (e, name) in exprs {
        let ty = e.data_type(&types)?.unwrap_or(DataType::Text);
        cols.push(Column::new(name.clone(), ty));
    }
    Schema::new(input.name.clone(), cols)
}

pub fn eval_project(exprs: &[(ScalarExpr, String)], r: &ZSet) -> Result<ZSet> {
    let schema = project_schema(exprs, r.schema())?;
    let mut rows = Vec::with_capacity(r.len());
    for (t, m) in r.rows() {
        let out: Tuple = exprs.iter().map(|(e, _)| e.eval(t)).collect::<Result<_>>()?;
        rows.push((out, *m));
    }
    Ok(ZSet::from_rows_unchecked(schema, rows))
}

/// Equi-join on `(left column, right column)` pairs. NULL keys never match.
pub fn eval_join(l: &ZSet, r: &ZSet, keys: &[(usize, usize)]) -> Result<ZSet> {
    for &(a, b) in keys {
        let lc = l
            .schema()
            .columns
            .get(a)
            .ok_or_else(|| Error::UnknownColumn(format!("left #{a}")))?;
        let rc = r
            .schema()
            .columns
            .get(b)
            .ok_or_else(|| Error::UnknownColumn(format!("right #{b}")))?;
        if lc.ty != rc.ty && !(lc.ty.is_numeric() && rc.ty.is_numeric()) {
            return Err(Error::Type(format!(
                "join key {} {} vs {} {}",
                lc.name, lc.ty, rc.name, rc.ty
            )));
        }
    }
    let mut index: HashMap<Vec<&Value>, Vec<usize>> = HashMap::new();
    for (i, (t, _)) in r.rows().iter().enumerate() {
        let key: Vec<&Value> = keys.iter().map(|&(_, b)| &t[b]).collect();
        if key.iter().any(|v| v.is_null()) {
            continue;
        }
        index.entry(key).or_default().push(i);
    }
    let mut rows = Vec::new();
    for (lt, lm) in l.rows() {
        let key: Vec<&Value> = keys.iter().map(|&(a, _)| &lt[a]).collect();
        if let Some(matches) = index.get(&key) {
            for &i in matches {
                let (rt, rm) = &r.rows()[i];
                let mut out = lt.clone();
                out.extend(rt.iter().cloned());
                rows.push((out, lm.times(*rm)));
            }
        }
    }
    let mut cols = l.schema().columns.clone();
    cols.extend(r.schema().columns.iter().cloned());
    Ok(ZSet::from_rows_unchecked(Schema::anonymous(cols), rows))
}

/// Groups by `(group_keys, flag)`. Output columns are the keys followed by
/// the aggregates; each output row carries its group's flag.
pub fn eval_aggregate(group_keys: &[usize], aggs: &[AggregateSpec], r: &ZSet) -> Result<ZSet> {
    if group_keys.is_empty() && aggs.is_empty() {
        return Err(Error::AggregateMisuse("aggregate without keys or aggregates".into()));
    }
    let input = r.schema();
    let mut cols = Vec::with_capacity(group_keys.len() + aggs.len());
    for &k in group_keys {
        let c = input
            .columns
            .get(k)
            .ok_or_else(|| Error::UnknownColumn(format!("#{k}")))?;
        cols.push(c.clone());
    }
    for a in aggs {
        cols.push(Column::new(a.output.clone(), a.output_type(input)?));
    }
    let mut groups: IndexMap<(Tuple, Multiplicity), Vec<Acc>> = IndexMap::new();
    for (t, m) in r.rows() {
        let key: Tuple = group_keys.iter().map(|&k| t[k].clone()).collect();
        let accs = groups
            .entry((key, *m))
            .or_insert_with(|| aggs.iter().map(|a| Acc::new(a.kind)).collect());
        for (acc, spec) in accs.iter_mut().zip(aggs) {
            acc.update(spec, t)?;
        }
    }
    let rows = groups
        .into_iter()
        .map(|((mut key, m), accs)| {
            key.extend(accs.into_iter().map(Acc::finish));
            (key, m)
        })
        .collect();
    Ok(ZSet::from_rows_unchecked(Schema::anonymous(cols), rows))
}

/// Which merged rows leave an aggregate view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Liveness {
    /// Drop the row when any aggregate column equals zero.
    AnyAggregateZero,
    /// Drop the row when this hidden count column equals zero.
    CountColumn(usize),
}

/// How a view delta merges into the stored view. Column positions refer to
/// the view schema, which is the delta schema without the flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CombineSpec {
    /// Plain union of insertions and difference of deletions.
    UnionDifference,
    AggregateMerge {
        group_keys: Vec<usize>,
        aggregates: Vec<(usize, AggKind)>,
        liveness: Liveness,
    },
}

pub fn combine_view(v: &ZSet, dv: &ZSet, spec: &CombineSpec) -> Result<ZSet> {
    match spec {
        CombineSpec::UnionDifference => integrate(v, &dv.clone().with_schema(v.schema().clone())),
        CombineSpec::AggregateMerge {
            group_keys,
            aggregates,
            liveness,
        } => {
            if v.schema().len() != dv.schema().len() {
                return Err(Error::SchemaMismatch("view and delta view differ".into()));
            }
            let key_of = |t: &Tuple| -> Tuple { group_keys.iter().map(|&k| t[k].clone()).collect() };
            // Signed per-group contribution, mirroring SUM(CASE WHEN flag = FALSE THEN -x ELSE x END).
            let mut delta: IndexMap<Tuple, Tuple> = IndexMap::new();
            for (t, m) in dv.rows() {
                let entry = delta.entry(key_of(t)).or_insert_with(|| {
                    let mut base = t.clone();
                    for &(c, _) in aggregates {
                        base[c] = Value::Null;
                    }
                    base
                });
                for &(c, _) in aggregates {
                    let contribution = if m.is_insert() { t[c].clone() } else { t[c].neg()? };
                    if !contribution.is_null() {
                        entry[c] = if entry[c].is_null() {
                            contribution
                        } else {
                            entry[c].add(&contribution)?
                        };
                    }
                }
            }
            let mut out = Vec::with_capacity(v.len() + delta.len());
            for (t, m) in v.rows() {
                if !m.is_insert() {
                    return Err(Error::NegativeState("view state holds a deletion".into()));
                }
                match delta.shift_remove(&key_of(t)) {
                    None => out.push(t.clone()),
                    Some(d) => {
                        let mut merged = t.clone();
                        for &(c, _) in aggregates {
                            let existing = if t[c].is_null() { Value::Int(0) } else { t[c].clone() };
                            merged[c] = existing.add(&d[c])?;
                        }
                        out.push(merged);
                    }
                }
            }
            for (_, d) in delta {
                let mut merged = d;
                for &(c, _) in aggregates {
                    merged[c] = Value::Int(0).add(&merged[c])?;
                }
                out.push(merged);
            }
            let types = v.schema().types();
            let mut rows = Vec::with_capacity(out.len());
            for mut t in out {
                let dead = match liveness {
                    Liveness::AnyAggregateZero => aggregates.iter().any(|&(c, _)| t[c].is_zero()),
                    Liveness::CountColumn(c) => t[*c].is_zero(),
                };
                if !dead {
                    for (val, ty) in t.iter_mut().zip(&types) {
                        *val = std::mem::replace(val, Value::Null).coerce(*ty)?;
                    }
                    rows.push((t, Multiplicity::INSERT));
                }
            }
            Ok(normalize(&ZSet::from_rows_unchecked(v.schema().clone(), rows)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BinaryOp;
    use crate::zset::{mult_weight, zset_add};

    fn kv_schema() -> Schema {
        Schema::new(
            "t",
            vec![Column::new("k", DataType::Text), Column::new("v", DataType::Int)],
        )
        .unwrap()
    }

    fn kv(rows: &[(&str, i64, bool)]) -> ZSet {
        ZSet::from_rows(
            kv_schema(),
            rows.iter()
                .map(|(k, v, m)| (vec![Value::text(k), Value::Int(*v)], Multiplicity(*m)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn select_examples() {
        let r = kv(&[("a", 1, true), ("b", 3, false)]);
        let always = ScalarExpr::Literal(Value::Bool(true));
        assert_eq!(eval_select(&always, &r).unwrap(), r);
        let gt2 = ScalarExpr::binary(BinaryOp::Gt, ScalarExpr::Column(1), ScalarExpr::Literal(Value::Int(2)));
        assert_eq!(eval_select(&gt2, &r).unwrap(), kv(&[("b", 3, false)]));
        assert!(eval_select(&gt2, &kv(&[])).unwrap().is_empty());
        let bad = ScalarExpr::Column(7);
        assert!(matches!(eval_select(&bad, &r), Err(Error::UnknownColumn(_))));
        let not_bool = ScalarExpr::Column(1);
        assert!(matches!(eval_select(&not_bool, &r), Err(Error::Type(_))));
    }

    #[test]
    fn project_is_a_multiset_projection() {
        let r = kv(&[("a", 1, true), ("a", 2, true)]);
        let ident = vec![(ScalarExpr::Column(0), "k".into()), (ScalarExpr::Column(1), "v".into())];
        assert_eq!(eval_project(&ident, &r).unwrap(), r);
        let first = vec![(ScalarExpr::Column(0), "k".into())];
        let p = eval_project(&first, &r).unwrap();
        assert_eq!(p.rows().len(), 2);
        assert!(p.rows().iter().all(|(t, m)| t == &vec![Value::text("a")] && m.0));
        let p = eval_project(&first, &kv(&[("a", 1, false)])).unwrap();
        assert_eq!(p.rows(), &[(vec![Value::text("a")], Multiplicity(false))]);
    }

    #[test]
    fn join_multiplies_weights() {
        for (lm, rm) in [(true, true), (true, false), (false, true), (false, false)] {
            let l = kv(&[("x", 1, lm)]);
            let r = kv(&[("x", 2, rm)]);
            let j = eval_join(&l, &r, &[(0, 0)]).unwrap();
            assert_eq!(j.len(), 1);
            let expected = mult_weight(Multiplicity(lm)) * mult_weight(Multiplicity(rm));
            assert_eq!(j.rows()[0].1.weight(), expected);
            assert_eq!(j.rows()[0].0.len(), 4);
        }
    }

    #[test]
    fn join_skips_null_keys_and_checks_columns() {
        let l = ZSet::from_rows(kv_schema(), vec![(vec![Value::Null, Value::Int(1)], Multiplicity::INSERT)]).unwrap();
        assert!(eval_join(&l, &l, &[(0, 0)]).unwrap().is_empty());
        assert!(matches!(eval_join(&l, &l, &[(0, 5)]), Err(Error::UnknownColumn(_))));
        assert!(matches!(eval_join(&l, &l, &[(0, 1)]), Err(Error::Type(_))));
    }

    #[test]
    fn aggregate_groups_by_key_and_flag() {
        let r = kv(&[("a", 5, true), ("a", 3, true), ("b", 2, false)]);
        let out = normalize(&eval_aggregate(&[0], &[AggregateSpec::sum(1, "total")], &r).unwrap());
        let expected = vec![
            (vec![Value::text("a"), Value::Int(8)], Multiplicity(true)),
            (vec![Value::text("b"), Value::Int(2)], Multiplicity(false)),
        ];
        assert_eq!(out.rows(), expected.as_slice());

        assert!(eval_aggregate(&[0], &[AggregateSpec::sum(1, "s")], &kv(&[])).unwrap().is_empty());

        let c = eval_aggregate(&[0], &[AggregateSpec::count_star("c")], &kv(&[("a", 1, true), ("a", 9, true)]))
            .unwrap();
        assert_eq!(c.rows(), &[(vec![Value::text("a"), Value::Int(2)], Multiplicity(true))]);

        let mixed = eval_aggregate(&[0], &[AggregateSpec::count_star("c")], &kv(&[("a", 1, true), ("a", 1, false)]))
            .unwrap();
        assert_eq!(mixed.len(), 2, "insertions and deletions are separate groups");
    }

    #[test]
    fn aggregate_rejects_sum_over_text() {
        let r = kv(&[("a", 1, true)]);
        assert!(matches!(
            eval_aggregate(&[1], &[AggregateSpec::sum(0, "s")], &r),
            Err(Error::Type(_))
        ));
    }

    #[test]
    fn null_keys_form_one_group() {
        let r = ZSet::from_rows(
            kv_schema(),
            vec![
                (vec![Value::Null, Value::Int(1)], Multiplicity::INSERT),
                (vec![Value::Null, Value::Int(2)], Multiplicity::INSERT),
            ],
        )
        .unwrap();
        let out = eval_aggregate(&[0], &[AggregateSpec::sum(1, "s")], &r).unwrap();
        assert_eq!(out.rows(), &[(vec![Value::Null, Value::Int(3)], Multiplicity::INSERT)]);
    }

    fn merge_spec() -> CombineSpec {
        CombineSpec::AggregateMerge {
            group_keys: vec![0],
            aggregates: vec![(1, AggKind::Sum)],
            liveness: Liveness::AnyAggregateZero,
        }
    }

    #[test]
    fn combine_apple_banana() {
        let v = kv(&[("apple", 5, true), ("banana", 2, true)]);
        let dv = kv(&[("apple", 3, false), ("banana", 1, true)]);
        let out = combine_view(&v, &dv, &merge_spec()).unwrap();
        assert_eq!(out, kv(&[("apple", 2, true), ("banana", 3, true)]));
        assert_eq!(combine_view(&v, &kv(&[]), &merge_spec()).unwrap(), normalize(&v));
    }

    #[test]
    fn combine_drops_groups_reaching_zero() {
        let v = kv(&[("apple", 5, true), ("banana", 2, true)]);
        let dv = kv(&[("apple", 5, false)]);
        assert_eq!(combine_view(&v, &dv, &merge_spec()).unwrap(), kv(&[("banana", 2, true)]));
    }

    #[test]
    fn combine_sound_mode_keeps_zero_sum_groups() {
        let schema = Schema::new(
            "v",
            vec![
                Column::new("k", DataType::Text),
                Column::new("s", DataType::Int),
                Column::new("_ivm_count", DataType::Int),
            ],
        )
        .unwrap();
        let row = |k: &str, s: i64, c: i64, m: bool| (vec![Value::text(k), Value::Int(s), Value::Int(c)], Multiplicity(m));
        let v = ZSet::from_rows(schema.clone(), vec![row("a", 4, 2, true)]).unwrap();
        let dv = ZSet::from_rows(schema.clone(), vec![row("a", 4, 1, false)]).unwrap();
        let spec = CombineSpec::AggregateMerge {
            group_keys: vec![0],
            aggregates: vec![(1, AggKind::Sum), (2, AggKind::Count)],
            liveness: Liveness::CountColumn(2),
        };
        let out = combine_view(&v, &dv, &spec).unwrap();
        assert_eq!(out.rows(), &[row("a", 0, 1, true)]);
        let zero = CombineSpec::AggregateMerge {
            group_keys: vec![0],
            aggregates: vec![(1, AggKind::Sum), (2, AggKind::Count)],
            liveness: Liveness::AnyAggregateZero,
        };
        assert!(combine_view(&v, &dv, &zero).unwrap().is_empty());
    }

    #[test]
    fn combine_union_difference() {
        let v = kv(&[("a", 1, true), ("a", 1, true)]);
        let dv = kv(&[("a", 1, false), ("b", 2, true)]);
        let out = combine_view(&v, &dv, &CombineSpec::UnionDifference).unwrap();
        assert_eq!(out, kv(&[("a", 1, true), ("b", 2, true)]));
        let bad = kv(&[("zz", 1, false)]);
        assert!(matches!(
            combine_view(&v, &bad, &CombineSpec::UnionDifference),
            Err(Error::NegativeState(_))
        ));
    }

    #[test]
    fn select_is_linear_on_example() {
        let a = kv(&[("a", 1, true), ("b", 4, true)]);
        let b = kv(&[("b", 4, false), ("c", 9, true)]);
        let gt2 = ScalarExpr::binary(BinaryOp::Gt, ScalarExpr::Column(1), ScalarExpr::Literal(Value::Int(2)));
        let lhs = normalize(&eval_select(&gt2, &zset_add(&a, &b).unwrap()).unwrap());
        let rhs = zset_add(&eval_select(&gt2, &a).unwrap(), &eval_select(&gt2, &b).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }
}
