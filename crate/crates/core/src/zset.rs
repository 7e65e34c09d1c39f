//! Z-set relations: multisets of tuples where every entry carries a
//! multiplicity flag (insertion or deletion). A tuple with weight `N`
//! appears as `N` unit-weight copies.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::value::Value;

pub type Tuple = Vec<Value>;

/// Unit weight of a Z-set entry: `true` inserts (+1), `false` deletes (-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Multiplicity(pub bool);

impl Multiplicity {
    pub const INSERT: Multiplicity = Multiplicity(true);
    pub const DELETE: Multiplicity = Multiplicity(false);

    pub fn weight(self) -> i64 {
        mult_weight(self)
    }

    pub fn is_insert(self) -> bool {
        self.0
    }

    pub fn negate(self) -> Multiplicity {
        Multiplicity(!self.0)
    }

    /// Product of two unit weights.
    pub fn times(self, other: Multiplicity) -> Multiplicity {
        Multiplicity(self.0 == other.0)
    }

    pub fn of_sign(weight: i64) -> Multiplicity {
        Multiplicity(weight > 0)
    }
}

pub fn mult_weight(m: Multiplicity) -> i64 {
    if m.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZSet {
    schema: Schema,
    rows: Vec<(Tuple, Multiplicity)>,
}

impl ZSet {
    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    /// Builds a relation, validating arity and value kinds against `schema`.
    pub fn from_rows(schema: Schema, rows: Vec<(Tuple, Multiplicity)>) -> Result<Self> {
        let mut z = Self::empty(schema);
        for (t, m) in rows {
            z.push(t, m)?;
        }
        Ok(z)
    }

    /// Table state: every tuple inserted once per occurrence.
    pub fn from_table(schema: Schema, tuples: Vec<Tuple>) -> Result<Self> {
        Self::from_rows(
            schema,
            tuples.into_iter().map(|t| (t, Multiplicity::INSERT)).collect(),
        )
    }

    pub(crate) fn from_rows_unchecked(schema: Schema, rows: Vec<(Tuple, Multiplicity)>) -> Self {
        Self { schema, rows }
    }

    pub fn push(&mut self, tuple: Tuple, m: Multiplicity) -> Result<()> {
        self.check_tuple(&tuple)?;
        self.rows.push((tuple, m));
        Ok(())
    }

    fn check_tuple(&self, tuple: &[Value]) -> Result<()> {
        if tuple.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "tuple of arity {} for relation {} of arity {}",
                tuple.len(),
                self.schema.name,
                self.schema.len()
            )));
        }
        for (v, c) in tuple.iter().zip(&self.schema.columns) {
            if let Some(t) = v.data_type() {
                if !c.ty.accepts(t) {
                    return Err(Error::Type(format!(
                        "value {v} in column {} of type {}",
                        c.name, c.ty
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[(Tuple, Multiplicity)] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<(Tuple, Multiplicity)> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn with_schema(self, schema: Schema) -> Self {
        Self {
            schema,
            rows: self.rows,
        }
    }

    /// Net signed weight of every tuple.
    pub fn weights(&self) -> HashMap<&Tuple, i64> {
        let mut w: HashMap<&Tuple, i64> = HashMap::with_capacity(self.rows.len());
        for (t, m) in &self.rows {
            *w.entry(t).or_default() += m.weight();
        }
        w
    }

    /// True when no deletion entry is present.
    pub fn is_table_state(&self) -> bool {
        self.rows.iter().all(|(_, m)| m.is_insert())
    }

    /// Tuples of a table state, one per copy.
    pub fn tuples(&self) -> impl Iterator<Item = &Tuple> {
        self.rows.iter().map(|(t, _)| t)
    }
}

impl fmt::Display for ZSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (t, m)) in self.rows.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let vals: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            write!(f, "(({}), {})", vals.join(","), m.0)?;
        }
        write!(f, "}}")
    }
}

/// Canonical form: opposite-flag copies of a tuple cancel pairwise and
/// entries are sorted by tuple, then flag.
pub fn normalize(r: &ZSet) -> ZSet {
    let weights = r.weights();
    let mut entries: Vec<(&Tuple, i64)> = weights.into_iter().filter(|(_, w)| *w != 0).collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut rows = Vec::with_capacity(entries.iter().map(|(_, w)| w.unsigned_abs() as usize).sum());
    for (t, w) in entries {
        let m = Multiplicity::of_sign(w);
        for _ in 0..w.unsigned_abs() {
            rows.push((t.clone(), m));
        }
    }
    ZSet::from_rows_unchecked(r.schema.clone(), rows)
}

fn check_same_schema(a: &ZSet, b: &ZSet) -> Result<()> {
    if a.schema.same_shape(&b.schema) {
        Ok(())
    } else {
        Err(Error::SchemaMismatch(format!(
            "{} {} vs {} {}",
            a.schema.name, a.schema, b.schema.name, b.schema
        )))
    }
}

pub fn zset_add(a: &ZSet, b: &ZSet) -> Result<ZSet> {
    check_same_schema(a, b)?;
    let mut rows = a.rows.clone();
    rows.extend(b.rows.iter().cloned());
    Ok(normalize(&ZSet::from_rows_unchecked(a.schema.clone(), rows)))
}

/// Negates every entry.
pub fn negate(r: &ZSet) -> ZSet {
    ZSet::from_rows_unchecked(
        r.schema.clone(),
        r.rows.iter().map(|(t, m)| (t.clone(), m.negate())).collect(),
    )
}

/// The change that turns `old` into `new`.
pub fn differentiate(old: &ZSet, new: &ZSet) -> Result<ZSet> {
    check_same_schema(old, new)?;
    for (name, r) in [("old", old), ("new", new)] {
        if !r.is_table_state() {
            return Err(Error::NegativeState(format!(
                "{name} state of {} contains deletions",
                r.schema.name
            )));
        }
    }
    zset_add(new, &negate(old))
}

/// Applies `delta` to a table state; a deletion without a stored tuple to
/// cancel is an error.
pub fn integrate(t: &ZSet, delta: &ZSet) -> Result<ZSet> {
    let out = zset_add(t, delta)?;
    if let Some((tuple, _)) = out.rows.iter().find(|(_, m)| !m.is_insert()) {
        let vals: Vec<String> = tuple.iter().map(|v| v.to_string()).collect();
        return Err(Error::NegativeState(format!(
            "deletion of absent tuple ({}) from {}",
            vals.join(", "),
            t.schema.name
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Column;
    use crate::value::DataType;

    fn schema() -> Schema {
        Schema::new("r", vec![Column::new("x", DataType::Text)]).unwrap()
    }

    fn rel(rows: &[(&str, bool)]) -> ZSet {
        ZSet::from_rows(
            schema(),
            rows.iter()
                .map(|(x, m)| (vec![Value::text(x)], Multiplicity(*m)))
                .collect(),
        )
        .unwrap()
    }

    /// Signed weight per tuple, computed independently of `normalize`.
    fn weight_oracle(r: &ZSet) -> Vec<(String, i64)> {
        let mut acc: Vec<(String, i64)> = Vec::new();
        for (t, m) in r.rows() {
            let key = t[0].to_string();
            let w = if m.0 { 1 } else { -1 };
            match acc.iter_mut().find(|(k, _)| *k == key) {
                Some(e) => e.1 += w,
                None => acc.push((key, w)),
            }
        }
        acc.retain(|(_, w)| *w != 0);
        acc.sort();
        acc
    }

    #[test]
    fn weight_of_flags() {
        assert_eq!(mult_weight(Multiplicity(true)), 1);
        assert_eq!(mult_weight(Multiplicity(false)), -1);
        for m in [Multiplicity(true), Multiplicity(false)] {
            assert_eq!(mult_weight(m) * mult_weight(m), 1);
        }
    }

    #[test]
    fn normalize_examples() {
        assert!(normalize(&rel(&[("a", true), ("a", false)])).is_empty());
        assert_eq!(
            normalize(&rel(&[("a", true), ("a", true)])),
            rel(&[("a", true), ("a", true)])
        );
        let mixed = rel(&[("a", true), ("b", false), ("a", false)]);
        assert_eq!(weight_oracle(&mixed), vec![("b".to_string(), -1)]);
        assert_eq!(normalize(&mixed), rel(&[("b", false)]));
    }

    #[test]
    fn add_examples() {
        assert_eq!(zset_add(&rel(&[]), &rel(&[("x", true)])).unwrap(), rel(&[("x", true)]));
        assert!(zset_add(&rel(&[("x", true)]), &rel(&[("x", false)])).unwrap().is_empty());
        let a = rel(&[("x", true), ("y", true)]);
        let b = rel(&[("y", false), ("z", true)]);
        let mut both = a.clone();
        for (t, m) in b.rows() {
            both.push(t.clone(), *m).unwrap();
        }
        assert_eq!(weight_oracle(&both), vec![("x".into(), 1), ("z".into(), 1)]);
        assert_eq!(zset_add(&a, &b).unwrap(), rel(&[("x", true), ("z", true)]));
    }

    #[test]
    fn add_rejects_schema_mismatch() {
        let other = ZSet::empty(Schema::new("s", vec![Column::new("y", DataType::Int)]).unwrap());
        assert!(matches!(zset_add(&rel(&[]), &other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn differentiate_examples() {
        let t = rel(&[("x", true)]);
        assert!(differentiate(&t, &t).unwrap().is_empty());
        assert_eq!(differentiate(&rel(&[]), &t).unwrap(), t);
        let d = differentiate(&rel(&[("x", true), ("y", true)]), &rel(&[("y", true), ("z", true)]))
            .unwrap();
        assert_eq!(d, rel(&[("x", false), ("z", true)]));
    }

    #[test]
    fn integrate_examples() {
        assert!(integrate(&rel(&[("x", true)]), &rel(&[("x", false)])).unwrap().is_empty());
        assert!(matches!(
            integrate(&rel(&[]), &rel(&[("x", false)])),
            Err(Error::NegativeState(_))
        ));
        let a = rel(&[("p", true), ("q", true), ("q", true)]);
        let b = rel(&[("q", true), ("r", true)]);
        assert_eq!(integrate(&a, &differentiate(&a, &b).unwrap()).unwrap(), normalize(&b));
    }

    #[test]
    fn push_checks_arity_and_types() {
        let mut r = rel(&[]);
        assert!(r.push(vec![], Multiplicity::INSERT).is_err());
        assert!(r.push(vec![Value::Int(1)], Multiplicity::INSERT).is_err());
        assert!(r.push(vec![Value::Null], Multiplicity::INSERT).is_ok());
    }
}
