use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::zset::Tuple;

/// Unique index over some columns. NULLs compare equal, so at most one row
/// may carry a NULL key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniqueIndex {
    pub name: String,
    pub columns: Vec<usize>,
    map: HashMap<Tuple, Tuple>,
}

impl UniqueIndex {
    pub fn key(&self, t: &[crate::Value]) -> Tuple {
        self.columns.iter().map(|&c| t[c].clone()).collect()
    }

    pub fn get(&self, key: &Tuple) -> Option<&Tuple> {
        self.map.get(key)
    }
}

/// In-memory bag: each distinct tuple with its number of copies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub schema: Schema,
    rows: IndexMap<Tuple, u64>,
    indexes: Vec<UniqueIndex>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            rows: IndexMap::new(),
            indexes: Vec::new(),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&Tuple, u64)> {
        self.rows.iter().map(|(t, c)| (t, *c))
    }

    pub fn count(&self, t: &Tuple) -> u64 {
        self.rows.get(t).copied().unwrap_or(0)
    }

    /// Total number of copies.
    pub fn len(&self) -> u64 {
        self.rows.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn distinct_len(&self) -> usize {
        self.rows.len()
    }

    pub fn indexes(&self) -> &[UniqueIndex] {
        &self.indexes
    }

    /// Rows sorted by tuple, for stable output.
    pub fn sorted_rows(&self) -> Vec<(Tuple, u64)> {
        let mut out: Vec<(Tuple, u64)> = self.rows.iter().map(|(t, c)| (t.clone(), *c)).collect();
        out.sort();
        out
    }

    pub fn add_unique_index(&mut self, name: &str, columns: Vec<usize>) -> Result<()> {
        let mut idx = UniqueIndex {
            name: name.to_string(),
            columns,
            map: HashMap::new(),
        };
        for (t, &c) in &self.rows {
            let key = idx.key(t);
            if c > 1 || idx.map.insert(key, t.clone()).is_some() {
                return Err(Error::UniqueViolation { index: name.to_string() });
            }
        }
        self.indexes.push(idx);
        Ok(())
    }

    /// Index whose columns are exactly `columns`, in any order.
    pub fn index_on(&self, columns: &[usize]) -> Option<usize> {
        self.indexes.iter().position(|i| {
            i.columns.len() == columns.len() && columns.iter().all(|c| i.columns.contains(c))
        })
    }

    /// Existing rows that share a unique key with `t`.
    pub fn conflicts(&self, t: &Tuple) -> Vec<Tuple> {
        let mut out: Vec<Tuple> = Vec::new();
        for idx in &self.indexes {
            if let Some(existing) = idx.map.get(&idx.key(t)) {
                if !out.contains(existing) {
                    out.push(existing.clone());
                }
            }
        }
        out
    }

    pub fn insert(&mut self, t: Tuple, copies: u64) -> Result<()> {
        if copies == 0 {
            return Ok(());
        }
        if !self.indexes.is_empty() {
            if let Some(idx) = self.indexes.iter().find(|i| copies > 1 || i.map.contains_key(&i.key(&t))) {
                return Err(Error::UniqueViolation { index: idx.name.clone() });
            }
            for idx in &mut self.indexes {
                let key = idx.key(&t);
                idx.map.insert(key, t.clone());
            }
        }
        *self.rows.entry(t).or_insert(0) += copies;
        Ok(())
    }

    pub fn remove(&mut self, t: &Tuple, copies: u64) -> Result<()> {
        let have = self.count(t);
        if have < copies {
            return Err(Error::NegativeState(format!(
                "table {} holds {have} copies of a row, cannot remove {copies}",
                self.schema.name
            )));
        }
        if have == copies {
            self.rows.swap_remove(t);
            for idx in &mut self.indexes {
                let key = idx.key(t);
                idx.map.remove(&key);
            }
        } else {
            self.rows[t] -= copies;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        for idx in &mut self.indexes {
            idx.map.clear();
        }
    }
}
