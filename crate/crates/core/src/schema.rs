use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: DataType,
    /// Table or alias the column is visible under, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: DataType) -> Self {
        Self {
            name: name.into(),
            ty,
            table: None,
        }
    }

    pub fn qualified(table: impl Into<String>, name: impl Into<String>, ty: DataType) -> Self {
        Self {
            name: name.into(),
            ty,
            table: Some(table.into()),
        }
    }

    pub fn display_name(&self) -> String {
        match &self.table {
            Some(t) => format!("{t}.{}", self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<String>>,
}

impl Schema {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let schema = Self {
            name: name.into(),
            columns,
            key: None,
        };
        schema.check_unique()?;
        Ok(schema)
    }

    /// Builds a schema without the uniqueness check; used for intermediate
    /// results where qualified duplicates (`l.id`, `r.id`) are legal.
    pub fn anonymous(columns: Vec<Column>) -> Self {
        Self {
            name: String::new(),
            columns,
            key: None,
        }
    }

    fn check_unique(&self) -> Result<()> {
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate column {} in {}",
                    c.name, self.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Resolves a possibly qualified column reference.
    pub fn resolve(&self, table: Option<&str>, name: &str) -> Result<usize> {
        let mut hits = self.columns.iter().enumerate().filter(|(_, c)| {
            c.name == name
                && match table {
                    Some(t) => c.table.as_deref() == Some(t),
                    None => true,
                }
        });
        let display = match table {
            Some(t) => format!("{t}.{name}"),
            None => name.to_string(),
        };
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (Some(_), Some(_)) => Err(Error::AmbiguousColumn(display)),
            (None, _) => Err(Error::UnknownColumn(display)),
        }
    }

    pub fn types(&self) -> Vec<DataType> {
        self.columns.iter().map(|c| c.ty).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Same columns, relabelled under a new table qualifier.
    pub fn requalify(&self, table: &str) -> Schema {
        Schema {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| Column::qualified(table, c.name.clone(), c.ty))
                .collect(),
            key: self.key.clone(),
        }
    }

    pub fn unqualified(&self) -> Schema {
        Schema {
            name: self.name.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| Column::new(c.name.clone(), c.ty))
                .collect(),
            key: self.key.clone(),
        }
    }

    pub fn same_shape(&self, other: &Schema) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.ty == b.ty)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{} {}", c.display_name(), c.ty)?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_columns() {
        let err = Schema::new(
            "t",
            vec![Column::new("a", DataType::Int), Column::new("a", DataType::Text)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn resolves_qualified_and_detects_ambiguity() {
        let s = Schema::anonymous(vec![
            Column::qualified("l", "id", DataType::Int),
            Column::qualified("r", "id", DataType::Int),
            Column::qualified("r", "name", DataType::Text),
        ]);
        assert_eq!(s.resolve(Some("r"), "id").unwrap(), 1);
        assert_eq!(s.resolve(None, "name").unwrap(), 2);
        assert!(matches!(s.resolve(None, "id"), Err(Error::AmbiguousColumn(_))));
        assert!(matches!(s.resolve(Some("x"), "id"), Err(Error::UnknownColumn(_))));
    }
}
