use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::value::DataType;

/// Target SQL surface syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[default]
    Generic,
    Duck,
    Postgres,
}

/// How a dialect writes an insert-or-update on the view's key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertStyle {
    InsertOrReplace,
    OnConflictUpdate,
}

impl Dialect {
    pub const ALL: [Dialect; 3] = [Dialect::Generic, Dialect::Duck, Dialect::Postgres];

    pub fn name(self) -> &'static str {
        match self {
            Dialect::Generic => "generic",
            Dialect::Duck => "duck",
            Dialect::Postgres => "postgres",
        }
    }

    pub fn upsert(self) -> UpsertStyle {
        match self {
            Dialect::Generic | Dialect::Duck => UpsertStyle::InsertOrReplace,
            Dialect::Postgres => UpsertStyle::OnConflictUpdate,
        }
    }

    pub fn bool_literal(self, b: bool) -> &'static str {
        match (self, b) {
            (Dialect::Generic, true) => "true",
            (Dialect::Generic, false) => "false",
            (_, true) => "TRUE",
            (_, false) => "FALSE",
        }
    }

    pub fn type_name(self, ty: DataType) -> &'static str {
        match (self, ty) {
            (Dialect::Generic, DataType::Int) => "INTEGER",
            (_, DataType::Int) => "BIGINT",
            (Dialect::Postgres, DataType::Decimal) => "NUMERIC(38,9)",
            (_, DataType::Decimal) => "DECIMAL(38,9)",
            (Dialect::Postgres, DataType::Text) => "TEXT",
            (_, DataType::Text) => "VARCHAR",
            (_, DataType::Bool) => "BOOLEAN",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "generic" => Ok(Dialect::Generic),
            "duck" | "duckdb" => Ok(Dialect::Duck),
            "postgres" | "postgresql" => Ok(Dialect::Postgres),
            other => Err(format!("unknown dialect {other:?}")),
        }
    }
}
