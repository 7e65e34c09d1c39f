//! Incremental view maintenance by SQL-to-SQL compilation.
//!
//! Relations are Z-sets; a view definition is parsed, planned, rewritten
//! into its incremental form and emitted as SQL scripts that keep a
//! materialized table current from per-table delta tables.

pub mod bench;
pub mod catalog;
pub mod emit;
pub mod engine;
pub mod error;
pub mod expr;
pub mod ops;
pub mod plan;
pub mod rewrite;
pub mod schema;
pub mod sql;
pub mod value;
pub mod verify;
pub mod zset;

pub use error::{Error, ErrorKind, Pos, Result};
pub use schema::{Column, Schema};
pub use value::{DataType, Decimal, Value};
pub use zset::{Multiplicity, Tuple, ZSet};
