//! Changelog files: JSON lines or CSV, one change record each.
//!
//! JSON lines: `{"table": "t", "action": "insert", "values": {"a": 1}}`.
//! CSV: header `__table,__action,<columns...>`; a record leaves the fields
//! of columns outside its table empty, and an empty field is NULL.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::Error;
use crate::plan::TableCatalog;
use crate::schema::Schema;
use crate::value::Value;

use super::{Action, ChangeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangelogFormat {
    JsonLines,
    Csv,
}

impl ChangelogFormat {
    /// `.csv` files are CSV; everything else is JSON lines.
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ChangelogFormat::Csv,
            _ => ChangelogFormat::JsonLines,
        }
    }
}

impl FromStr for ChangelogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(ChangelogFormat::JsonLines),
            "csv" => Ok(ChangelogFormat::Csv),
            other => Err(format!("unknown changelog format {other:?}")),
        }
    }
}

fn action(s: &str) -> Result<Action, String> {
    match s.to_ascii_lowercase().as_str() {
        "insert" => Ok(Action::Insert),
        "delete" => Ok(Action::Delete),
        other => Err(format!("unknown action {other:?}")),
    }
}

/// Records with their 1-based line numbers, up to the first malformed
/// one, whose error is returned alongside.
pub fn parse_changelog(
    text: &str,
    format: ChangelogFormat,
    tables: &dyn TableCatalog,
) -> (Vec<(usize, ChangeRecord)>, Option<Error>) {
    match format {
        ChangelogFormat::JsonLines => parse_jsonl(text, tables),
        ChangelogFormat::Csv => parse_csv(text, tables),
    }
}

fn fail(line: usize, message: impl Into<String>) -> Error {
    Error::Changelog {
        line,
        message: message.into(),
    }
}

fn parse_jsonl(text: &str, tables: &dyn TableCatalog) -> (Vec<(usize, ChangeRecord)>, Option<Error>) {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match jsonl_record(raw, tables) {
            Ok(r) => out.push((line, r)),
            Err(m) => return (out, Some(fail(line, m))),
        }
    }
    (out, None)
}

fn jsonl_record(raw: &str, tables: &dyn TableCatalog) -> Result<ChangeRecord, String> {
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = v.as_object().ok_or("record is not a JSON object")?;
    for k in obj.keys() {
        if !matches!(k.as_str(), "table" | "action" | "values") {
            return Err(format!("unexpected field {k:?}"));
        }
    }
    let table = obj
        .get("table")
        .and_then(|t| t.as_str())
        .ok_or("missing string field \"table\"")?
        .to_string();
    let action = action(obj.get("action").and_then(|a| a.as_str()).ok_or("missing string field \"action\"")?)?;
    let values = obj
        .get("values")
        .and_then(|v| v.as_object())
        .ok_or("missing object field \"values\"")?;
    let schema = tables.table_schema(&table).ok_or_else(|| format!("unknown table {table:?}"))?;
    let mut out = IndexMap::new();
    for k in values.keys() {
        if schema.index_of(k).is_none() {
            return Err(format!("values.{k}: no such column in {table}"));
        }
    }
    for c in &schema.columns {
        let j = values
            .get(&c.name)
            .ok_or_else(|| format!("values.{}: missing column", c.name))?;
        let v = Value::from_json(j, c.ty).map_err(|e| format!("values.{}: {e}", c.name))?;
        out.insert(c.name.clone(), v);
    }
    Ok(ChangeRecord { table, action, values: out })
}

fn parse_csv(text: &str, tables: &dyn TableCatalog) -> (Vec<(usize, ChangeRecord)>, Option<Error>) {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return (Vec::new(), Some(fail(1, format!("invalid header: {e}")))),
    };
    if header.len() < 2 || header[0] != "__table" || header[1] != "__action" {
        return (Vec::new(), Some(fail(1, "header must start with __table,__action")));
    }
    let mut out = Vec::new();
    let mut schemas: IndexMap<String, Schema> = IndexMap::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                return (out, Some(fail(line, format!("invalid CSV: {e}"))));
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let res = (|| -> Result<ChangeRecord, String> {
            let table = rec.get(0).unwrap_or("").trim().to_string();
            let action = action(rec.get(1).unwrap_or("").trim())?;
            if !schemas.contains_key(&table) {
                let s = tables.table_schema(&table).ok_or_else(|| format!("unknown table {table:?}"))?;
                schemas.insert(table.clone(), s);
            }
            let schema = &schemas[&table];
            let mut values = IndexMap::new();
            for c in &schema.columns {
                if !header.iter().skip(2).any(|h| *h == c.name) {
                    return Err(format!("{}: column missing from header", c.name));
                }
            }
            for (i, h) in header.iter().enumerate().skip(2) {
                let field = rec.get(i).unwrap_or("");
                match schema.columns.iter().find(|c| c.name == *h) {
                    Some(c) => {
                        let v = Value::from_csv_field(field, c.ty).map_err(|e| format!("{h}: {e}"))?;
                        values.insert(c.name.clone(), v);
                    }
                    None if field.is_empty() => {}
                    None => return Err(format!("{h}: not a column of {table}")),
                }
            }
            let values = schema
                .columns
                .iter()
                .map(|c| (c.name.clone(), values.shift_remove(&c.name).unwrap_or(Value::Null)))
                .collect();
            Ok(ChangeRecord { table, action, values })
        })();
        match res {
            Ok(r) => out.push((line, r)),
            Err(m) => return (out, Some(fail(line, m))),
        }
    }
    (out, None)
}
