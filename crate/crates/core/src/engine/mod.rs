//! In-memory SQL engine used to execute the emitted scripts.
//!
//! Tables are bags of typed tuples with optional unique indexes. Writes
//! inside a transaction snapshot each touched table first, so rollback
//! restores the exact prior state.

mod par;
mod query;
mod table;

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::plan::{bind_expr, TableCatalog};
use crate::schema::{Column, Schema};
use crate::sql::ast::{Insert, InsertSource, SelectQuery, Statement};
use crate::sql::parser::parse_statements;
use crate::value::Value;
use crate::zset::Tuple;

pub use query::QueryResult;
pub use table::{Table, UniqueIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecOptions {
    pub parallel: bool,
    /// Minimum row count before the rayon path is taken.
    pub parallel_threshold: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
            parallel_threshold: 16_384,
        }
    }
}

impl ExecOptions {
    pub fn sequential() -> Self {
        Self {
            parallel: false,
            ..Self::default()
        }
    }
}

/// Test hook: fail the `statement`-th statement (counted from arming, 0-based)
/// once it has written `after_rows` rows. Fires at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailPoint {
    pub statement: usize,
    pub after_rows: usize,
}

#[derive(Debug, Clone)]
struct Armed {
    point: FailPoint,
    seen: usize,
}

/// Outcome of one statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    /// Rows written (copies inserted, replaced, updated or deleted).
    pub rows: usize,
    pub query: Option<QueryResult>,
}

#[derive(Debug, Clone, Default)]
pub struct Engine {
    tables: IndexMap<String, Table>,
    /// Pre-transaction copies of touched tables; `None` marks a table
    /// created inside the transaction.
    snapshot: Option<HashMap<String, Option<Table>>>,
    fail: Option<Armed>,
    pub options: ExecOptions,
    /// Rows written by the statement in progress.
    written: usize,
    current_fails: bool,
}

impl TableCatalog for Engine {
    fn table_schema(&self, name: &str) -> Option<Schema> {
        self.tables.get(name).map(|t| t.schema.clone())
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: ExecOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.tables.contains_key(name)
    }

    pub fn in_transaction(&self) -> bool {
        self.snapshot.is_some()
    }

    pub fn set_fail_point(&mut self, point: Option<FailPoint>) {
        self.fail = point.map(|point| Armed { point, seen: 0 });
    }

    pub fn fail_point_armed(&self) -> bool {
        self.fail.is_some()
    }

    pub fn begin(&mut self) -> Result<()> {
        if self.snapshot.is_some() {
            return Err(Error::Execution("transaction already active".into()));
        }
        self.snapshot = Some(HashMap::new());
        Ok(())
    }

    pub fn commit(&mut self) -> Result<()> {
        self.snapshot
            .take()
            .map(|_| ())
            .ok_or_else(|| Error::Execution("no active transaction".into()))
    }

    pub fn rollback(&mut self) -> Result<()> {
        let snap = self
            .snapshot
            .take()
            .ok_or_else(|| Error::Execution("no active transaction".into()))?;
        for (name, prior) in snap {
            match prior {
                Some(t) => {
                    self.tables.insert(name, t);
                }
                None => {
                    self.tables.shift_remove(&name);
                }
            }
        }
        Ok(())
    }

    fn touch(&mut self, name: &str) {
        if let Some(snap) = &mut self.snapshot {
            if !snap.contains_key(name) {
                snap.insert(name.to_string(), self.tables.get(name).cloned());
            }
        }
    }

    fn table_mut(&mut self, name: &str) -> Result<&mut Table> {
        if !self.tables.contains_key(name) {
            return Err(Error::UnknownTable(name.to_string()));
        }
        self.touch(name);
        Ok(self.tables.get_mut(name).expect("checked above"))
    }

    /// Called before each row write of the current statement.
    fn tick(&mut self) -> Result<()> {
        self.check_fail()?;
        self.written += 1;
        Ok(())
    }

    fn check_fail(&mut self) -> Result<()> {
        if self.current_fails {
            if let Some(a) = &self.fail {
                if self.written == a.point.after_rows {
                    let err = Error::Injected {
                        statement: a.point.statement,
                        row: a.point.after_rows,
                    };
                    self.fail = None;
                    self.current_fails = false;
                    return Err(err);
                }
            }
        }
        Ok(())
    }

    pub fn create_table(&mut self, schema: Schema, if_not_exists: bool) -> Result<bool> {
        if self.tables.contains_key(&schema.name) {
            return if if_not_exists {
                Ok(false)
            } else {
                Err(Error::NameCollision(format!("table {} already exists", schema.name)))
            };
        }
        self.touch(&schema.name);
        self.tables.insert(schema.name.clone(), Table::new(schema));
        Ok(true)
    }

    /// Direct row insertion, bypassing SQL. Values are coerced to the
    /// column types.
    pub fn insert_rows(&mut self, table: &str, rows: &[(Tuple, u64)]) -> Result<()> {
        let t = self.table_mut(table)?;
        for (row, c) in rows {
            let row = coerce_row(&t.schema, row.clone())?;
            t.insert(row, *c)?;
        }
        Ok(())
    }

    /// Direct removal of row copies; fails if a row has too few copies.
    pub fn remove_rows(&mut self, table: &str, rows: &[(Tuple, u64)]) -> Result<()> {
        let t = self.table_mut(table)?;
        for (row, c) in rows {
            let row = coerce_row(&t.schema, row.clone())?;
            t.remove(&row, *c)?;
        }
        Ok(())
    }

    pub fn clear_table(&mut self, table: &str) -> Result<()> {
        self.table_mut(table)?.clear();
        Ok(())
    }

    pub fn query(&self, q: &SelectQuery) -> Result<QueryResult> {
        let mut ctx = query::Ctx {
            tables: &self.tables,
            ctes: Vec::new(),
            opts: self.options,
        };
        query::eval_query(&mut ctx, q)
    }

    pub fn query_sql(&self, sql: &str) -> Result<QueryResult> {
        self.query(&crate::sql::parser::parse_query(sql)?)
    }

    /// Executes one statement. BEGIN and COMMIT control the transaction and
    /// are not counted by fail points.
    pub fn execute(&mut self, s: &Statement) -> Result<ExecResult> {
        match s {
            Statement::Begin => {
                self.begin()?;
                return Ok(ExecResult { rows: 0, query: None });
            }
            Statement::Commit => {
                self.commit()?;
                return Ok(ExecResult { rows: 0, query: None });
            }
            _ => {}
        }
        self.written = 0;
        self.current_fails = match &mut self.fail {
            Some(a) => {
                let hit = a.seen == a.point.statement;
                a.seen += 1;
                hit
            }
            None => false,
        };
        let out = self.execute_inner(s);
        let out = match out {
            Ok(r) => self.check_fail().map(|_| r),
            Err(e) => Err(e),
        };
        self.current_fails = false;
        out
    }

    fn execute_inner(&mut self, s: &Statement) -> Result<ExecResult> {
        let rows = match s {
            Statement::CreateTable {
                name,
                columns,
                primary_key,
                if_not_exists,
            } => {
                let schema = Schema::new(
                    name.clone(),
                    columns.iter().map(|c| Column::new(c.name.clone(), c.ty)).collect(),
                )?;
                let created = self.create_table(schema, *if_not_exists)?;
                if let (true, Some(pk)) = (created, primary_key) {
                    self.create_index(&format!("{name}_pkey"), name, pk)?;
                }
                0
            }
            Statement::CreateIndex {
                name,
                table,
                columns,
                unique,
            } => {
                if !unique {
                    return Err(Error::Execution("only unique indexes are supported".into()));
                }
                self.create_index(name, table, columns)?;
                0
            }
            Statement::CreateView { .. } => {
                return Err(Error::Execution(
                    "materialized views are registered through the catalog".into(),
                ))
            }
            Statement::Insert(i) => self.insert(i)?,
            Statement::Delete { table, selection } => self.delete(table, selection.as_ref())?,
            Statement::Select(q) => {
                let r = self.query(q)?;
                return Ok(ExecResult { rows: 0, query: Some(r) });
            }
            Statement::Begin | Statement::Commit => 0,
        };
        Ok(ExecResult { rows, query: None })
    }

    fn create_index(&mut self, name: &str, table: &str, columns: &[String]) -> Result<()> {
        if self.tables.values().any(|t| t.indexes().iter().any(|i| i.name == name)) {
            return Err(Error::NameCollision(format!("index {name} already exists")));
        }
        let t = self.table_mut(table)?;
        let cols = columns
            .iter()
            .map(|c| {
                t.schema
                    .index_of(c)
                    .ok_or_else(|| Error::UnknownColumn(format!("{table}.{c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        t.add_unique_index(name, cols)
    }

    fn insert(&mut self, i: &Insert) -> Result<usize> {
        let schema = self
            .tables
            .get(&i.table)
            .ok_or_else(|| Error::UnknownTable(i.table.clone()))?
            .schema
            .clone();
        let positions: Vec<usize> = match &i.columns {
            Some(cols) => cols
                .iter()
                .map(|c| {
                    schema
                        .index_of(c)
                        .ok_or_else(|| Error::UnknownColumn(format!("{}.{c}", i.table)))
                })
                .collect::<Result<_>>()?,
            None => (0..schema.len()).collect(),
        };
        let source: Vec<(Tuple, u64)> = match &i.source {
            InsertSource::Values(rows) => rows
                .iter()
                .map(|r| {
                    let t: Tuple = r.iter().map(|e| bind_expr(e, &[])?.eval(&[])).collect::<Result<_>>()?;
                    Ok((t, 1))
                })
                .collect::<Result<_>>()?,
            InsertSource::Query(q) => self.query(q)?.rows,
        };
        let mut rows = Vec::with_capacity(source.len());
        for (src, c) in source {
            if src.len() != positions.len() {
                return Err(Error::SchemaMismatch(format!(
                    "INSERT into {} supplies {} values for {} columns",
                    i.table,
                    src.len(),
                    positions.len()
                )));
            }
            let mut row = vec![Value::Null; schema.len()];
            for (v, &p) in src.into_iter().zip(&positions) {
                row[p] = v;
            }
            rows.push((coerce_row(&schema, row)?, c));
        }
        let conflict = match &i.on_conflict {
            Some(oc) => {
                let target: Vec<usize> = oc
                    .target
                    .iter()
                    .map(|c| schema.index_of(c).ok_or_else(|| Error::UnknownColumn(c.clone())))
                    .collect::<Result<_>>()?;
                let t = &self.tables[&i.table];
                let idx = t.index_on(&target).ok_or_else(|| {
                    Error::Execution(format!("ON CONFLICT target does not match a unique index on {}", i.table))
                })?;
                // Assignments see the table columns and the proposed row as `excluded`.
                let mut scope: Vec<Column> = schema.requalify(&i.table).columns;
                scope.extend(schema.requalify("excluded").columns);
                let sets = oc
                    .assignments
                    .iter()
                    .map(|(c, e)| {
                        let p = schema.index_of(c).ok_or_else(|| Error::UnknownColumn(c.clone()))?;
                        Ok((p, bind_expr(e, &scope)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((idx, sets))
            }
            None => None,
        };
        if i.or_replace && self.tables[&i.table].indexes().is_empty() {
            return Err(Error::Execution(format!(
                "INSERT OR REPLACE into {} needs a unique index",
                i.table
            )));
        }
        let name = i.table.clone();
        self.touch(&name);
        for (row, copies) in rows {
            for _ in 0..copies {
                self.tick()?;
                let t = self.tables.get_mut(&name).expect("table exists");
                if let Some((idx, sets)) = &conflict {
                    let key = t.indexes()[*idx].key(&row);
                    if let Some(existing) = t.indexes()[*idx].get(&key).cloned() {
                        let mut env = existing.clone();
                        env.extend(row.iter().cloned());
                        let mut updated = existing.clone();
                        for (p, e) in sets {
                            updated[*p] = e.eval(&env)?;
                        }
                        let updated = coerce_row(&t.schema, updated)?;
                        t.remove(&existing, 1)?;
                        t.insert(updated, 1)?;
                        continue;
                    }
                } else if i.or_replace {
                    for old in t.conflicts(&row) {
                        t.remove(&old, 1)?;
                    }
                }
                t.insert(row.clone(), 1)?;
            }
        }
        Ok(self.written)
    }

    fn delete(&mut self, table: &str, selection: Option<&crate::sql::ast::Expr>) -> Result<usize> {
        let t = self.tables.get(table).ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let victims: Vec<(Tuple, u64)> = match selection {
            Some(e) => {
                let cols = t.schema.requalify(table).columns;
                let pred = bind_expr(e, &cols)?;
                let mut out = Vec::new();
                for (row, c) in t.rows() {
                    if pred.eval_predicate(row)? {
                        out.push((row.clone(), c));
                    }
                }
                out
            }
            None => t.rows().map(|(r, c)| (r.clone(), c)).collect(),
        };
        self.touch(table);
        for (row, c) in victims {
            for _ in 0..c {
                self.tick()?;
                self.tables.get_mut(table).expect("table exists").remove(&row, 1)?;
            }
        }
        Ok(self.written)
    }

    /// Runs every statement of a script as one unit: on error all its
    /// effects are rolled back. Explicit BEGIN/COMMIT inside the script
    /// delimit the same unit.
    pub fn execute_script(&mut self, sql: &str) -> Result<Vec<ExecResult>> {
        let stmts = parse_statements(sql)?;
        self.execute_all(&stmts)
    }

    pub fn execute_all(&mut self, stmts: &[Statement]) -> Result<Vec<ExecResult>> {
        let outer = self.in_transaction();
        if !outer {
            self.begin()?;
        }
        let mut out = Vec::with_capacity(stmts.len());
        for s in stmts {
            if matches!(s, Statement::Begin | Statement::Commit) {
                continue;
            }
            match self.execute(s) {
                Ok(r) => out.push(r),
                Err(e) => {
                    if !outer {
                        self.rollback()?;
                    }
                    return Err(e);
                }
            }
        }
        if !outer {
            self.commit()?;
        }
        Ok(out)
    }

    /// Canonical text of every table: schema, indexes and sorted rows.
    pub fn dump(&self) -> String {
        let mut names: Vec<&String> = self.tables.keys().collect();
        names.sort();
        let mut out = String::new();
        for n in names {
            let t = &self.tables[n];
            let cols: Vec<String> = t.schema.columns.iter().map(|c| format!("{} {}", c.name, c.ty.name())).collect();
            writeln!(out, "table {n} ({})", cols.join(", ")).ok();
            for idx in t.indexes() {
                writeln!(out, "  index {} {:?}", idx.name, idx.columns).ok();
            }
            for (row, c) in t.sorted_rows() {
                writeln!(out, "  {row:?} x{c}").ok();
            }
        }
        out
    }
}

pub(crate) fn coerce_row(schema: &Schema, row: Tuple) -> Result<Tuple> {
    if row.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} expects {} columns, got {}",
            schema.name,
            schema.len(),
            row.len()
        )));
    }
    row.into_iter()
        .zip(&schema.columns)
        .map(|(v, c)| {
            v.coerce(c.ty)
                .map_err(|e| Error::Type(format!("column {}.{}: {e}", schema.name, c.name)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(sql: &str) -> Engine {
        let mut e = Engine::new();
        e.execute_script(sql).unwrap();
        e
    }

    fn rows(e: &Engine, sql: &str) -> Vec<Tuple> {
        e.query_sql(sql).unwrap().expanded_sorted()
    }

    fn int(i: i64) -> Value {
        Value::Int(i)
    }

    #[test]
    fn bag_semantics_and_delete() {
        let mut e = engine("CREATE TABLE t (a INTEGER); INSERT INTO t VALUES (1), (1), (2);");
        assert_eq!(rows(&e, "SELECT a FROM t"), vec![vec![int(1)], vec![int(1)], vec![int(2)]]);
        e.execute_script("DELETE FROM t WHERE a = 1").unwrap();
        assert_eq!(rows(&e, "SELECT a FROM t"), vec![vec![int(2)]]);
    }

    #[test]
    fn grouped_and_global_aggregates() {
        let e = engine("CREATE TABLE t (g VARCHAR, v INTEGER); INSERT INTO t VALUES ('a', 1), ('a', 2), ('b', NULL);");
        assert_eq!(
            rows(&e, "SELECT g, SUM(v), COUNT(*), COUNT(v) FROM t GROUP BY g"),
            vec![
                vec![Value::text("a"), int(3), int(2), int(2)],
                vec![Value::text("b"), Value::Null, int(1), int(0)],
            ]
        );
        assert_eq!(rows(&e, "SELECT SUM(v) + 1 AS s FROM t WHERE v > 5"), vec![vec![Value::Null]]);
        assert_eq!(rows(&e, "SELECT COUNT(*) FROM t WHERE v > 5"), vec![vec![int(0)]]);
        let err = e.query_sql("SELECT g, v FROM t GROUP BY g").unwrap_err();
        assert!(matches!(err, Error::AggregateMisuse(_)));
    }

    #[test]
    fn joins_and_null_keys() {
        let e = engine(
            "CREATE TABLE l (k INTEGER, x INTEGER); CREATE TABLE r (k INTEGER, y INTEGER);
             INSERT INTO l VALUES (1, 10), (NULL, 20), (3, 30);
             INSERT INTO r VALUES (1, 100), (NULL, 200), (1, 101);",
        );
        assert_eq!(
            rows(&e, "SELECT x, y FROM l JOIN r ON l.k = r.k"),
            vec![vec![int(10), int(100)], vec![int(10), int(101)]]
        );
        assert_eq!(
            rows(&e, "SELECT x, y FROM l JOIN r ON l.k IS NOT DISTINCT FROM r.k"),
            vec![vec![int(10), int(100)], vec![int(10), int(101)], vec![int(20), int(200)]]
        );
        assert_eq!(
            rows(&e, "SELECT x, y FROM l LEFT JOIN r ON l.k = r.k AND y > 100"),
            vec![vec![int(10), int(101)], vec![int(20), Value::Null], vec![int(30), Value::Null]]
        );
        // Left join built on the smaller left side.
        assert_eq!(
            rows(&e, "WITH one AS (SELECT k FROM l WHERE x = 30) SELECT one.k, y FROM one LEFT JOIN r ON r.k = one.k"),
            vec![vec![int(3), Value::Null]]
        );
    }

    #[test]
    fn ctes_shadow_tables_and_union() {
        let e = engine("CREATE TABLE t (a INTEGER); INSERT INTO t VALUES (1);");
        assert_eq!(
            rows(&e, "WITH t AS (SELECT a + 1 AS a FROM t) SELECT a FROM t UNION ALL SELECT a FROM t"),
            vec![vec![int(2)], vec![int(2)]]
        );
    }

    #[test]
    fn upserts() {
        let mut e = engine(
            "CREATE TABLE v (k VARCHAR, s INTEGER); CREATE UNIQUE INDEX v_key ON v (k);
             INSERT INTO v VALUES ('a', 1);",
        );
        assert!(matches!(
            e.execute_script("INSERT INTO v VALUES ('a', 2)"),
            Err(Error::UniqueViolation { .. })
        ));
        e.execute_script("INSERT OR REPLACE INTO v VALUES ('a', 5), ('b', 1)").unwrap();
        assert_eq!(rows(&e, "SELECT k, s FROM v"), vec![vec![Value::text("a"), int(5)], vec![Value::text("b"), int(1)]]);
        e.execute_script("INSERT INTO v (k, s) VALUES ('a', 7), ('c', 3) ON CONFLICT (k) DO UPDATE SET s = v.s + excluded.s").unwrap();
        assert_eq!(
            rows(&e, "SELECT k, s FROM v"),
            vec![vec![Value::text("a"), int(12)], vec![Value::text("b"), int(1)], vec![Value::text("c"), int(3)]]
        );
        assert!(e.execute_script("INSERT INTO v VALUES ('z', 1) ON CONFLICT (s) DO UPDATE SET s = 1").is_err());
    }

    #[test]
    fn rollback_restores_state() {
        let mut e = engine("CREATE TABLE t (a INTEGER); INSERT INTO t VALUES (1), (2);");
        let before = e.dump();
        let err = e.execute_script("INSERT INTO t VALUES (3); CREATE TABLE u (b INTEGER); DELETE FROM t; INSERT INTO nope VALUES (1);");
        assert!(matches!(err, Err(Error::UnknownTable(_))));
        assert_eq!(e.dump(), before);
        assert!(!e.has_table("u"));
    }

    #[test]
    fn fail_point_fires_once() {
        let mut e = engine("CREATE TABLE t (a INTEGER); INSERT INTO t VALUES (1), (2), (3);");
        let before = e.dump();
        e.set_fail_point(Some(FailPoint { statement: 1, after_rows: 2 }));
        let err = e.execute_script("INSERT INTO t VALUES (4); DELETE FROM t WHERE a < 4;").unwrap_err();
        assert!(matches!(err, Error::Injected { statement: 1, row: 2 }));
        assert_eq!(e.dump(), before);
        assert!(!e.fail_point_armed());
        e.execute_script("INSERT INTO t VALUES (4); DELETE FROM t WHERE a < 4;").unwrap();
        assert_eq!(rows(&e, "SELECT a FROM t"), vec![vec![int(4)]]);
        // A point equal to the statement's row count fires at its end.
        e.set_fail_point(Some(FailPoint { statement: 0, after_rows: 1 }));
        assert!(e.execute_script("DELETE FROM t").is_err());
        assert_eq!(rows(&e, "SELECT a FROM t"), vec![vec![int(4)]]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut seq = Engine::with_options(ExecOptions::sequential());
        seq.execute_script("CREATE TABLE t (g INTEGER, v INTEGER)").unwrap();
        let data: Vec<(Tuple, u64)> = (0..5000).map(|i| (vec![int(i % 37), int(i % 11 - 5)], 1 + (i % 3) as u64)).collect();
        seq.insert_rows("t", &data).unwrap();
        let mut par = seq.clone();
        par.options = ExecOptions {
            parallel: true,
            parallel_threshold: 64,
        };
        for q in [
            "SELECT g, SUM(v), COUNT(*) FROM t WHERE v <> 0 GROUP BY g",
            "SELECT g * 2 AS h, v FROM t WHERE v > 1",
        ] {
            assert_eq!(seq.query_sql(q).unwrap().expanded_sorted(), par.query_sql(q).unwrap().expanded_sorted());
        }
    }

    #[test]
    fn views_are_rejected() {
        let mut e = engine("CREATE TABLE t (a INTEGER)");
        assert!(e.execute_script("CREATE VIEW v AS SELECT a FROM t").is_err());
    }
}
