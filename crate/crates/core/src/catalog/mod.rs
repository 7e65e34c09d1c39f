//! Stateful harness around the engine: base tables, registered views,
//! interception of base changes into delta tables, and refresh.

mod changelog;
mod persist;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::emit::{compile_view, delta_table_name, CompileOptions, Dialect, ScriptBundle, ViewDefinition};
use crate::engine::{Engine, ExecOptions, FailPoint, QueryResult};
use crate::error::{Error, Result};
use crate::plan::TableCatalog;
use crate::schema::Schema;
use crate::sql::ast::{InsertSource, SelectQuery, Statement};
use crate::sql::parser::{parse_statement, parse_statements, strip_materialized};
use crate::value::Value;
use crate::zset::Tuple;

pub use changelog::{parse_changelog, ChangelogFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefreshPolicy {
    /// Refresh dependent views after every applied batch.
    Eager,
    /// Refresh when a view is queried.
    #[default]
    Lazy,
}

impl RefreshPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RefreshPolicy::Eager => "eager",
            RefreshPolicy::Lazy => "lazy",
        }
    }
}

impl FromStr for RefreshPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "eager" => Ok(RefreshPolicy::Eager),
            "lazy" => Ok(RefreshPolicy::Lazy),
            other => Err(format!("unknown refresh policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CatalogConfig {
    pub compile: CompileOptions,
    pub refresh: RefreshPolicy,
    /// Where compiled script bundles are written, one directory per view.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Insert,
    Delete,
}

/// One captured change to a base table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeRecord {
    pub table: String,
    pub action: Action,
    pub values: IndexMap<String, Value>,
}

impl ChangeRecord {
    pub fn new(table: &str, action: Action, values: &[(&str, Value)]) -> Self {
        Self {
            table: table.to_string(),
            action,
            values: values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    /// Builds a record from a tuple in schema order.
    pub fn from_tuple(schema: &Schema, action: Action, t: &Tuple) -> Self {
        Self {
            table: schema.name.clone(),
            action,
            values: schema.columns.iter().zip(t).map(|(c, v)| (c.name.clone(), v.clone())).collect(),
        }
    }
}

/// A registered view and its rendered scripts.
#[derive(Debug, Clone)]
pub struct RegisteredView {
    pub bundle: ScriptBundle,
    pub ddl_sql: Vec<String>,
    pub propagation_sql: Vec<(u8, String)>,
    /// Propagation statements parsed back from their rendered text.
    propagation: Vec<(u8, String, Statement)>,
    population: Statement,
}

impl RegisteredView {
    pub fn definition(&self) -> &ViewDefinition {
        &self.bundle.view
    }

    fn new(bundle: ScriptBundle) -> Result<Self> {
        let ddl_sql = bundle.ddl_statements();
        let propagation_sql = bundle.propagation_statements();
        let propagation = propagation_sql
            .iter()
            .map(|(step, sql)| Ok((*step, sql.clone(), parse_statement(sql)?)))
            .collect::<Result<_>>()?;
        let name = bundle.view.name.clone();
        let population = ddl_sql
            .iter()
            .map(|s| parse_statement(s))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .find(|s| matches!(s, Statement::Insert(i) if i.table == name))
            .ok_or_else(|| Error::Lowering("setup script lacks a population statement".into()))?;
        Ok(Self {
            bundle,
            ddl_sql,
            propagation_sql,
            propagation,
            population,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatementReport {
    pub view: String,
    pub step: u8,
    pub sql: String,
    pub rows: usize,
    pub micros: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct RefreshReport {
    /// Views refreshed together because they share base tables.
    pub views: Vec<String>,
    /// Delta-table rows consumed.
    pub rows_propagated: usize,
    pub statements: Vec<StatementReport>,
    pub step_micros: [u128; 4],
    /// Time spent applying the consumed deltas to the base tables.
    pub integrate_micros: u128,
    pub total_micros: u128,
}

impl RefreshReport {
    pub fn is_noop(&self) -> bool {
        self.rows_propagated == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct TableCounts {
    pub inserted: usize,
    pub deleted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ApplyReport {
    pub records: usize,
    pub tables: IndexMap<String, TableCounts>,
    pub refreshes: Vec<RefreshReport>,
}

impl ApplyReport {
    fn absorb(&mut self, o: ApplyReport) {
        self.records += o.records;
        for (t, c) in o.tables {
            let e = self.tables.entry(t).or_default();
            e.inserted += c.inserted;
            e.deleted += c.deleted;
        }
        self.refreshes.extend(o.refreshes);
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    engine: Engine,
    views: IndexMap<String, RegisteredView>,
    /// Base table to delta table.
    delta_map: IndexMap<String, String>,
    pub config: CatalogConfig,
}

impl Catalog {
    pub fn new(config: CatalogConfig) -> Self {
        Self {
            engine: Engine::new(),
            views: IndexMap::new(),
            delta_map: IndexMap::new(),
            config,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn set_exec_options(&mut self, o: ExecOptions) {
        self.engine.options = o;
    }

    pub fn views(&self) -> impl Iterator<Item = &RegisteredView> {
        self.views.values()
    }

    pub fn view(&self, name: &str) -> Result<&RegisteredView> {
        self.views.get(name).ok_or_else(|| Error::UnknownView(name.to_string()))
    }

    pub fn delta_table(&self, table: &str) -> Option<&str> {
        self.delta_map.get(table).map(String::as_str)
    }

    pub fn delta_map(&self) -> &IndexMap<String, String> {
        &self.delta_map
    }

    pub fn table_schema(&self, name: &str) -> Option<Schema> {
        self.engine.table_schema(name)
    }

    /// Base tables: every engine table that is not a view, view delta or
    /// table delta.
    pub fn base_tables(&self) -> Vec<Schema> {
        self.engine
            .tables()
            .map(|t| t.schema.clone())
            .filter(|s| !self.is_derived(&s.name))
            .collect()
    }

    fn is_derived(&self, name: &str) -> bool {
        self.views.contains_key(name)
            || self.views.values().any(|v| v.definition().delta_view() == name)
            || self.delta_map.values().any(|d| d == name)
    }

    /// Loads rows straight into a base table that no view reads yet.
    pub fn bulk_load(&mut self, table: &str, rows: &[(Tuple, u64)]) -> Result<()> {
        if self.is_derived(table) {
            return Err(Error::NameCollision(format!("{table} is managed by a view")));
        }
        if self.delta_map.contains_key(table) {
            return Err(Error::Execution(format!("{table} is read by a view; use apply_base_changes")));
        }
        self.engine.insert_rows(table, rows)
    }

    pub fn set_fail_point(&mut self, point: Option<FailPoint>) {
        self.engine.set_fail_point(point);
    }

    /// Runs schema SQL: CREATE TABLE, INSERT ... VALUES and
    /// CREATE MATERIALIZED VIEW statements.
    pub fn execute_schema(&mut self, sql: &str) -> Result<Vec<ScriptBundle>> {
        let mut bundles = Vec::new();
        for s in parse_statements(sql)? {
            match s {
                Statement::CreateTable { .. } | Statement::CreateIndex { .. } => {
                    if let Some(t) = s.target_table() {
                        if self.is_derived(t) || self.views.contains_key(t) {
                            return Err(Error::NameCollision(format!("{t} is managed by a view")));
                        }
                    }
                    self.engine.execute_all(std::slice::from_ref(&s))?;
                }
                Statement::Insert(ref i) if i.columns.is_none() && !i.or_replace && i.on_conflict.is_none() => {
                    let schema = self
                        .table_schema(&i.table)
                        .filter(|_| !self.is_derived(&i.table))
                        .ok_or_else(|| Error::UnknownTable(i.table.clone()))?;
                    let InsertSource::Values(rows) = &i.source else {
                        return Err(Error::Execution("schema INSERT must use VALUES".into()));
                    };
                    let mut records = Vec::new();
                    for r in rows {
                        let t: Tuple = r
                            .iter()
                            .map(|e| crate::plan::bind_expr(e, &[])?.eval(&[]))
                            .collect::<Result<_>>()?;
                        if t.len() != schema.len() {
                            return Err(Error::SchemaMismatch(format!(
                                "INSERT into {} supplies {} values for {} columns",
                                schema.name,
                                t.len(),
                                schema.len()
                            )));
                        }
                        records.push(ChangeRecord::from_tuple(&schema, Action::Insert, &t));
                    }
                    self.apply_base_changes(&records)?;
                }
                Statement::CreateView {
                    name,
                    query,
                    materialized: true,
                } => {
                    let text = crate::emit::view_source_text(&name, &query);
                    bundles.push(self.register_parsed(&name, &query, &text)?);
                }
                other => {
                    return Err(Error::Execution(format!(
                        "statement not allowed in a schema file: {}",
                        crate::emit::render_statement(&other, Dialect::Generic)
                    )))
                }
            }
        }
        Ok(bundles)
    }

    /// Compiles and installs a `CREATE MATERIALIZED VIEW` statement.
    pub fn register_view(&mut self, ddl_text: &str) -> Result<ScriptBundle> {
        let (name, query) = strip_materialized(ddl_text)?;
        self.register_parsed(&name, &query, ddl_text.trim())
    }

    fn register_parsed(&mut self, name: &str, query: &SelectQuery, source: &str) -> Result<ScriptBundle> {
        if self.views.contains_key(name) || self.engine.has_table(name) {
            return Err(Error::NameCollision(format!("{name} already exists")));
        }
        let bases = self.base_tables();
        let def = compile_view(name, query, source, &bases, &self.config.compile)?;
        let delta_view = def.delta_view();
        if self.engine.has_table(&delta_view) && def.options.materialize == crate::emit::Materialize::Eager {
            return Err(Error::NameCollision(format!("{delta_view} already exists")));
        }
        for t in &def.base_tables {
            let d = delta_table_name(&t.name);
            if self.engine.has_table(&d) && self.delta_map.get(&t.name) != Some(&d) {
                return Err(Error::NameCollision(format!("{d} already exists")));
            }
        }
        let bundle = ScriptBundle::new(def)?;
        let reg = RegisteredView::new(bundle.clone())?;
        let ddl = reg
            .ddl_sql
            .iter()
            .map(|s| parse_statement(s))
            .collect::<Result<Vec<_>>>()?;
        self.engine.execute_all(&ddl)?;
        for t in &bundle.view.base_tables {
            self.delta_map.insert(t.name.clone(), delta_table_name(&t.name));
        }
        self.views.insert(name.to_string(), reg);
        if let Some(dir) = self.config.out_dir.clone() {
            write_bundle(&dir, &bundle)?;
        }
        Ok(bundle)
    }

    fn tuple_of(&self, r: &ChangeRecord) -> Result<(Schema, Tuple)> {
        let schema = self
            .table_schema(&r.table)
            .filter(|_| !self.is_derived(&r.table))
            .ok_or_else(|| Error::UnknownTable(r.table.clone()))?;
        for k in r.values.keys() {
            if schema.index_of(k).is_none() {
                return Err(Error::UnknownColumn(format!("{}.{k}", r.table)));
            }
        }
        let mut t = Vec::with_capacity(schema.len());
        for c in &schema.columns {
            let v = r
                .values
                .get(&c.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("missing value for column {}.{}", r.table, c.name)))?;
            if let Some(ty) = v.data_type() {
                if !c.ty.accepts(ty) {
                    return Err(Error::Type(format!("column {}.{} expects {}, got {ty}", r.table, c.name, c.ty)));
                }
            }
            t.push(v.clone().coerce(c.ty)?);
        }
        Ok((schema, t))
    }

    /// Records base-table changes. Tables watched by a view receive them in
    /// their delta table; others are updated directly. All-or-nothing.
    pub fn apply_base_changes(&mut self, changes: &[ChangeRecord]) -> Result<ApplyReport> {
        let mut report = ApplyReport::default();
        if changes.is_empty() {
            return Ok(report);
        }
        let rows: Vec<(String, Tuple, Action)> = changes
            .iter()
            .map(|r| self.tuple_of(r).map(|(s, t)| (s.name, t, r.action)))
            .collect::<Result<_>>()?;
        self.engine.begin()?;
        let res = (|| -> Result<()> {
            for (table, t, action) in &rows {
                match self.delta_map.get(table).cloned() {
                    Some(d) => {
                        let mut row = t.clone();
                        row.push(Value::Bool(*action == Action::Insert));
                        self.engine.insert_rows(&d, &[(row, 1)])?;
                    }
                    None => match action {
                        Action::Insert => self.engine.insert_rows(table, &[(t.clone(), 1)])?,
                        Action::Delete => self.engine.remove_rows(table, &[(t.clone(), 1)])?,
                    },
                }
            }
            Ok(())
        })();
        match res {
            Ok(()) => self.engine.commit()?,
            Err(e) => {
                self.engine.rollback()?;
                return Err(e);
            }
        }
        report.records = rows.len();
        for (table, _, action) in &rows {
            let e = report.tables.entry(table.clone()).or_default();
            match action {
                Action::Insert => e.inserted += 1,
                Action::Delete => e.deleted += 1,
            }
        }
        if self.config.refresh == RefreshPolicy::Eager {
            report.refreshes = self.refresh_tables(report.tables.keys())?;
        }
        Ok(report)
    }

    fn refresh_tables<'a>(&mut self, tables: impl Iterator<Item = &'a String>) -> Result<Vec<RefreshReport>> {
        let tables: Vec<&String> = tables.collect();
        let mut done: Vec<String> = Vec::new();
        let mut out = Vec::new();
        let names: Vec<String> = self.views.keys().cloned().collect();
        for v in names {
            if done.contains(&v) {
                continue;
            }
            let touches = self.views[&v]
                .definition()
                .base_tables
                .iter()
                .any(|t| tables.contains(&&t.name));
            if touches {
                let r = self.refresh_view(&v)?;
                done.extend(r.views.iter().cloned());
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Parses a changelog and applies its records in order. On a malformed
    /// record the records before it stay applied.
    pub fn ingest_changelog(&mut self, text: &str, format: ChangelogFormat) -> Result<ApplyReport> {
        let schemas = self.base_tables();
        let (records, err) = parse_changelog(text, format, &schemas);
        let mut report = ApplyReport::default();
        // Apply per line so a semantic failure still reports its line.
        let mut batch: Vec<ChangeRecord> = Vec::new();
        for (line, rec) in records {
            if let Err(e) = self.tuple_of(&rec) {
                report.absorb(self.apply_base_changes(&batch)?);
                return Err(Error::Changelog {
                    line,
                    message: e.to_string(),
                });
            }
            batch.push(rec);
        }
        report.absorb(self.apply_base_changes(&batch)?);
        match err {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    /// Views connected to `name` through shared base tables, in
    /// registration order.
    fn refresh_group(&self, name: &str) -> Vec<String> {
        let mut tables: Vec<String> = self.views[name].definition().base_table_names();
        loop {
            let before = tables.len();
            for v in self.views.values() {
                let bt = v.definition().base_table_names();
                if bt.iter().any(|t| tables.contains(t)) {
                    for t in bt {
                        if !tables.contains(&t) {
                            tables.push(t);
                        }
                    }
                }
            }
            if tables.len() == before {
                break;
            }
        }
        self.views
            .values()
            .filter(|v| v.definition().base_tables.iter().any(|t| tables.contains(&t.name)))
            .map(|v| v.definition().name.clone())
            .collect()
    }

    /// Runs the propagation scripts of the view's group in one transaction,
    /// then applies the consumed deltas to the base tables.
    pub fn refresh_view(&mut self, name: &str) -> Result<RefreshReport> {
        self.view(name)?;
        let start = Instant::now();
        let group = self.refresh_group(name);
        let mut tables: Vec<String> = Vec::new();
        for v in &group {
            for t in self.views[v].definition().base_table_names() {
                if !tables.contains(&t) {
                    tables.push(t);
                }
            }
        }
        let mut report = RefreshReport {
            views: group.clone(),
            ..RefreshReport::default()
        };
        // Net change per base table, captured before the scripts drain it.
        let mut pending: Vec<(String, Vec<(Tuple, u64)>, Vec<(Tuple, u64)>)> = Vec::new();
        for t in &tables {
            let d = &self.delta_map[t];
            let dt = self.engine.table(d).ok_or_else(|| Error::MissingDelta(t.clone()))?;
            let mut net: IndexMap<Tuple, i64> = IndexMap::new();
            for (row, c) in dt.rows() {
                report.rows_propagated += c as usize;
                let (flag, tuple) = row.split_last().expect("delta rows carry a flag");
                let w = if *flag == Value::Bool(true) { c as i64 } else { -(c as i64) };
                *net.entry(tuple.to_vec()).or_insert(0) += w;
            }
            let base = self.engine.table(t).ok_or_else(|| Error::UnknownTable(t.clone()))?;
            let mut ins = Vec::new();
            let mut del = Vec::new();
            for (tuple, w) in net {
                if w > 0 {
                    ins.push((tuple, w as u64));
                } else if w < 0 {
                    if base.count(&tuple) < w.unsigned_abs() {
                        return Err(Error::NegativeState(format!(
                            "delete of a row absent from {t}: {tuple:?}"
                        )));
                    }
                    del.push((tuple, w.unsigned_abs()));
                }
            }
            check_unique(base, &ins, &del)?;
            pending.push((t.clone(), ins, del));
        }
        if report.rows_propagated == 0 {
            report.total_micros = start.elapsed().as_micros();
            return Ok(report);
        }
        self.engine.begin()?;
        for step in 1..=4u8 {
            for v in &group {
                let reg = &self.views[v];
                for (s, sql, stmt) in reg.propagation.iter().filter(|p| p.0 == step) {
                    let t0 = Instant::now();
                    let res = self.engine.execute(stmt);
                    let micros = t0.elapsed().as_micros();
                    match res {
                        Ok(r) => {
                            report.step_micros[step as usize - 1] += micros;
                            report.statements.push(StatementReport {
                                view: v.clone(),
                                step: *s,
                                sql: sql.clone(),
                                rows: r.rows,
                                micros,
                            });
                        }
                        Err(e) => {
                            self.engine.rollback()?;
                            return Err(e);
                        }
                    }
                }
            }
        }
        self.engine.commit()?;
        let t0 = Instant::now();
        for (t, ins, del) in pending {
            self.engine.remove_rows(&t, &del)?;
            self.engine.insert_rows(&t, &ins)?;
        }
        report.integrate_micros = t0.elapsed().as_micros();
        report.total_micros = start.elapsed().as_micros();
        Ok(report)
    }

    /// Replaces a view's propagation statements, e.g. with a hand-edited
    /// script. The statements must parse.
    pub fn override_propagation(&mut self, name: &str, steps: Vec<(u8, String)>) -> Result<()> {
        let parsed = steps
            .iter()
            .map(|(step, sql)| Ok((*step, sql.clone(), parse_statement(sql)?)))
            .collect::<Result<Vec<_>>>()?;
        let reg = self.views.get_mut(name).ok_or_else(|| Error::UnknownView(name.to_string()))?;
        reg.propagation_sql = steps;
        reg.propagation = parsed;
        Ok(())
    }

    /// Visible view contents; with `lazy`, refreshes first.
    pub fn query_view(&mut self, name: &str, lazy: bool) -> Result<QueryResult> {
        if lazy {
            self.refresh_view(name)?;
        }
        self.read_view(name)
    }

    /// Visible view contents without refreshing.
    pub fn read_view(&self, name: &str) -> Result<QueryResult> {
        let def = self.view(name)?.definition();
        let t = self.engine.table(name).ok_or_else(|| Error::UnknownTable(name.to_string()))?;
        let visible = def.visible;
        let mut rows = Vec::new();
        for (row, c) in t.rows() {
            let copies = if def.counted {
                match &row[visible] {
                    Value::Int(n) if *n >= 0 => *n as u64 * c,
                    other => {
                        return Err(Error::NegativeState(format!("view {name} holds row count {other}")))
                    }
                }
            } else {
                c
            };
            rows.push((row[..visible].to_vec(), copies));
        }
        Ok(QueryResult {
            columns: def.visible_columns().to_vec(),
            rows,
        })
    }

    /// Recomputes a view from scratch from the current base tables.
    pub fn recompute_view(&mut self, name: &str) -> Result<usize> {
        let pop = self.view(name)?.population.clone();
        self.engine.begin()?;
        let res = self.engine.clear_table(name).and_then(|_| self.engine.execute(&pop));
        match res {
            Ok(r) => {
                self.engine.commit()?;
                Ok(r.rows)
            }
            Err(e) => {
                self.engine.rollback()?;
                Err(e)
            }
        }
    }

    /// Runs the view's source query over the base tables with the engine.
    pub fn evaluate_source(&self, name: &str) -> Result<QueryResult> {
        let (_, q) = strip_materialized(&self.view(name)?.definition().source_sql)?;
        self.engine.query(&q)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        persist::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        persist::load(dir)
    }
}

/// Fails if applying the net change would break a unique index of `base`.
fn check_unique(base: &crate::engine::Table, ins: &[(Tuple, u64)], del: &[(Tuple, u64)]) -> Result<()> {
    for idx in base.indexes() {
        let freed: Vec<Tuple> = del
            .iter()
            .filter(|(t, c)| base.count(t) == *c)
            .map(|(t, _)| idx.key(t))
            .collect();
        let mut added: Vec<Tuple> = Vec::new();
        for (t, c) in ins {
            let key = idx.key(t);
            let taken = idx.get(&key).is_some() && !freed.contains(&key);
            if *c > 1 || taken || added.contains(&key) {
                return Err(Error::UniqueViolation { index: idx.name.clone() });
            }
            added.push(key);
        }
    }
    Ok(())
}

/// Writes `ddl.sql`, `propagate.sql` and `metadata.json` under `dir/<view>`.
pub fn write_bundle(dir: &Path, bundle: &ScriptBundle) -> Result<Vec<PathBuf>> {
    let vdir = dir.join(&bundle.view.name);
    std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
    let meta = serde_json::to_string_pretty(&bundle.metadata()?).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    for (file, text) in [
        ("ddl.sql", bundle.ddl_sql()),
        ("propagate.sql", bundle.propagate_sql()),
        ("metadata.json", meta + "\n"),
    ] {
        let p = vdir.join(file);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emit::{Emptiness, Materialize};

    const GROUPS: &str = "CREATE TABLE groups(group_index VARCHAR, group_value INTEGER);";
    const VIEW: &str = "CREATE MATERIALIZED VIEW query_groups AS SELECT group_index, SUM(group_value) AS total_value FROM groups GROUP BY group_index;";

    fn catalog(opts: CompileOptions) -> Catalog {
        let mut c = Catalog::new(CatalogConfig {
            compile: opts,
            ..CatalogConfig::default()
        });
        c.execute_schema(GROUPS).unwrap();
        c
    }

    fn rec(action: Action, g: &str, v: i64) -> ChangeRecord {
        ChangeRecord::new("groups", action, &[("group_index", Value::text(g)), ("group_value", Value::Int(v))])
    }

    fn pairs(r: &QueryResult) -> Vec<(String, i64)> {
        r.expanded_sorted()
            .into_iter()
            .map(|t| match (&t[0], &t[1]) {
                (Value::Text(s), Value::Int(i)) => (s.to_string(), *i),
                other => panic!("{other:?}"),
            })
            .collect()
    }

    #[test]
    fn worked_example() {
        for emptiness in [Emptiness::Zero, Emptiness::Sound] {
            let mut c = catalog(CompileOptions {
                emptiness,
                ..CompileOptions::default()
            });
            c.execute_schema("INSERT INTO groups VALUES ('apple', 3), ('apple', 2), ('banana', 2);").unwrap();
            c.register_view(VIEW).unwrap();
            assert_eq!(pairs(&c.read_view("query_groups").unwrap()), vec![("apple".into(), 5), ("banana".into(), 2)]);
            c.apply_base_changes(&[rec(Action::Delete, "apple", 3), rec(Action::Insert, "banana", 1)]).unwrap();
            // Base tables wait for the refresh.
            assert_eq!(c.engine().table("groups").unwrap().len(), 3);
            assert_eq!(c.engine().table("delta_groups").unwrap().len(), 2);
            let r = c.refresh_view("query_groups").unwrap();
            assert_eq!(r.rows_propagated, 2);
            assert_eq!(pairs(&c.read_view("query_groups").unwrap()), vec![("apple".into(), 2), ("banana".into(), 3)]);
            assert!(c.engine().table("delta_groups").unwrap().is_empty());
            assert!(c.engine().table("delta_query_groups").unwrap().is_empty());
            assert_eq!(c.engine().table("groups").unwrap().len(), 3);
            assert!(c.refresh_view("query_groups").unwrap().is_noop());
        }
    }

    #[test]
    fn registration() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        assert!(c.read_view("query_groups").unwrap().rows.is_empty());
        assert!(c.engine().has_table("delta_groups"));
        assert!(matches!(c.register_view(VIEW), Err(Error::NameCollision(_))));
        assert!(matches!(
            c.register_view("CREATE MATERIALIZED VIEW a AS SELECT AVG(group_value) FROM groups GROUP BY group_index"),
            Err(Error::Unsupported { .. })
        ));
        assert!(matches!(c.query_view("nope", true), Err(Error::UnknownView(_))));
    }

    #[test]
    fn groups_disappear_and_return() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 5), rec(Action::Insert, "a", -5)]).unwrap();
        // Sum zero but the group has rows, so it stays in sound mode.
        assert_eq!(pairs(&c.query_view("query_groups", true).unwrap()), vec![("a".into(), 0)]);
        c.apply_base_changes(&[rec(Action::Delete, "a", 5), rec(Action::Delete, "a", -5)]).unwrap();
        assert!(c.query_view("query_groups", true).unwrap().rows.is_empty());
        c.apply_base_changes(&[rec(Action::Insert, "a", 7)]).unwrap();
        assert_eq!(pairs(&c.query_view("query_groups", true).unwrap()), vec![("a".into(), 7)]);
    }

    #[test]
    fn negative_state_is_atomic() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 1), rec(Action::Delete, "b", 1)]).unwrap();
        let before = c.engine().dump();
        assert!(matches!(c.refresh_view("query_groups"), Err(Error::NegativeState(_))));
        assert_eq!(c.engine().dump(), before);
    }

    #[test]
    fn fail_points_roll_back() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 1), rec(Action::Insert, "b", 2)]).unwrap();
        let before = c.engine().dump();
        for statement in 0..5 {
            let mut d = c.clone();
            d.set_fail_point(Some(FailPoint { statement, after_rows: 0 }));
            assert!(matches!(d.refresh_view("query_groups"), Err(Error::Injected { .. })));
            assert_eq!(d.engine().dump(), before);
        }
    }

    #[test]
    fn counted_views_keep_duplicates() {
        let mut c = catalog(CompileOptions::default());
        c.register_view("CREATE MATERIALIZED VIEW big AS SELECT group_index FROM groups WHERE group_value > 1")
            .unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 2), rec(Action::Insert, "a", 3), rec(Action::Insert, "b", 1)])
            .unwrap();
        let v = c.query_view("big", true).unwrap();
        assert_eq!(v.expanded_sorted(), vec![vec![Value::text("a")], vec![Value::text("a")]]);
        c.apply_base_changes(&[rec(Action::Delete, "a", 2)]).unwrap();
        assert_eq!(c.query_view("big", true).unwrap().expanded_sorted(), vec![vec![Value::text("a")]]);
        c.apply_base_changes(&[rec(Action::Delete, "a", 3)]).unwrap();
        assert!(c.query_view("big", true).unwrap().rows.is_empty());
        assert!(c.engine().table("big").unwrap().is_empty());
    }

    #[test]
    fn shared_tables_refresh_together() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        c.register_view("CREATE MATERIALIZED VIEW n AS SELECT group_index, COUNT(*) AS n FROM groups GROUP BY group_index")
            .unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 4)]).unwrap();
        let r = c.refresh_view("n").unwrap();
        assert_eq!(r.views, vec!["query_groups".to_string(), "n".to_string()]);
        assert_eq!(pairs(&c.read_view("query_groups").unwrap()), vec![("a".into(), 4)]);
        assert_eq!(pairs(&c.read_view("n").unwrap()), vec![("a".into(), 1)]);
    }

    #[test]
    fn eager_policy_refreshes_on_apply() {
        let mut c = Catalog::new(CatalogConfig {
            refresh: RefreshPolicy::Eager,
            ..CatalogConfig::default()
        });
        c.execute_schema(GROUPS).unwrap();
        c.register_view(VIEW).unwrap();
        let r = c.apply_base_changes(&[rec(Action::Insert, "a", 4)]).unwrap();
        assert_eq!(r.refreshes.len(), 1);
        assert_eq!(pairs(&c.read_view("query_groups").unwrap()), vec![("a".into(), 4)]);
    }

    #[test]
    fn changelogs() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        let jsonl = r#"{"table": "groups", "action": "insert", "values": {"group_index": "a", "group_value": 1}}

{"table": "groups", "action": "insert", "values": {"group_index": "b", "group_value": 2}}
{"table": "groups", "action": "delete", "values": {"group_index": "a"}}
{"table": "groups", "action": "insert", "values": {"group_index": "c", "group_value": 3}}"#;
        let err = c.ingest_changelog(jsonl, ChangelogFormat::JsonLines).unwrap_err();
        match err {
            Error::Changelog { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("group_value"), "{message}");
            }
            other => panic!("{other}"),
        }
        assert_eq!(c.engine().table("delta_groups").unwrap().len(), 2);
        let csv = "__table,__action,group_index,group_value\ngroups,delete,a,1\ngroups,insert,,4\n";
        let r = c.ingest_changelog(csv, ChangelogFormat::Csv).unwrap();
        assert_eq!(r.records, 2);
        assert_eq!(r.tables["groups"], TableCounts { inserted: 1, deleted: 1 });
        let v = c.query_view("query_groups", true).unwrap();
        assert_eq!(v.expanded_sorted(), vec![vec![Value::Null, Value::Int(4)], vec![Value::text("b"), Value::Int(2)]]);
        let bad = "__table,__action,group_index,group_value\ngroups,insert,a,x\n";
        assert!(matches!(
            c.ingest_changelog(bad, ChangelogFormat::Csv),
            Err(Error::Changelog { line: 2, .. })
        ));
        assert!(matches!(
            c.ingest_changelog(r#"{"table": "nope", "action": "insert", "values": {}}"#, ChangelogFormat::JsonLines),
            Err(Error::Changelog { line: 1, .. })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Catalog::new(CatalogConfig {
            compile: CompileOptions {
                dialect: Dialect::Postgres,
                materialize: Materialize::None,
                ..CompileOptions::default()
            },
            refresh: RefreshPolicy::Lazy,
            out_dir: Some(dir.path().join("out")),
        });
        c.execute_schema(GROUPS).unwrap();
        c.execute_schema(VIEW).unwrap();
        assert!(dir.path().join("out/query_groups/propagate.sql").exists());
        c.apply_base_changes(&[rec(Action::Insert, "a", 4), rec(Action::Insert, "b", 1)]).unwrap();
        c.save(&dir.path().join("cat")).unwrap();
        let mut d = Catalog::load(&dir.path().join("cat")).unwrap();
        assert_eq!(d.engine().dump(), c.engine().dump());
        assert_eq!(d.config, c.config);
        let a = c.query_view("query_groups", true).unwrap();
        let b = d.query_view("query_groups", true).unwrap();
        assert_eq!(a, b);
        assert_eq!(d.engine().dump(), c.engine().dump());

        // Tampered scripts are rejected.
        let path = dir.path().join("cat/catalog.json");
        let text = std::fs::read_to_string(&path).unwrap().replace("DELETE FROM query_groups", "DELETE FROM groups");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Catalog::load(&dir.path().join("cat")), Err(Error::Format(_))));
    }

    #[test]
    fn recompute_matches_refresh() {
        let mut c = catalog(CompileOptions::default());
        c.register_view(VIEW).unwrap();
        c.apply_base_changes(&[rec(Action::Insert, "a", 4), rec(Action::Insert, "a", 1)]).unwrap();
        c.refresh_view("query_groups").unwrap();
        let before = c.engine().dump();
        c.recompute_view("query_groups").unwrap();
        assert_eq!(c.engine().dump(), before);
        assert_eq!(c.evaluate_source("query_groups").unwrap().expanded_sorted(), c.read_view("query_groups").unwrap().expanded_sorted());
    }
}
