//! Randomized differential testing of view maintenance.
//!
//! Each seed builds a small random database, registers the views in one
//! catalog per dialect, and replays random change batches. After every
//! batch the maintained views are compared with a full recomputation on a
//! shadow engine and with the Z-set evaluation of the incremental plan.

use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Action, Catalog, CatalogConfig, ChangeRecord, RefreshPolicy};
use crate::emit::{compile_view, render_statement, CompileOptions, Dialect, Emptiness, Materialize, ViewDefinition};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::ops::{combine_view, AggInput};
use crate::plan::{eval_plan, LogicalPlan, ScanSource};
use crate::schema::{Column, Schema};
use crate::sql::ast::Statement;
use crate::sql::parser::{parse_statements, strip_materialized};
use crate::value::{DataType, Decimal, Value};
use crate::zset::{Multiplicity, Tuple, ZSet};

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seeds: Range<u64>,
    pub max_base_rows: usize,
    pub max_batches: usize,
    pub max_batch: usize,
    pub emptiness: Emptiness,
    pub mult_col: String,
    pub dialects: Vec<Dialect>,
    /// Fixed materialization; `None` alternates by seed parity.
    pub materialize: Option<Materialize>,
    /// Hand-supplied propagation steps per view, replacing the compiled ones.
    pub overrides: Vec<(String, Vec<(u8, String)>)>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seeds: 0..100,
            max_base_rows: 50,
            max_batches: 10,
            max_batch: 10,
            emptiness: Emptiness::Sound,
            mult_col: crate::emit::DEFAULT_MULT_COL.to_string(),
            dialects: Dialect::ALL.to_vec(),
            materialize: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub seed: u64,
    /// 0 for the initial load, then 1-based batch number.
    pub batch: usize,
    pub view: String,
    pub dialect: Dialect,
    pub check: String,
    pub expected: Vec<Tuple>,
    pub actual: Vec<Tuple>,
    pub records: Vec<ChangeRecord>,
}

fn show(t: &Tuple) -> String {
    let parts: Vec<String> = t.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

/// Multiset difference `a - b`.
fn minus(a: &[Tuple], b: &[Tuple]) -> Vec<Tuple> {
    let mut rest = b.to_vec();
    let mut out = Vec::new();
    for t in a {
        match rest.iter().position(|x| x == t) {
            Some(i) => {
                rest.swap_remove(i);
            }
            None => out.push(t.clone()),
        }
    }
    out
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed {} batch {} view {} dialect {}: {}",
            self.seed, self.batch, self.view, self.dialect, self.check
        )?;
        for r in &self.records {
            let vals: Vec<String> = r.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "  change {} {:?} {}", r.table, r.action, vals.join(" "))?;
        }
        for t in minus(&self.expected, &self.actual) {
            writeln!(f, "  missing {}", show(&t))?;
        }
        for t in minus(&self.actual, &self.expected) {
            writeln!(f, "  unexpected {}", show(&t))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub workloads: usize,
    pub batches: usize,
    pub checks: usize,
    pub failure: Option<Counterexample>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Prepared inputs shared by all seeds.
struct Setup {
    tables: Vec<Schema>,
    table_sql: String,
    views: Vec<(String, String)>,
    /// `(table, column)` pairs that feed a SUM; never NULL.
    sum_inputs: Vec<(String, String)>,
}

fn setup(schema_sql: &str, view_sqls: &[String], cfg: &VerifyConfig) -> Result<Setup> {
    let mut tables = Vec::new();
    let mut table_sql = String::new();
    for s in parse_statements(schema_sql)? {
        if let Statement::CreateTable { name, columns, .. } = &s {
            tables.push(Schema::new(
                name.clone(),
                columns.iter().map(|c| Column::new(c.name.clone(), c.ty)).collect(),
            )?);
            table_sql.push_str(&render_statement(&s, Dialect::Generic));
            table_sql.push('\n');
        }
    }
    let mut views = Vec::new();
    let mut sum_inputs = Vec::new();
    for text in view_sqls {
        let (name, q) = strip_materialized(text)?;
        let opts = CompileOptions {
            mult_col: cfg.mult_col.clone(),
            emptiness: cfg.emptiness,
            ..CompileOptions::default()
        };
        let def = compile_view(&name, &q, text, &tables, &opts)?;
        collect_sum_inputs(&def.plan, &mut sum_inputs)?;
        views.push((name, text.clone()));
    }
    Ok(Setup {
        tables,
        table_sql,
        views,
        sum_inputs,
    })
}

fn collect_sum_inputs(p: &LogicalPlan, out: &mut Vec<(String, String)>) -> Result<()> {
    if let LogicalPlan::Aggregate { input, aggs, .. } = p {
        let schema = input.schema()?;
        let mut aliases: Vec<(String, String)> = Vec::new();
        input.visit_scans(&mut |table, alias, _| {
            aliases.push((alias.unwrap_or(table).to_string(), table.to_string()));
        });
        for a in aggs {
            if let AggInput::Column(i) = a.input {
                let c = &schema.columns[i];
                let visible = c.table.clone().unwrap_or_default();
                if let Some((_, t)) = aliases.iter().find(|(v, _)| *v == visible) {
                    out.push((t.clone(), c.name.clone()));
                }
            }
        }
    }
    for c in p.children() {
        collect_sum_inputs(c, out)?;
    }
    Ok(())
}

/// Runs every seed and reports the failure with the lowest seed, if any.
pub fn verify(schema_sql: &str, view_sqls: &[String], cfg: &VerifyConfig) -> Result<VerifyReport> {
    let setup = setup(schema_sql, view_sqls, cfg)?;
    let seeds: Vec<u64> = cfg.seeds.clone().collect();
    let run = |seed: u64| Workload::new(&setup, cfg, seed).run();
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<VerifyReport>> = {
        use rayon::prelude::*;
        seeds.into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<VerifyReport>> = seeds.into_iter().map(run).collect();
    let mut report = VerifyReport::default();
    for o in outcomes {
        let o = o?;
        report.workloads += o.workloads;
        report.batches += o.batches;
        report.checks += o.checks;
        if report.failure.is_none() {
            report.failure = o.failure;
        }
    }
    Ok(report)
}

struct Workload<'a> {
    setup: &'a Setup,
    cfg: &'a VerifyConfig,
    seed: u64,
    rng: ChaCha8Rng,
    shadow: Engine,
    catalogs: Vec<Catalog>,
    /// Z-set state of each view per the incremental plan.
    core: Vec<(ViewDefinition, ZSet)>,
    report: VerifyReport,
}

impl<'a> Workload<'a> {
    fn new(setup: &'a Setup, cfg: &'a VerifyConfig, seed: u64) -> Self {
        Self {
            setup,
            cfg,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            shadow: Engine::with_options(crate::engine::ExecOptions::sequential()),
            catalogs: Vec::new(),
            core: Vec::new(),
            report: VerifyReport {
                workloads: 1,
                ..VerifyReport::default()
            },
        }
    }

    fn value(&mut self, ty: DataType, nullable: bool) -> Value {
        let zero = self.cfg.emptiness == Emptiness::Zero;
        if nullable && !zero && self.rng.gen_bool(0.1) {
            return Value::Null;
        }
        let (lo, hi) = if zero { (1, 5) } else { (-3, 5) };
        match ty {
            DataType::Int => Value::Int(self.rng.gen_range(lo..=hi)),
            DataType::Decimal => {
                let halves: i128 = self.rng.gen_range(lo as i128 * 2..=hi as i128 * 2);
                Value::Decimal(Decimal::from_scaled(halves * 500_000_000))
            }
            DataType::Text => Value::text(["a", "b", "c", "d", "e"].choose(&mut self.rng).expect("non-empty")),
            DataType::Bool => Value::Bool(self.rng.gen_bool(0.5)),
        }
    }

    fn random_row(&mut self, schema: &Schema) -> Tuple {
        let mut row = Vec::with_capacity(schema.len());
        for c in &schema.columns {
            let nullable = !self
                .setup
                .sum_inputs
                .iter()
                .any(|(t, col)| *t == schema.name && *col == c.name);
            row.push(self.value(c.ty, nullable));
        }
        row
    }

    fn existing_row(&mut self, table: &str) -> Option<Tuple> {
        let rows: Vec<Tuple> = self.shadow.table(table)?.rows().map(|(t, _)| t.clone()).collect();
        rows.choose(&mut self.rng).cloned()
    }

    /// Applies a record to the shadow engine and keeps it.
    fn push(&mut self, out: &mut Vec<ChangeRecord>, schema: &Schema, action: Action, t: Tuple) -> Result<()> {
        match action {
            Action::Insert => self.shadow.insert_rows(&schema.name, &[(t.clone(), 1)])?,
            Action::Delete => self.shadow.remove_rows(&schema.name, &[(t.clone(), 1)])?,
        }
        out.push(ChangeRecord::from_tuple(schema, action, &t));
        Ok(())
    }

    fn batch(&mut self) -> Result<Vec<ChangeRecord>> {
        let n = self.rng.gen_range(1..=self.cfg.max_batch.max(1));
        let mut out = Vec::new();
        let tables = self.setup.tables.clone();
        while out.len() < n {
            let schema = tables.choose(&mut self.rng).expect("at least one table");
            let op = self.rng.gen_range(0..100);
            if op < 40 {
                let t = self.random_row(schema);
                self.push(&mut out, schema, Action::Insert, t)?;
            } else if op < 55 {
                if let Some(t) = self.existing_row(&schema.name) {
                    self.push(&mut out, schema, Action::Insert, t)?;
                }
            } else if op < 80 {
                if let Some(t) = self.existing_row(&schema.name) {
                    self.push(&mut out, schema, Action::Delete, t)?;
                }
            } else if out.len() + 2 <= n {
                if let Some(old) = self.existing_row(&schema.name) {
                    self.push(&mut out, schema, Action::Delete, old)?;
                    let t = self.random_row(schema);
                    self.push(&mut out, schema, Action::Insert, t)?;
                }
            }
        }
        Ok(out)
    }

    fn base_zsets(&self) -> Vec<ZSet> {
        self.setup
            .tables
            .iter()
            .map(|s| {
                let rows = self
                    .shadow
                    .table(&s.name)
                    .map(|t| t.rows().map(|(r, c)| (r.clone(), c)).collect::<Vec<_>>())
                    .unwrap_or_default();
                let tuples = rows
                    .into_iter()
                    .flat_map(|(r, c)| std::iter::repeat_n(r, c as usize))
                    .collect();
                ZSet::from_table(s.clone(), tuples).expect("shadow rows fit their schema")
            })
            .collect()
    }

    fn fail(&mut self, batch: usize, view: &str, dialect: Dialect, check: String, expected: Vec<Tuple>, actual: Vec<Tuple>, records: &[ChangeRecord]) {
        if self.report.failure.is_none() {
            self.report.failure = Some(Counterexample {
                seed: self.seed,
                batch,
                view: view.to_string(),
                dialect,
                check,
                expected,
                actual,
                records: records.to_vec(),
            });
        }
    }

    fn run(mut self) -> Result<VerifyReport> {
        let materialize = self.cfg.materialize.unwrap_or(if self.seed % 2 == 0 {
            Materialize::Eager
        } else {
            Materialize::None
        });
        for s in &self.setup.tables {
            self.shadow.create_table(s.clone(), false)?;
        }
        let mut initial = Vec::new();
        for schema in self.setup.tables.clone() {
            let n = self.rng.gen_range(0..=self.cfg.max_base_rows);
            for _ in 0..n {
                let t = self.random_row(&schema);
                self.push(&mut initial, &schema, Action::Insert, t)?;
            }
        }
        for &dialect in &self.cfg.dialects {
            let mut c = Catalog::new(CatalogConfig {
                compile: CompileOptions {
                    dialect,
                    mult_col: self.cfg.mult_col.clone(),
                    materialize,
                    emptiness: self.cfg.emptiness,
                },
                refresh: RefreshPolicy::Lazy,
                out_dir: None,
            });
            c.set_exec_options(crate::engine::ExecOptions::sequential());
            c.execute_schema(&self.setup.table_sql)?;
            c.apply_base_changes(&initial)?;
            for (_, text) in &self.setup.views {
                c.register_view(text)?;
            }
            for (view, steps) in &self.cfg.overrides {
                c.override_propagation(view, steps.clone())?;
            }
            self.catalogs.push(c);
        }
        let base = self.base_zsets();
        for (name, _) in &self.setup.views {
            let def = self.catalogs[0].view(name)?.definition().clone();
            let v = eval_plan(&def.plan, &|t, _| lookup(&self.setup.tables, &base, t))?;
            self.core.push((def, v));
        }
        self.check(0, &[])?;
        let batches = self.rng.gen_range(0..=self.cfg.max_batches);
        for b in 1..=batches {
            if self.report.failure.is_some() {
                break;
            }
            let before = self.base_zsets();
            let records = self.batch()?;
            let deltas: Vec<ZSet> = self
                .setup
                .tables
                .iter()
                .map(|s| {
                    let rows = records
                        .iter()
                        .filter(|r| r.table == s.name)
                        .map(|r| (r.values.values().cloned().collect(), Multiplicity(r.action == Action::Insert)))
                        .collect();
                    ZSet::from_rows(s.clone(), rows)
                })
                .collect::<Result<_>>()?;
            let tables = &self.setup.tables;
            for (def, v) in &mut self.core {
                let dv = eval_plan(&def.incremental.plan, &|t, src| match src {
                    ScanSource::Base => lookup(tables, &before, t),
                    ScanSource::Delta { .. } => lookup(tables, &deltas, t),
                })?;
                *v = combine_view(v, &dv, &def.incremental.combine)?;
            }
            let mut errors = Vec::new();
            for (i, c) in self.catalogs.iter_mut().enumerate() {
                let res = c.apply_base_changes(&records).and_then(|_| {
                    for (name, _) in &self.setup.views {
                        c.query_view(name, true)?;
                    }
                    Ok(())
                });
                if let Err(e) = res {
                    errors.push((i, e));
                }
            }
            self.report.batches += 1;
            if let Some((i, e)) = errors.into_iter().next() {
                let d = self.cfg.dialects[i];
                let view = self.setup.views[0].0.clone();
                self.fail(b, &view, d, format!("refresh failed: {e}"), Vec::new(), Vec::new(), &records);
                break;
            }
            self.check(b, &records)?;
        }
        Ok(self.report)
    }

    fn check(&mut self, batch: usize, records: &[ChangeRecord]) -> Result<()> {
        let zero = self.cfg.emptiness == Emptiness::Zero;
        let mut failures = Vec::new();
        for (vi, (name, text)) in self.setup.views.iter().enumerate() {
            let (_, q) = strip_materialized(text)?;
            let expected = self.shadow.query(&q)?.expanded_sorted();
            let (def, core) = &self.core[vi];
            let mut core_rows: Vec<Tuple> = core.tuples().cloned().collect();
            core_rows.sort();
            let mut first_state: Option<Vec<(Tuple, u64)>> = None;
            for (ci, c) in self.catalogs.iter().enumerate() {
                let d = self.cfg.dialects[ci];
                let mut fail = |check: &str, exp: Vec<Tuple>, act: Vec<Tuple>| {
                    failures.push((name.clone(), d, check.to_string(), exp, act));
                };
                let actual = c.read_view(name)?.expanded_sorted();
                if actual != expected {
                    fail("view differs from full recomputation", expected.clone(), actual.clone());
                }
                let stored = c.engine().table(name).ok_or_else(|| Error::UnknownTable(name.clone()))?;
                let state = stored.sorted_rows();
                let engine_rows: Vec<Tuple> = if def.counted {
                    actual.clone()
                } else {
                    state
                        .iter()
                        .flat_map(|(t, n)| std::iter::repeat_n(t.clone(), *n as usize))
                        .collect()
                };
                if engine_rows != core_rows || !core.rows().iter().all(|(_, m)| m.is_insert()) {
                    fail("view differs from Z-set evaluation of the incremental plan", core_rows.clone(), engine_rows);
                }
                for d_name in c.delta_map().values() {
                    if c.engine().table(d_name).is_some_and(|t| !t.is_empty()) {
                        fail(&format!("{d_name} not empty after refresh"), Vec::new(), Vec::new());
                    }
                }
                if let Some(t) = c.engine().table(&def.delta_view()) {
                    if !t.is_empty() {
                        fail("view delta not empty after refresh", Vec::new(), Vec::new());
                    }
                }
                if stored.schema.columns.iter().any(|col| col.name == self.cfg.mult_col) {
                    fail("multiplicity column stored in the view", Vec::new(), Vec::new());
                }
                if zero && !def.counted {
                    let zero: Vec<Tuple> = state
                        .iter()
                        .filter(|(t, _)| def.merged.iter().any(|&(i, _)| t[i].is_zero()))
                        .map(|(t, _)| t.clone())
                        .collect();
                    if !zero.is_empty() {
                        fail("row with a zero aggregate left in the view", Vec::new(), zero);
                    }
                }
                match &first_state {
                    None => first_state = Some(state),
                    Some(s) if *s != state => {
                        let flat = |x: &[(Tuple, u64)]| x.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
                        fail("stored view differs between dialects", flat(s), flat(&state));
                    }
                    Some(_) => {}
                }
                self.report.checks += 1;
            }
        }
        if let Some((view, d, check, exp, act)) = failures.into_iter().next() {
            self.fail(batch, &view, d, check, exp, act, records);
        }
        Ok(())
    }
}

fn lookup(tables: &[Schema], z: &[ZSet], table: &str) -> Result<ZSet> {
    tables
        .iter()
        .position(|s| s.name == table)
        .map(|i| z[i].clone())
        .ok_or_else(|| Error::UnknownTable(table.to_string()))
}

/// Schema used by the built-in corpus.
pub const CORPUS_SCHEMA: &str = "\
CREATE TABLE groups (group_index TEXT, group_value INT);
CREATE TABLE sales (item TEXT, region TEXT, amount INT, price DECIMAL, promo BOOLEAN);
CREATE TABLE items (item TEXT, category TEXT, weight INT);
";

/// Built-in views, grouped by query class.
pub fn corpus() -> Vec<(crate::plan::QueryClass, &'static str)> {
    use crate::plan::QueryClass::*;
    vec![
        (ProjectionFilter, "CREATE MATERIALIZED VIEW pf_sales AS SELECT item, amount * 2 AS doubled FROM sales WHERE amount > 0 OR promo"),
        (ProjectionFilter, "CREATE MATERIALIZED VIEW pf_groups AS SELECT group_index FROM groups WHERE group_value IS NOT NULL"),
        (GroupAggregate, "CREATE MATERIALIZED VIEW query_groups AS SELECT group_index, SUM(group_value) AS total_value FROM groups GROUP BY group_index"),
        (GroupAggregate, "CREATE MATERIALIZED VIEW ga_sales AS SELECT region, COUNT(*) AS n, SUM(price) AS revenue FROM sales WHERE amount <> 2 GROUP BY region"),
        (GroupAggregate, "CREATE MATERIALIZED VIEW ga_count AS SELECT item, COUNT(region) AS regions FROM sales GROUP BY item"),
        (Join, "CREATE MATERIALIZED VIEW j_sales AS SELECT s.item, s.amount, i.category FROM sales AS s JOIN items AS i ON s.item = i.item"),
        (Join, "CREATE MATERIALIZED VIEW j_weights AS SELECT sales.region, items.weight FROM sales JOIN items ON sales.item = items.item WHERE items.weight > 1"),
        (JoinAggregate, "CREATE MATERIALIZED VIEW ja_category AS SELECT i.category, SUM(s.amount) AS total, COUNT(*) AS n FROM sales AS s JOIN items AS i ON s.item = i.item GROUP BY i.category"),
        (JoinAggregate, "CREATE MATERIALIZED VIEW ja_region AS SELECT s.region, i.category, SUM(i.weight) AS w FROM sales AS s JOIN items AS i ON s.item = i.item GROUP BY s.region, i.category"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(emptiness: Emptiness, seeds: Range<u64>) {
        for (class, view) in corpus() {
            let cfg = VerifyConfig {
                seeds: seeds.clone(),
                emptiness,
                ..VerifyConfig::default()
            };
            let report = verify(CORPUS_SCHEMA, &[view.to_string()], &cfg).unwrap();
            if let Some(f) = &report.failure {
                panic!("{class} {view}\n{f}");
            }
            assert_eq!(report.workloads, seeds.clone().count());
        }
    }

    #[test]
    fn corpus_sound() {
        run(Emptiness::Sound, 0..12);
    }

    #[test]
    fn corpus_zero() {
        run(Emptiness::Zero, 100..112);
    }

    #[test]
    fn broken_script_is_caught() {
        let view = corpus()[2].1.to_string();
        let cfg = VerifyConfig {
            seeds: 0..20,
            materialize: Some(Materialize::Eager),
            ..VerifyConfig::default()
        };
        let mut c = Catalog::new(CatalogConfig {
            compile: CompileOptions::default(),
            ..CatalogConfig::default()
        });
        c.execute_schema(CORPUS_SCHEMA).unwrap();
        c.register_view(&view).unwrap();
        let mut steps = c.view("query_groups").unwrap().bundle.propagation_statements();
        steps.retain(|(s, _)| *s != 3);
        let cfg = VerifyConfig {
            overrides: vec![("query_groups".into(), steps)],
            ..cfg
        };
        let report = verify(CORPUS_SCHEMA, &[view], &cfg).unwrap();
        let f = report.failure.expect("missing cleanup must be detected");
        assert!(f.to_string().starts_with(&format!("seed {}", f.seed)));
    }
}
