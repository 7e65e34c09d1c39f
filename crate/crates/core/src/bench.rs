//! Timing of full recomputation against incremental refresh on synthetic
//! data.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::{Action, Catalog, CatalogConfig, ChangeRecord, RefreshPolicy};
use crate::emit::{render_statement, Dialect};
use crate::engine::ExecOptions;
use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::sql::ast::{ColumnDef, Statement};
use crate::value::{DataType, Decimal, Value};
use crate::zset::Tuple;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    /// Rows generated per base table of the view.
    pub base_rows: usize,
    pub delta_rows: usize,
    pub reps: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            base_rows: 100_000,
            delta_rows: 1_000,
            reps: 3,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchRun {
    pub load_micros: u128,
    pub register_micros: u128,
    pub apply_micros: u128,
    /// Refresh of the delta batch, base integration included.
    pub incremental_micros: u128,
    pub step_micros: [u128; 4],
    pub integrate_micros: u128,
    pub recompute_micros: u128,
    pub view_rows: usize,
    /// Refreshed contents equal the recomputed contents.
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub view: String,
    pub config: BenchConfig,
    pub runs: Vec<BenchRun>,
    pub median_recompute_micros: u128,
    pub median_incremental_micros: u128,
    pub median_step_micros: [u128; 4],
    pub median_integrate_micros: u128,
}

impl BenchReport {
    /// Recompute time over incremental time, from the medians.
    pub fn speedup(&self) -> f64 {
        self.median_recompute_micros as f64 / self.median_incremental_micros.max(1) as f64
    }

    pub fn summary(&self) -> String {
        let ms = |us: u128| us as f64 / 1000.0;
        let mut out = format!(
            "view {}: {} base rows per table, {} delta rows, {} reps\n",
            self.view,
            self.config.base_rows,
            self.config.delta_rows,
            self.runs.len()
        );
        out.push_str(&format!("recompute    {:>10.3} ms\n", ms(self.median_recompute_micros)));
        out.push_str(&format!("incremental  {:>10.3} ms\n", ms(self.median_incremental_micros)));
        for (i, s) in self.median_step_micros.iter().enumerate() {
            out.push_str(&format!("  step {}     {:>10.3} ms\n", i + 1, ms(*s)));
        }
        out.push_str(&format!("  integrate  {:>10.3} ms\n", ms(self.median_integrate_micros)));
        out.push_str(&format!("speedup      {:>10.1}x\n", self.speedup()));
        out
    }
}

pub fn median(values: &mut [u128]) -> u128 {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2
    }
}

fn random_value(rng: &mut ChaCha8Rng, ty: DataType, domain: usize) -> Value {
    match ty {
        DataType::Int => Value::Int(rng.gen_range(1..=100)),
        DataType::Decimal => Value::Decimal(Decimal::from_scaled(rng.gen_range(1..=10_000i128) * 10_000_000)),
        DataType::Text => Value::text(format!("k{}", rng.gen_range(0..domain))),
        DataType::Bool => Value::Bool(rng.gen_bool(0.5)),
    }
}

fn random_rows(schema: &Schema, n: usize, domain: usize, seed: u64) -> Vec<Tuple> {
    let chunk = |c: usize| -> Vec<Tuple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let len = CHUNK.min(n - c * CHUNK);
        (0..len)
            .map(|_| schema.columns.iter().map(|col| random_value(&mut rng, col.ty, domain)).collect())
            .collect()
    };
    let chunks = n.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let parts: Vec<Vec<Tuple>> = {
        use rayon::prelude::*;
        (0..chunks).into_par_iter().map(chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Vec<Tuple>> = (0..chunks).map(chunk).collect();
    parts.concat()
}

/// Synthetic base data and a delta batch: three inserts for every delete
/// of an existing row.
struct Workload {
    tables: Vec<(Schema, Vec<(Tuple, u64)>)>,
    delta: Vec<ChangeRecord>,
}

fn workload(tables: &[Schema], cfg: &BenchConfig) -> Workload {
    let domain = (cfg.base_rows / 100).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut delta = Vec::new();
    let per_table = |i: usize| cfg.delta_rows / tables.len() + usize::from(i < cfg.delta_rows % tables.len());
    for (i, s) in tables.iter().enumerate() {
        let rows = random_rows(s, cfg.base_rows, domain, cfg.seed.wrapping_add(i as u64 + 1));
        let n = per_table(i);
        let deletes = (n / 4).min(rows.len());
        for j in sample(&mut rng, rows.len(), deletes) {
            delta.push(ChangeRecord::from_tuple(s, Action::Delete, &rows[j]));
        }
        for t in random_rows(s, n - deletes, domain, rng.gen()) {
            delta.push(ChangeRecord::from_tuple(s, Action::Insert, &t));
        }
        out.push((s.clone(), rows.into_iter().map(|t| (t, 1)).collect()));
    }
    Workload { tables: out, delta }
}

fn sorted(c: &Catalog, view: &str) -> Result<Vec<(Tuple, u64)>> {
    let mut rows = c.read_view(view)?.rows;
    rows.sort();
    Ok(rows)
}

fn run_once(source: &Catalog, view: &str, w: &Workload, cfg: &BenchConfig) -> Result<BenchRun> {
    let mut c = Catalog::new(CatalogConfig {
        compile: source.config.compile.clone(),
        refresh: RefreshPolicy::Lazy,
        out_dir: None,
    });
    c.set_exec_options(if cfg.parallel {
        ExecOptions::default()
    } else {
        ExecOptions::sequential()
    });
    let mut ddl = String::new();
    for (s, _) in &w.tables {
        let create = Statement::CreateTable {
            name: s.name.clone(),
            columns: s.columns.iter().map(|c| ColumnDef { name: c.name.clone(), ty: c.ty }).collect(),
            primary_key: None,
            if_not_exists: false,
        };
        ddl.push_str(&render_statement(&create, Dialect::Generic));
    }
    c.execute_schema(&ddl)?;
    let mut run = BenchRun::default();
    let t = Instant::now();
    for (s, rows) in &w.tables {
        c.bulk_load(&s.name, rows)?;
    }
    run.load_micros = t.elapsed().as_micros();
    let t = Instant::now();
    c.register_view(&source.view(view)?.definition().source_sql)?;
    run.register_micros = t.elapsed().as_micros();
    let t = Instant::now();
    c.apply_base_changes(&w.delta)?;
    run.apply_micros = t.elapsed().as_micros();
    let r = c.refresh_view(view)?;
    run.incremental_micros = r.total_micros;
    run.step_micros = r.step_micros;
    run.integrate_micros = r.integrate_micros;
    let refreshed = sorted(&c, view)?;
    let t = Instant::now();
    c.recompute_view(view)?;
    run.recompute_micros = t.elapsed().as_micros();
    let recomputed = sorted(&c, view)?;
    run.view_rows = recomputed.iter().map(|(_, n)| *n as usize).sum();
    run.consistent = refreshed == recomputed;
    Ok(run)
}

/// Times one view of `catalog` on fresh synthetic data. Each repetition
/// builds its own catalog holding only the view and its base tables.
pub fn run_bench(catalog: &Catalog, view: &str, cfg: &BenchConfig) -> Result<BenchReport> {
    let def = catalog.view(view)?.definition();
    if cfg.reps == 0 {
        return Err(Error::Execution("bench needs at least one repetition".into()));
    }
    let w = workload(&def.base_tables, cfg);
    let runs: Vec<BenchRun> = (0..cfg.reps).map(|_| run_once(catalog, view, &w, cfg)).collect::<Result<_>>()?;
    let med = |f: &dyn Fn(&BenchRun) -> u128| median(&mut runs.iter().map(f).collect::<Vec<_>>());
    let mut steps = [0; 4];
    for (i, s) in steps.iter_mut().enumerate() {
        *s = med(&|r| r.step_micros[i]);
    }
    Ok(BenchReport {
        view: view.to_string(),
        config: cfg.clone(),
        median_recompute_micros: med(&|r| r.recompute_micros),
        median_incremental_micros: med(&|r| r.incremental_micros),
        median_step_micros: steps,
        median_integrate_micros: med(&|r| r.integrate_micros),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        let mut c = Catalog::new(CatalogConfig::default());
        c.execute_schema(crate::verify::CORPUS_SCHEMA).unwrap();
        for (_, v) in crate::verify::corpus() {
            c.register_view(v).unwrap();
        }
        c
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut []), 0);
        assert_eq!(median(&mut [5, 1, 3]), 3);
        assert_eq!(median(&mut [4, 1, 3, 2]), 2);
    }

    #[test]
    fn small_runs_are_consistent() {
        let c = catalog();
        for view in ["query_groups", "ga_sales", "ja_category", "pf_sales"] {
            let cfg = BenchConfig {
                base_rows: 2_000,
                delta_rows: 100,
                reps: 2,
                ..BenchConfig::default()
            };
            let r = run_bench(&c, view, &cfg).unwrap();
            assert_eq!(r.runs.len(), 2);
            assert!(r.runs.iter().all(|x| x.consistent), "{view}");
            assert!(r.summary().contains("recompute"));
        }
    }

    #[test]
    fn empty_delta_is_a_noop() {
        let cfg = BenchConfig {
            base_rows: 1_000,
            delta_rows: 0,
            reps: 1,
            ..BenchConfig::default()
        };
        let r = run_bench(&catalog(), "query_groups", &cfg).unwrap();
        assert_eq!(r.median_step_micros, [0; 4]);
        assert!(r.runs[0].view_rows > 0);
    }
}
