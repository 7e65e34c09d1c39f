use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deltasql::bench::{run_bench, BenchConfig};
use deltasql::catalog::{write_bundle, Catalog, CatalogConfig, ChangelogFormat, RefreshPolicy, RefreshReport};
use deltasql::emit::{compile_view, parse_definitions, parse_propagation_script, CompileOptions, Dialect, Emptiness, Materialize, ScriptBundle};
use deltasql::engine::QueryResult;
use deltasql::verify::{verify, VerifyConfig};
use deltasql::{Error, ErrorKind, Value};

#[derive(Parser, Debug)]
#[command(name = "deltasql", version, about = "Compile materialized views into incremental maintenance SQL")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by all subcommands. Compilation flags left unset fall back
/// to the catalog's stored settings, then to the defaults.
#[derive(Args, Debug, Clone)]
struct Global {
    /// SQL dialect of the emitted scripts [default: generic]
    #[arg(long, global = true)]
    dialect: Option<Dialect>,
    /// Multiplicity column name [default: _ivm_multiplicity]
    #[arg(long = "mult-col", global = true)]
    mult_col: Option<String>,
    /// Keep the view delta in a table (eager) or inline it (none) [default: eager]
    #[arg(long, global = true)]
    materialize: Option<Materialize>,
    /// Refresh on every change (eager) or on demand (lazy) [default: lazy]
    #[arg(long, global = true)]
    refresh: Option<RefreshPolicy>,
    /// Group removal rule [default: sound]
    #[arg(long, global = true)]
    emptiness: Option<Emptiness>,
    /// Directory for emitted scripts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Catalog directory [default: .deltasql]
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile view definitions into DDL and propagation scripts
    Compile {
        schema: PathBuf,
        /// Defaults to the views in the schema file
        views: Option<PathBuf>,
    },
    /// Create a catalog from a schema file and optional view file
    Init { schema: PathBuf, views: Option<PathBuf> },
    /// Register the materialized views of a file in the catalog
    Register { views: PathBuf },
    /// Ingest a changelog (.jsonl or .csv)
    Apply {
        changelog: PathBuf,
        #[arg(long = "changelog-format")]
        changelog_format: Option<ChangelogFormat>,
    },
    /// Run the propagation script of a view
    Refresh { view: String },
    /// Print a view; refreshes first under the lazy policy
    Query {
        view: String,
        /// Print the stored contents without refreshing
        #[arg(long)]
        stale: bool,
    },
    /// Compare incremental maintenance with full recomputation on random workloads
    Verify {
        schema: PathBuf,
        views: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long = "max-base-rows", default_value_t = 50)]
        max_base_rows: usize,
        #[arg(long = "max-batches", default_value_t = 10)]
        max_batches: usize,
        #[arg(long = "max-batch", default_value_t = 10)]
        max_batch: usize,
        /// Use `<DIR>/<view>/propagate.sql` instead of the compiled scripts
        #[arg(long)]
        scripts: Option<PathBuf>,
    },
    /// Time full recomputation against incremental refresh
    Bench {
        view: String,
        #[arg(long = "base-rows", default_value_t = 100_000)]
        base_rows: usize,
        #[arg(long = "delta-rows", default_value_t = 1_000)]
        delta_rows: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Disable the parallel execution paths
        #[arg(long)]
        sequential: bool,
    },
}

/// Failure carrying its exit code.
struct Fail {
    code: u8,
    reason: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Unsupported => 2,
            ErrorKind::Io => 3,
            _ => 1,
        };
        let pos = e.pos().map(|p| format!(" at={p}")).unwrap_or_default();
        let message = e.to_string().replace('\n', " ");
        Fail {
            code,
            reason: format!("error kind={}{pos}: {message}", e.kind().as_str()),
        }
    }
}

type CliResult<T = ()> = Result<T, Fail>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Fail {
        code: 3,
        reason: format!("error kind=io: cannot read {}: {e}", path.display()),
    })
}

impl Global {
    fn compile_options(&self, base: &CompileOptions) -> CompileOptions {
        CompileOptions {
            dialect: self.dialect.unwrap_or(base.dialect),
            mult_col: self.mult_col.clone().unwrap_or_else(|| base.mult_col.clone()),
            materialize: self.materialize.unwrap_or(base.materialize),
            emptiness: self.emptiness.unwrap_or(base.emptiness),
        }
    }

    fn catalog_dir(&self) -> PathBuf {
        self.catalog.clone().unwrap_or_else(|| PathBuf::from(".deltasql"))
    }

    fn load(&self) -> CliResult<Catalog> {
        let mut c = Catalog::load(&self.catalog_dir())?;
        if let Some(r) = self.refresh {
            c.config.refresh = r;
        }
        if self.out.is_some() {
            c.config.out_dir = self.out.clone();
        }
        Ok(c)
    }

    fn save(&self, c: &Catalog) -> CliResult {
        c.save(&self.catalog_dir())?;
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.reason);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Compile { schema, views } => compile(g, schema, views.as_deref()),
        Command::Init { schema, views } => {
            let mut c = Catalog::new(CatalogConfig {
                compile: g.compile_options(&CompileOptions::default()),
                refresh: g.refresh.unwrap_or_default(),
                out_dir: g.out.clone(),
            });
            let bundles = c.execute_schema(&read(schema)?)?;
            report_bundles(&bundles);
            if let Some(v) = views {
                register(&mut c, &read(v)?)?;
            }
            g.save(&c)?;
            println!("catalog {} initialized", g.catalog_dir().display());
            Ok(())
        }
        Command::Register { views } => {
            let mut c = g.load()?;
            register(&mut c, &read(views)?)?;
            g.save(&c)
        }
        Command::Apply {
            changelog,
            changelog_format,
        } => {
            let mut c = g.load()?;
            let format = changelog_format.unwrap_or_else(|| ChangelogFormat::from_path(changelog));
            let res = c.ingest_changelog(&read(changelog)?, format);
            // A failing record leaves the valid prefix applied.
            g.save(&c)?;
            let report = res?;
            if g.format == Format::Json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
                return Ok(());
            }
            println!("{} records ingested", report.records);
            for (t, n) in &report.tables {
                println!("{t}: {} inserted, {} deleted", n.inserted, n.deleted);
            }
            for r in &report.refreshes {
                print_refresh(r);
            }
            Ok(())
        }
        Command::Refresh { view } => {
            let mut c = g.load()?;
            let r = c.refresh_view(view)?;
            g.save(&c)?;
            if g.format == Format::Json {
                println!("{}", serde_json::to_string_pretty(&r).expect("serializable report"));
            } else {
                print_refresh(&r);
            }
            Ok(())
        }
        Command::Query { view, stale } => {
            let mut c = g.load()?;
            let lazy = !stale && c.config.refresh == RefreshPolicy::Lazy;
            let rows = c.query_view(view, lazy)?;
            if lazy {
                g.save(&c)?;
            }
            print_rows(&rows, g.format);
            Ok(())
        }
        Command::Verify {
            schema,
            views,
            seeds,
            max_base_rows,
            max_batches,
            max_batch,
            scripts,
        } => {
            let mut defs = parse_definitions(&read(schema)?)?;
            if let Some(v) = views {
                defs.views.extend(parse_definitions(&read(v)?)?.views);
            }
            let mut schema_sql = read(schema)?;
            if views.is_none() {
                // Views in the schema file are passed separately.
                schema_sql = String::new();
                for t in &defs.tables {
                    schema_sql.push_str(&table_sql(t));
                }
            }
            let mut overrides = Vec::new();
            if let Some(dir) = scripts {
                for (name, _, _) in &defs.views {
                    let path = dir.join(name).join("propagate.sql");
                    if path.exists() {
                        overrides.push((name.clone(), parse_propagation_script(&read(&path)?)?));
                    }
                }
            }
            let opts = g.compile_options(&CompileOptions::default());
            let cfg = VerifyConfig {
                seeds: g.seed..g.seed + seeds,
                max_base_rows: *max_base_rows,
                max_batches: *max_batches,
                max_batch: *max_batch,
                emptiness: opts.emptiness,
                mult_col: opts.mult_col,
                dialects: g.dialect.map(|d| vec![d]).unwrap_or_else(|| Dialect::ALL.to_vec()),
                materialize: g.materialize,
                overrides,
            };
            let texts: Vec<String> = defs.views.iter().map(|v| v.2.clone()).collect();
            let report = verify(&schema_sql, &texts, &cfg)?;
            println!(
                "{} workloads, {} batches, {} checks",
                report.workloads, report.batches, report.checks
            );
            match report.failure {
                None => {
                    println!("no mismatches");
                    Ok(())
                }
                Some(f) => {
                    print!("counterexample: {f}");
                    Err(Fail {
                        code: 1,
                        reason: format!("error kind=mismatch: seed {} batch {} view {}", f.seed, f.batch, f.view),
                    })
                }
            }
        }
        Command::Bench {
            view,
            base_rows,
            delta_rows,
            reps,
            sequential,
        } => {
            let c = g.load()?;
            let cfg = BenchConfig {
                base_rows: *base_rows,
                delta_rows: *delta_rows,
                reps: *reps,
                seed: g.seed,
                parallel: !sequential,
            };
            let report = run_bench(&c, view, &cfg)?;
            let json = serde_json::to_string_pretty(&report).expect("serializable report");
            if g.format != Format::Json {
                println!("{}", report.summary());
            }
            println!("{json}");
            Ok(())
        }
    }
}

fn table_sql(t: &deltasql::Schema) -> String {
    let cols: Vec<String> = t.columns.iter().map(|c| format!("{} {}", c.name, c.ty.name())).collect();
    format!("CREATE TABLE {} ({});\n", t.name, cols.join(", "))
}

fn compile(g: &Global, schema: &Path, views: Option<&Path>) -> CliResult {
    let mut defs = parse_definitions(&read(schema)?)?;
    if let Some(v) = views {
        defs.views.extend(parse_definitions(&read(v)?)?.views);
    }
    if defs.views.is_empty() {
        return Err(Fail {
            code: 1,
            reason: "error kind=parse: no materialized view definitions found".into(),
        });
    }
    let opts = g.compile_options(&CompileOptions::default());
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("deltasql-out"));
    for (name, query, text) in &defs.views {
        let def = compile_view(name, query, text, &defs.tables, &opts)?;
        let bundle = ScriptBundle::new(def)?;
        for p in write_bundle(&out, &bundle)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn register(c: &mut Catalog, sql: &str) -> CliResult {
    let defs = parse_definitions(sql)?;
    for (_, _, text) in &defs.views {
        let b = c.register_view(text)?;
        report_bundles(&[b]);
    }
    Ok(())
}

fn report_bundles(bundles: &[ScriptBundle]) {
    for b in bundles {
        println!("registered view {} ({})", b.view.name, b.view.class);
    }
}

fn print_refresh(r: &RefreshReport) {
    println!("{}: {} rows propagated", r.views.join(", "), r.rows_propagated);
    for (i, us) in r.step_micros.iter().enumerate() {
        println!("  step {} {:.3} ms", i + 1, *us as f64 / 1000.0);
    }
    println!("  total {:.3} ms", r.total_micros as f64 / 1000.0);
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Text(s) => s.to_string(),
        other => other.to_string(),
    }
}

fn print_rows(r: &QueryResult, format: Format) {
    let header: Vec<String> = r.columns.iter().map(|c| c.name.clone()).collect();
    let rows = r.expanded_sorted();
    match format {
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|t| {
                    header
                        .iter()
                        .cloned()
                        .zip(t.iter().map(Value::to_json))
                        .collect::<serde_json::Map<_, _>>()
                        .into()
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&items).expect("serializable rows"));
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(&header).ok();
            for t in &rows {
                w.write_record(t.iter().map(cell)).ok();
            }
            w.flush().ok();
        }
        Format::Table => {
            let cells: Vec<Vec<String>> = rows.iter().map(|t| t.iter().map(cell).collect()).collect();
            let mut widths: Vec<usize> = header.iter().map(String::len).collect();
            for row in &cells {
                for (w, c) in widths.iter_mut().zip(row) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |row: &[String]| {
                let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                parts.join("  ").trim_end().to_string()
            };
            println!("{}", line(&header));
            for row in &cells {
                println!("{}", line(row));
            }
            println!("({} rows)", rows.len());
        }
    }
}
