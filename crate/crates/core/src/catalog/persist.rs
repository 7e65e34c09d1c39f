//! Catalog directory: `catalog.json` with schemas, views and scripts, plus
//! one row file per table under `tables/`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::emit::{compile_view, CompileOptions, ScriptBundle};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::schema::{Column, Schema};
use crate::sql::ast::Statement;
use crate::sql::parser::strip_materialized;
use crate::value::{DataType, Value};

use super::{Catalog, CatalogConfig, RegisteredView};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ColumnFile {
    name: String,
    #[serde(rename = "type")]
    ty: DataType,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    name: String,
    columns: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    name: String,
    file: String,
    columns: Vec<ColumnFile>,
    indexes: Vec<IndexFile>,
}

#[derive(Serialize, Deserialize)]
struct StepFile {
    step: u8,
    sql: String,
}

#[derive(Serialize, Deserialize)]
struct ViewFile {
    name: String,
    source_sql: String,
    options: CompileOptions,
    class: String,
    plan: String,
    ddl: Vec<String>,
    propagation: Vec<StepFile>,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    format: u32,
    config: CatalogConfig,
    delta_map: IndexMap<String, String>,
    tables: Vec<TableFile>,
    views: Vec<ViewFile>,
}

#[derive(Serialize, Deserialize)]
struct RowsFile {
    rows: Vec<RowEntry>,
}

#[derive(Serialize, Deserialize)]
struct RowEntry {
    values: Vec<serde_json::Value>,
    count: u64,
}

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(format_err)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(super) fn save(c: &Catalog, dir: &Path) -> Result<()> {
    let tdir = dir.join("tables");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut tables = Vec::new();
    for (i, t) in c.engine.tables().enumerate() {
        let file = format!("tables/{i:04}.json");
        let rows = RowsFile {
            rows: t
                .sorted_rows()
                .into_iter()
                .map(|(row, count)| RowEntry {
                    values: row.iter().map(Value::to_json).collect(),
                    count,
                })
                .collect(),
        };
        write_json(&dir.join(&file), &rows)?;
        tables.push(TableFile {
            name: t.schema.name.clone(),
            file,
            columns: t
                .schema
                .columns
                .iter()
                .map(|c| ColumnFile {
                    name: c.name.clone(),
                    ty: c.ty,
                })
                .collect(),
            indexes: t
                .indexes()
                .iter()
                .map(|idx| IndexFile {
                    name: idx.name.clone(),
                    columns: idx.columns.iter().map(|&p| t.schema.columns[p].name.clone()).collect(),
                })
                .collect(),
        });
    }
    let views = c
        .views
        .values()
        .map(|v| {
            let d = v.definition();
            Ok(ViewFile {
                name: d.name.clone(),
                source_sql: d.source_sql.clone(),
                options: d.options.clone(),
                class: d.class.as_str().to_string(),
                plan: d.plan.to_text()?,
                ddl: v.ddl_sql.clone(),
                propagation: v
                    .propagation_sql
                    .iter()
                    .map(|(step, sql)| StepFile {
                        step: *step,
                        sql: sql.clone(),
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    let file = CatalogFile {
        format: FORMAT_VERSION,
        config: c.config.clone(),
        delta_map: c.delta_map.clone(),
        tables,
        views,
    };
    write_json(&dir.join("catalog.json"), &file)
}

pub(super) fn load(dir: &Path) -> Result<Catalog> {
    let file: CatalogFile = read_json(&dir.join("catalog.json"))?;
    if file.format != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported catalog format {}", file.format)));
    }
    let mut engine = Engine::new();
    for t in &file.tables {
        let schema = Schema::new(
            t.name.clone(),
            t.columns.iter().map(|c| Column::new(c.name.clone(), c.ty)).collect(),
        )?;
        engine.create_table(schema.clone(), false)?;
        let rows: RowsFile = read_json(&dir.join(&t.file))?;
        let mut data = Vec::with_capacity(rows.rows.len());
        for r in rows.rows {
            if r.values.len() != schema.len() {
                return Err(Error::Format(format!("row of {} has {} values", t.name, r.values.len())));
            }
            let tuple = r
                .values
                .iter()
                .zip(&schema.columns)
                .map(|(j, c)| Value::from_json(j, c.ty))
                .collect::<Result<Vec<_>>>()?;
            data.push((tuple, r.count));
        }
        engine.insert_rows(&t.name, &data)?;
        for idx in &t.indexes {
            engine.execute(&Statement::CreateIndex {
                name: idx.name.clone(),
                table: t.name.clone(),
                columns: idx.columns.clone(),
                unique: true,
            })?;
        }
    }
    let mut catalog = Catalog {
        engine,
        views: IndexMap::new(),
        delta_map: file.delta_map,
        config: file.config,
    };
    let derived: Vec<String> = file
        .views
        .iter()
        .flat_map(|v| [v.name.clone(), format!("delta_{}", v.name)])
        .chain(catalog.delta_map.values().cloned())
        .collect();
    let bases: Vec<Schema> = catalog
        .engine
        .tables()
        .map(|t| t.schema.clone())
        .filter(|s| !derived.contains(&s.name))
        .collect();
    for v in file.views {
        let (_, q) = strip_materialized(&v.source_sql)?;
        let def = compile_view(&v.name, &q, &v.source_sql, &bases, &v.options)?;
        let reg = RegisteredView::new(ScriptBundle::new(def)?)?;
        let stored: Vec<(u8, String)> = v.propagation.into_iter().map(|s| (s.step, s.sql)).collect();
        if reg.ddl_sql != v.ddl || reg.propagation_sql != stored {
            return Err(Error::Format(format!(
                "scripts of view {} differ from what this build compiles",
                v.name
            )));
        }
        catalog.views.insert(v.name, reg);
    }
    Ok(catalog)
}
