use serde_json::json;

use crate::error::Result;
use crate::sql::ast::{ColumnDef, Insert, InsertSource, Statement};
use crate::schema::Column;
use crate::value::DataType;

use super::lower::{lower_to_ast, population_query, PropagationStatement};
use super::render::render_statement;
use super::{delta_table_name, Dialect, Materialize, ViewDefinition};

fn defs(cols: &[Column]) -> Vec<ColumnDef> {
    cols.iter()
        .map(|c| ColumnDef {
            name: c.name.clone(),
            ty: c.ty,
        })
        .collect()
}

fn with_mult(cols: &[Column], mult: &str) -> Vec<ColumnDef> {
    let mut out = defs(cols);
    out.push(ColumnDef {
        name: mult.to_string(),
        ty: DataType::Bool,
    });
    out
}

/// Setup statements: delta tables, the view table and its initial contents,
/// the view delta table and the key index.
pub fn emit_ddl(v: &ViewDefinition) -> Result<Vec<Statement>> {
    let mult = v.options.mult_col.as_str();
    let mut out = Vec::new();
    for t in &v.base_tables {
        out.push(Statement::CreateTable {
            name: delta_table_name(&t.name),
            columns: with_mult(&t.columns, mult),
            primary_key: None,
            if_not_exists: true,
        });
    }
    out.push(Statement::CreateTable {
        name: v.name.clone(),
        columns: defs(&v.columns),
        primary_key: None,
        if_not_exists: false,
    });
    out.push(Statement::Insert(Insert {
        table: v.name.clone(),
        columns: None,
        source: InsertSource::Query(population_query(v)?),
        or_replace: false,
        on_conflict: None,
    }));
    if v.options.materialize == Materialize::Eager {
        out.push(Statement::CreateTable {
            name: v.delta_view(),
            columns: with_mult(&v.delta_columns, mult),
            primary_key: None,
            if_not_exists: false,
        });
    }
    out.push(Statement::CreateIndex {
        name: format!("{}_ivm_key", v.name),
        table: v.name.clone(),
        columns: v.keys.iter().map(|&k| v.columns[k].name.clone()).collect(),
        unique: true,
    });
    Ok(out)
}

pub fn emit_propagation(v: &ViewDefinition) -> Result<Vec<PropagationStatement>> {
    lower_to_ast(v, v.options.dialect)
}

const STEP_TITLES: [&str; 4] = [
    "compute the view delta",
    "merge the view delta into the view",
    "remove empty rows",
    "clear the deltas",
];

/// Compiled scripts for one view in one dialect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptBundle {
    pub view: ViewDefinition,
    pub ddl: Vec<Statement>,
    pub propagation: Vec<PropagationStatement>,
}

impl ScriptBundle {
    pub fn new(view: ViewDefinition) -> Result<Self> {
        Ok(Self {
            ddl: emit_ddl(&view)?,
            propagation: emit_propagation(&view)?,
            view,
        })
    }

    pub fn dialect(&self) -> Dialect {
        self.view.options.dialect
    }

    pub fn ddl_statements(&self) -> Vec<String> {
        self.ddl.iter().map(|s| render_statement(s, self.dialect())).collect()
    }

    /// `(step, sql)` pairs in execution order.
    pub fn propagation_statements(&self) -> Vec<(u8, String)> {
        self.propagation
            .iter()
            .map(|p| (p.step, render_statement(&p.statement, self.dialect())))
            .collect()
    }

    fn header(&self, what: &str) -> String {
        let o = &self.view.options;
        format!(
            "-- deltasql {what} for view {}\n-- dialect: {}, multiplicity column: {}, materialize: {}, emptiness: {}\n",
            self.view.name, o.dialect, o.mult_col, o.materialize, o.emptiness
        )
    }

    pub fn ddl_sql(&self) -> String {
        let mut out = self.header("setup");
        for s in self.ddl_statements() {
            out.push('\n');
            out.push_str(&s);
            out.push('\n');
        }
        out
    }

    pub fn propagate_sql(&self) -> String {
        let mut out = self.header("propagation");
        out.push_str("BEGIN TRANSACTION;\n");
        let mut last = 0;
        for (step, sql) in self.propagation_statements() {
            if step != last {
                out.push_str(&format!("\n-- step {step}: {}\n", STEP_TITLES[step as usize - 1]));
                last = step;
            }
            out.push_str(&sql);
            out.push('\n');
        }
        out.push_str("\nCOMMIT;\n");
        out
    }

    pub fn metadata(&self) -> Result<serde_json::Value> {
        let v = &self.view;
        let columns: Vec<_> = v
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| json!({"name": c.name, "type": c.ty.name(), "hidden": i >= v.visible}))
            .collect();
        Ok(json!({
            "view": v.name,
            "class": v.class.as_str(),
            "source_sql": v.source_sql,
            "dialect": v.options.dialect.name(),
            "multiplicity_column": v.options.mult_col,
            "materialize": v.options.materialize.name(),
            "emptiness": v.options.emptiness.name(),
            "base_tables": v.base_table_names(),
            "delta_tables": v.base_tables.iter().map(|t| delta_table_name(&t.name)).collect::<Vec<_>>(),
            "delta_view": (v.options.materialize == Materialize::Eager).then(|| v.delta_view()),
            "columns": columns,
            "keys": v.keys.iter().map(|&k| v.columns[k].name.clone()).collect::<Vec<_>>(),
            "counted": v.counted,
            "plan": v.plan.to_text()?,
            "incremental_plan": v.incremental.plan.to_text()?,
        }))
    }
}

/// Splits a propagation script into `(step, statement)` pairs using its
/// `-- step N` comments. BEGIN and COMMIT lines are dropped.
pub fn parse_propagation_script(text: &str) -> Result<Vec<(u8, String)>> {
    let mut out = Vec::new();
    let mut step = 0u8;
    let mut current = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("-- step ") {
            let n: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
            step = n
                .parse()
                .ok()
                .filter(|s| (1..=4).contains(s))
                .ok_or_else(|| crate::error::Error::Format(format!("bad step comment: {trimmed}")))?;
            continue;
        }
        if (trimmed.starts_with("--") && current.is_empty()) || trimmed.is_empty() {
            continue;
        }
        if current.is_empty() && matches!(trimmed.to_ascii_uppercase().as_str(), "BEGIN TRANSACTION;" | "BEGIN;" | "COMMIT;") {
            continue;
        }
        if !current.is_empty() {
            current.push('\n');
        }
        current.push_str(line);
        if trimmed.ends_with(';') {
            if step == 0 {
                return Err(crate::error::Error::Format("statement before the first step comment".into()));
            }
            out.push((step, std::mem::take(&mut current)));
        }
    }
    if !current.trim().is_empty() {
        return Err(crate::error::Error::Format("unterminated statement at end of script".into()));
    }
    Ok(out)
}
