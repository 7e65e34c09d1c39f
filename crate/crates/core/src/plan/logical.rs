use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::ops::{project_schema, AggInput, AggregateSpec};
use crate::schema::{Column, Schema};

/// Name of the hidden per-group row count kept by sound-mode aggregate
/// views and by non-aggregate views.
pub const HIDDEN_COUNT: &str = "_ivm_count";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanSource {
    Base,
    /// Reads the delta table instead; rows carry a multiplicity column.
    Delta { table: String, mult_col: String },
}

/// Relational operator tree. Column references inside expressions and key
/// lists are positions in the child's output. The multiplicity column of
/// delta scans is implicit: it never takes a data position and every node
/// above a delta scan forwards it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogicalPlan {
    Scan {
        table: String,
        alias: Option<String>,
        /// Base schema qualified by the visible name.
        schema: Schema,
        source: ScanSource,
    },
    Filter {
        input: Box<LogicalPlan>,
        predicate: ScalarExpr,
    },
    Project {
        input: Box<LogicalPlan>,
        exprs: Vec<(ScalarExpr, String)>,
    },
    /// Output is the group keys followed by the aggregates.
    Aggregate {
        input: Box<LogicalPlan>,
        group_keys: Vec<usize>,
        aggs: Vec<AggregateSpec>,
    },
    Join {
        left: Box<LogicalPlan>,
        right: Box<LogicalPlan>,
        on: Vec<(usize, usize)>,
    },
    Union(Vec<LogicalPlan>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryClass {
    #[serde(rename = "PROJECTION_FILTER")]
    ProjectionFilter,
    #[serde(rename = "GROUP_AGGREGATE")]
    GroupAggregate,
    #[serde(rename = "JOIN")]
    Join,
    #[serde(rename = "JOIN_AGGREGATE")]
    JoinAggregate,
}

impl QueryClass {
    pub const ALL: [QueryClass; 4] = [
        QueryClass::ProjectionFilter,
        QueryClass::GroupAggregate,
        QueryClass::Join,
        QueryClass::JoinAggregate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryClass::ProjectionFilter => "PROJECTION_FILTER",
            QueryClass::GroupAggregate => "GROUP_AGGREGATE",
            QueryClass::Join => "JOIN",
            QueryClass::JoinAggregate => "JOIN_AGGREGATE",
        }
    }

    pub fn is_aggregate(self) -> bool {
        matches!(self, QueryClass::GroupAggregate | QueryClass::JoinAggregate)
    }
}

impl std::fmt::Display for QueryClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl LogicalPlan {
    pub fn scan(table: &Schema, alias: Option<&str>) -> Self {
        let visible = alias.unwrap_or(&table.name);
        LogicalPlan::Scan {
            table: table.name.clone(),
            alias: alias.map(str::to_string),
            schema: table.requalify(visible),
            source: ScanSource::Base,
        }
    }

    /// Output schema, excluding the implicit multiplicity column.
    pub fn schema(&self) -> Result<Schema> {
        match self {
            LogicalPlan::Scan { schema, .. } => Ok(schema.clone()),
            LogicalPlan::Filter { input, .. } => input.schema(),
            LogicalPlan::Project { input, exprs } => {
                let s = project_schema(exprs, &input.schema()?)?;
                Ok(Schema::anonymous(s.columns))
            }
            LogicalPlan::Aggregate {
                input,
                group_keys,
                aggs,
            } => {
                let input = input.schema()?;
                let mut cols = Vec::with_capacity(group_keys.len() + aggs.len());
                for &k in group_keys {
                    cols.push(
                        input
                            .columns
                            .get(k)
                            .cloned()
                            .ok_or_else(|| Error::UnknownColumn(format!("#{k}")))?,
                    );
                }
                for a in aggs {
                    cols.push(Column::new(a.output.clone(), a.output_type(&input)?));
                }
                Ok(Schema::anonymous(cols))
            }
            LogicalPlan::Join { left, right, .. } => {
                let mut cols = left.schema()?.columns;
                cols.extend(right.schema()?.columns);
                Ok(Schema::anonymous(cols))
            }
            LogicalPlan::Union(children) => children
                .first()
                .ok_or_else(|| Error::UnsupportedShape("empty union".into()))?
                .schema(),
        }
    }

    pub fn children(&self) -> Vec<&LogicalPlan> {
        match self {
            LogicalPlan::Scan { .. } => vec![],
            LogicalPlan::Filter { input, .. }
            | LogicalPlan::Project { input, .. }
            | LogicalPlan::Aggregate { input, .. } => vec![input],
            LogicalPlan::Join { left, right, .. } => vec![left, right],
            LogicalPlan::Union(c) => c.iter().collect(),
        }
    }

    /// Multiplicity column name when any scan below reads a delta table.
    pub fn mult_col(&self) -> Option<&str> {
        match self {
            LogicalPlan::Scan {
                source: ScanSource::Delta { mult_col, .. },
                ..
            } => Some(mult_col),
            LogicalPlan::Scan { .. } => None,
            _ => self.children().into_iter().find_map(|c| c.mult_col()),
        }
    }

    pub fn has_delta(&self) -> bool {
        self.mult_col().is_some()
    }

    /// Distinct base tables in scan order.
    pub fn base_tables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit_scans(&mut |table, _, _| {
            if !out.iter().any(|t| t == table) {
                out.push(table.to_string());
            }
        });
        out
    }

    pub(crate) fn visit_scans(&self, f: &mut dyn FnMut(&str, Option<&str>, &ScanSource)) {
        match self {
            LogicalPlan::Scan {
                table,
                alias,
                source,
                ..
            } => f(table, alias.as_deref(), source),
            _ => {
                for c in self.children() {
                    c.visit_scans(f);
                }
            }
        }
    }

    /// Indented canonical text: one node per line, children indented two
    /// spaces. Multiplicity columns are shown with a leading `+`.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        self.write_text(&mut out, 0)?;
        Ok(out)
    }

    fn write_text(&self, out: &mut String, depth: usize) -> Result<()> {
        let pad = "  ".repeat(depth);
        let mult = self.mult_col().map(|m| format!("+{m}"));
        match self {
            LogicalPlan::Scan {
                table,
                alias,
                schema,
                source,
            } => {
                let cols: Vec<String> = schema
                    .columns
                    .iter()
                    .map(|c| format!("{} {}", c.name, c.ty.name()))
                    .chain(mult.clone())
                    .collect();
                let name = match source {
                    ScanSource::Base => table.clone(),
                    ScanSource::Delta { table: d, .. } => format!("{d} <- {table}"),
                };
                let alias = alias.as_ref().map(|a| format!(" AS {a}")).unwrap_or_default();
                writeln!(out, "{pad}Scan {name}{alias} [{}]", cols.join(", ")).ok();
            }
            LogicalPlan::Filter { input, predicate } => {
                let names = column_names(&input.schema()?);
                writeln!(out, "{pad}Filter {}", predicate.display_with(&|i| names[i].clone())).ok();
            }
            LogicalPlan::Project { input, exprs } => {
                let names = column_names(&input.schema()?);
                let items: Vec<String> = exprs
                    .iter()
                    .map(|(e, n)| {
                        let text = e.display_with(&|i| names[i].clone());
                        if text == *n {
                            text
                        } else {
                            format!("{text} AS {n}")
                        }
                    })
                    .chain(mult.clone())
                    .collect();
                writeln!(out, "{pad}Project {}", items.join(", ")).ok();
            }
            LogicalPlan::Aggregate {
                input,
                group_keys,
                aggs,
            } => {
                let names = column_names(&input.schema()?);
                let keys: Vec<String> = group_keys
                    .iter()
                    .map(|&k| names[k].clone())
                    .chain(mult.clone())
                    .collect();
                let aggs: Vec<String> = aggs
                    .iter()
                    .map(|a| {
                        let arg = match a.input {
                            AggInput::Star => "*".to_string(),
                            AggInput::Column(i) => names[i].clone(),
                        };
                        format!("{}({arg}) AS {}", a.kind.sql_name(), a.output)
                    })
                    .collect();
                writeln!(out, "{pad}Aggregate keys=[{}] aggs=[{}]", keys.join(", "), aggs.join(", "))
                    .ok();
            }
            LogicalPlan::Join { left, right, on } => {
                let l = left.schema()?;
                let r = right.schema()?;
                let keys: Vec<String> = on
                    .iter()
                    .map(|&(a, b)| {
                        format!("{} = {}", l.columns[a].display_name(), r.columns[b].display_name())
                    })
                    .collect();
                let mult = match (left.mult_col(), right.mult_col()) {
                    (Some(_), Some(_)) => " mult=(left = right)",
                    (Some(_), None) => " mult=left",
                    (None, Some(_)) => " mult=right",
                    (None, None) => "",
                };
                writeln!(out, "{pad}Join on=[{}]{mult}", keys.join(", ")).ok();
            }
            LogicalPlan::Union(_) => {
                writeln!(out, "{pad}Union").ok();
            }
        }
        for c in self.children() {
            c.write_text(out, depth + 1)?;
        }
        Ok(())
    }
}

/// Display names: bare when unique within the schema, qualified otherwise.
fn column_names(schema: &Schema) -> Vec<String> {
    schema
        .columns
        .iter()
        .map(|c| {
            let clashes = schema.columns.iter().filter(|o| o.name == c.name).count() > 1;
            if clashes {
                c.display_name()
            } else {
                c.name.clone()
            }
        })
        .collect()
}

/// Assigns one of the four supported classes to a plan.
pub fn classify(p: &LogicalPlan) -> Result<QueryClass> {
    let shape_err = || Error::UnsupportedShape(format!("no supported class for plan:\n{}", p.to_text().unwrap_or_default()));
    let mut node = p;
    if let LogicalPlan::Union(children) = node {
        let classes: Vec<QueryClass> = children.iter().map(classify).collect::<Result<_>>()?;
        return match classes.split_first() {
            Some((first, rest)) if rest.iter().all(|c| c == first) => Ok(*first),
            _ => Err(shape_err()),
        };
    }
    if let LogicalPlan::Project { input, .. } = node {
        node = input;
    }
    let aggregate = if let LogicalPlan::Aggregate { input, .. } = node {
        node = input;
        true
    } else {
        false
    };
    if !aggregate && !matches!(p, LogicalPlan::Project { .. }) {
        return Err(shape_err());
    }
    if let LogicalPlan::Filter { input, .. } = node {
        node = input;
    }
    match node {
        LogicalPlan::Scan { .. } if aggregate => Ok(QueryClass::GroupAggregate),
        LogicalPlan::Scan { .. } => Ok(QueryClass::ProjectionFilter),
        LogicalPlan::Join { left, right, .. }
            if matches!(**left, LogicalPlan::Scan { .. }) && matches!(**right, LogicalPlan::Scan { .. }) =>
        {
            Ok(if aggregate {
                QueryClass::JoinAggregate
            } else {
                QueryClass::Join
            })
        }
        _ => Err(shape_err()),
    }
}
