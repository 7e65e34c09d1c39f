//! Statement trees to SQL text.

use std::fmt::Write as _;

use crate::expr::UnaryOp;
use crate::sql::ast::{Expr, Insert, InsertSource, Join, JoinKind, Select, SelectItem, SelectQuery, Statement, TableRef};
use crate::sql::token::is_keyword;
use crate::value::Value;

use super::dialect::Dialect;

/// Identifier text, double-quoted unless it is a plain lowercase word.
pub fn quote_ident(name: &str) -> String {
    let mut chars = name.chars();
    let plain = matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !is_keyword(name);
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// One statement with its terminating semicolon.
pub fn render_statement(s: &Statement, d: Dialect) -> String {
    let mut out = render_statement_body(s, d);
    out.push(';');
    out
}

/// Statements separated by blank lines.
pub fn render_script(stmts: &[Statement], d: Dialect) -> String {
    let mut out = String::new();
    for s in stmts {
        out.push_str(&render_statement(s, d));
        out.push('\n');
    }
    out
}

fn render_statement_body(s: &Statement, d: Dialect) -> String {
    match s {
        Statement::CreateTable {
            name,
            columns,
            primary_key,
            if_not_exists,
        } => {
            let mut parts: Vec<String> = columns
                .iter()
                .map(|c| format!("{} {}", quote_ident(&c.name), d.type_name(c.ty)))
                .collect();
            if let Some(pk) = primary_key {
                parts.push(format!("PRIMARY KEY ({})", idents(pk)));
            }
            format!(
                "CREATE TABLE {}{} ({})",
                if *if_not_exists { "IF NOT EXISTS " } else { "" },
                quote_ident(name),
                parts.join(", ")
            )
        }
        Statement::CreateView {
            name,
            query,
            materialized,
        } => format!(
            "CREATE {}VIEW {} AS\n{}",
            if *materialized { "MATERIALIZED " } else { "" },
            quote_ident(name),
            render_query(query, d)
        ),
        Statement::CreateIndex {
            name,
            table,
            columns,
            unique,
        } => format!(
            "CREATE {}INDEX {} ON {} ({})",
            if *unique { "UNIQUE " } else { "" },
            quote_ident(name),
            quote_ident(table),
            idents(columns)
        ),
        Statement::Insert(i) => render_insert(i, d),
        Statement::Delete { table, selection } => {
            let mut out = format!("DELETE FROM {}", quote_ident(table));
            if let Some(e) = selection {
                write!(out, " WHERE {}", render_expr(e, d)).ok();
            }
            out
        }
        Statement::Select(q) => render_query(q, d),
        Statement::Begin => "BEGIN TRANSACTION".into(),
        Statement::Commit => "COMMIT".into(),
    }
}

fn render_insert(i: &Insert, d: Dialect) -> String {
    let mut out = format!(
        "INSERT {}INTO {}",
        if i.or_replace { "OR REPLACE " } else { "" },
        quote_ident(&i.table)
    );
    if let Some(cols) = &i.columns {
        write!(out, " ({})", idents(cols)).ok();
    }
    match &i.source {
        InsertSource::Values(rows) => {
            let rows: Vec<String> = rows
                .iter()
                .map(|r| format!("({})", r.iter().map(|e| render_expr(e, d)).collect::<Vec<_>>().join(", ")))
                .collect();
            write!(out, " VALUES {}", rows.join(", ")).ok();
        }
        InsertSource::Query(q) => {
            write!(out, "\n{}", render_query(q, d)).ok();
        }
    }
    if let Some(oc) = &i.on_conflict {
        let sets: Vec<String> = oc
            .assignments
            .iter()
            .map(|(c, e)| format!("{} = {}", quote_ident(c), render_expr(e, d)))
            .collect();
        write!(out, "\nON CONFLICT ({}) DO UPDATE SET {}", idents(&oc.target), sets.join(", ")).ok();
    }
    out
}

pub fn render_query(q: &SelectQuery, d: Dialect) -> String {
    let mut out = String::new();
    if !q.ctes.is_empty() {
        let ctes: Vec<String> = q
            .ctes
            .iter()
            .map(|c| format!("{} AS (\n{}\n)", quote_ident(&c.name), render_query(&c.query, d)))
            .collect();
        writeln!(out, "WITH {}", ctes.join(", ")).ok();
    }
    let body: Vec<String> = q.body.iter().map(|s| render_select(s, d)).collect();
    out.push_str(&body.join("\nUNION ALL\n"));
    out
}

fn render_select(s: &Select, d: Dialect) -> String {
    let items: Vec<String> = s.items.iter().map(|i| render_item(i, d)).collect();
    let mut out = format!("SELECT {}", items.join(", "));
    if let Some(from) = &s.from {
        write!(out, "\nFROM {}", render_table(from)).ok();
    }
    if let Some(Join { kind, table, on }) = &s.join {
        let kw = match kind {
            JoinKind::Inner => "JOIN",
            JoinKind::Left => "LEFT JOIN",
        };
        write!(out, "\n{kw} {} ON {}", render_table(table), render_expr(on, d)).ok();
    }
    if let Some(e) = &s.selection {
        write!(out, "\nWHERE {}", render_expr(e, d)).ok();
    }
    if !s.group_by.is_empty() {
        let keys: Vec<String> = s.group_by.iter().map(|e| render_expr(e, d)).collect();
        write!(out, "\nGROUP BY {}", keys.join(", ")).ok();
    }
    out
}

fn render_item(i: &SelectItem, d: Dialect) -> String {
    let e = render_expr(&i.expr, d);
    match &i.alias {
        Some(a) => format!("{e} AS {}", quote_ident(a)),
        None => e,
    }
}

fn render_table(t: &TableRef) -> String {
    match &t.alias {
        Some(a) => format!("{} AS {}", quote_ident(&t.name), quote_ident(a)),
        None => quote_ident(&t.name),
    }
}

fn idents(names: &[String]) -> String {
    names.iter().map(|n| quote_ident(n)).collect::<Vec<_>>().join(", ")
}

/// Binding strength of the expression's top operator; atoms are 8.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnaryOp::Not, .. } => 3,
        Expr::IsNull { .. } | Expr::IsDistinctFrom { .. } => 4,
        Expr::Unary { op: UnaryOp::Neg, .. } => 7,
        Expr::Literal(Value::Int(i)) if *i < 0 => 7,
        Expr::Literal(Value::Decimal(x)) if x.scaled() < 0 => 7,
        _ => 8,
    }
}

fn wrap(e: &Expr, d: Dialect, parens: bool) -> String {
    let text = render_expr(e, d);
    if parens {
        format!("({text})")
    } else {
        text
    }
}

pub fn render_expr(e: &Expr, d: Dialect) -> String {
    match e {
        Expr::Column { table, name } => match table {
            Some(t) => format!("{}.{}", quote_ident(t), quote_ident(name)),
            None => quote_ident(name),
        },
        Expr::Literal(v) => render_literal(v, d),
        Expr::Unary { op: UnaryOp::Not, expr } => format!("NOT {}", wrap(expr, d, level(expr) < 3)),
        Expr::Unary { op: UnaryOp::Neg, expr } => {
            let inner = render_expr(expr, d);
            if level(expr) < 7 || inner.starts_with('-') {
                format!("-({inner})")
            } else {
                format!("-{inner}")
            }
        }
        Expr::Binary { op, left, right } => {
            let p = op.precedence();
            let (lp, rp) = if op.is_comparison() {
                (level(left) <= 4, level(right) <= 4)
            } else {
                (level(left) < p, level(right) <= p)
            };
            let r = wrap(right, d, rp);
            format!("{} {} {}", wrap(left, d, lp), op.symbol(), r)
        }
        Expr::IsNull { expr, negated } => format!(
            "{} IS {}NULL",
            wrap(expr, d, level(expr) <= 4),
            if *negated { "NOT " } else { "" }
        ),
        Expr::IsDistinctFrom {
            left,
            right,
            negated,
        } => format!(
            "{} IS {}DISTINCT FROM {}",
            wrap(left, d, level(left) <= 4),
            if *negated { "NOT " } else { "" },
            wrap(right, d, level(right) <= 4)
        ),
        Expr::Case {
            branches,
            otherwise,
        } => {
            let mut s = String::from("CASE");
            for (c, t) in branches {
                write!(s, " WHEN {} THEN {}", render_expr(c, d), render_expr(t, d)).ok();
            }
            if let Some(o) = otherwise {
                write!(s, " ELSE {}", render_expr(o, d)).ok();
            }
            s + " END"
        }
        Expr::Coalesce(args) => format!(
            "COALESCE({})",
            args.iter().map(|a| render_expr(a, d)).collect::<Vec<_>>().join(", ")
        ),
        Expr::Aggregate { kind, arg } => match arg {
            Some(a) => format!("{}({})", kind.sql_name(), render_expr(a, d)),
            None => format!("{}(*)", kind.sql_name()),
        },
    }
}

fn render_literal(v: &Value, d: Dialect) -> String {
    match v {
        Value::Null => "NULL".into(),
        Value::Bool(b) => d.bool_literal(*b).into(),
        Value::Int(i64::MIN) => format!("({} - 1)", i64::MIN + 1),
        Value::Int(i) => i.to_string(),
        Value::Decimal(x) => x.to_string(),
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parser::{parse_query, parse_statement};

    fn roundtrip(sql: &str) {
        let s = parse_statement(sql).unwrap();
        let text = render_statement(&s, Dialect::Generic);
        let again = parse_statement(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert_eq!(s, again, "{text}");
    }

    #[test]
    fn quoting() {
        assert_eq!(quote_ident("group_index"), "group_index");
        assert_eq!(quote_ident("Group"), "\"Group\"");
        assert_eq!(quote_ident("select"), "\"select\"");
        assert_eq!(quote_ident("a\"b"), "\"a\"\"b\"");
        assert_eq!(quote_ident("1x"), "\"1x\"");
    }

    #[test]
    fn minimal_parentheses() {
        let q = parse_query("SELECT (a + b) * c, a + (b * c), a - (b - c), -(-a), NOT (a = 1 AND b = 2), (a = 1) = (b = 2) FROM t").unwrap();
        let text = render_query(&q, Dialect::Generic);
        assert!(text.contains("(a + b) * c, a + b * c, a - (b - c), -(-a), NOT (a = 1 AND b = 2), (a = 1) = (b = 2)"), "{text}");
    }

    #[test]
    fn statements_roundtrip() {
        for sql in [
            "CREATE TABLE IF NOT EXISTS t (a INTEGER, b DECIMAL(38,9), c VARCHAR, d BOOLEAN)",
            "CREATE UNIQUE INDEX v_ivm_key ON v (a, \"B\")",
            "INSERT INTO t VALUES (1, -2.5, 'x''y', NULL), (2, 3.0, 'z', true)",
            "INSERT OR REPLACE INTO v WITH c AS (SELECT a, SUM(b) AS s FROM d GROUP BY a) SELECT c.a, SUM(COALESCE(v.s, 0) + c.s) FROM c LEFT JOIN v ON v.a IS NOT DISTINCT FROM c.a GROUP BY c.a",
            "INSERT INTO v (a, s) SELECT a, s FROM d ON CONFLICT (a) DO UPDATE SET s = excluded.s",
            "DELETE FROM v WHERE s = 0 OR n = 0",
            "SELECT a - -1, CASE WHEN m = false THEN -x ELSE x END AS y FROM t AS u JOIN w ON u.k = w.k WHERE NOT a IS NULL UNION ALL SELECT 1, 2 FROM t",
        ] {
            roundtrip(sql);
        }
    }

    #[test]
    fn dialect_literals() {
        let s = parse_statement("SELECT true, x FROM t").unwrap();
        assert!(render_statement(&s, Dialect::Duck).starts_with("SELECT TRUE"));
        assert!(render_statement(&s, Dialect::Generic).starts_with("SELECT true"));
    }
}
