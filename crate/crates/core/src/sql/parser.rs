//! Hand-written recursive-descent parser for the supported SQL subset.
//!
//! `CREATE MATERIALIZED VIEW` is not part of the core grammar. When the
//! parser meets it, the statement is handed to [`strip_materialized`],
//! which drops the `MATERIALIZED` keyword and re-enters the ordinary
//! `CREATE VIEW` grammar.

use crate::error::{Error, Pos, Result};
use crate::expr::{BinaryOp, UnaryOp};
use crate::ops::AggKind;
use crate::sql::ast::*;
use crate::sql::token::{tokenize, Token, TokenKind};
use crate::value::{DataType, Decimal, Value};

pub fn parse_statements(text: &str) -> Result<Vec<Statement>> {
    let mut p = Parser::new(tokenize(text)?);
    let mut out = Vec::new();
    loop {
        while p.eat_symbol(";") {}
        if p.at_end() {
            break;
        }
        out.push(p.statement()?);
        if !p.at_end() {
            p.expect_symbol(";")?;
        }
    }
    Ok(out)
}

/// Parses exactly one statement (a trailing `;` is allowed).
pub fn parse_statement(text: &str) -> Result<Statement> {
    let mut stmts = parse_statements(text)?;
    match stmts.len() {
        1 => Ok(stmts.remove(0)),
        n => Err(Error::Syntax {
            pos: Pos::new(1, 1),
            message: format!("expected one statement, found {n}"),
            expected: vec![],
        }),
    }
}

pub fn parse_query(text: &str) -> Result<SelectQuery> {
    let mut p = Parser::new(tokenize(text)?);
    let q = p.query()?;
    p.eat_symbol(";");
    p.expect_end()?;
    Ok(q)
}

/// Parses a `CREATE MATERIALIZED VIEW name AS query` statement by removing
/// `MATERIALIZED` and handing the rest to the `CREATE VIEW` grammar.
pub fn strip_materialized(stmt_text: &str) -> Result<(String, SelectQuery)> {
    let tokens = tokenize(stmt_text)?;
    let stripped = strip_materialized_tokens(&tokens).ok_or(Error::NotMaterialized)?;
    let mut p = Parser::new(stripped);
    let stmt = p.statement()?;
    p.eat_symbol(";");
    p.expect_end()?;
    match stmt {
        Statement::CreateView { name, query, .. } => Ok((name, query)),
        _ => Err(Error::NotMaterialized),
    }
}

fn strip_materialized_tokens(tokens: &[Token]) -> Option<Vec<Token>> {
    let is_mv = tokens.first()?.is_keyword("CREATE")
        && tokens.get(1)?.is_word("materialized")
        && tokens.get(2)?.is_keyword("VIEW");
    if !is_mv {
        return None;
    }
    let mut out = Vec::with_capacity(tokens.len() - 1);
    out.push(tokens[0].clone());
    out.extend(tokens[2..].iter().cloned());
    Some(out)
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Self { tokens, i: 0 }
    }

    fn at_end(&self) -> bool {
        self.i >= self.tokens.len()
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.i)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.i + k)
    }

    fn pos(&self) -> Pos {
        match self.peek().or(self.tokens.last()) {
            Some(t) => t.pos,
            None => Pos::new(1, 1),
        }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.i).cloned();
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> Result<T> {
        let found = match self.peek() {
            Some(t) => format!("found {t}"),
            None => "unexpected end of input".to_string(),
        };
        let message = if expected.is_empty() {
            found
        } else {
            format!("expected {}, {found}", expected.join(" or "))
        };
        Err(Error::Syntax {
            pos: self.pos(),
            message,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn unsupported<T>(&self, construct: impl Into<String>) -> Result<T> {
        Err(Error::Unsupported {
            pos: self.pos(),
            construct: construct.into(),
        })
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_keyword(kw)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_word(w)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_symbol(&mut self, s: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_symbol(s)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.error(&[kw])
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<()> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.error(&[&w.to_ascii_uppercase()])
        }
    }

    fn expect_symbol(&mut self, s: &str) -> Result<()> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            self.error(&[s])
        }
    }

    fn expect_end(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            self.error(&["end of input"])
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                let s = t.text.clone();
                self.i += 1;
                Ok(s)
            }
            _ => self.error(&["identifier"]),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>> {
        self.expect_symbol("(")?;
        let mut out = vec![self.ident()?];
        while self.eat_symbol(",") {
            out.push(self.ident()?);
        }
        self.expect_symbol(")")?;
        Ok(out)
    }

    fn statement(&mut self) -> Result<Statement> {
        let Some(t) = self.peek() else {
            return self.error(&["statement"]);
        };
        if t.is_keyword("CREATE") {
            self.create()
        } else if t.is_keyword("INSERT") {
            self.insert()
        } else if t.is_keyword("DELETE") {
            self.delete()
        } else if t.is_keyword("SELECT") || t.is_keyword("WITH") {
            Ok(Statement::Select(self.query()?))
        } else if t.is_word("begin") {
            self.i += 1;
            self.eat_word("transaction");
            Ok(Statement::Begin)
        } else if t.is_word("commit") {
            self.i += 1;
            self.eat_word("transaction");
            Ok(Statement::Commit)
        } else if t.is_keyword("UPDATE") {
            self.unsupported("UPDATE statement")
        } else if t.kind == TokenKind::Identifier && !t.quoted {
            let word = t.text.to_ascii_uppercase();
            self.unsupported(format!("{word} statement"))
        } else {
            self.error(&["CREATE", "INSERT", "DELETE", "SELECT", "WITH"])
        }
    }

    fn create(&mut self) -> Result<Statement> {
        let start = self.i;
        self.expect_keyword("CREATE")?;
        if self.peek().is_some_and(|t| t.is_word("materialized")) {
            return self.materialized_view(start);
        }
        if self.eat_keyword("TABLE") {
            return self.create_table();
        }
        if self.eat_keyword("VIEW") {
            let name = self.ident()?;
            self.expect_keyword("AS")?;
            let query = self.query()?;
            return Ok(Statement::CreateView {
                name,
                query,
                materialized: false,
            });
        }
        let unique = self.eat_word("unique");
        if self.eat_word("index") {
            let name = self.ident()?;
            self.expect_keyword("ON")?;
            let table = self.ident()?;
            let columns = self.ident_list()?;
            return Ok(Statement::CreateIndex {
                name,
                table,
                columns,
                unique,
            });
        }
        self.error(&["TABLE", "VIEW", "MATERIALIZED VIEW", "INDEX"])
    }

    /// Fall-back path: cut the statement out of the token stream, strip
    /// `MATERIALIZED`, and parse what is left as a plain view definition.
    fn materialized_view(&mut self, start: usize) -> Result<Statement> {
        let mut end = start;
        let mut depth = 0i32;
        while end < self.tokens.len() {
            let t = &self.tokens[end];
            if t.is_symbol("(") {
                depth += 1;
            } else if t.is_symbol(")") {
                depth -= 1;
            } else if t.is_symbol(";") && depth == 0 {
                break;
            }
            end += 1;
        }
        let stripped = strip_materialized_tokens(&self.tokens[start..end])
            .ok_or(Error::NotMaterialized)?;
        let mut inner = Parser::new(stripped);
        let stmt = inner.statement()?;
        inner.expect_end()?;
        self.i = end;
        match stmt {
            Statement::CreateView { name, query, .. } => Ok(Statement::CreateView {
                name,
                query,
                materialized: true,
            }),
            _ => Err(Error::NotMaterialized),
        }
    }

    fn create_table(&mut self) -> Result<Statement> {
        let mut if_not_exists = false;
        if self.peek().is_some_and(|t| t.is_word("if")) {
            self.i += 1;
            self.expect_keyword("NOT")?;
            self.expect_word("exists")?;
            if_not_exists = true;
        }
        let name = self.ident()?;
        self.expect_symbol("(")?;
        let mut columns = Vec::new();
        let mut primary_key = None;
        loop {
            if self.peek().is_some_and(|t| t.is_word("primary")) {
                self.i += 1;
                self.expect_word("key")?;
                primary_key = Some(self.ident_list()?);
            } else {
                let col = self.ident()?;
                let ty = self.data_type()?;
                if self.peek().is_some_and(|t| t.is_keyword("NOT") || t.is_word("primary")) {
                    return self.unsupported("column constraint");
                }
                columns.push(ColumnDef { name: col, ty });
            }
            if !self.eat_symbol(",") {
                break;
            }
        }
        self.expect_symbol(")")?;
        Ok(Statement::CreateTable {
            name,
            columns,
            primary_key,
            if_not_exists,
        })
    }

    fn data_type(&mut self) -> Result<DataType> {
        let pos = self.pos();
        let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Identifier && !t.quoted) else {
            return self.error(&["type name"]);
        };
        let word = t.text.clone();
        self.i += 1;
        let ty = match word.as_str() {
            "int" | "integer" | "bigint" | "smallint" | "tinyint" | "int4" | "int8" | "hugeint" => {
                DataType::Int
            }
            "decimal" | "numeric" => DataType::Decimal,
            "varchar" | "text" | "string" | "char" => DataType::Text,
            "boolean" | "bool" => DataType::Bool,
            "double" | "float" | "real" => {
                return Err(Error::Unsupported {
                    pos,
                    construct: format!("floating-point type {}", word.to_ascii_uppercase()),
                })
            }
            _ => {
                return Err(Error::Unsupported {
                    pos,
                    construct: format!("type {}", word.to_ascii_uppercase()),
                })
            }
        };
        // Precision/length arguments are accepted and ignored.
        if self.eat_symbol("(") {
            loop {
                match self.next() {
                    Some(t) if t.kind == TokenKind::Number => {}
                    _ => {
                        self.i -= 1;
                        return self.error(&["number"]);
                    }
                }
                if !self.eat_symbol(",") {
                    break;
                }
            }
            self.expect_symbol(")")?;
        }
        Ok(ty)
    }

    fn insert(&mut self) -> Result<Statement> {
        self.expect_keyword("INSERT")?;
        let mut or_replace = false;
        if self.eat_keyword("OR") {
            self.expect_word("replace")?;
            or_replace = true;
        }
        self.expect_keyword("INTO")?;
        let table = self.ident()?;
        let mut columns = None;
        if self.peek().is_some_and(|t| t.is_symbol("("))
            && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier)
        {
            columns = Some(self.ident_list()?);
        }
        let source = if self.eat_keyword("VALUES") {
            let mut rows = Vec::new();
            loop {
                self.expect_symbol("(")?;
                let mut row = vec![self.expr()?];
                while self.eat_symbol(",") {
                    row.push(self.expr()?);
                }
                self.expect_symbol(")")?;
                rows.push(row);
                if !self.eat_symbol(",") {
                    break;
                }
            }
            InsertSource::Values(rows)
        } else if self.peek().is_some_and(|t| t.is_keyword("SELECT") || t.is_keyword("WITH")) {
            InsertSource::Query(self.query()?)
        } else {
            return self.error(&["VALUES", "SELECT", "WITH"]);
        };
        let mut on_conflict = None;
        if self.eat_keyword("ON") {
            self.expect_word("conflict")?;
            let target = self.ident_list()?;
            self.expect_word("do")?;
            if self.peek().is_some_and(|t| t.is_word("nothing")) {
                return self.unsupported("ON CONFLICT DO NOTHING");
            }
            self.expect_keyword("UPDATE")?;
            self.expect_keyword("SET")?;
            let mut assignments = Vec::new();
            loop {
                let col = self.ident()?;
                self.expect_symbol("=")?;
                assignments.push((col, self.expr()?));
                if !self.eat_symbol(",") {
                    break;
                }
            }
            on_conflict = Some(OnConflict {
                target,
                assignments,
            });
        }
        Ok(Statement::Insert(Insert {
            table,
            columns,
            source,
            or_replace,
            on_conflict,
        }))
    }

    fn delete(&mut self) -> Result<Statement> {
        self.expect_keyword("DELETE")?;
        self.expect_keyword("FROM")?;
        let table = self.ident()?;
        let selection = if self.eat_keyword("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Statement::Delete { table, selection })
    }

    fn query(&mut self) -> Result<SelectQuery> {
        let mut ctes = Vec::new();
        if self.eat_keyword("WITH") {
            loop {
                let name = self.ident()?;
                self.expect_keyword("AS")?;
                self.expect_symbol("(")?;
                let query = self.query()?;
                self.expect_symbol(")")?;
                ctes.push(Cte { name, query });
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let mut body = vec![self.select()?];
        while self.eat_keyword("UNION") {
            if !self.eat_keyword("ALL") {
                return self.unsupported("UNION without ALL");
            }
            body.push(self.select()?);
        }
        for kw in ["ORDER", "LIMIT", "HAVING"] {
            if self.peek().is_some_and(|t| t.is_keyword(kw)) {
                return self.unsupported(kw);
            }
        }
        Ok(SelectQuery { ctes, body })
    }

    fn select(&mut self) -> Result<Select> {
        self.expect_keyword("SELECT")?;
        if self.peek().is_some_and(|t| t.is_keyword("DISTINCT")) {
            return self.unsupported("DISTINCT");
        }
        if self.peek().is_some_and(|t| t.is_symbol("*")) {
            return self.unsupported("SELECT *");
        }
        let mut items = vec![self.select_item()?];
        while self.eat_symbol(",") {
            items.push(self.select_item()?);
        }
        let mut from = None;
        let mut join = None;
        if self.eat_keyword("FROM") {
            from = Some(self.table_ref()?);
            if self.peek().is_some_and(|t| t.is_symbol(",")) {
                return self.unsupported("comma join");
            }
            join = self.join()?;
            if self.peek().is_some_and(|t| {
                t.is_keyword("JOIN") || t.is_keyword("INNER") || t.is_keyword("LEFT")
            }) {
                return self.unsupported("more than one join");
            }
        }
        let selection = if self.eat_keyword("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            group_by.push(self.expr()?);
            while self.eat_symbol(",") {
                group_by.push(self.expr()?);
            }
        }
        Ok(Select {
            items,
            from,
            join,
            selection,
            group_by,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem> {
        let expr = self.expr()?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident()?)
        } else if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        if self.peek().is_some_and(|t| t.is_symbol("(")) {
            return self.unsupported("subquery in FROM");
        }
        let name = self.ident()?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident()?)
        } else if self.peek().is_some_and(|t| t.kind == TokenKind::Identifier) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }

    fn join(&mut self) -> Result<Option<Join>> {
        let kind = if self.eat_keyword("JOIN") {
            JoinKind::Inner
        } else if self.eat_keyword("INNER") {
            self.expect_keyword("JOIN")?;
            JoinKind::Inner
        } else if self.eat_keyword("LEFT") {
            self.eat_keyword("OUTER");
            self.expect_keyword("JOIN")?;
            JoinKind::Left
        } else if self.peek().is_some_and(|t| t.is_keyword("RIGHT") || t.is_keyword("FULL")) {
            let kw = self.peek().map(|t| t.text.clone()).unwrap_or_default();
            return self.unsupported(format!("{kw} JOIN"));
        } else {
            return Ok(None);
        };
        let table = self.table_ref()?;
        self.expect_keyword("ON")?;
        let on = self.expr()?;
        Ok(Some(Join { kind, table, on }))
    }

    pub(crate) fn expr(&mut self) -> Result<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            left = Expr::binary(BinaryOp::Or, left, self.and_expr()?);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_keyword("AND") {
            left = Expr::binary(BinaryOp::And, left, self.not_expr()?);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr> {
        if self.eat_keyword("NOT") {
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(self.not_expr()?),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr> {
        let left = self.additive()?;
        if self.eat_keyword("IS") {
            let negated = self.eat_keyword("NOT");
            if self.eat_keyword("NULL") {
                return Ok(Expr::IsNull {
                    expr: Box::new(left),
                    negated,
                });
            }
            if self.eat_keyword("DISTINCT") {
                self.expect_keyword("FROM")?;
                let right = self.additive()?;
                return Ok(Expr::IsDistinctFrom {
                    left: Box::new(left),
                    right: Box::new(right),
                    negated,
                });
            }
            return self.error(&["NULL", "DISTINCT FROM"]);
        }
        let op = match self.peek() {
            Some(t) if t.kind == TokenKind::Symbol => match t.text.as_str() {
                "=" => Some(BinaryOp::Eq),
                "<>" | "!=" => Some(BinaryOp::NotEq),
                "<" => Some(BinaryOp::Lt),
                "<=" => Some(BinaryOp::LtEq),
                ">" => Some(BinaryOp::Gt),
                ">=" => Some(BinaryOp::GtEq),
                _ => None,
            },
            _ => None,
        };
        match op {
            Some(op) => {
                self.i += 1;
                let right = self.additive()?;
                Ok(Expr::binary(op, left, right))
            }
            None => Ok(left),
        }
    }

    fn additive(&mut self) -> Result<Expr> {
        let mut left = self.multiplicative()?;
        loop {
            let op = if self.eat_symbol("+") {
                BinaryOp::Add
            } else if self.eat_symbol("-") {
                BinaryOp::Sub
            } else if self.peek().is_some_and(|t| t.is_symbol("||")) {
                return self.unsupported("string concatenation");
            } else {
                return Ok(left);
            };
            left = Expr::binary(op, left, self.multiplicative()?);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr> {
        let mut left = self.unary()?;
        loop {
            let op = if self.eat_symbol("*") {
                BinaryOp::Mul
            } else if self.eat_symbol("/") {
                BinaryOp::Div
            } else {
                return Ok(left);
            };
            left = Expr::binary(op, left, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_symbol("-") {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat_symbol("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        let Some(t) = self.next() else {
            return self.error(&["expression"]);
        };
        match t.kind {
            TokenKind::Number => {
                let v = if t.text.contains('.') {
                    Decimal::parse(&t.text).map(Value::Decimal)
                } else {
                    t.text.parse::<i64>().ok().map(Value::Int)
                };
                v.map(Expr::Literal).ok_or_else(|| Error::Syntax {
                    pos,
                    message: format!("numeric literal {} out of range", t.text),
                    expected: vec![],
                })
            }
            TokenKind::String => Ok(Expr::Literal(Value::text(&t.text))),
            TokenKind::Keyword => match t.text.as_str() {
                "TRUE" => Ok(Expr::Literal(Value::Bool(true))),
                "FALSE" => Ok(Expr::Literal(Value::Bool(false))),
                "NULL" => Ok(Expr::Literal(Value::Null)),
                "CASE" => self.case(),
                _ => {
                    self.i -= 1;
                    self.error(&["expression"])
                }
            },
            TokenKind::Symbol if t.text == "(" => {
                if self.peek().is_some_and(|t| t.is_keyword("SELECT") || t.is_keyword("WITH")) {
                    return self.unsupported("subquery");
                }
                let e = self.expr()?;
                self.expect_symbol(")")?;
                Ok(e)
            }
            TokenKind::Identifier => {
                if self.peek().is_some_and(|n| n.is_symbol("(")) && !t.quoted {
                    return self.function(&t.text, pos);
                }
                if self.eat_symbol(".") {
                    let name = self.ident()?;
                    return Ok(Expr::Column {
                        table: Some(t.text),
                        name,
                    });
                }
                Ok(Expr::Column {
                    table: None,
                    name: t.text,
                })
            }
            _ => {
                self.i -= 1;
                self.error(&["expression"])
            }
        }
    }

    fn function(&mut self, name: &str, pos: Pos) -> Result<Expr> {
        self.expect_symbol("(")?;
        match name {
            "sum" | "count" => {
                if self.peek().is_some_and(|t| t.is_keyword("DISTINCT")) {
                    return self.unsupported(format!("{}(DISTINCT ...)", name.to_ascii_uppercase()));
                }
                let kind = if name == "sum" { AggKind::Sum } else { AggKind::Count };
                let arg = if kind == AggKind::Count && self.eat_symbol("*") {
                    None
                } else {
                    Some(Box::new(self.expr()?))
                };
                self.expect_symbol(")")?;
                Ok(Expr::Aggregate { kind, arg })
            }
            "coalesce" => {
                let mut args = vec![self.expr()?];
                while self.eat_symbol(",") {
                    args.push(self.expr()?);
                }
                self.expect_symbol(")")?;
                Ok(Expr::Coalesce(args))
            }
            other => Err(Error::Unsupported {
                pos,
                construct: other.to_ascii_uppercase(),
            }),
        }
    }

    fn case(&mut self) -> Result<Expr> {
        if !self.peek().is_some_and(|t| t.is_keyword("WHEN")) {
            return self.unsupported("simple CASE");
        }
        let mut branches = Vec::new();
        while self.eat_keyword("WHEN") {
            let cond = self.expr()?;
            self.expect_keyword("THEN")?;
            branches.push((cond, self.expr()?));
        }
        let otherwise = if self.eat_keyword("ELSE") {
            Some(Box::new(self.expr()?))
        } else {
            None
        };
        self.expect_keyword("END")?;
        Ok(Expr::Case {
            branches,
            otherwise,
        })
    }
}
