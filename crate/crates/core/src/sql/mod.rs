//! SQL front end: tokenizer, statement trees and parser.

pub mod ast;
pub mod parser;
pub mod token;

pub use ast::*;
pub use parser::{parse_query, parse_statement, parse_statements, strip_materialized};
pub use token::{tokenize, Token, TokenKind};
