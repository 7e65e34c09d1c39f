use std::fmt;

use crate::error::{Error, Pos, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Number,
    String,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Keywords are upper-cased, unquoted identifiers lower-cased, quoted
    /// identifiers verbatim, strings unescaped.
    pub text: String,
    pub pos: Pos,
    /// Identifier written in double quotes.
    pub quoted: bool,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == kw
    }

    pub fn is_symbol(&self, s: &str) -> bool {
        self.kind == TokenKind::Symbol && self.text == s
    }

    /// Matches an unquoted identifier used as a contextual keyword.
    pub fn is_word(&self, word: &str) -> bool {
        self.kind == TokenKind::Identifier && !self.quoted && self.text.eq_ignore_ascii_case(word)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TokenKind::String => write!(f, "'{}'", self.text),
            TokenKind::Identifier if self.quoted => write!(f, "\"{}\"", self.text),
            _ => f.write_str(&self.text),
        }
    }
}

/// Reserved words. Everything else that looks like a word is an identifier;
/// statement-specific words (MATERIALIZED, REPLACE, CONFLICT, ...) are
/// matched contextually.
pub const KEYWORDS: &[&str] = &[
    "ALL", "AND", "AS", "BY", "CASE", "CREATE", "DELETE", "DISTINCT", "ELSE", "END", "FALSE",
    "FROM", "FULL", "GROUP", "HAVING", "INNER", "INSERT", "INTO", "IS", "JOIN", "LEFT", "LIMIT",
    "NOT", "NULL", "ON", "OR", "ORDER", "OUTER", "RIGHT", "SELECT", "SET", "TABLE", "THEN",
    "TRUE", "UNION", "UPDATE", "VALUES", "VIEW", "WHEN", "WHERE", "WITH",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

const SYMBOLS2: &[&str] = &["<=", ">=", "<>", "!=", "||"];
const SYMBOLS1: &str = "(),;.*+-/=<>";

pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! advance {
        ($n:expr) => {
            for _ in 0..$n {
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos::new(line, col);
        if c.is_whitespace() {
            advance!(1);
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                advance!(1);
            }
        } else if c == '\'' {
            advance!(1);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(Error::Syntax {
                            pos,
                            message: "unterminated string literal".into(),
                            expected: vec!["'".into()],
                        })
                    }
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        advance!(2);
                    }
                    Some('\'') => {
                        advance!(1);
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance!(1);
                    }
                }
            }
            tokens.push(Token {
                kind: TokenKind::String,
                text: s,
                pos,
                quoted: false,
            });
        } else if c == '"' {
            advance!(1);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(Error::Syntax {
                            pos,
                            message: "unterminated quoted identifier".into(),
                            expected: vec!["\"".into()],
                        })
                    }
                    Some('"') if chars.get(i + 1) == Some(&'"') => {
                        s.push('"');
                        advance!(2);
                    }
                    Some('"') => {
                        advance!(1);
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance!(1);
                    }
                }
            }
            tokens.push(Token {
                kind: TokenKind::Identifier,
                text: s,
                pos,
                quoted: true,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance!(1);
            }
            if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                advance!(1);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance!(1);
                }
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                text: chars[start..i].iter().collect(),
                pos,
                quoted: false,
            });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                advance!(1);
            }
            let word: String = chars[start..i].iter().collect();
            let (kind, text) = if is_keyword(&word) {
                (TokenKind::Keyword, word.to_ascii_uppercase())
            } else {
                (TokenKind::Identifier, word.to_lowercase())
            };
            tokens.push(Token {
                kind,
                text,
                pos,
                quoted: false,
            });
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = if SYMBOLS2.contains(&two.as_str()) {
                two
            } else if SYMBOLS1.contains(c) {
                c.to_string()
            } else {
                return Err(Error::Syntax {
                    pos,
                    message: format!("illegal character {c:?}"),
                    expected: vec![],
                });
            };
            advance!(sym.chars().count());
            tokens.push(Token {
                kind: TokenKind::Symbol,
                text: sym,
                pos,
                quoted: false,
            });
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<(TokenKind, String)> {
        tokenize(text)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn select_one() {
        let expected = vec![
            (TokenKind::Keyword, "SELECT".to_string()),
            (TokenKind::Number, "1".to_string()),
            (TokenKind::Symbol, ";".to_string()),
        ];
        assert_eq!(kinds("SELECT 1;"), expected);
        assert_eq!(kinds("-- c\nSELECT 1;"), expected);
        assert_eq!(kinds("select 1 ;"), expected);
    }

    #[test]
    fn unterminated_string_reports_start() {
        let err = tokenize("'abc").unwrap_err();
        assert_eq!(err.pos(), Some(Pos::new(1, 1)));
        assert!(err.to_string().contains("unterminated"));
    }

    #[test]
    fn illegal_character_position() {
        let err = tokenize("SELECT a\n  FROM t ? x").unwrap_err();
        assert_eq!(err.pos(), Some(Pos::new(2, 10)));
    }

    #[test]
    fn identifiers_and_quoting() {
        let toks = tokenize("Foo \"MixedCase\" 'it''s' 3.25 <= _duckdb_ivm_multiplicity").unwrap();
        assert_eq!(toks[0].text, "foo");
        assert!(toks[1].quoted && toks[1].text == "MixedCase");
        assert_eq!(toks[2].text, "it's");
        assert_eq!(toks[3].kind, TokenKind::Number);
        assert!(toks[4].is_symbol("<="));
        assert_eq!(toks[5].kind, TokenKind::Identifier);
    }

    #[test]
    fn positions_strictly_increase() {
        let toks = tokenize("SELECT a,\n b FROM t -- trailing\nWHERE a > 'x';").unwrap();
        for w in toks.windows(2) {
            assert!(w[0].pos < w[1].pos);
        }
    }
}
