use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::{CrlError, Deadline, DurationUnit, Position};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Duration(Deadline),
    Colon,
    Comma,
    LBracket,
    RBracket,
    EqEq,
    NotEq,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Duration(d) => format!("duration `{d}`"),
            Tok::Colon => "`:`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::LBracket => "`[`".to_string(),
            Tok::RBracket => "`]`".to_string(),
            Tok::EqEq => "`==`".to_string(),
            Tok::NotEq => "`!=`".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub at: Position,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, CrlError> {
    let mut lexer = Lexer { src, chars: src.char_indices().peekable(), line: 1, column: 1 };
    let mut out = Vec::new();
    loop {
        let token = lexer.next_token()?;
        let eof = token.tok == Tok::Eof;
        out.push(token);
        if eof {
            return Ok(out);
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    chars: core::iter::Peekable<core::str::CharIndices<'a>>,
    line: usize,
    column: usize,
}

impl Lexer<'_> {
    fn bump(&mut self) -> Option<(usize, char)> {
        let next = self.chars.next();
        if let Some((_, c)) = next {
            if c == '\n' {
                self.line += 1;
                self.column = 1;
            } else {
                self.column += 1;
            }
        }
        next
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn offset(&mut self) -> usize {
        self.chars.peek().map_or(self.src.len(), |&(i, _)| i)
    }

    fn here(&self) -> Position {
        Position { line: self.line, column: self.column }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, CrlError> {
        self.skip_trivia();
        let at = self.here();
        let start = self.offset();
        let Some(c) = self.peek() else {
            return Ok(Token { tok: Tok::Eof, at, start, end: start });
        };
        let tok = match c {
            ':' => {
                self.bump();
                Tok::Colon
            }
            ',' => {
                self.bump();
                Tok::Comma
            }
            '[' => {
                self.bump();
                Tok::LBracket
            }
            ']' => {
                self.bump();
                Tok::RBracket
            }
            '=' | '!' => {
                self.bump();
                if self.peek() != Some('=') {
                    return Err(unexpected(at, &format!("`{c}`")));
                }
                self.bump();
                if c == '=' {
                    Tok::EqEq
                } else {
                    Tok::NotEq
                }
            }
            '"' => self.string(at)?,
            c if c.is_ascii_alphabetic() => {
                let mut ident = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        ident.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                Tok::Ident(ident)
            }
            c if c.is_ascii_digit() => self.duration(at)?,
            other => return Err(unexpected(at, &format!("character `{other}`"))),
        };
        let end = self.offset();
        Ok(Token { tok, at, start, end })
    }

    fn string(&mut self, at: Position) -> Result<Tok, CrlError> {
        self.bump();
        let mut value = String::new();
        loop {
            match self.bump() {
                None | Some((_, '\n')) => {
                    return Err(CrlError::Syntax {
                        at,
                        expected: vec!["closing `\"`".to_string()],
                        found: "end of line".to_string(),
                    })
                }
                Some((_, '"')) => return Ok(Tok::Str(value)),
                Some((_, '\\')) => match self.bump() {
                    Some((_, '"')) => value.push('"'),
                    Some((_, '\\')) => value.push('\\'),
                    _ => {
                        return Err(CrlError::Syntax {
                            at: self.here(),
                            expected: vec!["`\\\"` or `\\\\`".to_string()],
                            found: "unknown escape".to_string(),
                        })
                    }
                },
                Some((_, c)) => value.push(c),
            }
        }
    }

    fn duration(&mut self, at: Position) -> Result<Tok, CrlError> {
        let mut digits = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let mut suffix = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                suffix.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let unit = match suffix.as_str() {
            "m" => DurationUnit::Minutes,
            "h" => DurationUnit::Hours,
            "d" => DurationUnit::Days,
            _ => {
                return Err(CrlError::Syntax {
                    at,
                    expected: vec!["duration unit `m`, `h` or `d`".to_string()],
                    found: format!("`{digits}{suffix}`"),
                })
            }
        };
        let amount = digits.parse::<u32>().map_err(|_| CrlError::Invalid {
            at,
            message: format!("duration `{digits}{suffix}` is out of range"),
        })?;
        Ok(Tok::Duration(Deadline { amount, unit }))
    }
}

fn unexpected(at: Position, found: &str) -> CrlError {
    CrlError::Syntax { at, expected: vec!["a token".to_string()], found: found.to_string() }
}
