use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::lexer::{tokenize, Tok, Token};
use super::{
    normalize_value, ComplianceRule, ContentOperator, ContentScope, CrlError, Position, RulePattern,
    RuleRegistry, ValueList, ValueRef,
};

/// Loads the contents of `list NAME from "path"` definitions.
pub trait ListResolver {
    /// Returns the raw lines of the list file.
    fn resolve(&mut self, name: &str, path: &str) -> Result<Vec<String>, String>;
}

/// Resolver that refuses every list.
pub struct NoLists;

impl ListResolver for NoLists {
    fn resolve(&mut self, _name: &str, path: &str) -> Result<Vec<String>, String> {
        Err(format!("no list source available for `{path}`"))
    }
}

/// In-memory resolver keyed by path.
#[derive(Debug, Clone, Default)]
pub struct MapResolver(pub BTreeMap<String, Vec<String>>);

impl ListResolver for MapResolver {
    fn resolve(&mut self, _name: &str, path: &str) -> Result<Vec<String>, String> {
        self.0.get(path).cloned().ok_or_else(|| format!("`{path}` not found"))
    }
}

/// Parses a registry that defines no value lists.
pub fn parse_registry(source: &str) -> Result<RuleRegistry, CrlError> {
    parse_registry_with(source, &mut NoLists)
}

/// Parses a registry, loading value lists through `resolver`.
pub fn parse_registry_with(source: &str, resolver: &mut dyn ListResolver) -> Result<RuleRegistry, CrlError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { src: source, tokens, pos: 0 };
    let mut registry = RuleRegistry::default();
    let mut list_refs: Vec<(Position, String, String)> = Vec::new();
    let mut rule_ids = BTreeSet::new();

    loop {
        let token = parser.peek().clone();
        match &token.tok {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "rule" => {
                let (rule, list_ref) = parser.rule()?;
                if !rule_ids.insert(rule.rule_id.clone()) {
                    return Err(CrlError::DuplicateRule { at: token.at, rule_id: rule.rule_id });
                }
                if let Some((at, list)) = list_ref {
                    list_refs.push((at, rule.rule_id.clone(), list));
                }
                registry.rules.push(rule);
            }
            Tok::Ident(kw) if kw == "list" => {
                parser.bump();
                let name = parser.ident("list name")?;
                parser.keyword("from")?;
                let path = parser.string("list file path")?;
                if registry.value_lists.contains_key(&name) {
                    return Err(CrlError::DuplicateList { at: token.at, name });
                }
                let lines = resolver.resolve(&name, &path).map_err(|reason| CrlError::ListLoad {
                    at: token.at,
                    name: name.clone(),
                    path: path.clone(),
                    reason,
                })?;
                let values = lines
                    .iter()
                    .map(|l| normalize_value(l))
                    .filter(|v| !v.is_empty())
                    .collect();
                registry.value_lists.insert(name, ValueList { path, values });
            }
            _ => return Err(parser.expected(&["`rule`", "`list`"])),
        }
    }

    for (at, rule_id, list) in list_refs {
        if !registry.value_lists.contains_key(&list) {
            return Err(CrlError::UnknownList { at, rule_id, list });
        }
    }
    Ok(registry)
}

const KEYWORDS: &[&str] = &[
    "rule", "list", "from", "only", "after", "not", "before", "never", "require", "followed", "by",
    "within", "event", "case", "attribute", "in", "not_in",
];

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn expected(&self, what: &[&str]) -> CrlError {
        let t = self.peek();
        CrlError::Syntax {
            at: t.at,
            expected: what.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), CrlError> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.expected(&[&format!("`{kw}`")]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, CrlError> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.expected(&[what])),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, CrlError> {
        match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.expected(&[what])),
        }
    }

    fn activity(&mut self) -> Result<String, CrlError> {
        let at = self.peek().at;
        let s = self.string("quoted activity")?;
        if s.trim().is_empty() {
            return Err(CrlError::Invalid { at, message: "activity must not be empty".to_string() });
        }
        Ok(s)
    }

    fn rule(&mut self) -> Result<(ComplianceRule, Option<(Position, String)>), CrlError> {
        let start = self.bump().start;
        let rule_id = self.ident("rule id")?;
        if !matches!(self.peek().tok, Tok::Colon) {
            return Err(self.expected(&["`:`"]));
        }
        self.bump();

        let mut list_ref = None;
        let pattern = match self.peek().tok.clone() {
            Tok::Str(_) => {
                let first = self.activity()?;
                if self.is_keyword("only") {
                    self.bump();
                    self.keyword("after")?;
                    RulePattern::Precedence { target: first, guard: self.activity()? }
                } else if self.is_keyword("not") {
                    self.bump();
                    self.keyword("before")?;
                    RulePattern::Precedence { target: first, guard: self.activity()? }
                } else if self.is_keyword("before") {
                    self.bump();
                    RulePattern::Precedence { target: self.activity()?, guard: first }
                } else if self.is_keyword("followed") {
                    self.bump();
                    self.keyword("by")?;
                    let response = self.activity()?;
                    let deadline = if self.is_keyword("within") {
                        self.bump();
                        let at = self.peek().at;
                        match self.bump().tok {
                            Tok::Duration(d) if d.amount > 0 => Some(d),
                            Tok::Duration(_) => {
                                return Err(CrlError::Invalid {
                                    at,
                                    message: "deadline must be positive".to_string(),
                                })
                            }
                            _ => {
                                self.pos -= 1;
                                return Err(self.expected(&["duration such as `3d`"]));
                            }
                        }
                    } else {
                        None
                    };
                    RulePattern::Response { trigger: first, response, deadline }
                } else {
                    return Err(self.expected(&["`only after`", "`not before`", "`before`", "`followed by`"]));
                }
            }
            Tok::Ident(kw) if kw == "never" => {
                self.bump();
                RulePattern::Absence { activity: self.activity()? }
            }
            Tok::Ident(kw) if kw == "require" => {
                self.bump();
                RulePattern::Existence { activity: self.activity()? }
            }
            Tok::Ident(kw) if kw == "event" || kw == "case" => {
                self.bump();
                let scope = if kw == "event" { ContentScope::Event } else { ContentScope::Case };
                self.keyword("attribute")?;
                let attribute = self.ident("attribute name")?;
                let operator = match &self.peek().tok {
                    Tok::Ident(s) if s == "in" => ContentOperator::In,
                    Tok::Ident(s) if s == "not_in" => ContentOperator::NotIn,
                    Tok::EqEq => ContentOperator::Eq,
                    Tok::NotEq => ContentOperator::Neq,
                    _ => return Err(self.expected(&["`in`", "`not_in`", "`==`", "`!=`"])),
                };
                self.bump();
                let values = match operator {
                    ContentOperator::Eq | ContentOperator::Neq => ValueRef::Single(self.string("quoted value")?),
                    ContentOperator::In | ContentOperator::NotIn => match &self.peek().tok {
                        Tok::LBracket => ValueRef::Inline(self.inline_list()?),
                        Tok::Ident(_) => {
                            let at = self.peek().at;
                            let name = self.ident("list name")?;
                            list_ref = Some((at, name.clone()));
                            ValueRef::List(name)
                        }
                        _ => return Err(self.expected(&["`[`", "list name"])),
                    },
                };
                RulePattern::Content { scope, attribute, operator, values }
            }
            _ => {
                return Err(self.expected(&[
                    "quoted activity",
                    "`never`",
                    "`require`",
                    "`event`",
                    "`case`",
                ]))
            }
        };
        let end = self.tokens[self.pos - 1].end;
        let description = self.src[start..end].to_string();
        Ok((ComplianceRule { rule_id, pattern, description }, list_ref))
    }

    fn inline_list(&mut self) -> Result<Vec<String>, CrlError> {
        self.bump();
        let mut values = vec![self.string("quoted value")?];
        loop {
            match self.peek().tok {
                Tok::Comma => {
                    self.bump();
                    values.push(self.string("quoted value")?);
                }
                Tok::RBracket => {
                    self.bump();
                    return Ok(values);
                }
                _ => return Err(self.expected(&["`,`", "`]`"])),
            }
        }
    }
}
