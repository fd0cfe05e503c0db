//! Compliance rule language.
//!
//! A registry is a sequence of rules and value-list definitions:
//!
//! ```text
//! # trade compliance
//! list sanctions from "sanctions.txt"
//! rule R01: "Shipment started" only after "Delivery created"
//! rule R02: never "Shipment cancelled"
//! rule R03: require "Trade compliance screening"
//! rule R04: "Delivery created" followed by "Shipment started" within 3d
//! rule R05: case attribute partner not_in sanctions
//! ```
//!
//! `"a" before "b"` and `"b" not before "a"` are accepted as aliases of
//! `"b" only after "a"`.

mod lexer;
mod parser;
mod print;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::{parse_registry, parse_registry_with, ListResolver, MapResolver, NoLists};
pub use print::{pretty_print, print_pattern};

/// Time unit of a `within` deadline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationUnit {
    Minutes,
    Hours,
    Days,
}

impl DurationUnit {
    pub fn seconds(self) -> i64 {
        match self {
            DurationUnit::Minutes => 60,
            DurationUnit::Hours => 3_600,
            DurationUnit::Days => 86_400,
        }
    }

    pub fn suffix(self) -> char {
        match self {
            DurationUnit::Minutes => 'm',
            DurationUnit::Hours => 'h',
            DurationUnit::Days => 'd',
        }
    }
}

/// A positive deadline such as `3d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deadline {
    pub amount: u32,
    pub unit: DurationUnit,
}

impl Deadline {
    pub fn as_duration(self) -> chrono::Duration {
        chrono::Duration::seconds(i64::from(self.amount) * self.unit.seconds())
    }
}

impl fmt::Display for Deadline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.amount, self.unit.suffix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContentScope {
    Event,
    Case,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContentOperator {
    In,
    NotIn,
    Eq,
    Neq,
}

impl ContentOperator {
    pub fn symbol(self) -> &'static str {
        match self {
            ContentOperator::In => "in",
            ContentOperator::NotIn => "not_in",
            ContentOperator::Eq => "==",
            ContentOperator::Neq => "!=",
        }
    }
}

/// Right-hand side of a content rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRef {
    Single(String),
    Inline(Vec<String>),
    List(String),
}

/// What a rule requires of a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RulePattern {
    /// `target` may only occur after `guard` has occurred.
    Precedence { target: String, guard: String },
    /// `activity` must not occur.
    Absence { activity: String },
    /// `activity` must occur before the case completes.
    Existence { activity: String },
    /// Every `trigger` must be followed by `response`, optionally within a deadline.
    Response {
        trigger: String,
        response: String,
        deadline: Option<Deadline>,
    },
    /// An attribute must satisfy `operator values`.
    Content {
        scope: ContentScope,
        attribute: String,
        operator: ContentOperator,
        values: ValueRef,
    },
}

impl RulePattern {
    /// Activities the pattern refers to, in source order.
    pub fn activities(&self) -> Vec<&str> {
        match self {
            RulePattern::Precedence { target, guard } => alloc::vec![target.as_str(), guard.as_str()],
            RulePattern::Absence { activity } | RulePattern::Existence { activity } => {
                alloc::vec![activity.as_str()]
            }
            RulePattern::Response { trigger, response, .. } => {
                alloc::vec![trigger.as_str(), response.as_str()]
            }
            RulePattern::Content { .. } => Vec::new(),
        }
    }
}

/// A parsed rule. Equality ignores `description`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplianceRule {
    pub rule_id: String,
    pub pattern: RulePattern,
    /// Rule text as written in the registry.
    pub description: String,
}

impl PartialEq for ComplianceRule {
    fn eq(&self, other: &Self) -> bool {
        self.rule_id == other.rule_id && self.pattern == other.pattern
    }
}

impl Eq for ComplianceRule {}

/// A named value list loaded from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueList {
    pub path: String,
    /// Normalized values (see [`normalize_value`]).
    pub values: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRegistry {
    pub rules: Vec<ComplianceRule>,
    pub value_lists: BTreeMap<String, ValueList>,
}

impl RuleRegistry {
    pub fn rule(&self, rule_id: &str) -> Option<&ComplianceRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Whether `value` satisfies `operator values` for a content rule.
    pub fn content_holds(&self, value: &str, operator: ContentOperator, values: &ValueRef) -> bool {
        let value = normalize_value(value);
        let found = match values {
            ValueRef::Single(v) => normalize_value(v) == value,
            ValueRef::Inline(vs) => vs.iter().any(|c| normalize_value(c) == value),
            ValueRef::List(name) => self
                .value_lists
                .get(name)
                .is_some_and(|list| list.values.contains(&value)),
        };
        match operator {
            ContentOperator::In | ContentOperator::Eq => found,
            ContentOperator::NotIn | ContentOperator::Neq => !found,
        }
    }
}

/// Trims and lower-cases a value for comparisons.
pub fn normalize_value(value: &str) -> String {
    value.trim().to_lowercase()
}

/// Position in registry source, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrlError {
    #[error("{at}: syntax error: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        at: Position,
        expected: Vec<String>,
        found: String,
    },
    #[error("{at}: duplicate rule id `{rule_id}`")]
    DuplicateRule { at: Position, rule_id: String },
    #[error("{at}: duplicate list `{name}`")]
    DuplicateList { at: Position, name: String },
    #[error("{at}: rule `{rule_id}` references undefined list `{list}`")]
    UnknownList { at: Position, rule_id: String, list: String },
    #[error("{at}: cannot load list `{name}` from `{path}`: {reason}")]
    ListLoad {
        at: Position,
        name: String,
        path: String,
        reason: String,
    },
    #[error("{at}: {message}")]
    Invalid { at: Position, message: String },
}

impl CrlError {
    pub fn position(&self) -> Position {
        match self {
            CrlError::Syntax { at, .. }
            | CrlError::DuplicateRule { at, .. }
            | CrlError::DuplicateList { at, .. }
            | CrlError::UnknownList { at, .. }
            | CrlError::ListLoad { at, .. }
            | CrlError::Invalid { at, .. } => *at,
        }
    }
}

/// A rule that mentions activities never seen in the event data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub rule_id: String,
    pub unknown_activities: Vec<String>,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {} references unknown activit", self.rule_id)?;
        f.write_str(if self.unknown_activities.len() == 1 { "y" } else { "ies" })?;
        for (i, a) in self.unknown_activities.iter().enumerate() {
            write!(f, "{}\"{}\"", if i == 0 { " " } else { ", " }, a)?;
        }
        Ok(())
    }
}

/// Reports rules whose activities are missing from `known_activities`.
pub fn validate_registry(registry: &RuleRegistry, known_activities: &BTreeSet<String>) -> Vec<Warning> {
    registry
        .rules
        .iter()
        .filter_map(|rule| {
            let mut unknown: Vec<String> = Vec::new();
            for a in rule.pattern.activities() {
                if !known_activities.contains(a) && !unknown.iter().any(|u| u == a) {
                    unknown.push(a.to_string());
                }
            }
            (!unknown.is_empty()).then(|| Warning { rule_id: rule.rule_id.clone(), unknown_activities: unknown })
        })
        .collect()
}
