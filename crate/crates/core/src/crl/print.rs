use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::{ContentOperator, ContentScope, RulePattern, RuleRegistry, ValueRef};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Canonical text of a rule body (everything after `rule ID: `).
pub fn print_pattern(pattern: &RulePattern) -> String {
    match pattern {
        RulePattern::Precedence { target, guard } => {
            format!("{} only after {}", quote(target), quote(guard))
        }
        RulePattern::Absence { activity } => format!("never {}", quote(activity)),
        RulePattern::Existence { activity } => format!("require {}", quote(activity)),
        RulePattern::Response { trigger, response, deadline } => {
            let mut s = format!("{} followed by {}", quote(trigger), quote(response));
            if let Some(d) = deadline {
                let _ = write!(s, " within {d}");
            }
            s
        }
        RulePattern::Content { scope, attribute, operator, values } => {
            let scope = match scope {
                ContentScope::Event => "event",
                ContentScope::Case => "case",
            };
            let rhs = match values {
                ValueRef::Single(v) => quote(v),
                ValueRef::List(name) => name.clone(),
                ValueRef::Inline(vs) => {
                    let items: alloc::vec::Vec<String> = vs.iter().map(|v| quote(v)).collect();
                    format!("[{}]", items.join(", "))
                }
            };
            let op = match operator {
                ContentOperator::In => "in",
                ContentOperator::NotIn => "not_in",
                ContentOperator::Eq => "==",
                ContentOperator::Neq => "!=",
            };
            format!("{scope} attribute {attribute} {op} {rhs}")
        }
    }
}

/// Canonical registry text: list definitions first, then rules in order.
pub fn pretty_print(registry: &RuleRegistry) -> String {
    let mut out = String::new();
    for (name, list) in &registry.value_lists {
        let _ = writeln!(out, "list {} from {}", name, quote(&list.path));
    }
    for rule in &registry.rules {
        let _ = writeln!(out, "rule {}: {}", rule.rule_id, print_pattern(&rule.pattern));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crl::parse_registry;

    #[test]
    fn prints_table3_rule() {
        let reg = parse_registry(r#"rule R01: "Shipment started" only after "Delivery created""#).unwrap();
        assert_eq!(pretty_print(&reg), "rule R01: \"Shipment started\" only after \"Delivery created\"\n");
    }

    #[test]
    fn empty_registry_prints_nothing() {
        assert_eq!(pretty_print(&RuleRegistry::default()), "");
    }

    #[test]
    fn keeps_deadline_surface() {
        let reg = parse_registry(r#"rule R9: "a" followed by "b" within 3d"#).unwrap();
        assert!(pretty_print(&reg).contains("within 3d"));
    }

    #[test]
    fn escapes_quotes() {
        let reg = parse_registry(r#"rule Q: never "say \"hi\"""#).unwrap();
        let printed = pretty_print(&reg);
        assert_eq!(printed, "rule Q: never \"say \\\"hi\\\"\"\n");
        assert_eq!(parse_registry(&printed).unwrap(), reg);
    }
}
