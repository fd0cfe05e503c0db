//! Violation counts per period and rule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use chrono::Datelike;
use thiserror::Error;

use crate::engine::ViolationRecord;
use crate::event::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Week,
    Day,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Week => "week",
            Granularity::Day => "day",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown granularity `{0}` (expected week or day)")]
pub struct UnknownGranularity(pub String);

impl FromStr for Granularity {
    type Err = UnknownGranularity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "week" => Ok(Granularity::Week),
            "day" => Ok(Granularity::Day),
            other => Err(UnknownGranularity(other.into())),
        }
    }
}

/// ISO week (`2021-W29`) or calendar date (`2021-07-21`) of `ts`.
pub fn period_key(ts: &Timestamp, granularity: Granularity) -> String {
    match granularity {
        Granularity::Week => {
            let w = ts.iso_week();
            format!("{:04}-W{:02}", w.year(), w.week())
        }
        Granularity::Day => format!("{}", ts.format("%Y-%m-%d")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodSummary {
    pub granularity: Granularity,
    /// Period key, then rule id, to violation count.
    pub periods: BTreeMap<String, BTreeMap<String, usize>>,
}

impl PeriodSummary {
    pub fn period_total(&self, period: &str) -> usize {
        self.periods.get(period).map_or(0, |rules| rules.values().sum())
    }

    pub fn total(&self) -> usize {
        self.periods.values().flat_map(|rules| rules.values()).sum()
    }

    pub fn rule_totals(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for rules in self.periods.values() {
            for (rule, n) in rules {
                *out.entry(rule.clone()).or_insert(0) += n;
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }
}

/// Buckets violations by the period of their violation timestamp.
pub fn summarize(violations: &[ViolationRecord], granularity: Granularity) -> PeriodSummary {
    let mut periods: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for v in violations {
        *periods
            .entry(period_key(&v.violation_ts, granularity))
            .or_default()
            .entry(v.rule_id.clone())
            .or_insert(0) += 1;
    }
    PeriodSummary { granularity, periods }
}
