//! Durations between the milestones of the compliance loop.
//!
//! A follow-up event belongs to a violation when it is in the same case, its
//! `rule_id` attribute (a `;`-separated list) names the rule, and, if it has a
//! `dedup_key` attribute (also `;`-separated), that list names the violation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::engine::ViolationRecord;
use crate::event::{Event, Layer, Timestamp};
use crate::layers::MultiLayerLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LeadTimeMetric {
    ViolationToDetection,
    DetectionToFollowUp,
    ViolationToFollowUp,
    FollowUpToResolution,
}

impl LeadTimeMetric {
    pub const ALL: [LeadTimeMetric; 4] = [
        LeadTimeMetric::ViolationToDetection,
        LeadTimeMetric::DetectionToFollowUp,
        LeadTimeMetric::ViolationToFollowUp,
        LeadTimeMetric::FollowUpToResolution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LeadTimeMetric::ViolationToDetection => "violation_to_detection",
            LeadTimeMetric::DetectionToFollowUp => "detection_to_followup",
            LeadTimeMetric::ViolationToFollowUp => "violation_to_followup",
            LeadTimeMetric::FollowUpToResolution => "followup_to_resolution",
        }
    }
}

impl fmt::Display for LeadTimeMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Milestones of one violation. Durations are signed seconds; `None` marks a
/// milestone that has not been reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeadTimeRow {
    pub case_id: String,
    pub rule_id: String,
    pub dedup_key: String,
    pub violation_ts: Timestamp,
    pub detection_ts: Timestamp,
    pub followup_start: Option<Timestamp>,
    pub resolution: Option<Timestamp>,
}

impl LeadTimeRow {
    pub fn delta(&self, metric: LeadTimeMetric) -> Option<i64> {
        let secs = |from: Timestamp, to: Timestamp| (to - from).num_seconds();
        match metric {
            LeadTimeMetric::ViolationToDetection => Some(secs(self.violation_ts, self.detection_ts)),
            LeadTimeMetric::DetectionToFollowUp => self.followup_start.map(|f| secs(self.detection_ts, f)),
            LeadTimeMetric::ViolationToFollowUp => self.followup_start.map(|f| secs(self.violation_ts, f)),
            LeadTimeMetric::FollowUpToResolution => {
                self.followup_start.zip(self.resolution).map(|(f, r)| secs(f, r))
            }
        }
    }

    /// Open rows have not been resolved yet.
    pub fn is_open(&self) -> bool {
        self.resolution.is_none()
    }
}

/// Summary of one metric over the rows that have it.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<i64>,
}

impl Aggregate {
    pub fn of(values: &[i64]) -> Self {
        if values.is_empty() {
            return Aggregate { count: 0, mean: None, median: None, max: None };
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let sum: i128 = sorted.iter().map(|&v| i128::from(v)).sum();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        Aggregate { count: n, mean: Some(sum as f64 / n as f64), median: Some(median), max: sorted.last().copied() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTimeStats {
    pub rows: Vec<LeadTimeRow>,
    pub aggregates: BTreeMap<LeadTimeMetric, Aggregate>,
}

impl LeadTimeStats {
    pub fn from_rows(rows: Vec<LeadTimeRow>) -> Self {
        let aggregates = LeadTimeMetric::ALL
            .iter()
            .map(|&m| {
                let values: Vec<i64> = rows.iter().filter_map(|r| r.delta(m)).collect();
                (m, Aggregate::of(&values))
            })
            .collect();
        LeadTimeStats { rows, aggregates }
    }
}

fn lists(value: Option<&String>, needle: &str) -> bool {
    value.is_some_and(|v| v.split(';').any(|part| part.trim() == needle))
}

fn belongs_to(event: &Event, violation: &ViolationRecord) -> bool {
    event.layer == Layer::ComplianceFollowUp
        && lists(event.attributes.get("rule_id"), &violation.rule_id)
        && event.attributes.get("dedup_key").is_none_or(|_| lists(event.attributes.get("dedup_key"), &violation.dedup_key))
}

/// One row per violation, in the order given.
pub fn lead_times(multilog: &MultiLayerLog, violations: &[ViolationRecord]) -> LeadTimeStats {
    let rows = violations
        .iter()
        .map(|v| {
            let linked: Vec<&Event> = multilog
                .log
                .trace(&v.case_id)
                .map(|t| t.events.iter().filter(|e| belongs_to(e, v)).collect())
                .unwrap_or_default();
            // Traces are canonically ordered, so the first match is the earliest.
            let followup_start = linked.first().map(|e| e.timestamp);
            let resolution = linked
                .iter()
                .find(|e| e.activity.to_lowercase().contains("resolved"))
                .map(|e| e.timestamp);
            LeadTimeRow {
                case_id: v.case_id.clone(),
                rule_id: v.rule_id.clone(),
                dedup_key: v.dedup_key.clone(),
                violation_ts: v.violation_ts,
                detection_ts: v.detection_ts,
                followup_start,
                resolution,
            }
        })
        .collect();
    LeadTimeStats::from_rows(rows)
}

/// Whole days as `Nd`, anything else as `Ns`.
pub fn format_seconds(secs: i64) -> String {
    if secs % 86_400 == 0 {
        format!("{}d", secs / 86_400)
    } else {
        format!("{secs}s")
    }
}
