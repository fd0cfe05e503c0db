//! Process models, lead times and periodic violation summaries.

mod dfg;
mod lead_times;
mod summary;

pub use dfg::{discover_dfg, export_dot, DirectlyFollowsGraph, DfgNode};
pub use lead_times::{format_seconds, lead_times, Aggregate, LeadTimeMetric, LeadTimeRow, LeadTimeStats};
pub use summary::{period_key, summarize, Granularity, PeriodSummary, UnknownGranularity};
