//! Output documents: violation network (JSON, GraphML), lead-time and period
//! CSVs, timelines and the static dashboard.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use ccl_core::analytics::{format_seconds, LeadTimeMetric, LeadTimeStats, PeriodSummary};
use ccl_core::event::{format_timestamp, Timestamp};
use ccl_core::layers::escape_html;
use ccl_core::network::{Cluster, NodeId, ViolationNetwork};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("invalid network document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid network document: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonNode {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub size: usize,
    pub color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonEdge {
    pub source: String,
    pub target: String,
    pub weight: usize,
}

/// `{nodes:[{id,type,size,color,x,y}], edges:[{source,target,weight}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub nodes: Vec<JsonNode>,
    pub edges: Vec<JsonEdge>,
}

/// Node ids carry their kind (`rule:R01`, `case:C02`) so a rule and a case
/// may share a name.
pub fn node_key(node: &NodeId) -> String {
    format!("{}:{}", node.kind(), node.name())
}

fn parse_node_key(key: &str) -> Result<NodeId, ExportError> {
    match key.split_once(':') {
        Some(("rule", name)) => Ok(NodeId::Rule(name.into())),
        Some(("case", name)) => Ok(NodeId::Case(name.into())),
        _ => Err(ExportError::Shape(format!("node id `{key}` is neither `rule:..` nor `case:..`"))),
    }
}

impl NetworkDocument {
    pub fn of(net: &ViolationNetwork) -> Self {
        let nodes = net
            .nodes()
            .into_iter()
            .map(|n| {
                let pos = net.positions.get(&n);
                JsonNode {
                    id: node_key(&n),
                    kind: n.kind().into(),
                    size: net.size(&n),
                    color: n.color().into(),
                    x: pos.map(|p| p.0),
                    y: pos.map(|p| p.1),
                }
            })
            .collect();
        let edges = net
            .edges
            .iter()
            .map(|((rule, case), w)| JsonEdge {
                source: node_key(&NodeId::Rule(rule.clone())),
                target: node_key(&NodeId::Case(case.clone())),
                weight: *w,
            })
            .collect();
        NetworkDocument { nodes, edges }
    }

    pub fn into_network(self) -> Result<ViolationNetwork, ExportError> {
        let mut net = ViolationNetwork::default();
        for n in self.nodes {
            let id = parse_node_key(&n.id)?;
            match &id {
                NodeId::Rule(name) => net.rule_nodes.insert(name.clone(), n.size),
                NodeId::Case(name) => net.case_nodes.insert(name.clone(), n.size),
            };
            if let (Some(x), Some(y)) = (n.x, n.y) {
                net.positions.insert(id, (x, y));
            }
        }
        for e in self.edges {
            let (NodeId::Rule(rule), NodeId::Case(case)) = (parse_node_key(&e.source)?, parse_node_key(&e.target)?)
            else {
                return Err(ExportError::Shape(format!("edge {} -> {} is not rule -> case", e.source, e.target)));
            };
            net.edges.insert((rule, case), e.weight);
        }
        if !net.is_well_formed() {
            return Err(ExportError::Shape("edges reference missing nodes".into()));
        }
        Ok(net)
    }
}

pub fn network_json(net: &ViolationNetwork) -> String {
    let mut s = serde_json::to_string_pretty(&NetworkDocument::of(net)).expect("document serializes");
    s.push('\n');
    s
}

pub fn network_from_json(text: &str) -> Result<ViolationNetwork, ExportError> {
    serde_json::from_str::<NetworkDocument>(text)?.into_network()
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn network_graphml(net: &ViolationNetwork) -> String {
    let mut out = String::from(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n  \
         <key id=\"type\" for=\"node\" attr.name=\"type\" attr.type=\"string\"/>\n  \
         <key id=\"size\" for=\"node\" attr.name=\"size\" attr.type=\"int\"/>\n  \
         <key id=\"color\" for=\"node\" attr.name=\"color\" attr.type=\"string\"/>\n  \
         <key id=\"x\" for=\"node\" attr.name=\"x\" attr.type=\"double\"/>\n  \
         <key id=\"y\" for=\"node\" attr.name=\"y\" attr.type=\"double\"/>\n  \
         <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"int\"/>\n  \
         <graph id=\"violations\" edgedefault=\"undirected\">\n",
    );
    for n in net.nodes() {
        let _ = write!(
            out,
            "    <node id=\"{}\">\n      <data key=\"type\">{}</data>\n      <data key=\"size\">{}</data>\n      \
             <data key=\"color\">{}</data>\n",
            escape_xml(&node_key(&n)),
            n.kind(),
            net.size(&n),
            n.color()
        );
        if let Some((x, y)) = net.positions.get(&n) {
            let _ = write!(out, "      <data key=\"x\">{x}</data>\n      <data key=\"y\">{y}</data>\n");
        }
        out.push_str("    </node>\n");
    }
    for (i, ((rule, case), w)) in net.edges.iter().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{i}\" source=\"{}\" target=\"{}\"><data key=\"weight\">{w}</data></edge>",
            escape_xml(&node_key(&NodeId::Rule(rule.clone()))),
            escape_xml(&node_key(&NodeId::Case(case.clone())))
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

fn opt_ts(ts: Option<Timestamp>) -> String {
    ts.map(|t| format_timestamp(&t)).unwrap_or_default()
}

/// One row per violation; every metric gets a raw-seconds and a formatted column.
pub fn write_lead_times_csv(stats: &LeadTimeStats, out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["case_id", "rule_id", "dedup_key", "violation_ts", "detection_ts", "followup_start", "resolution", "status"]
            .map(String::from)
            .into();
    for m in LeadTimeMetric::ALL {
        header.push(format!("{m}_seconds"));
        header.push(m.to_string());
    }
    w.write_record(&header)?;
    for r in &stats.rows {
        let mut row = vec![
            r.case_id.clone(),
            r.rule_id.clone(),
            r.dedup_key.clone(),
            format_timestamp(&r.violation_ts),
            format_timestamp(&r.detection_ts),
            opt_ts(r.followup_start),
            opt_ts(r.resolution),
            if r.is_open() { "open" } else { "resolved" }.to_string(),
        ];
        for m in LeadTimeMetric::ALL {
            let d = r.delta(m);
            row.push(d.map(|s| s.to_string()).unwrap_or_default());
            row.push(d.map(format_seconds).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `period,rule_id,count` rows in period then rule order.
pub fn write_summary_csv(summary: &PeriodSummary, out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "rule_id", "count"])?;
    for (period, rules) in &summary.periods {
        for (rule, n) in rules {
            w.write_record([period.as_str(), rule.as_str(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything the dashboard shows.
pub struct DashboardInput<'a> {
    pub clock: Timestamp,
    pub violation_count: usize,
    pub summary: &'a PeriodSummary,
    pub lead_times: &'a LeadTimeStats,
    pub clusters: &'a [Cluster],
    /// Case id to timeline file name, relative to the dashboard.
    pub timelines: &'a BTreeMap<String, String>,
}

fn fmt_stat(v: Option<f64>) -> String {
    match v {
        Some(s) if s.fract() == 0.0 => format_seconds(s as i64),
        Some(s) => format!("{s:.1}s"),
        None => "-".into(),
    }
}

/// Static page without scripts.
pub fn dashboard_html(d: &DashboardInput<'_>) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Compliance dashboard</title>\n<style>\n\
         body {{ font-family: sans-serif; margin: 2em; }}\ntable {{ border-collapse: collapse; margin-bottom: 2em; }}\n\
         td, th {{ padding: 4px 10px; border-bottom: 1px solid #ddd; text-align: left; }}\n\
         .systemic {{ color: #b00; font-weight: bold; }}\n</style>\n</head>\n<body>\n\
         <h1>Compliance dashboard</h1>\n<p>As of {}: {} violation(s) in total.</p>\n",
        format_timestamp(&d.clock),
        d.violation_count
    );

    let rules: Vec<String> = d.summary.rule_totals().into_keys().collect();
    let _ = write!(out, "<h2>Violations per {}</h2>\n<table>\n<tr><th>Period</th>", d.summary.granularity);
    for r in &rules {
        let _ = write!(out, "<th>{}</th>", escape_html(r));
    }
    out.push_str("<th>Total</th></tr>\n");
    for (period, counts) in &d.summary.periods {
        let _ = write!(out, "<tr><td>{}</td>", escape_html(period));
        for r in &rules {
            let _ = write!(out, "<td>{}</td>", counts.get(r).copied().unwrap_or(0));
        }
        let _ = writeln!(out, "<td>{}</td></tr>", d.summary.period_total(period));
    }
    out.push_str("</table>\n");

    out.push_str("<h2>Lead times</h2>\n<table>\n<tr><th>Metric</th><th>Count</th><th>Mean</th><th>Median</th><th>Max</th></tr>\n");
    for (m, a) in &d.lead_times.aggregates {
        let _ = writeln!(
            out,
            "<tr><td>{m}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            a.count,
            fmt_stat(a.mean),
            fmt_stat(a.median),
            a.max.map_or("-".into(), format_seconds)
        );
    }
    out.push_str("</table>\n");

    out.push_str("<h2>Clusters</h2>\n<table>\n<tr><th>Rules</th><th>Cases</th><th>Flag</th></tr>\n");
    for c in d.clusters {
        let rules: Vec<&str> = c.rule_ids.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td{}>{}</td></tr>",
            escape_html(&rules.join(", ")),
            c.case_count(),
            if c.systemic_candidate { " class=\"systemic\"" } else { "" },
            if c.systemic_candidate { "systemic candidate" } else { "" }
        );
    }
    out.push_str("</table>\n");

    out.push_str("<h2>Open violations</h2>\n<table>\n<tr><th>Case</th><th>Rule</th><th>Violation</th><th>Follow-up</th></tr>\n");
    for r in d.lead_times.rows.iter().filter(|r| r.is_open()) {
        let case = match d.timelines.get(&r.case_id) {
            Some(file) => format!("<a href=\"{}\">{}</a>", escape_html(file), escape_html(&r.case_id)),
            None => escape_html(&r.case_id),
        };
        let _ = writeln!(
            out,
            "<tr><td>{case}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape_html(&r.rule_id),
            format_timestamp(&r.violation_ts),
            opt_ts(r.followup_start)
        );
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}

/// File-system safe stem for per-case files.
pub fn case_file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
