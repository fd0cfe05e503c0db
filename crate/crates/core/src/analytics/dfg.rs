//! Directly-follows graphs over layered logs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use core::fmt::Write;

use crate::event::Layer;
use crate::layers::MultiLayerLog;

/// A node of the model: the same activity in two layers gives two nodes.
pub type DfgNode = (String, Layer);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectlyFollowsGraph {
    /// Occurrence count per node.
    pub nodes: BTreeMap<DfgNode, usize>,
    /// Traversal count per directly-follows pair.
    pub edges: BTreeMap<(DfgNode, DfgNode), usize>,
    /// How many traces start with each node.
    pub starts: BTreeMap<DfgNode, usize>,
    /// How many traces end with each node.
    pub ends: BTreeMap<DfgNode, usize>,
}

impl DirectlyFollowsGraph {
    /// Number of non-empty traces the graph was built from.
    pub fn trace_count(&self) -> usize {
        self.starts.values().sum()
    }

    pub fn edge_traversals(&self) -> usize {
        self.edges.values().sum()
    }

    /// Adds the counts of `other`. Discovery over a union of logs equals the
    /// merge of the per-log graphs.
    pub fn merge(&mut self, other: &DirectlyFollowsGraph) {
        fn add<K: Ord + Clone>(into: &mut BTreeMap<K, usize>, from: &BTreeMap<K, usize>) {
            for (k, n) in from {
                *into.entry(k.clone()).or_insert(0) += n;
            }
        }
        add(&mut self.nodes, &other.nodes);
        add(&mut self.edges, &other.edges);
        add(&mut self.starts, &other.starts);
        add(&mut self.ends, &other.ends);
    }
}

/// Counts directly-follows pairs per case, over the layers in `layer_filter`
/// (all layers when `None`).
pub fn discover_dfg(log: &MultiLayerLog, layer_filter: Option<&BTreeSet<Layer>>) -> DirectlyFollowsGraph {
    let mut dfg = DirectlyFollowsGraph::default();
    for trace in log.log.traces.values() {
        let mut previous: Option<DfgNode> = None;
        for event in &trace.events {
            if layer_filter.is_some_and(|f| !f.contains(&event.layer)) {
                continue;
            }
            let node: DfgNode = (event.activity.clone(), event.layer);
            *dfg.nodes.entry(node.clone()).or_insert(0) += 1;
            match previous.take() {
                Some(prev) => *dfg.edges.entry((prev, node.clone())).or_insert(0) += 1,
                None => *dfg.starts.entry(node.clone()).or_insert(0) += 1,
            }
            previous = Some(node);
        }
        if let Some(last) = previous {
            *dfg.ends.entry(last).or_insert(0) += 1;
        }
    }
    dfg
}

/// Renders the graph as DOT. Nodes are filled with their layer color and
/// edges are labelled with traversal counts.
pub fn export_dot(dfg: &DirectlyFollowsGraph) -> String {
    let mut out = String::from("digraph dfg {\n  rankdir=LR;\n  node [shape=box, style=\"rounded,filled\", fontname=\"Helvetica\"];\n");
    let ids: BTreeMap<&DfgNode, usize> = dfg.nodes.keys().enumerate().map(|(i, n)| (n, i)).collect();
    for ((activity, layer), count) in &dfg.nodes {
        let _ = writeln!(
            out,
            "  n{} [label=\"{} ({})\", fillcolor=\"{}\", tooltip=\"{}\"];",
            ids[&(activity.clone(), *layer)],
            escape_dot(activity),
            count,
            layer.color(),
            layer
        );
    }
    for ((from, to), count) in &dfg.edges {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", ids[from], ids[to], count);
    }
    out.push_str("}\n");
    out
}

fn escape_dot(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}
