//! Bipartite violation network, force-directed layout and clusters.
//!
//! Layout forces between nodes `u` and `v` at distance `d`:
//!
//! * repulsion between every pair, `k_r * (deg(u) + 1) * (deg(v) + 1) / d`
//! * attraction along every edge, `k_a * d`
//!
//! Each iteration moves every node by `eta * F`, with
//! `eta = 1 / (4 * k_a * (max_deg + 1))`, capped by a temperature that decays
//! linearly from the initial spread to zero. Positions are double-buffered and
//! summed in a fixed order, so equal inputs give bit-identical coordinates.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ViolationRecord;

pub const RULE_COLOR: &str = "blue";
pub const CASE_COLOR: &str = "red";
pub const DEFAULT_SYSTEMIC_THRESHOLD: usize = 10;

/// A node is a rule or a case; the two id spaces are kept apart.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Rule(String),
    Case(String),
}

impl NodeId {
    pub fn name(&self) -> &str {
        match self {
            NodeId::Rule(s) | NodeId::Case(s) => s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NodeId::Rule(_) => "rule",
            NodeId::Case(_) => "case",
        }
    }

    pub fn color(&self) -> &'static str {
        match self {
            NodeId::Rule(_) => RULE_COLOR,
            NodeId::Case(_) => CASE_COLOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationNetwork {
    /// Violations per rule (node size).
    pub rule_nodes: BTreeMap<String, usize>,
    /// Violations per case (node size).
    pub case_nodes: BTreeMap<String, usize>,
    /// `(rule_id, case_id)` to number of violations.
    pub edges: BTreeMap<(String, String), usize>,
    pub positions: BTreeMap<NodeId, (f64, f64)>,
}

impl ViolationNetwork {
    pub fn is_empty(&self) -> bool {
        self.rule_nodes.is_empty() && self.case_nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.rule_nodes.len() + self.case_nodes.len()
    }

    /// All nodes, rules first, each group sorted.
    pub fn nodes(&self) -> Vec<NodeId> {
        self.rule_nodes
            .keys()
            .map(|r| NodeId::Rule(r.clone()))
            .chain(self.case_nodes.keys().map(|c| NodeId::Case(c.clone())))
            .collect()
    }

    pub fn size(&self, node: &NodeId) -> usize {
        match node {
            NodeId::Rule(r) => self.rule_nodes.get(r).copied().unwrap_or(0),
            NodeId::Case(c) => self.case_nodes.get(c).copied().unwrap_or(0),
        }
    }

    /// Number of distinct neighbours.
    pub fn degree(&self, node: &NodeId) -> usize {
        match node {
            NodeId::Rule(r) => self.edges.keys().filter(|(er, _)| er == r).count(),
            NodeId::Case(c) => self.edges.keys().filter(|(_, ec)| ec == c).count(),
        }
    }

    /// Every edge joins a known rule node to a known case node, every node has
    /// an edge, and node sizes equal their summed edge multiplicities.
    pub fn is_well_formed(&self) -> bool {
        let mut rule_sum: BTreeMap<&str, usize> = BTreeMap::new();
        let mut case_sum: BTreeMap<&str, usize> = BTreeMap::new();
        for ((r, c), &n) in &self.edges {
            if n == 0 || !self.rule_nodes.contains_key(r) || !self.case_nodes.contains_key(c) {
                return false;
            }
            *rule_sum.entry(r).or_insert(0) += n;
            *case_sum.entry(c).or_insert(0) += n;
        }
        self.rule_nodes.iter().all(|(r, &n)| rule_sum.get(r.as_str()) == Some(&n))
            && self.case_nodes.iter().all(|(c, &n)| case_sum.get(c.as_str()) == Some(&n))
    }

    /// Structure without positions, for comparisons across layouts.
    pub fn without_positions(&self) -> ViolationNetwork {
        ViolationNetwork { positions: BTreeMap::new(), ..self.clone() }
    }
}

pub fn build_network(violations: &[ViolationRecord]) -> ViolationNetwork {
    let mut net = ViolationNetwork::default();
    for v in violations {
        *net.rule_nodes.entry(v.rule_id.clone()).or_insert(0) += 1;
        *net.case_nodes.entry(v.case_id.clone()).or_insert(0) += 1;
        *net.edges.entry((v.rule_id.clone(), v.case_id.clone())).or_insert(0) += 1;
    }
    net
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub attraction: f64,
    pub repulsion: f64,
    pub max_iterations: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams { attraction: 1.0, repulsion: 1.0, max_iterations: 1000, epsilon: 1e-4, seed: 42 }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.attraction) {
            return Err(LayoutError::InvalidParams("attraction must be finite and > 0"));
        }
        if !positive(self.repulsion) {
            return Err(LayoutError::InvalidParams("repulsion must be finite and > 0"));
        }
        if !positive(self.epsilon) {
            return Err(LayoutError::InvalidParams("epsilon must be finite and > 0"));
        }
        if self.max_iterations == 0 {
            return Err(LayoutError::InvalidParams("max_iterations must be >= 1"));
        }
        Ok(())
    }

    /// Edge length at which the two forces balance for two degree-1 nodes.
    pub fn equilibrium_distance(&self) -> f64 {
        libm::sqrt(4.0 * self.repulsion / self.attraction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("cannot lay out an empty network")]
    EmptyNetwork,
    #[error("invalid layout parameters: {0}")]
    InvalidParams(&'static str),
}

/// How a layout run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutStats {
    pub iterations: usize,
    pub converged: bool,
    pub max_displacement: f64,
}

pub fn layout(network: &ViolationNetwork, params: &LayoutParams) -> Result<ViolationNetwork, LayoutError> {
    layout_with_stats(network, params).map(|(net, _)| net)
}

pub fn layout_with_stats(
    network: &ViolationNetwork,
    params: &LayoutParams,
) -> Result<(ViolationNetwork, LayoutStats), LayoutError> {
    params.validate()?;
    if network.is_empty() {
        return Err(LayoutError::EmptyNetwork);
    }
    let nodes = network.nodes();
    let n = nodes.len();
    let index: BTreeMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let edges: Vec<(usize, usize)> = network
        .edges
        .keys()
        .map(|(r, c)| (index[&NodeId::Rule(r.clone())], index[&NodeId::Case(c.clone())]))
        .collect();
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mass: Vec<f64> = degree.iter().map(|&d| (d + 1) as f64).collect();
    let max_degree = degree.iter().copied().max().unwrap_or(0);

    let spread = libm::sqrt(n as f64).max(1.0) * params.equilibrium_distance();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pos: Vec<(f64, f64)> = (0..n).map(|_| (spread * unit(&mut rng), spread * unit(&mut rng))).collect();

    let eta = 1.0 / (4.0 * params.attraction * (max_degree + 1) as f64);
    let mut stats = LayoutStats { iterations: 0, converged: false, max_displacement: 0.0 };
    let mut force = vec![(0.0f64, 0.0f64); n];
    for iteration in 0..params.max_iterations {
        force.iter_mut().for_each(|f| *f = (0.0, 0.0));
        for i in 0..n {
            for j in i + 1..n {
                let (mut dx, mut dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
                let mut d = libm::sqrt(dx * dx + dy * dy);
                if d < 1e-9 {
                    (dx, dy) = jitter(i, j);
                    d = 1e-9;
                    dx *= d;
                    dy *= d;
                }
                let f = params.repulsion * mass[i] * mass[j] / d;
                let (fx, fy) = (f * dx / d, f * dy / d);
                force[i].0 += fx;
                force[i].1 += fy;
                force[j].0 -= fx;
                force[j].1 -= fy;
            }
        }
        for &(a, b) in &edges {
            let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
            force[a].0 -= params.attraction * dx;
            force[a].1 -= params.attraction * dy;
            force[b].0 += params.attraction * dx;
            force[b].1 += params.attraction * dy;
        }

        let temperature = spread * (1.0 - iteration as f64 / params.max_iterations as f64);
        let mut max_step = 0.0f64;
        for (p, f) in pos.iter_mut().zip(&force) {
            let (mut sx, mut sy) = (eta * f.0, eta * f.1);
            let len = libm::sqrt(sx * sx + sy * sy);
            if len > temperature {
                sx *= temperature / len;
                sy *= temperature / len;
            }
            max_step = max_step.max(len.min(temperature));
            p.0 += sx;
            p.1 += sy;
        }
        stats = LayoutStats { iterations: iteration + 1, converged: max_step < params.epsilon, max_displacement: max_step };
        if stats.converged {
            break;
        }
    }

    let mut out = network.clone();
    out.positions = nodes.into_iter().zip(pos).collect();
    Ok((out, stats))
}

/// Uniform in `[-0.5, 0.5)`.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Fixed unit direction separating coincident nodes `i < j`.
fn jitter(i: usize, j: usize) -> (f64, f64) {
    const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
    let angle = GOLDEN_ANGLE * (i * 31 + j) as f64;
    (libm::cos(angle), libm::sin(angle))
}

/// A connected component of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub rule_ids: BTreeSet<String>,
    pub case_ids: BTreeSet<String>,
    /// Set when the cluster holds at least the threshold number of cases.
    pub systemic_candidate: bool,
}

impl Cluster {
    pub fn case_count(&self) -> usize {
        self.case_ids.len()
    }

    pub fn node_count(&self) -> usize {
        self.rule_ids.len() + self.case_ids.len()
    }
}

/// Connected components, largest case count first, ties by smallest node.
pub fn components(network: &ViolationNetwork, systemic_threshold: usize) -> Vec<Cluster> {
    let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = network.nodes().into_iter().map(|n| (n, Vec::new())).collect();
    for (r, c) in network.edges.keys() {
        let (rule, case) = (NodeId::Rule(r.clone()), NodeId::Case(c.clone()));
        adjacency.entry(rule.clone()).or_default().push(case.clone());
        adjacency.entry(case).or_default().push(rule);
    }
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut clusters = Vec::new();
    for start in adjacency.keys() {
        if !seen.insert(start.clone()) {
            continue;
        }
        let mut cluster = Cluster { rule_ids: BTreeSet::new(), case_ids: BTreeSet::new(), systemic_candidate: false };
        let mut queue = VecDeque::from([start.clone()]);
        while let Some(node) = queue.pop_front() {
            for next in &adjacency[&node] {
                if seen.insert(next.clone()) {
                    queue.push_back(next.clone());
                }
            }
            match node {
                NodeId::Rule(r) => cluster.rule_ids.insert(r),
                NodeId::Case(c) => cluster.case_ids.insert(c),
            };
        }
        cluster.systemic_candidate = cluster.case_count() >= systemic_threshold;
        clusters.push(cluster);
    }
    clusters.sort_by(|a, b| b.case_count().cmp(&a.case_count()));
    clusters
}
