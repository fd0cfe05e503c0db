//! One evaluation cycle: ingest, evaluate against the checkpoint, dispatch,
//! persist, export. `run` performs one cycle and `watch` repeats it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ccl_core::analytics::{discover_dfg, export_dot, lead_times, summarize, Granularity, LeadTimeStats, PeriodSummary};
use ccl_core::crl::{parse_registry_with, CrlError, ListResolver, RuleRegistry};
use ccl_core::engine::{violation_layer, Engine, EngineError, ViolationRecord};
use ccl_core::event::{merge_logs, EventLog, Layer, LogError, Timestamp, Trace};
use ccl_core::followup::{ActionStatus, FollowUpAction, FollowUpError, FollowUpKind};
use ccl_core::layers::{compose, render_timeline, LayerError, MultiLayerLog};
use ccl_core::network::{build_network, components, layout, ViolationNetwork};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dispatch::{render_report, DispatchError, Dispatcher, Sleep, Transport};
use crate::export::{self, DashboardInput};
use crate::ingest::{self, IngestError, Resolution};
use crate::state::{write_atomic, RunState, StateError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read registry {path}: {source}")]
    RegistryIo {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{source}")]
    Registry {
        path: String,
        #[source]
        source: CrlError,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    /// 2 for configuration, parse and usage errors, 3 for IO errors.
    pub fn exit_code(&self) -> u8 {
        let io = match self {
            RunError::Config(e) => return e.exit_code(),
            RunError::RegistryIo { .. } | RunError::Output { .. } => true,
            RunError::Ingest(e) => e.is_io(),
            RunError::State(e) => e.is_io(),
            RunError::Dispatch(e) => matches!(e, DispatchError::Io { .. }),
            RunError::Registry { .. } | RunError::Input(_) | RunError::Engine(_) | RunError::Layer(_) => false,
        };
        if io {
            3
        } else {
            2
        }
    }
}

impl From<LogError> for RunError {
    fn from(e: LogError) -> Self {
        RunError::Input(e.to_string())
    }
}

/// Reads `list NAME from "path"` files relative to the registry.
struct FileLists<'a> {
    base: &'a Path,
}

impl ListResolver for FileLists<'_> {
    fn resolve(&mut self, _name: &str, path: &str) -> Result<Vec<String>, String> {
        let full = self.base.join(path);
        fs::read_to_string(&full)
            .map(|t| t.lines().map(str::to_string).collect())
            .map_err(|e| format!("{}: {e}", full.display()))
    }
}

pub fn load_registry(path: &Path) -> Result<RuleRegistry, RunError> {
    let source = fs::read_to_string(path)
        .map_err(|source| RunError::RegistryIo { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_registry_with(&source, &mut FileLists { base })
        .map_err(|source| RunError::Registry { path: path.display().to_string(), source })
}

/// All configured event files merged in config order (business files first).
/// Ordinals stay stable while files only grow by appending.
pub fn load_events(cfg: &RunConfig) -> Result<EventLog, RunError> {
    let files = cfg
        .business_flow
        .iter()
        .map(|p| (p, Layer::BusinessFlow))
        .chain(cfg.compliance_check.iter().map(|p| (p, Layer::ComplianceCheck)));
    let mut logs = Vec::new();
    for (path, layer) in files {
        let log = ingest::read_events_file(path, layer)?;
        if let Some(e) = log.events().find(|e| !matches!(e.layer, Layer::BusinessFlow | Layer::ComplianceCheck)) {
            return Err(RunError::Input(format!(
                "{}: case `{}` has a {} event; input files may only hold business_flow and compliance_check events",
                path.display(),
                e.case_id,
                e.layer
            )));
        }
        logs.push(log);
    }
    let mut log = merge_logs(&logs)?;
    log.source = "events".into();
    if let Some(path) = &cfg.case_attributes {
        log.set_case_attributes(&ingest::read_case_attributes(path)?);
    }
    Ok(log)
}

fn layer_slice(log: &EventLog, layer: Layer) -> EventLog {
    let mut out = EventLog::new(layer.as_str());
    for (case_id, trace) in &log.traces {
        let events: Vec<_> = trace.events.iter().filter(|e| e.layer == layer).cloned().collect();
        if !events.is_empty() {
            let mut t = Trace::new(case_id.clone());
            t.case_attributes = trace.case_attributes.clone();
            t.events = events;
            out.traces.insert(case_id.clone(), t);
        }
    }
    out
}

/// The four-layer log of `events` plus everything recorded in `state`.
pub fn compose_all(events: &EventLog, state: &RunState) -> Result<MultiLayerLog, RunError> {
    Ok(compose(
        &layer_slice(events, Layer::BusinessFlow),
        &layer_slice(events, Layer::ComplianceCheck),
        &violation_layer(&state.violations),
        &state.ledger.layer(),
    )?)
}

/// Records resolution notices in file order. Returns the rejected rows; the
/// accepted ones are in the ledger either way.
pub fn apply_resolutions<'r>(
    state: &mut RunState,
    rows: &'r [Resolution],
) -> Vec<(&'r Resolution, FollowUpError)> {
    let mut rejected = Vec::new();
    for r in rows {
        if let Err(e) = state.ledger.record_resolution(&r.case_id, &r.rule_id, r.resolved_at) {
            rejected.push((r, e));
        }
    }
    rejected
}

/// Violations in follow-up order.
fn in_dispatch_order(violations: &[ViolationRecord]) -> Vec<&ViolationRecord> {
    let mut vs: Vec<&ViolationRecord> = violations.iter().collect();
    vs.sort_by(|a, b| {
        (a.violation_ts, &a.case_id, &a.rule_id, &a.dedup_key).cmp(&(b.violation_ts, &b.case_id, &b.rule_id, &b.dedup_key))
    });
    vs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub clock: Timestamp,
    pub dry_run: bool,
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub new_violations: Vec<ViolationRecord>,
    /// Events at or below a case watermark, consumed by an earlier run.
    pub skipped_events: usize,
    pub actions: Vec<FollowUpAction>,
    pub report: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn failed_actions(&self) -> usize {
        self.actions.iter().filter(|a| a.status == ActionStatus::Failed).count()
    }
}

/// Runs every follow-up the ledger still owes. Failed webhooks stay owed and
/// are retried by the next run.
fn dispatch_followups(
    cfg: &RunConfig,
    registry: &RuleRegistry,
    state: &mut RunState,
    opts: RunOptions,
    transport: &mut dyn Transport,
    sleeper: &mut dyn Sleep,
) -> Result<(Vec<FollowUpAction>, Option<PathBuf>), RunError> {
    let pending: Vec<ViolationRecord> = in_dispatch_order(&state.violations).into_iter().cloned().collect();
    let mut actions = Vec::new();
    let mut report = None;
    if cfg.dispatch.reports {
        let summary = summarize(&state.violations, cfg.granularity);
        let unreported: Vec<&ViolationRecord> =
            pending.iter().filter(|v| state.ledger.needs_report(&v.dedup_key)).collect();
        if let Some((path, _)) = render_report(&pending, &summary, registry, opts.clock, &cfg.outbox, &mut state.ledger)? {
            for v in unreported {
                let mut a = FollowUpAction::planned(FollowUpKind::Report, path.display().to_string(), v.into());
                a.mark_sent(1).expect("fresh action");
                actions.push(a);
            }
            report = Some(path);
        }
    }
    let mut dispatcher = Dispatcher::new(transport, sleeper, opts.dry_run);
    let text = |v: &ViolationRecord| registry.rule(&v.rule_id).map(|r| r.description.clone()).unwrap_or_default();
    if let Some(endpoint) = &cfg.dispatch.ticket_endpoint {
        for v in &pending {
            if let Some((action, _)) = dispatcher.create_ticket(&mut state.ledger, v, &text(v), endpoint, opts.clock)? {
                actions.push(action);
            }
        }
    }
    if let Some(endpoint) = &cfg.dispatch.rpa_endpoint {
        for v in &pending {
            if let Some(action) = dispatcher.trigger_rpa(&mut state.ledger, v, &text(v), endpoint)? {
                actions.push(action);
            }
        }
    }
    Ok((actions, report))
}

/// One cycle. The state file is saved before outputs are written, so a
/// failed export never causes follow-ups to be repeated.
pub fn run_once(
    cfg: &RunConfig,
    opts: RunOptions,
    transport: &mut dyn Transport,
    sleeper: &mut dyn Sleep,
) -> Result<RunOutcome, RunError> {
    let registry = load_registry(&cfg.registry)?;
    let events = load_events(cfg)?;
    let mut state = RunState::load(&cfg.state)?;

    let engine = Engine::new(&registry).with_completion(cfg.completion.iter().cloned());
    let skipped_events = state.checkpoint.unseen(&events).1;
    let (new_violations, checkpoint) = engine.evaluate_incremental(&events, &state.checkpoint, opts.clock)?;
    state.checkpoint = checkpoint;
    state.violations.extend(new_violations.iter().cloned());
    state.runs += 1;

    let (actions, report) = dispatch_followups(cfg, &registry, &mut state, opts, transport, sleeper)?;
    state.actions.extend(actions.iter().cloned());
    state.save(&cfg.state)?;

    let outputs = write_outputs(cfg, &events, &state, opts.clock)?;
    Ok(RunOutcome { new_violations, skipped_events, actions, report, outputs })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf, RunError> {
    write_atomic(path, bytes).map_err(|source| RunError::Output { path: path.display().to_string(), source })?;
    Ok(path.to_path_buf())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing CSV to memory");
    buf
}

pub fn network_of(cfg: &RunConfig, violations: &[ViolationRecord]) -> ViolationNetwork {
    let net = build_network(violations);
    if net.is_empty() {
        net
    } else {
        layout(&net, &cfg.layout).expect("layout params are validated with the config")
    }
}

pub fn analytics_of(
    multilog: &MultiLayerLog,
    violations: &[ViolationRecord],
    granularity: Granularity,
) -> (PeriodSummary, LeadTimeStats) {
    (summarize(violations, granularity), lead_times(multilog, violations))
}

/// Timeline file stems for every case with a violation. Cases whose
/// sanitized ids collide get a numeric suffix.
pub fn timeline_names(violations: &[ViolationRecord]) -> BTreeMap<String, String> {
    let cases: BTreeSet<&str> = violations.iter().map(|v| v.case_id.as_str()).collect();
    let mut used = BTreeSet::new();
    let mut out = BTreeMap::new();
    for case in cases {
        let stem = export::case_file_stem(case);
        let mut name = format!("timeline_{stem}");
        let mut n = 2;
        while !used.insert(name.clone()) {
            name = format!("timeline_{stem}_{n}");
            n += 1;
        }
        out.insert(case.to_string(), name);
    }
    out
}

/// Writes timeline HTML and TSV files for `cases` into `dir`.
pub fn write_timelines(
    multilog: &MultiLayerLog,
    names: &BTreeMap<String, String>,
    dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    let mut out = Vec::new();
    for (case, name) in names {
        let timeline = render_timeline(multilog, case)?;
        out.push(write_file(&dir.join(format!("{name}.html")), timeline.to_html().as_bytes())?);
        out.push(write_file(&dir.join(format!("{name}.tsv")), timeline.to_tsv().as_bytes())?);
    }
    Ok(out)
}

pub fn write_analytics(
    cfg: &RunConfig,
    multilog: &MultiLayerLog,
    state: &RunState,
    granularity: Granularity,
    clock: Timestamp,
) -> Result<Vec<PathBuf>, RunError> {
    let dir = &cfg.output_dir;
    let (summary, stats) = analytics_of(multilog, &state.violations, granularity);
    let clusters = components(&build_network(&state.violations), cfg.systemic_threshold);
    let names = timeline_names(&state.violations);
    let links: BTreeMap<String, String> =
        names.iter().map(|(case, name)| (case.clone(), format!("timelines/{name}.html"))).collect();
    let dashboard = export::dashboard_html(&DashboardInput {
        clock,
        violation_count: state.violations.len(),
        summary: &summary,
        lead_times: &stats,
        clusters: &clusters,
        timelines: &links,
    });
    Ok(vec![
        write_file(&dir.join("lead_times.csv"), &csv_bytes(|b| export::write_lead_times_csv(&stats, b)))?,
        write_file(&dir.join(format!("summary_{granularity}.csv")), &csv_bytes(|b| export::write_summary_csv(&summary, b)))?,
        write_file(&dir.join("dashboard.html"), dashboard.as_bytes())?,
    ])
}

/// Every output file of a run, derived from the inputs and the saved state.
pub fn write_outputs(
    cfg: &RunConfig,
    events: &EventLog,
    state: &RunState,
    clock: Timestamp,
) -> Result<Vec<PathBuf>, RunError> {
    let dir = &cfg.output_dir;
    let multilog = compose_all(events, state)?;
    let net = network_of(cfg, &state.violations);
    let mut out = vec![
        write_file(&dir.join("violations.csv"), &csv_bytes(|b| ingest::write_events_csv(&violation_layer(&state.violations), b)))?,
        write_file(&dir.join("composed.csv"), &csv_bytes(|b| ingest::write_events_csv(&multilog.log, b)))?,
        write_file(&dir.join("model.dot"), export_dot(&discover_dfg(&multilog, None)).as_bytes())?,
        write_file(&dir.join("network.json"), export::network_json(&net).as_bytes())?,
        write_file(&dir.join("network.graphml"), export::network_graphml(&net).as_bytes())?,
    ];
    out.extend(write_analytics(cfg, &multilog, state, cfg.granularity, clock)?);
    out.extend(write_timelines(&multilog, &timeline_names(&state.violations), &dir.join("timelines"))?);
    Ok(out)
}
