//! `ccl` command line.
//!
//! Exit codes: 0 success, 1 new violations with `--fail-on-violation`,
//! 2 configuration, parse or usage errors, 3 IO errors.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use ccl::config::{ConfigError, RunConfig};
use ccl::dispatch::{HttpTransport, ThreadSleep};
use ccl::export;
use ccl::ingest;
use ccl::pipeline::{self, RunError, RunOptions, RunOutcome};
use ccl::state::RunState;
use ccl_core::analytics::{discover_dfg, export_dot, format_seconds, Granularity};
use ccl_core::crl::validate_registry;
use ccl_core::event::{format_timestamp, parse_timestamp, Layer, Timestamp};
use ccl_core::layers::render_timeline;
use ccl_core::network::components;
use chrono::{SubsecRound, Utc};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ccl", version, about = "Continuous compliance checks over layered event logs")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "ccl.toml")]
    config: PathBuf,
    /// Evaluation clock, `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SSZ`. Defaults to
    /// the config's clock, then the wall clock.
    #[arg(long, global = true, value_parser = parse_timestamp)]
    clock: Option<Timestamp>,
    /// Record follow-ups without any network requests.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Exit with 1 when a run finds new violations.
    #[arg(long, global = true)]
    fail_on_violation: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the registry and check it against the activities in the event files.
    Validate,
    /// Evaluate new events, dispatch follow-ups and write all outputs.
    Run,
    /// Repeat `run` at a fixed interval until interrupted.
    Watch {
        /// Seconds between the end of one cycle and the start of the next.
        #[arg(long, default_value_t = 3600, value_parser = clap::value_parser!(u64).range(1..))]
        interval: u64,
        /// Stop after this many cycles.
        #[arg(long)]
        max_cycles: Option<u64>,
    },
    /// Directly-follows model of the composed log as DOT.
    Dfg {
        /// Comma-separated layers to include (default: all).
        #[arg(long, value_delimiter = ',')]
        layers: Vec<Layer>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Violation network with layout.
    Network {
        #[arg(long, value_enum, default_value_t = NetworkFormat::Json)]
        format: NetworkFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Lead times, period summary and dashboard from the saved state.
    Report {
        #[arg(long)]
        granularity: Option<Granularity>,
    },
    /// Composed four-layer log and case timelines.
    Compose {
        /// Render the timeline of this case only.
        #[arg(long)]
        case: Option<String>,
        /// Composed CSV path (default: <output_dir>/composed.csv).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Import resolution notices (`case_id,rule_id,resolved_at`).
    Resolve { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NetworkFormat {
    Json,
    Graphml,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", render(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// The error chain, skipping causes whose text a previous message already includes.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return e.exit_code();
        }
        if cause.is::<io::Error>() {
            return 3;
        }
    }
    2
}

fn execute(cli: &Cli) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.dry_run |= cli.dry_run;
    match &cli.command {
        Command::Validate => validate(&cfg),
        Command::Run => {
            let outcome = run(&cfg, clock_of(cli, &cfg))?;
            print_outcome(&outcome);
            Ok(if cli.fail_on_violation && !outcome.new_violations.is_empty() { 1 } else { 0 })
        }
        Command::Watch { interval, max_cycles } => watch(cli, &cfg, *interval, *max_cycles),
        Command::Dfg { layers, output } => {
            let (_, multilog) = composed(&cfg)?;
            let filter: BTreeSet<Layer> = layers.iter().copied().collect();
            let dfg = discover_dfg(&multilog, (!filter.is_empty()).then_some(&filter));
            emit(output.as_deref(), &export_dot(&dfg))?;
            Ok(0)
        }
        Command::Network { format, output } => {
            let state = RunState::load(&cfg.state).map_err(RunError::from)?;
            let net = pipeline::network_of(&cfg, &state.violations);
            for c in components(&net, cfg.systemic_threshold) {
                let rules: Vec<&str> = c.rule_ids.iter().map(String::as_str).collect();
                log::info!(
                    "cluster [{}]: {} case(s){}",
                    rules.join(", "),
                    c.case_count(),
                    if c.systemic_candidate { ", systemic candidate" } else { "" }
                );
            }
            let doc = match format {
                NetworkFormat::Json => export::network_json(&net),
                NetworkFormat::Graphml => export::network_graphml(&net),
            };
            emit(output.as_deref(), &doc)?;
            Ok(0)
        }
        Command::Report { granularity } => report(&cfg, granularity.unwrap_or(cfg.granularity), clock_of(cli, &cfg)),
        Command::Compose { case, output } => compose(&cfg, case.as_deref(), output.clone()),
        Command::Resolve { file } => resolve(&cfg, file),
    }
}

fn clock_of(cli: &Cli, cfg: &RunConfig) -> Timestamp {
    cli.clock.or(cfg.clock).unwrap_or_else(|| Utc::now().trunc_subsecs(0))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).context("cannot write to stdout"),
    }
}

fn validate(cfg: &RunConfig) -> anyhow::Result<u8> {
    let registry = pipeline::load_registry(&cfg.registry)?;
    let events = pipeline::load_events(cfg)?;
    let warnings = validate_registry(&registry, &events.activities());
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} rule(s), {} event(s) in {} case(s), {} warning(s)",
        cfg.registry.display(),
        registry.len(),
        events.event_count(),
        events.traces.len(),
        warnings.len()
    );
    Ok(0)
}

fn run(cfg: &RunConfig, clock: Timestamp) -> Result<RunOutcome, RunError> {
    let mut transport = HttpTransport::new(cfg.dispatch.timeout);
    pipeline::run_once(cfg, RunOptions { clock, dry_run: cfg.dry_run }, &mut transport, &mut ThreadSleep)
}

fn print_outcome(o: &RunOutcome) {
    for v in &o.new_violations {
        println!("violation {} {} {}", v.case_id, v.rule_id, format_timestamp(&v.violation_ts));
    }
    println!(
        "{} new violation(s), {} event(s) already processed, {} follow-up action(s) ({} failed), {} output file(s)",
        o.new_violations.len(),
        o.skipped_events,
        o.actions.len(),
        o.failed_actions(),
        o.outputs.len()
    );
    for a in o.actions.iter().filter(|a| a.error.is_some()) {
        eprintln!("warning: {} for {} failed: {}", a.kind, a.violation.dedup_key, a.error.as_deref().unwrap_or(""));
    }
    if let Some(r) = &o.report {
        println!("report: {}", r.display());
    }
}

fn watch(cli: &Cli, cfg: &RunConfig, interval: u64, max_cycles: Option<u64>) -> anyhow::Result<u8> {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("cannot install interrupt handler")?;
    let interval = Duration::from_secs(interval);
    let mut cycle = 0u64;
    loop {
        cycle += 1;
        match run(cfg, clock_of(cli, cfg)) {
            Ok(o) => {
                log::info!("cycle {cycle}: {} new violation(s), {} failed action(s)", o.new_violations.len(), o.failed_actions());
                for v in &o.new_violations {
                    println!("violation {} {} {}", v.case_id, v.rule_id, format_timestamp(&v.violation_ts));
                }
            }
            Err(e) => log::error!("cycle {cycle} failed: {e}"),
        }
        if max_cycles.is_some_and(|m| cycle >= m) || stop.load(Ordering::SeqCst) {
            break;
        }
        // Sleep in short slices so an interrupt ends the wait promptly.
        let deadline = Instant::now() + interval;
        while !stop.load(Ordering::SeqCst) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            std::thread::sleep(left.min(Duration::from_millis(50)));
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
    }
    // Each cycle saves the state before returning, so there is nothing left to flush.
    log::info!("stopped after {cycle} cycle(s); state in {}", cfg.state.display());
    Ok(0)
}

fn composed(cfg: &RunConfig) -> Result<(RunState, ccl_core::layers::MultiLayerLog), RunError> {
    let events = pipeline::load_events(cfg)?;
    let state = RunState::load(&cfg.state)?;
    let multilog = pipeline::compose_all(&events, &state)?;
    Ok((state, multilog))
}

fn report(cfg: &RunConfig, granularity: Granularity, clock: Timestamp) -> anyhow::Result<u8> {
    let (state, multilog) = composed(cfg)?;
    let (summary, stats) = pipeline::analytics_of(&multilog, &state.violations, granularity);
    for (period, rules) in &summary.periods {
        let counts: Vec<String> = rules.iter().map(|(r, n)| format!("{r}:{n}")).collect();
        println!("{period}\t{}", counts.join(" "));
    }
    for (metric, agg) in &stats.aggregates {
        let median = agg.median.map_or("-".to_string(), |m| format_seconds(m as i64));
        println!("{metric}\tcount={} median={median}", agg.count);
    }
    for path in pipeline::write_analytics(cfg, &multilog, &state, granularity, clock)? {
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn compose(cfg: &RunConfig, case: Option<&str>, output: Option<PathBuf>) -> anyhow::Result<u8> {
    let (state, multilog) = composed(cfg)?;
    let path = output.unwrap_or_else(|| cfg.output_dir.join("composed.csv"));
    let mut buf = Vec::new();
    ingest::write_events_csv(&multilog.log, &mut buf).context("cannot render composed log")?;
    ccl::state::write_atomic(&path, &buf).with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    let dir = cfg.output_dir.join("timelines");
    let names = match case {
        Some(c) => {
            render_timeline(&multilog, c).map_err(RunError::from)?;
            [(c.to_string(), format!("timeline_{}", export::case_file_stem(c)))].into_iter().collect()
        }
        None => pipeline::timeline_names(&state.violations),
    };
    for p in pipeline::write_timelines(&multilog, &names, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(0)
}

fn resolve(cfg: &RunConfig, file: &Path) -> anyhow::Result<u8> {
    let rows = ingest::read_resolutions_file(file).map_err(RunError::from)?;
    let mut state = RunState::load(&cfg.state).map_err(RunError::from)?;
    let rejected = pipeline::apply_resolutions(&mut state, &rows);
    for (r, e) in &rejected {
        eprintln!("error: {}:{}: {} {}: {e}", file.display(), r.line, r.case_id, r.rule_id);
    }
    state.save(&cfg.state).map_err(RunError::from)?;
    println!("{} of {} resolution(s) applied", rows.len() - rejected.len(), rows.len());
    Ok(if rejected.is_empty() { 0 } else { 2 })
}
