//! End-to-end runs of the `ccl` binary against the running-example fixture.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use ccl::state::RunState;
use ccl_core::followup::{ActionStatus, INCIDENT_CREATED, INCIDENT_RESOLVED, REPORT_SENT};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/running_example");

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(FIXTURE).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn ccl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccl"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn state(dir: &Path) -> RunState {
    RunState::load(&dir.join("state/ccl-state.json")).unwrap()
}

fn set_config(dir: &Path, from: &str, to: &str) {
    let path = dir.join("ccl.toml");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains(from), "config lacks `{from}`");
    fs::write(&path, text.replace(from, to)).unwrap();
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn validate_reports_no_warnings_for_the_running_example() {
    let dir = workspace();
    let out = ccl(dir.path(), &["validate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!stderr(&out).contains("warning"));
    assert!(stdout(&out).contains("1 rule(s), 12 event(s) in 2 case(s), 0 warning(s)"));
}

#[test]
fn validate_syntax_error_exits_2_with_line_number() {
    let dir = workspace();
    fs::write(dir.path().join("rules.crl"), "# rules\nrule R01: \"Shipment started\" only \"Delivery created\"\n").unwrap();
    let out = ccl(dir.path(), &["validate"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("rules.crl:2:35: syntax error"), "{}", stderr(&out));
}

#[test]
fn validate_warns_on_unknown_activity() {
    let dir = workspace();
    fs::write(dir.path().join("rules.crl"), "rule R09: never \"Shipment teleported\"\n").unwrap();
    let out = ccl(dir.path(), &["validate"]);
    assert_eq!(code(&out), 0);
    let err = stderr(&out);
    assert_eq!(err.matches("warning:").count(), 1, "{err}");
    assert!(err.contains("\"Shipment teleported\""));
}

#[test]
fn run_then_rerun() {
    let dir = workspace();
    let out = ccl(dir.path(), &["--dry-run", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("violation C02 R01 2021-07-21"));

    let violations = fs::read_to_string(dir.path().join("out/violations.csv")).unwrap();
    let rows: Vec<&str> = violations.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("C02,Continuous Audit finding; R01 violation,2021-07-21,violation,"));
    for file in [
        "composed.csv",
        "model.dot",
        "network.json",
        "network.graphml",
        "lead_times.csv",
        "summary_week.csv",
        "dashboard.html",
        "timelines/timeline_C02.html",
        "timelines/timeline_C02.tsv",
        "outbox/report_2021-07-24.md",
    ] {
        assert!(dir.path().join("out").join(file).is_file(), "missing {file}");
    }

    let again = ccl(dir.path(), &["--dry-run", "run"]);
    assert_eq!(code(&again), 0);
    assert!(stdout(&again).contains("0 new violation(s), 12 event(s) already processed"));
    assert_eq!(state(dir.path()).runs, 2);
}

#[test]
fn fail_on_violation_only_for_new_violations() {
    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "--fail-on-violation", "run"])), 1);
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "--fail-on-violation", "run"])), 0);
}

#[test]
fn io_and_config_exit_codes() {
    let dir = workspace();
    fs::remove_file(dir.path().join("compliance_check.csv")).unwrap();
    let out = ccl(dir.path(), &["--dry-run", "run"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("compliance_check.csv"));

    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--config", "absent.toml", "run"])), 3);
    set_config(dir.path(), "granularity = \"week\"", "granularity = \"fortnight\"");
    assert_eq!(code(&ccl(dir.path(), &["run"])), 2);

    let dir = workspace();
    fs::write(dir.path().join("business_flow.csv"), "case_id,activity\nC01,Completed\n").unwrap();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "run"])), 2);

    let dir = workspace();
    fs::create_dir_all(dir.path().join("state")).unwrap();
    fs::write(dir.path().join("state/ccl-state.json"), "{ truncated").unwrap();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "run"])), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--clock", "last tuesday", "run"])), 2);
    assert_eq!(code(&ccl(dir.path(), &["watch", "--interval", "0"])), 2);
    assert_eq!(code(&ccl(dir.path(), &["frobnicate"])), 2);
    // Events after the clock.
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "--clock", "2021-07-01", "run"])), 2);
}

#[test]
fn stale_clock_is_rejected() {
    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "--clock", "2021-07-30", "run"])), 0);
    let out = ccl(dir.path(), &["--dry-run", "--clock", "2021-07-25", "run"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stale run"), "{}", stderr(&out));
    assert_eq!(state(dir.path()).runs, 1);
}

#[test]
fn outputs_are_deterministic() {
    let (a, b) = (workspace(), workspace());
    for _ in 0..2 {
        for d in [&a, &b] {
            assert_eq!(code(&ccl(d.path(), &["--dry-run", "run"])), 0);
        }
        assert_eq!(tree(&a.path().join("out")), tree(&b.path().join("out")));
        assert_eq!(tree(&a.path().join("state")), tree(&b.path().join("state")));
    }
}

#[test]
fn resolution_import() {
    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "run"])), 0);
    let out = ccl(dir.path(), &["resolve", "resolutions.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let again = ccl(dir.path(), &["resolve", "resolutions.csv"]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("resolutions.csv:2:"), "{}", stderr(&again));

    fs::write(dir.path().join("unknown.csv"), "case_id,rule_id,resolved_at\nC01,R01,2021-07-25\n").unwrap();
    assert_eq!(code(&ccl(dir.path(), &["resolve", "unknown.csv"])), 2);
    assert_eq!(code(&ccl(dir.path(), &["resolve", "absent.csv"])), 3);

    assert_eq!(code(&ccl(dir.path(), &["compose"])), 0);
    let composed = fs::read_to_string(dir.path().join("out/composed.csv")).unwrap();
    let followups: Vec<&str> = composed.lines().filter(|l| l.contains(",follow_up,")).collect();
    assert_eq!(followups.len(), 3, "{composed}");
    for (line, activity) in followups.iter().zip([REPORT_SENT, INCIDENT_CREATED, INCIDENT_RESOLVED]) {
        assert!(line.starts_with(&format!("C02,{activity},")), "{line}");
    }
    assert!(fs::read_to_string(dir.path().join("out/timelines/timeline_C02.tsv")).unwrap().contains(INCIDENT_RESOLVED));

    assert_eq!(code(&ccl(dir.path(), &["report"])), 0);
    let lead = fs::read_to_string(dir.path().join("out/lead_times.csv")).unwrap();
    assert!(lead.lines().nth(1).unwrap().contains(",resolved,"), "{lead}");
}

#[test]
fn model_and_network_commands() {
    let dir = workspace();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "run"])), 0);
    let dfg = ccl(dir.path(), &["dfg", "--layers", "business_flow"]);
    assert_eq!(code(&dfg), 0);
    let dot = stdout(&dfg);
    assert!(dot.starts_with("digraph dfg {"));
    assert!(!dot.contains("compliance_check"));
    assert_eq!(code(&ccl(dir.path(), &["dfg", "--layers", "sideways"])), 2);

    let net = ccl(dir.path(), &["network"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&net)).unwrap();
    assert_eq!(doc["nodes"].as_array().unwrap().len(), 2);
    assert!(doc["nodes"][0]["x"].is_f64());
    assert_eq!(code(&ccl(dir.path(), &["network", "--format", "graphml", "-o", "net.graphml"])), 0);
    assert!(fs::read_to_string(dir.path().join("net.graphml")).unwrap().contains("<graphml"));
    assert_eq!(code(&ccl(dir.path(), &["compose", "--case", "C01"])), 0);
    assert!(dir.path().join("out/timelines/timeline_C01.html").is_file());
    assert_eq!(code(&ccl(dir.path(), &["compose", "--case", "C99"])), 2);
    let report = ccl(dir.path(), &["report", "--granularity", "day"]);
    assert!(stdout(&report).contains("2021-07-21\tR01:1"));
}

#[test]
fn dry_run_never_contacts_the_unroutable_endpoint() {
    let dir = workspace();
    let start = Instant::now();
    assert_eq!(code(&ccl(dir.path(), &["--dry-run", "run"])), 0);
    // A connect attempt would block until the 10 s timeout.
    assert!(start.elapsed() < Duration::from_secs(5));
    let s = state(dir.path());
    let ticket = s.actions.iter().find(|a| a.target.contains("10.255.255.1")).unwrap();
    assert_eq!((ticket.status, ticket.attempts), (ActionStatus::Sent, 0));
}

/// Serves `replies` in order, one connection each, and hands back the bodies.
fn serve(replies: Vec<&'static str>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/incidents", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for status in replies {
            let (mut conn, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            tx.send(String::from_utf8(body).unwrap()).unwrap();
            write!(conn, "HTTP/1.1 {status}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").unwrap();
        }
    });
    (url, rx)
}

#[test]
fn ticket_webhook_success() {
    let dir = workspace();
    let (url, bodies) = serve(vec!["201 Created"]);
    set_config(dir.path(), "http://10.255.255.1:9/incidents", &url);
    let out = ccl(dir.path(), &["run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let body: serde_json::Value = serde_json::from_str(&bodies.recv_timeout(Duration::from_secs(5)).unwrap()).unwrap();
    assert_eq!(body["case_id"], "C02");
    assert_eq!(body["rule_id"], "R01");
    assert_eq!(body["violation_ts"], "2021-07-21T00:00:00Z");
    assert_eq!(body["rule_text"], "rule R01: \"Shipment started\" only after \"Delivery created\"");
    let s = state(dir.path());
    assert_eq!(s.ledger.incidents_created(&s.violations[0].dedup_key), 1);
}

#[test]
fn ticket_webhook_client_error_is_not_retried_and_retries_next_run() {
    let dir = workspace();
    let (url, bodies) = serve(vec!["404 Not Found", "201 Created"]);
    set_config(dir.path(), "http://10.255.255.1:9/incidents", &url);
    let out = ccl(dir.path(), &["run"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("HTTP 404"), "{}", stderr(&out));
    let s = state(dir.path());
    assert_eq!(s.ledger.incidents_created(&s.violations[0].dedup_key), 0);
    assert!(!fs::read_to_string(dir.path().join("out/composed.csv")).unwrap().contains(INCIDENT_CREATED));
    bodies.recv_timeout(Duration::from_secs(5)).unwrap();

    // The next run owes the ticket still and succeeds.
    assert_eq!(code(&ccl(dir.path(), &["run"])), 0);
    bodies.recv_timeout(Duration::from_secs(5)).unwrap();
    let s = state(dir.path());
    assert_eq!(s.ledger.incidents_created(&s.violations[0].dedup_key), 1);
    assert_eq!(s.actions.iter().filter(|a| a.status == ActionStatus::Failed).count(), 1);
}

fn wait_for(mut done: impl FnMut() -> bool, limit: Duration) {
    let start = Instant::now();
    while !done() {
        assert!(start.elapsed() < limit, "timed out");
        thread::sleep(Duration::from_millis(20));
    }
}

fn runs(dir: &Path) -> u64 {
    RunState::load(&dir.join("state/ccl-state.json")).map_or(0, |s| s.runs)
}

#[test]
fn watch_over_a_growing_file_emits_once() {
    let dir = workspace();
    // C02 cut after "Shipment started": open case, guard not seen yet.
    let full = fs::read_to_string(dir.path().join("business_flow.csv")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    let cut = lines.iter().position(|l| l.starts_with("C02,Delivery created")).unwrap();
    fs::write(dir.path().join("business_flow.csv"), lines[..cut].join("\n") + "\n").unwrap();

    let child = Command::new(env!("CARGO_BIN_EXE_ccl"))
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .args(["--dry-run", "--clock", "2021-07-24", "watch", "--interval", "1", "--max-cycles", "3"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    wait_for(|| runs(dir.path()) >= 1, Duration::from_secs(20));
    assert!(state(dir.path()).violations.is_empty());
    let mut f = fs::OpenOptions::new().append(true).open(dir.path().join("business_flow.csv")).unwrap();
    f.write_all((lines[cut..].join("\n") + "\n").as_bytes()).unwrap();
    drop(f);

    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let printed = String::from_utf8_lossy(&out.stdout);
    assert_eq!(printed.matches("violation C02 R01").count(), 1, "{printed}");
    let s = state(dir.path());
    assert_eq!(s.runs, 3);
    assert_eq!(s.violations.len(), 1);
    assert_eq!(s.violations[0].case_id, "C02");
}

#[cfg(unix)]
#[test]
fn interrupt_during_idle_leaves_loadable_state() {
    let dir = workspace();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ccl"))
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .args(["--dry-run", "--clock", "2021-07-24", "watch", "--interval", "60"])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    wait_for(|| runs(dir.path()) >= 1, Duration::from_secs(20));
    let kill = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(kill.success());
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(start.elapsed() < Duration::from_secs(10), "watch ignored the interrupt");
        thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status.code(), Some(0));
    let s = state(dir.path());
    assert_eq!((s.runs, s.violations.len()), (1, 1));
}
