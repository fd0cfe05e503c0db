//! Reading and writing flat event files.
//!
//! CSV files need a header with `case_id`, `activity` and `timestamp`; an
//! optional `layer` column overrides the default layer and every other column
//! becomes an attribute. JSONL files carry the same keys, one object per line.
//! Ordinals follow record order, so appending to a file never renumbers the
//! events already in it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use ccl_core::event::{format_timestamp, parse_timestamp, Event, EventLog, Layer, LogError, Timestamp};
use thiserror::Error;

const REQUIRED: [&str; 3] = ["case_id", "activity", "timestamp"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}: missing required column `{column}`")]
    MissingColumn { source_name: String, column: String },
    #[error("{source_name}:{line}: {message}")]
    Row { source_name: String, line: u64, message: String },
    #[error("{source_name}: {message}")]
    Format { source_name: String, message: String },
    #[error("{source_name}: {source}")]
    Log {
        source_name: String,
        #[source]
        source: LogError,
    },
}

impl IngestError {
    fn row(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        IngestError::Row { source_name: source_name.into(), line, message: message.into() }
    }

    /// Whether the error comes from the file system rather than its content.
    pub fn is_io(&self) -> bool {
        matches!(self, IngestError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl EventFormat {
    /// JSONL for `.jsonl` and `.ndjson`, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("jsonl" | "ndjson") => EventFormat::Jsonl,
            _ => EventFormat::Csv,
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

pub fn read_events_file(path: &Path, default_layer: Layer) -> Result<EventLog, IngestError> {
    let file = open(path)?;
    let name = path.display().to_string();
    ingest_events(file, EventFormat::from_path(path), default_layer, &name)
}

pub fn ingest_events(
    source: impl Read,
    format: EventFormat,
    default_layer: Layer,
    source_name: &str,
) -> Result<EventLog, IngestError> {
    let events = match format {
        EventFormat::Csv => csv_events(source, default_layer, source_name)?,
        EventFormat::Jsonl => jsonl_events(source, default_layer, source_name)?,
    };
    EventLog::from_events(source_name, events)
        .map_err(|source| IngestError::Log { source_name: source_name.into(), source })
}

/// Builds one event from already-split fields.
fn make_event(
    fields: BTreeMap<String, String>,
    default_layer: Layer,
    ordinal: u64,
    source_name: &str,
    line: u64,
) -> Result<Event, IngestError> {
    let mut fields = fields;
    let case_id = fields.remove("case_id").unwrap_or_default();
    let activity = fields.remove("activity").unwrap_or_default();
    let raw_ts = fields.remove("timestamp").unwrap_or_default();
    if case_id.trim().is_empty() {
        return Err(IngestError::row(source_name, line, "empty case_id"));
    }
    if activity.trim().is_empty() {
        return Err(IngestError::row(source_name, line, "empty activity"));
    }
    let timestamp =
        parse_timestamp(&raw_ts).map_err(|e| IngestError::row(source_name, line, e.to_string()))?;
    let layer = match fields.remove("layer") {
        Some(raw) if !raw.trim().is_empty() => {
            raw.trim().parse().map_err(|e: ccl_core::event::UnknownLayer| IngestError::row(source_name, line, e.to_string()))?
        }
        _ => default_layer,
    };
    fields.retain(|_, v| !v.is_empty());
    Ok(Event { case_id, activity, timestamp, layer, ordinal, attributes: fields })
}

fn csv_reader(source: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source)
}

fn csv_headers<R: Read>(
    reader: &mut csv::Reader<R>,
    source_name: &str,
    required: &[&str],
) -> Result<Vec<String>, IngestError> {
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return Err(csv_error(e, source_name)),
    };
    for column in required {
        if !headers.iter().any(|h| h == column) {
            return Err(IngestError::MissingColumn { source_name: source_name.into(), column: (*column).into() });
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = headers.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(IngestError::Format { source_name: source_name.into(), message: format!("duplicate column `{dup}`") });
    }
    Ok(headers)
}

fn csv_error(e: csv::Error, source_name: &str) -> IngestError {
    let line = e.position().map(|p| p.line());
    let message = match e.kind() {
        csv::ErrorKind::Utf8 { .. } => "input is not valid UTF-8".to_string(),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    match (e.kind(), line) {
        (csv::ErrorKind::Io(_), _) => IngestError::Format { source_name: source_name.into(), message },
        (_, Some(line)) => IngestError::row(source_name, line, message),
        (_, None) => IngestError::Format { source_name: source_name.into(), message },
    }
}

fn csv_events(source: impl Read, default_layer: Layer, source_name: &str) -> Result<Vec<Event>, IngestError> {
    let mut reader = csv_reader(source);
    let headers = csv_headers(&mut reader, source_name, &REQUIRED)?;
    let mut events = Vec::new();
    for (ordinal, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, source_name))?;
        let line = record.position().map_or(0, |p| p.line());
        let fields = headers.iter().cloned().zip(record.iter().map(str::to_string)).collect();
        events.push(make_event(fields, default_layer, ordinal as u64, source_name, line)?);
    }
    Ok(events)
}

fn jsonl_events(source: impl Read, default_layer: Layer, source_name: &str) -> Result<Vec<Event>, IngestError> {
    let mut events = Vec::new();
    let mut ordinal = 0u64;
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let text = line.map_err(|e| IngestError::row(source_name, line_no, format!("unreadable line: {e}")))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| IngestError::row(source_name, line_no, format!("invalid JSON: {e}")))?;
        let object = value
            .as_object()
            .ok_or_else(|| IngestError::row(source_name, line_no, "expected a JSON object"))?;
        for column in REQUIRED {
            if !object.contains_key(column) {
                return Err(IngestError::row(source_name, line_no, format!("missing key `{column}`")));
            }
        }
        let mut fields = BTreeMap::new();
        for (k, v) in object {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                serde_json::Value::Null => continue,
                _ => return Err(IngestError::row(source_name, line_no, format!("value of `{k}` must be a scalar"))),
            };
            fields.insert(k.clone(), text);
        }
        events.push(make_event(fields, default_layer, ordinal, source_name, line_no)?);
        ordinal += 1;
    }
    Ok(events)
}

/// Writes `log` as CSV, traces in case order and events in canonical order.
pub fn write_events_csv(log: &EventLog, out: impl Write) -> Result<(), csv::Error> {
    let keys: BTreeSet<&str> = log.events().flat_map(|e| e.attributes.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case_id", "activity", "timestamp", "layer"];
    header.extend(keys.iter().copied());
    w.write_record(&header)?;
    for e in log.events() {
        let mut row = vec![e.case_id.clone(), e.activity.clone(), format_timestamp(&e.timestamp), e.layer.to_string()];
        row.extend(keys.iter().map(|k| e.attributes.get(*k).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `case_id,<attr>...` rows to per-case attribute maps. Empty cells are skipped.
pub fn read_case_attributes(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>, IngestError> {
    let name = path.display().to_string();
    let mut reader = csv_reader(open(path)?);
    let headers = csv_headers(&mut reader, &name, &["case_id"])?;
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, &name))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut case_id = String::new();
        let mut attrs = BTreeMap::new();
        for (h, v) in headers.iter().zip(record.iter()) {
            if h == "case_id" {
                case_id = v.to_string();
            } else if !v.is_empty() {
                attrs.insert(h.clone(), v.to_string());
            }
        }
        if case_id.trim().is_empty() {
            return Err(IngestError::row(&name, line, "empty case_id"));
        }
        out.entry(case_id).or_default().extend(attrs);
    }
    Ok(out)
}

/// One row of a resolution import.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub case_id: String,
    pub rule_id: String,
    pub resolved_at: Timestamp,
    pub line: u64,
}

/// Reads `case_id,rule_id,resolved_at` rows.
pub fn read_resolutions(source: impl Read, source_name: &str) -> Result<Vec<Resolution>, IngestError> {
    let mut reader = csv_reader(source);
    let headers = csv_headers(&mut reader, source_name, &["case_id", "rule_id", "resolved_at"])?;
    let col = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let (c, r, t) = (col("case_id"), col("rule_id"), col("resolved_at"));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, source_name))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let resolved_at =
            parse_timestamp(&get(t)).map_err(|e| IngestError::row(source_name, line, e.to_string()))?;
        let (case_id, rule_id) = (get(c), get(r));
        if case_id.is_empty() || rule_id.is_empty() {
            return Err(IngestError::row(source_name, line, "case_id and rule_id must not be empty"));
        }
        out.push(Resolution { case_id, rule_id, resolved_at, line });
    }
    Ok(out)
}

pub fn read_resolutions_file(path: &Path) -> Result<Vec<Resolution>, IngestError> {
    read_resolutions(open(path)?, &path.display().to_string())
}
