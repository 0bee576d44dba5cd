//! Telemetry ingestion: JSON Lines records into per-session event sequences,
//! plus fixed-width overlapping time windows over a session.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// The three event categories used to group features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    #[serde(alias = "actions")]
    Action,
    Feedback,
    Progression,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Action, Category::Feedback, Category::Progression];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Action => "action",
            Category::Feedback => "feedback",
            Category::Progression => "progression",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "action" | "actions" => Ok(Category::Action),
            "feedback" => Ok(Category::Feedback),
            "progression" => Ok(Category::Progression),
            other => Err(Error::config(format!("unknown event category {other:?}"))),
        }
    }
}

/// Scalar payload value attached to an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(v) => Some(*v),
            _ => None,
        }
    }
}

/// One telemetry record.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub session_id: String,
    /// Seconds since the session's first event.
    pub time_offset: f64,
    pub name: String,
    pub category: Category,
    pub payload: BTreeMap<String, Scalar>,
}

/// All events sharing one session id, ordered by time offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub events: Vec<Event>,
}

impl Session {
    /// Builds a session, sorting events by offset (stable on ties).
    pub fn new(id: impl Into<String>, mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.time_offset.total_cmp(&b.time_offset));
        Session {
            id: id.into(),
            events,
        }
    }

    /// Largest event offset, 0 for an empty session.
    pub fn duration(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time_offset)
    }

    pub fn count_category(&self, category: Category) -> usize {
        self.events
            .iter()
            .filter(|e| e.category == category)
            .count()
    }
}

/// Window geometry shared by every session in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "WindowConfig::default_width")]
    pub width_seconds: f64,
    #[serde(default = "WindowConfig::default_overlap")]
    pub overlap_seconds: f64,
    #[serde(default = "WindowConfig::default_count")]
    pub count: usize,
}

impl WindowConfig {
    fn default_width() -> f64 {
        300.0
    }

    fn default_overlap() -> f64 {
        30.0
    }

    fn default_count() -> usize {
        2
    }

    pub fn step(&self) -> f64 {
        self.width_seconds - self.overlap_seconds
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_seconds.is_finite() && self.width_seconds > 0.0) {
            return Err(Error::config(format!(
                "window.width_seconds must be positive, got {}",
                self.width_seconds
            )));
        }
        if !(self.overlap_seconds.is_finite() && self.overlap_seconds >= 0.0) {
            return Err(Error::config(format!(
                "window.overlap_seconds must be non-negative, got {}",
                self.overlap_seconds
            )));
        }
        if self.overlap_seconds >= self.width_seconds {
            return Err(Error::config(format!(
                "window.overlap_seconds ({}) must be less than window.width_seconds ({})",
                self.overlap_seconds, self.width_seconds
            )));
        }
        if self.count == 0 {
            return Err(Error::config("window.count must be at least 1"));
        }
        Ok(())
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            width_seconds: Self::default_width(),
            overlap_seconds: Self::default_overlap(),
            count: Self::default_count(),
        }
    }
}

/// A half-open time slice `[start, end)` of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Positions of the member events within the parent session.
    pub events: Range<usize>,
}

impl Window {
    pub fn events<'a>(&self, session: &'a Session) -> &'a [Event] {
        &session.events[self.events.clone()]
    }
}

/// Splits a session into up to `cfg.count` overlapping windows.
///
/// Window `i` spans `[i * (width - overlap), i * (width - overlap) + width)`.
/// Only windows starting before the session's duration are produced, except
/// that window 0 always exists.
pub fn segment_windows(session: &Session, cfg: &WindowConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    let step = cfg.step();
    let duration = session.duration();
    let mut windows = Vec::with_capacity(cfg.count);
    for index in 0..cfg.count {
        let start = index as f64 * step;
        if index > 0 && start >= duration {
            break;
        }
        let end = start + cfg.width_seconds;
        let lo = session.events.partition_point(|e| e.time_offset < start);
        let hi = session.events.partition_point(|e| e.time_offset < end);
        windows.push(Window {
            index,
            start,
            end,
            events: lo..hi,
        });
    }
    Ok(windows)
}

/// Why a line was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the concatenated input.
    pub line: usize,
    pub reason: String,
}

/// Accepted/rejected line tallies for one ingest pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub rejected: usize,
    pub blank: usize,
    pub sessions: usize,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Clock {
    Offset(f64),
    Absolute(f64),
}

#[derive(Debug)]
struct Record {
    session_id: String,
    clock: Clock,
    name: String,
    category: Category,
    payload: BTreeMap<String, Scalar>,
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

fn parse_timestamp(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .filter(|t| t.is_finite())
            .ok_or_else(|| "timestamp is not a finite number".to_string()),
        Value::String(s) => chrono::DateTime::parse_from_rfc3339(s)
            .map(|dt| dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
            .map_err(|e| format!("timestamp {s:?} is not RFC 3339: {e}")),
        _ => Err("timestamp must be a number or an RFC 3339 string".to_string()),
    }
}

fn parse_record(line: &str) -> std::result::Result<Record, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(obj) = value else {
        return Err("record is not a JSON object".to_string());
    };

    let session_id = match field(&obj, "session_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err("session_id must be a non-empty string or a number".to_string()),
        None => return Err("missing session_id".to_string()),
    };

    let clock = match (field(&obj, "offset_seconds"), field(&obj, "timestamp")) {
        (Some(v), _) => {
            let t = v
                .as_f64()
                .filter(|t| t.is_finite())
                .ok_or_else(|| "offset_seconds must be a finite number".to_string())?;
            if t < 0.0 {
                return Err(format!("offset_seconds must be non-negative, got {t}"));
            }
            Clock::Offset(t)
        }
        (None, Some(v)) => Clock::Absolute(parse_timestamp(v)?),
        (None, None) => return Err("missing offset_seconds or timestamp".to_string()),
    };

    let name = match field(&obj, "event_name") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err("event_name must be a non-empty string".to_string()),
        None => return Err("missing event_name".to_string()),
    };

    let category = match field(&obj, "category") {
        Some(Value::String(s)) => s
            .parse::<Category>()
            .map_err(|_| format!("unknown category {s:?}"))?,
        Some(_) => return Err("category must be a string".to_string()),
        None => return Err("missing category".to_string()),
    };

    let mut payload = BTreeMap::new();
    match field(&obj, "data") {
        None => {}
        Some(Value::Object(data)) => {
            for (k, v) in data {
                let scalar = match v {
                    Value::Bool(b) => Scalar::Bool(*b),
                    Value::Number(n) => Scalar::Number(
                        n.as_f64()
                            .ok_or_else(|| format!("data.{k} is not representable as f64"))?,
                    ),
                    Value::String(s) => Scalar::Text(s.clone()),
                    Value::Null => continue,
                    _ => return Err(format!("data.{k} is not a scalar")),
                };
                payload.insert(k.clone(), scalar);
            }
        }
        Some(_) => return Err("data must be an object".to_string()),
    }

    Ok(Record {
        session_id,
        clock,
        name,
        category,
        payload,
    })
}

/// Parses JSON Lines telemetry into sessions ordered by session id.
///
/// Malformed lines are tallied in the report, never fatal. A session's time
/// base (relative offsets or absolute timestamps) is fixed by its first
/// accepted record; later records using the other base are rejected.
pub fn parse_events(input: &str) -> (Vec<Session>, ParseReport) {
    let parsed: Vec<Option<std::result::Result<Record, String>>> = input
        .par_lines()
        .map(|line| {
            if line.trim().is_empty() {
                None
            } else {
                Some(parse_record(line))
            }
        })
        .collect();

    let mut report = ParseReport::default();
    // (absolute time base?, records)
    let mut grouped: BTreeMap<String, (bool, Vec<(f64, Record)>)> = BTreeMap::new();
    for (i, item) in parsed.into_iter().enumerate() {
        let line = i + 1;
        let record = match item {
            None => {
                report.blank += 1;
                continue;
            }
            Some(Err(reason)) => {
                report.rejected += 1;
                report.rejections.push(Rejection { line, reason });
                continue;
            }
            Some(Ok(r)) => r,
        };
        let (absolute, t) = match record.clock {
            Clock::Offset(t) => (false, t),
            Clock::Absolute(t) => (true, t),
        };
        let entry = grouped
            .entry(record.session_id.clone())
            .or_insert_with(|| (absolute, Vec::new()));
        if entry.0 != absolute {
            report.rejected += 1;
            report.rejections.push(Rejection {
                line,
                reason: format!(
                    "session {:?} mixes offset_seconds and timestamp records",
                    record.session_id
                ),
            });
            continue;
        }
        report.accepted += 1;
        entry.1.push((t, record));
    }

    let sessions: Vec<Session> = grouped
        .into_iter()
        .map(|(id, (absolute, records))| {
            let base = if absolute {
                records
                    .iter()
                    .map(|(t, _)| *t)
                    .fold(f64::INFINITY, f64::min)
            } else {
                0.0
            };
            let events = records
                .into_iter()
                .map(|(t, r)| Event {
                    session_id: r.session_id,
                    time_offset: t - base,
                    name: r.name,
                    category: r.category,
                    payload: r.payload,
                })
                .collect();
            Session::new(id, events)
        })
        .collect();
    report.sessions = sessions.len();
    (sessions, report)
}

#[derive(Serialize)]
struct OutRecord<'a> {
    session_id: &'a str,
    offset_seconds: f64,
    event_name: &'a str,
    category: Category,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    data: &'a BTreeMap<String, Scalar>,
}

/// Writes one JSON object per event using relative offsets.
pub fn write_events<W: Write>(sessions: &[Session], mut out: W) -> std::io::Result<()> {
    for session in sessions {
        for e in &session.events {
            let rec = OutRecord {
                session_id: &e.session_id,
                offset_seconds: e.time_offset,
                event_name: &e.name,
                category: e.category,
                data: &e.payload,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(session: &str, offset: f64, name: &str, category: &str) -> String {
        format!(
            r#"{{"session_id":"{session}","offset_seconds":{offset},"event_name":"{name}","category":"{category}"}}"#
        )
    }

    fn session_at(offsets: &[f64]) -> Session {
        let events = offsets
            .iter()
            .map(|&t| Event {
                session_id: "s".into(),
                time_offset: t,
                name: "e".into(),
                category: Category::Action,
                payload: BTreeMap::new(),
            })
            .collect();
        Session::new("s", events)
    }

    #[test]
    fn sorts_events_within_session() {
        let input = [
            line("A", 0.0, "a", "action"),
            line("A", 10.0, "b", "action"),
            line("A", 5.0, "c", "action"),
        ]
        .join("\n");
        let (sessions, report) = parse_events(&input);
        assert_eq!(report.accepted, 3);
        assert_eq!(sessions.len(), 1);
        let offsets: Vec<f64> = sessions[0].events.iter().map(|e| e.time_offset).collect();
        assert_eq!(offsets, [0.0, 5.0, 10.0]);
        assert_eq!(sessions[0].duration(), 10.0);
    }

    #[test]
    fn partitions_interleaved_sessions() {
        let input = [
            line("A", 0.0, "a1", "action"),
            line("B", 1.0, "b1", "feedback"),
            line("A", 2.0, "a2", "action"),
            line("B", 3.0, "b2", "progression"),
        ]
        .join("\n");
        let (sessions, _) = parse_events(&input);
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].id, "A");
        assert!(sessions[0].events.iter().all(|e| e.session_id == "A"));
        let names: Vec<&str> = sessions[1].events.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["b1", "b2"]);
    }

    #[test]
    fn unknown_category_is_tallied() {
        let input = format!(
            "{}\n{}\n",
            line("A", 0.0, "a", "action"),
            line("A", 1.0, "x", "Bogus")
        );
        let (sessions, report) = parse_events(&input);
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].events.len(), 1);
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.rejections[0].line, 2);
        assert!(report.rejections[0].reason.contains("Bogus"));
    }

    #[test]
    fn empty_input_yields_no_sessions() {
        let (sessions, report) = parse_events("");
        assert!(sessions.is_empty());
        assert_eq!(report, ParseReport::default());
    }

    #[test]
    fn malformed_lines_are_not_fatal() {
        let input = [
            "not json".to_string(),
            r#"{"session_id":"A","event_name":"a","category":"action"}"#.to_string(),
            r#"{"session_id":"A","offset_seconds":-1,"event_name":"a","category":"action"}"#.to_string(),
            r#"{"session_id":"A","offset_seconds":1,"event_name":"a","category":"action","data":{"x":[1]}}"#.to_string(),
            String::new(),
            line("A", 4.0, "ok", "feedback"),
        ]
        .join("\n");
        let (sessions, report) = parse_events(&input);
        assert_eq!(report.rejected, 4);
        assert_eq!(report.blank, 1);
        assert_eq!(report.accepted, 1);
        assert_eq!(sessions[0].events[0].name, "ok");
    }

    #[test]
    fn absolute_timestamps_become_offsets() {
        let input = [
            r#"{"session_id":"A","timestamp":"2020-01-01T00:05:00Z","event_name":"b","category":"action"}"#,
            r#"{"session_id":"A","timestamp":"2020-01-01T00:00:30Z","event_name":"a","category":"action"}"#,
            r#"{"session_id":"B","timestamp":1000.5,"event_name":"c","category":"action"}"#,
            r#"{"session_id":"B","offset_seconds":3,"event_name":"d","category":"action"}"#,
        ]
        .join("\n");
        let (sessions, report) = parse_events(&input);
        let a: Vec<f64> = sessions[0].events.iter().map(|e| e.time_offset).collect();
        assert_eq!(a, [0.0, 270.0]);
        assert_eq!(sessions[1].events[0].time_offset, 0.0);
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn payload_scalars_are_kept() {
        let input = r#"{"session_id":7,"offset_seconds":0,"event_name":"sell","category":"feedback","data":{"amount":12.5,"item":"milk","ok":true,"gone":null}}"#;
        let (sessions, _) = parse_events(input);
        let e = &sessions[0].events[0];
        assert_eq!(e.session_id, "7");
        assert_eq!(e.payload["amount"], Scalar::Number(12.5));
        assert_eq!(e.payload["item"], Scalar::Text("milk".into()));
        assert_eq!(e.payload.len(), 3);
    }

    #[test]
    fn default_windows_match_case_study() {
        let s = session_at(&[0.0, 100.0, 600.0]);
        let w = segment_windows(&s, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].start, w[0].end), (0.0, 300.0));
        assert_eq!((w[1].start, w[1].end), (270.0, 570.0));
    }

    #[test]
    fn early_event_lands_only_in_first_window() {
        let s = session_at(&[100.0, 400.0]);
        let w = segment_windows(&s, &WindowConfig::default()).unwrap();
        assert_eq!(w[0].events(&s).len(), 1);
        assert!(w[1].events(&s).iter().all(|e| e.time_offset != 100.0));
    }

    #[test]
    fn overlap_event_lands_in_both_windows() {
        let s = session_at(&[280.0, 500.0]);
        let w = segment_windows(&s, &WindowConfig::default()).unwrap();
        assert!(w[0].events(&s).iter().any(|e| e.time_offset == 280.0));
        assert!(w[1].events(&s).iter().any(|e| e.time_offset == 280.0));
    }

    #[test]
    fn boundaries_are_half_open() {
        let s = session_at(&[270.0, 300.0, 569.0]);
        let w = segment_windows(&s, &WindowConfig::default()).unwrap();
        let w0: Vec<f64> = w[0].events(&s).iter().map(|e| e.time_offset).collect();
        let w1: Vec<f64> = w[1].events(&s).iter().map(|e| e.time_offset).collect();
        assert_eq!(w0, [270.0]);
        assert_eq!(w1, [270.0, 300.0, 569.0]);
    }

    #[test]
    fn short_session_keeps_window_zero() {
        let s = session_at(&[0.0]);
        let w = segment_windows(&s, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].end - w[0].start, 300.0);
        // Second window would start at 270, past the 200 s duration.
        let s = session_at(&[0.0, 200.0]);
        assert_eq!(
            segment_windows(&s, &WindowConfig::default()).unwrap().len(),
            1
        );
    }

    #[test]
    fn overlap_not_below_width_is_rejected() {
        let cfg = WindowConfig {
            width_seconds: 300.0,
            overlap_seconds: 300.0,
            count: 2,
        };
        let err = segment_windows(&session_at(&[0.0]), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("overlap_seconds")));
    }

    #[test]
    fn write_then_parse_preserves_records() {
        let input = [
            line("B", 3.25, "x", "feedback"),
            line("A", 0.0, "a", "action"),
            r#"{"session_id":"A","offset_seconds":1.5,"event_name":"sell","category":"progression","data":{"n":2,"s":"t"}}"#.to_string(),
        ]
        .join("\n");
        let (sessions, _) = parse_events(&input);
        let mut buf = Vec::new();
        write_events(&sessions, &mut buf).unwrap();
        let (again, report) = parse_events(std::str::from_utf8(&buf).unwrap());
        assert_eq!(report.rejected, 0);
        assert_eq!(again, sessions);
    }
}
