//! Events, histories and the line-oriented history file format.
//!
//! A history file holds one JSON object per line:
//!
//! ```text
//! {"session":0,"index":0,"method":"add","args":[1],"ret":null}
//! {"session":0,"index":1,"method":"contains","args":[1],"ret":true}
//! ```
//!
//! Events are identified by their `(session, index)` pair. Inside the
//! library they are addressed by a dense index: events sorted by session id,
//! then by position within the session.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datatype::is_update_method;

/// Method argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Str(String),
}

/// Return value of an invocation. `Nil` is the acknowledgement of an update
/// and the "absent" answer of a lookup.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Nil,
    Bool(bool),
    Int(i64),
    Str(String),
    Pair(i64, i64),
}

impl From<Scalar> for Value {
    fn from(s: Scalar) -> Value {
        match s {
            Scalar::Int(i) => Value::Int(i),
            Scalar::Str(s) => Value::Str(s),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nil => write!(f, "nil"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Pair(a, b) => write!(f, "({a},{b})"),
        }
    }
}

/// Stable identity of an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId {
    pub session: u32,
    pub index: u32,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.session, self.index)
    }
}

/// One invocation recorded by a client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub id: EventId,
    pub method: String,
    pub args: Vec<Scalar>,
    pub ret: Value,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.method)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match a {
                Scalar::Int(v) => write!(f, "{v}")?,
                Scalar::Str(s) => write!(f, "{s:?}")?,
            }
        }
        write!(f, ")")?;
        if self.ret != Value::Nil || !is_update_method(&self.method) {
            write!(f, "=>{}", self.ret)?;
        }
        Ok(())
    }
}

/// The on-disk record. Unknown fields are rejected.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    session: u32,
    index: u32,
    method: String,
    args: Vec<Scalar>,
    ret: Value,
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate event {id}")]
    Duplicate { line: usize, id: EventId },
    #[error("line {line}: event {id} out of order, expected index {expected}")]
    IndexOrder {
        line: usize,
        id: EventId,
        expected: u32,
    },
    #[error("line {line}: update {method} of event {id} has non-nil return {ret}")]
    UpdateReturn {
        line: usize,
        id: EventId,
        method: String,
        ret: Value,
    },
    #[error("unknown event {0}")]
    UnknownEvent(EventId),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Events of one client session, in session order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub id: u32,
    /// Dense event indices, in session order.
    pub events: Vec<usize>,
}

/// A recorded history: events plus the per-session order.
///
/// Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct History {
    events: Vec<Event>,
    sessions: Vec<Session>,
}

impl History {
    /// Builds a history from per-session event lists. Session ids are taken
    /// from the tuple, indices from the position within the list.
    pub fn from_sessions<I>(sessions: I) -> Result<History, HistoryError>
    where
        I: IntoIterator<Item = (u32, Vec<(String, Vec<Scalar>, Value)>)>,
    {
        let mut records = Vec::new();
        for (session, ops) in sessions {
            for (index, (method, args, ret)) in ops.into_iter().enumerate() {
                records.push(Record {
                    session,
                    index: index as u32,
                    method,
                    args,
                    ret,
                });
            }
        }
        Self::from_records(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)))
    }

    fn from_records<I>(records: I) -> Result<History, HistoryError>
    where
        I: IntoIterator<Item = (usize, Record)>,
    {
        let mut per_session: std::collections::BTreeMap<u32, Vec<Record>> = Default::default();
        for (line, rec) in records {
            let id = EventId {
                session: rec.session,
                index: rec.index,
            };
            if is_update_method(&rec.method) && rec.ret != Value::Nil {
                return Err(HistoryError::UpdateReturn {
                    line,
                    id,
                    method: rec.method,
                    ret: rec.ret,
                });
            }
            let list = per_session.entry(rec.session).or_default();
            let expected = list.len() as u32;
            if rec.index < expected {
                return Err(HistoryError::Duplicate { line, id });
            }
            if rec.index != expected {
                return Err(HistoryError::IndexOrder { line, id, expected });
            }
            list.push(rec);
        }
        let mut events = Vec::new();
        let mut sessions = Vec::new();
        for (sid, recs) in per_session {
            let mut ids = Vec::with_capacity(recs.len());
            for rec in recs {
                ids.push(events.len());
                events.push(Event {
                    id: EventId {
                        session: rec.session,
                        index: rec.index,
                    },
                    method: rec.method,
                    args: rec.args,
                    ret: rec.ret,
                });
            }
            sessions.push(Session {
                id: sid,
                events: ids,
            });
        }
        Ok(History { events, sessions })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, ev: usize) -> &Event {
        &self.events[ev]
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    /// Dense index of the event with the given id.
    pub fn index_of(&self, id: EventId) -> Option<usize> {
        let s = self
            .sessions
            .binary_search_by_key(&id.session, |s| s.id)
            .ok()?;
        self.sessions[s].events.get(id.index as usize).copied()
    }

    /// Position of the event's session in [`History::sessions`].
    pub fn session_slot(&self, ev: usize) -> usize {
        let id = self.events[ev].id;
        self.sessions
            .binary_search_by_key(&id.session, |s| s.id)
            .expect("event belongs to a session")
    }

    /// Whether `a` precedes `b` in session order.
    pub fn so(&self, a: usize, b: usize) -> bool {
        let (a, b) = (self.events[a].id, self.events[b].id);
        a.session == b.session && a.index < b.index
    }

    /// Events of `id`'s session with a smaller index, in index order.
    pub fn session_predecessors(&self, id: EventId) -> Result<Vec<&Event>, HistoryError> {
        let ev = self.index_of(id).ok_or(HistoryError::UnknownEvent(id))?;
        let slot = self.session_slot(ev);
        Ok(self.sessions[slot].events[..id.index as usize]
            .iter()
            .map(|&e| &self.events[e])
            .collect())
    }

    /// Serializes to the line format, sessions in ascending id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            let rec = Record {
                session: ev.id.session,
                index: ev.id.index,
                method: ev.method.clone(),
                args: ev.args.clone(),
                ret: ev.ret.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sessions {
            write!(f, "s{}:", s.id)?;
            for &e in &s.events {
                write!(f, " {}", self.events[e])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Parses a history from the line format. Blank lines are ignored.
pub fn parse_history(text: &str) -> Result<History, HistoryError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| HistoryError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push((i + 1, rec));
    }
    History::from_records(records)
}

/// A named history from a corpus.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub history: History,
}

/// Loads a corpus: either a directory of `*.hist` files (sorted by file
/// name) or a single stream whose histories are separated by `---` lines.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, HistoryError> {
    let io_err = |source| HistoryError::Io {
        path: path.display().to_string(),
        source,
    };
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "hist"))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                let text = fs::read_to_string(&p).map_err(|source| HistoryError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Ok(CorpusEntry {
                    name: p
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    history: parse_history(&text)?,
                })
            })
            .collect()
    } else {
        let text = fs::read_to_string(path).map_err(io_err)?;
        split_stream(&text)
    }
}

/// Splits a concatenated stream on `---` separator lines. Line numbers in
/// errors refer to the whole stream.
pub fn split_stream(text: &str) -> Result<Vec<CorpusEntry>, HistoryError> {
    let mut out = Vec::new();
    let mut chunk = String::new();
    let mut chunk_start = 0;
    let flush = |chunk: &mut String, start: usize, out: &mut Vec<CorpusEntry>| {
        if chunk.trim().is_empty() {
            chunk.clear();
            return Ok(());
        }
        let history = parse_history(chunk).map_err(|e| offset_line(e, start))?;
        out.push(CorpusEntry {
            name: format!("#{}", out.len()),
            history,
        });
        chunk.clear();
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim() == "---" {
            flush(&mut chunk, chunk_start, &mut out)?;
            chunk_start = i + 1;
        } else {
            chunk.push_str(line);
            chunk.push('\n');
        }
    }
    flush(&mut chunk, chunk_start, &mut out)?;
    Ok(out)
}

fn offset_line(e: HistoryError, by: usize) -> HistoryError {
    match e {
        HistoryError::Parse { line, msg } => HistoryError::Parse {
            line: line + by,
            msg,
        },
        HistoryError::Duplicate { line, id } => HistoryError::Duplicate {
            line: line + by,
            id,
        },
        HistoryError::IndexOrder { line, id, expected } => HistoryError::IndexOrder {
            line: line + by,
            id,
            expected,
        },
        HistoryError::UpdateReturn {
            line,
            id,
            method,
            ret,
        } => HistoryError::UpdateReturn {
            line: line + by,
            id,
            method,
            ret,
        },
        other => other,
    }
}
