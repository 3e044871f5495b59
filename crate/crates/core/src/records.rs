//! Line-delimited record syntax shared by every file the pipeline reads or writes.
//!
//! One record per line. A record is a sequence of `key=value` fields separated by a
//! single TAB. Keys match `[a-z0-9_.]+` and appear in the order the producing type
//! declares them. Values are arbitrary UTF-8 with four escapes:
//!
//! | byte        | escaped as |
//! |-------------|------------|
//! | `\`         | `\\`       |
//! | TAB         | `\t`       |
//! | LF          | `\n`       |
//! | CR          | `\r`       |
//!
//! Blank lines are ignored when reading. Floats are written with Rust's shortest
//! round-trip representation, so a read after a write is bit-exact.

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{key}`: invalid value {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<RecordError>,
    },
}

impl RecordError {
    pub fn bad_value(key: &str, value: &str, reason: impl Display) -> Self {
        RecordError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        }
    }

    fn at_line(self, line: usize) -> Self {
        match self {
            e @ (RecordError::Syntax { .. } | RecordError::AtLine { .. } | RecordError::Io { .. }) => e,
            e => RecordError::AtLine {
                line,
                source: Box::new(e),
            },
        }
    }
}

/// An ordered set of key/value fields.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a field. Panics on an invalid or duplicate key, which is a
    /// programming error in the encoder rather than a data error.
    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        assert!(valid_key(key), "invalid record key {key:?}");
        assert!(self.get(key).is_none(), "duplicate record key {key:?}");
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.push(key, value);
        self
    }

    /// Appends `value` if present, otherwise an empty value.
    pub fn with_opt<T: Display>(self, key: &str, value: Option<T>) -> Self {
        match value {
            Some(v) => self.with(key, v),
            None => self.with(key, ""),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, RecordError> {
        self.get(key).ok_or_else(|| RecordError::MissingField(key.to_string()))
    }

    pub fn parse<T>(&self, key: &str) -> Result<T, RecordError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|e| RecordError::bad_value(key, raw, e))
    }

    /// Missing keys and empty values both decode to `None`.
    pub fn parse_opt<T>(&self, key: &str) -> Result<Option<T>, RecordError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| RecordError::bad_value(key, raw, e)),
        }
    }

    pub fn parse_bool(&self, key: &str) -> Result<bool, RecordError> {
        let raw = self.require(key)?;
        match raw {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(RecordError::bad_value(key, other, "expected true|false")),
        }
    }

    pub fn parse_f64_list(&self, key: &str) -> Result<Vec<f64>, RecordError> {
        let raw = self.require(key)?;
        parse_list(raw).map_err(|e| RecordError::bad_value(key, raw, e))
    }

    pub fn parse_usize_list(&self, key: &str) -> Result<Vec<usize>, RecordError> {
        let raw = self.require(key)?;
        parse_list(raw).map_err(|e| RecordError::bad_value(key, raw, e))
    }

    pub fn fields(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            out.push_str(k);
            out.push('=');
            escape_into(v, &mut out);
        }
        out
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self, RecordError> {
        let syntax = |reason: String| RecordError::Syntax { line: line_no, reason };
        let mut record = Record::new();
        for field in line.split('\t') {
            let (key, raw) = field
                .split_once('=')
                .ok_or_else(|| syntax(format!("field {field:?} has no `=`")))?;
            if !valid_key(key) {
                return Err(syntax(format!("invalid key {key:?}")));
            }
            if record.get(key).is_some() {
                return Err(syntax(format!("duplicate key {key:?}")));
            }
            let value = unescape(raw).map_err(|r| syntax(format!("key {key:?}: {r}")))?;
            record.fields.push((key.to_string(), value));
        }
        Ok(record)
    }
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'.')
}

fn escape_into(value: &str, out: &mut String) {
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn unescape(raw: &str) -> Result<String, String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling `\\` at end of value".into()),
        }
    }
    Ok(out)
}

/// Comma-joined list; the empty string is the empty list.
pub fn join_list<T: Display>(items: &[T]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&item.to_string());
    }
    out
}

fn parse_list<T>(raw: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

pub fn parse_records(text: &str) -> Result<Vec<Record>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Record::from_line(l.strip_suffix('\r').unwrap_or(l), i + 1))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, RecordError> {
    let text = fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(&text)
}

/// Reads a file and decodes every record, tagging decode errors with their line.
pub fn read_typed<T>(path: &Path, decode: impl Fn(&Record) -> Result<T, RecordError>) -> Result<Vec<T>, RecordError> {
    let text = fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = Record::from_line(line.strip_suffix('\r').unwrap_or(line), i + 1)?;
        out.push(decode(&record).map_err(|e| e.at_line(i + 1))?);
    }
    Ok(out)
}

pub fn records_to_string<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a Record>) -> Result<(), RecordError> {
    let io = |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(io)?;
    }
    w.flush().map_err(io)
}
