//! Subject-predicate-object triplets: extraction through the gateway,
//! normalization, de-duplication and CSV persistence.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm_gateway::{LlmError, LlmGateway};
use crate::prompts::Prompts;

pub const CSV_HEADER: [&str; 5] = ["subject", "predicate", "object", "origin", "source_id"];

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    KnowledgeBase,
    Answer,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::KnowledgeBase => "knowledge_base",
            Origin::Answer => "answer",
        })
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knowledge_base" => Ok(Origin::KnowledgeBase),
            "answer" => Ok(Origin::Answer),
            other => Err(format!("invalid origin `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub origin: Origin,
    pub source_id: String,
}

impl Triplet {
    /// The (subject, predicate, object) identity used for de-duplication.
    pub fn spo(&self) -> (&str, &str, &str) {
        (&self.subject, &self.predicate, &self.object)
    }

    pub fn spo_owned(&self) -> (String, String, String) {
        (
            self.subject.clone(),
            self.predicate.clone(),
            self.object.clone(),
        )
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.subject, self.predicate, self.object)
    }
}

/// Ordered triplets. When `deduplicated`, no two share an (s, p, o).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletSet {
    triplets: Vec<Triplet>,
    deduplicated: bool,
}

impl TripletSet {
    pub fn new() -> Self {
        Self {
            triplets: Vec::new(),
            deduplicated: true,
        }
    }

    /// Wraps triplets as extracted, without de-duplication.
    pub fn from_raw(triplets: Vec<Triplet>) -> Self {
        let deduplicated = triplets.is_empty();
        Self {
            triplets,
            deduplicated,
        }
    }

    /// Keeps the first occurrence of each (s, p, o), preserving order.
    pub fn dedup(mut self) -> Self {
        if !self.deduplicated {
            let mut seen = HashSet::new();
            self.triplets
                .retain(|t| seen.insert((t.subject.clone(), t.predicate.clone(), t.object.clone())));
            self.deduplicated = true;
        }
        self
    }

    pub fn is_deduplicated(&self) -> bool {
        self.deduplicated
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triplet> {
        self.triplets.iter()
    }

    pub fn as_slice(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn into_vec(self) -> Vec<Triplet> {
        self.triplets
    }

    /// Appends `other`; the result is no longer marked de-duplicated unless
    /// `other` is empty.
    pub fn extend(&mut self, other: TripletSet) {
        if !other.is_empty() {
            self.triplets.extend(other.triplets);
            self.deduplicated = false;
        }
    }

    pub fn contains(&self, subject: &str, predicate: &str, object: &str) -> bool {
        self.triplets
            .iter()
            .any(|t| t.spo() == (subject, predicate, object))
    }

    pub fn spo_set(&self) -> BTreeSet<(String, String, String)> {
        self.triplets.iter().map(Triplet::spo_owned).collect()
    }
}

impl<'a> IntoIterator for &'a TripletSet {
    type Item = &'a Triplet;
    type IntoIter = std::slice::Iter<'a, Triplet>;

    fn into_iter(self) -> Self::IntoIter {
        self.triplets.iter()
    }
}

#[derive(Debug, Error)]
pub enum TripletError {
    #[error("text to extract from is empty")]
    EmptyInput,
    #[error("no JSON triplet list could be recovered from the model output")]
    Unparseable { raw: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}, row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: u64,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Subject,
    Predicate,
    Object,
}

/// Why a raw triplet did not survive normalization.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{part:?} is empty after normalization")]
pub struct Rejection {
    pub part: Part,
}

/// Lowercases, collapses whitespace and strips trailing `.,;:!?`.
pub fn normalize_part(raw: &str) -> String {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .to_string()
}

pub fn normalize(
    subject: &str,
    predicate: &str,
    object: &str,
    origin: Origin,
    source_id: &str,
) -> Result<Triplet, Rejection> {
    let check = |raw: &str, part| {
        let n = normalize_part(raw);
        if n.is_empty() {
            Err(Rejection { part })
        } else {
            Ok(n)
        }
    };
    Ok(Triplet {
        subject: check(subject, Part::Subject)?,
        predicate: check(predicate, Part::Predicate)?,
        object: check(object, Part::Object)?,
        origin,
        source_id: source_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTriplets {
    pub triplets: Vec<RawTriplet>,
    /// Elements that did not have exactly three scalar parts.
    pub dropped: usize,
}

/// Recovers a triplet list from model output.
///
/// Accepts code fences and surrounding prose, arrays of 3-element arrays,
/// arrays of 3-key objects (values taken in key order), and an object
/// wrapping such an array. Trailing commas are repaired.
pub fn parse_triplet_json(raw: &str) -> Result<ParsedTriplets, TripletError> {
    let mut candidates: Vec<String> = fenced_blocks(raw);
    candidates.push(raw.to_string());
    let repaired: Vec<String> = candidates.iter().map(|c| strip_trailing_commas(c)).collect();
    candidates.extend(repaired);

    for candidate in &candidates {
        if let Some(items) = first_triplet_list(candidate) {
            return Ok(collect_items(&items));
        }
    }
    Err(TripletError::Unparseable {
        raw: raw.to_string(),
    })
}

fn fenced_blocks(raw: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip an info string such as `json`
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(body[..close].to_string());
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body.to_string());
                break;
            }
        }
    }
    blocks
}

fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some(']') | Some('}')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Tries every `[` / `{` position and returns the first JSON value that
/// holds a triplet list.
fn first_triplet_list(text: &str) -> Option<Vec<Value>> {
    for (i, c) in text.char_indices() {
        if c != '[' && c != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(value)) = stream.next() {
            if let Some(items) = as_triplet_list(value) {
                return Some(items);
            }
        }
    }
    None
}

fn as_triplet_list(value: Value) -> Option<Vec<Value>> {
    match value {
        Value::Array(items) => Some(items),
        Value::Object(map) => {
            if map.values().all(is_scalar) && map.len() == 3 {
                return Some(vec![Value::Object(map)]);
            }
            map.into_iter().find_map(|(_, v)| match v {
                Value::Array(items) => Some(items),
                _ => None,
            })
        }
        _ => None,
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_))
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn collect_items(items: &[Value]) -> ParsedTriplets {
    let mut parsed = ParsedTriplets::default();
    for item in items {
        let parts: Option<Vec<String>> = match item {
            Value::Array(parts) if parts.len() == 3 => parts.iter().map(scalar_text).collect(),
            Value::Object(map) if map.len() == 3 => map.values().map(scalar_text).collect(),
            _ => None,
        };
        match parts {
            Some(mut p) => {
                let object = p.pop().unwrap_or_default();
                let predicate = p.pop().unwrap_or_default();
                let subject = p.pop().unwrap_or_default();
                parsed.triplets.push(RawTriplet {
                    subject,
                    predicate,
                    object,
                });
            }
            None => parsed.dropped += 1,
        }
    }
    parsed
}

/// Asks the model for the triplets in `text` and returns them normalized and
/// de-duplicated, each tagged with `origin` and `source_id`.
pub fn extract_triplets(
    text: &str,
    source_id: &str,
    origin: Origin,
    gateway: &LlmGateway,
    prompts: &Prompts,
) -> Result<TripletSet, TripletError> {
    if text.trim().is_empty() {
        return Err(TripletError::EmptyInput);
    }
    let user = prompts.extraction_user_content(text);
    let response = gateway.chat_complete(&prompts.extract_assistant, &user)?;
    let parsed = parse_triplet_json(&response)?;
    if parsed.dropped > 0 {
        log::warn!(
            "{source_id}: dropped {} elements without exactly three parts",
            parsed.dropped
        );
    }
    let mut triplets = Vec::with_capacity(parsed.triplets.len());
    for raw in &parsed.triplets {
        match normalize(&raw.subject, &raw.predicate, &raw.object, origin, source_id) {
            Ok(t) => triplets.push(t),
            Err(rejection) => log::warn!("{source_id}: skipped {raw:?}: {rejection}"),
        }
    }
    if triplets.is_empty() {
        log::warn!("{source_id}: no triplets extracted");
    }
    Ok(TripletSet::from_raw(triplets).dedup())
}

pub fn write_csv(set: &TripletSet, path: &Path) -> Result<(), TripletError> {
    let io_err = |message: String| TripletError::Io {
        path: path.to_path_buf(),
        message,
    };
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(CSV_HEADER).map_err(|e| io_err(e.to_string()))?;
    for t in set {
        let origin = t.origin.to_string();
        writer
            .write_record([
                t.subject.as_str(),
                t.predicate.as_str(),
                t.object.as_str(),
                origin.as_str(),
                t.source_id.as_str(),
            ])
            .map_err(|e| io_err(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| io_err(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| io_err(e.to_string()))
}

pub fn read_csv(path: &Path) -> Result<TripletSet, TripletError> {
    let bytes = fs::read(path).map_err(|e| TripletError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let row_err = |row: u64, message: String| TripletError::Csv {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| row_err(0, e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(row_err(0, format!("expected header {}", CSV_HEADER.join(","))));
    }
    let mut triplets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        if record.len() != CSV_HEADER.len() {
            return Err(row_err(row, format!("expected 5 fields, found {}", record.len())));
        }
        let origin: Origin = record[3].parse().map_err(|e: String| row_err(row, e))?;
        for (idx, name) in CSV_HEADER[..3].iter().enumerate() {
            if record[idx].is_empty() {
                return Err(row_err(row, format!("empty {name}")));
            }
        }
        triplets.push(Triplet {
            subject: record[0].to_string(),
            predicate: record[1].to_string(),
            object: record[2].to_string(),
            origin,
            source_id: record[4].to_string(),
        });
    }
    let unique = {
        let mut seen = HashSet::new();
        triplets.iter().all(|t| seen.insert(t.spo()))
    };
    Ok(TripletSet {
        triplets,
        deduplicated: unique,
    })
}
