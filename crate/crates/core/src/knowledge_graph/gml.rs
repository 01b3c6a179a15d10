//! GML (Graph Modelling Language) reader and writer.
//!
//! The writer emits the subset common graph editors import: integer node
//! ids and quoted labels, `"` and `&` escaped as character entities, other
//! text written verbatim as UTF-8. The reader accepts arbitrary additional
//! keys (layout, colors, ...) and ignores them, so files that went through
//! an external editor load back cleanly.

use std::fmt::Write as _;

use thiserror::Error;

use super::{GraphError, KnowledgeGraph};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("GML line {line}: {message}")]
pub struct GmlError {
    pub line: usize,
    pub message: String,
}

impl GmlError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

pub fn to_gml(g: &KnowledgeGraph) -> String {
    let mut out = String::from("graph [\n  directed 1\n");
    for n in g.nodes() {
        let _ = write!(
            out,
            "  node [\n    id {}\n    label \"{}\"\n  ]\n",
            n.id,
            escape(&n.label)
        );
    }
    for e in g.edges() {
        let _ = write!(
            out,
            "  edge [\n    source {}\n    target {}\n    label \"{}\"\n  ]\n",
            e.source,
            e.target,
            escape(&e.label)
        );
    }
    out.push_str("]\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail.find(';').filter(|&end| end <= 10).and_then(|end| {
            let entity = &tail[1..end];
            let c = match entity {
                "quot" => Some('"'),
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "apos" => Some('\''),
                _ => entity
                    .strip_prefix("#x")
                    .or_else(|| entity.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| entity.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            c.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, consumed)) => {
                out.push(c);
                rest = &tail[consumed..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Key(String),
    Int(i64),
    Real(f64),
    Str(String),
    Open,
    Close,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, GmlError> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut chars = src.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&(_, c)) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '[' => {
                tokens.push((Token::Open, line));
                chars.next();
            }
            ']' => {
                tokens.push((Token::Close, line));
                chars.next();
            }
            '"' => {
                let open_line = line;
                chars.next();
                let mut s = String::new();
                let mut closed = false;
                for (_, c) in chars.by_ref() {
                    if c == '"' {
                        closed = true;
                        break;
                    }
                    if c == '\n' {
                        line += 1;
                    }
                    s.push(c);
                }
                if !closed {
                    return Err(GmlError::new(open_line, "unterminated string"));
                }
                tokens.push((Token::Str(unescape(&s)), open_line));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        end = i + c.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push((Token::Key(src[start..end].to_string()), line));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                        end = i + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                let text = &src[start..end];
                let token = if let Ok(i) = text.parse::<i64>() {
                    Token::Int(i)
                } else if let Ok(f) = text.parse::<f64>() {
                    Token::Real(f)
                } else {
                    return Err(GmlError::new(line, format!("invalid number `{text}`")));
                };
                tokens.push((token, line));
            }
            other => return Err(GmlError::new(line, format!("unexpected character `{other}`"))),
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone)]
enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<Entry>),
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: Value,
    line: usize,
}

struct TreeParser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl TreeParser {
    fn list(&mut self, nested: bool, open_line: usize) -> Result<Vec<Entry>, GmlError> {
        let mut entries = Vec::new();
        loop {
            let Some((token, line)) = self.tokens.get(self.pos).cloned() else {
                if nested {
                    return Err(GmlError::new(open_line, "unclosed `[`"));
                }
                return Ok(entries);
            };
            self.pos += 1;
            let key = match token {
                Token::Close if nested => return Ok(entries),
                Token::Key(k) => k,
                other => return Err(GmlError::new(line, format!("expected a key, found {other:?}"))),
            };
            let Some((token, vline)) = self.tokens.get(self.pos).cloned() else {
                return Err(GmlError::new(line, format!("key `{key}` has no value")));
            };
            self.pos += 1;
            let value = match token {
                Token::Int(i) => Value::Int(i),
                Token::Real(f) => Value::Real(f),
                Token::Str(s) => Value::Str(s),
                Token::Open => Value::List(self.list(true, vline)?),
                other => {
                    return Err(GmlError::new(
                        vline,
                        format!("key `{key}` has invalid value {other:?}"),
                    ))
                }
            };
            entries.push(Entry { key, value, line });
        }
    }
}

fn int_field(entries: &[Entry], key: &str, owner: &str, line: usize) -> Result<i64, GmlError> {
    match entries.iter().find(|e| e.key == key).map(|e| &e.value) {
        Some(Value::Int(i)) => Ok(*i),
        Some(Value::Real(f)) if f.fract() == 0.0 => Ok(*f as i64),
        Some(_) => Err(GmlError::new(line, format!("{owner} `{key}` must be an integer"))),
        None => Err(GmlError::new(line, format!("{owner} is missing `{key}`"))),
    }
}

fn label_field(entries: &[Entry], owner: &str, line: usize) -> Result<String, GmlError> {
    let label = match entries.iter().find(|e| e.key == "label").map(|e| &e.value) {
        Some(Value::Str(s)) => s.clone(),
        Some(Value::Int(i)) => i.to_string(),
        Some(Value::Real(f)) => f.to_string(),
        Some(Value::List(_)) => {
            return Err(GmlError::new(line, format!("{owner} label must be a string")))
        }
        None => return Err(GmlError::new(line, format!("{owner} is missing `label`"))),
    };
    if label.is_empty() {
        return Err(GmlError::new(line, format!("{owner} has an empty label")));
    }
    Ok(label)
}

fn non_negative(v: i64, line: usize) -> Result<u64, GmlError> {
    u64::try_from(v).map_err(|_| GmlError::new(line, format!("negative id {v}")))
}

/// Parses a directed GML graph. Node ids in the file may be arbitrary
/// non-negative integers; they are renumbered densely in file order.
pub fn from_gml(src: &str) -> Result<KnowledgeGraph, GmlError> {
    let tokens = tokenize(src)?;
    let mut parser = TreeParser { tokens, pos: 0 };
    let top = parser.list(false, 1)?;
    let (graph, graph_line) = top
        .iter()
        .find_map(|e| match (&e.key[..], &e.value) {
            ("graph", Value::List(entries)) => Some((entries, e.line)),
            _ => None,
        })
        .ok_or_else(|| GmlError::new(1, "no `graph [ ... ]` block"))?;

    match graph.iter().find(|e| e.key == "directed") {
        Some(Entry {
            value: Value::Int(1),
            ..
        }) => {}
        Some(e) => return Err(GmlError::new(e.line, "graph must be directed (`directed 1`)")),
        None => return Err(GmlError::new(graph_line, "graph must declare `directed 1`")),
    }

    let mut g = KnowledgeGraph::new();
    let mut ids = std::collections::HashMap::new();
    for entry in graph {
        if let ("node", Value::List(fields)) = (&entry.key[..], &entry.value) {
            let ext = non_negative(int_field(fields, "id", "node", entry.line)?, entry.line)?;
            let label = label_field(fields, "node", entry.line)?;
            if ids.contains_key(&ext) {
                return Err(GmlError::new(entry.line, format!("duplicate node id {ext}")));
            }
            if g.node_id(&label).is_some() {
                return Err(GmlError::new(
                    entry.line,
                    GraphError::DuplicateLabel(label).to_string(),
                ));
            }
            ids.insert(ext, g.ensure_node(&label));
        }
    }
    for entry in graph {
        if let ("edge", Value::List(fields)) = (&entry.key[..], &entry.value) {
            let line = entry.line;
            let endpoint = |key| -> Result<usize, GmlError> {
                let ext = non_negative(int_field(fields, key, "edge", line)?, line)?;
                ids.get(&ext)
                    .copied()
                    .ok_or_else(|| GmlError::new(line, format!("edge {key} {ext} is not a node")))
            };
            let (s, t) = (endpoint("source")?, endpoint("target")?);
            let label = label_field(fields, "edge", line)?;
            let (sl, tl) = (g.label(s).to_string(), g.label(t).to_string());
            if !g.add_edge(&sl, &label, &tl) {
                return Err(GmlError::new(
                    line,
                    GraphError::DuplicateEdge(sl, label, tl).to_string(),
                ));
            }
        }
    }
    Ok(g)
}
