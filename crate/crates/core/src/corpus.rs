//! Body-of-knowledge ingestion.
//!
//! Raw `.txt` and `.md` files are decoded as UTF-8, Markdown is reduced to
//! plain text, and the result is normalized: Unicode NFC, whitespace runs
//! collapsed to one space, paragraphs kept apart by [`PARAGRAPH_BREAK`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use pulldown_cmark::{Event, Parser, TagEnd};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Marker separating paragraphs inside [`CorpusDocument::text`].
pub const PARAGRAPH_BREAK: &str = "\n";

/// Default upper bound on chunk size, in characters.
pub const DEFAULT_MAX_CHUNK_CHARS: usize = 6000;

/// Smallest accepted `max_chunk_chars`.
pub const MIN_CHUNK_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    NotUtf8 { path: PathBuf },
    #[error("{path}: empty document")]
    EmptyDocument { path: PathBuf },
    #[error("corpus directory {dir} contains no .txt or .md files")]
    NoDocuments { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub source_path: String,
    pub text: String,
    pub word_count: usize,
}

impl CorpusDocument {
    pub fn paragraphs(&self) -> impl Iterator<Item = &str> {
        self.text
            .split(PARAGRAPH_BREAK)
            .filter(|p| !p.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    /// Set when a single sentence is longer than the chunk budget and had
    /// to be emitted whole.
    pub oversized: bool,
}

impl DocumentChunk {
    /// Identifier carried by triplets extracted from this chunk.
    pub fn source_id(&self) -> String {
        format!("{}#{}", self.doc_id, self.chunk_index)
    }
}

/// Lists the `.txt` and `.md` files directly inside `dir`, sorted by path.
pub fn collect_corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Unreadable {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Unreadable {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && is_corpus_file(&path) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(CorpusError::NoDocuments {
            dir: dir.to_path_buf(),
        });
    }
    files.sort();
    Ok(files)
}

fn is_corpus_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("txt") | Some("md") | Some("markdown")
    )
}

fn is_markdown(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("md") | Some("markdown")
    )
}

/// Reads and normalizes each file into one [`CorpusDocument`].
pub fn ingest<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<CorpusDocument>, CorpusError> {
    let mut seen_ids = HashSet::new();
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let raw = String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8 {
            path: path.to_path_buf(),
        })?;
        let plain = if is_markdown(path) {
            strip_markdown(&raw)
        } else {
            raw
        };
        let text = normalize_text(&plain);
        if text.is_empty() {
            return Err(CorpusError::EmptyDocument {
                path: path.to_path_buf(),
            });
        }
        let doc_id = unique_doc_id(path, &mut seen_ids);
        docs.push(CorpusDocument {
            doc_id,
            source_path: path.display().to_string(),
            word_count: text.split_whitespace().count(),
            text,
        });
    }
    Ok(docs)
}

fn unique_doc_id(path: &Path, seen: &mut HashSet<String>) -> String {
    let base = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "document".to_string());
    let mut candidate = base.clone();
    let mut n = 2;
    while !seen.insert(candidate.clone()) {
        candidate = format!("{base}-{n}");
        n += 1;
    }
    candidate
}

/// NFC-normalizes `raw`, collapses whitespace inside each paragraph and
/// joins the non-empty paragraphs with [`PARAGRAPH_BREAK`]. Paragraphs are
/// delimited by blank lines.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in nfc.lines() {
        if line.trim().is_empty() {
            flush_paragraph(&mut current, &mut paragraphs);
        } else {
            current.push(line);
        }
    }
    flush_paragraph(&mut current, &mut paragraphs);
    paragraphs.join(PARAGRAPH_BREAK)
}

fn flush_paragraph(lines: &mut Vec<&str>, out: &mut Vec<String>) {
    if lines.is_empty() {
        return;
    }
    let joined = lines
        .iter()
        .flat_map(|l| l.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ");
    if !joined.is_empty() {
        out.push(joined);
    }
    lines.clear();
}

/// Reduces Markdown to plain text with blank lines between blocks.
pub fn strip_markdown(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for event in Parser::new(raw) {
        match event {
            Event::Text(t) | Event::Code(t) => out.push_str(&t),
            Event::SoftBreak | Event::HardBreak => out.push(' '),
            Event::End(TagEnd::Paragraph)
            | Event::End(TagEnd::Heading(_))
            | Event::End(TagEnd::Item)
            | Event::End(TagEnd::CodeBlock)
            | Event::End(TagEnd::BlockQuote(_))
            | Event::End(TagEnd::TableRow) => out.push_str("\n\n"),
            Event::End(TagEnd::TableCell) => out.push(' '),
            _ => {}
        }
    }
    out
}

/// Splits a paragraph after `.`, `!` or `?` when followed by whitespace.
/// Returned slices are trimmed and never empty.
pub fn split_sentences(paragraph: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = paragraph.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    push_trimmed(&paragraph[start..end], &mut sentences);
                    start = end;
                }
            }
        }
    }
    push_trimmed(&paragraph[start..], &mut sentences);
    sentences
}

fn push_trimmed<'a>(s: &'a str, out: &mut Vec<&'a str>) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t);
    }
}

/// Packs paragraphs greedily into chunks of at most `max_chunk_chars`
/// characters of paragraph content. A paragraph that does not fit on its own
/// is split at sentence boundaries; a single sentence longer than the budget
/// becomes its own chunk with `oversized` set.
///
/// The budget counts paragraph characters only; the [`PARAGRAPH_BREAK`]
/// separators between packed paragraphs are structural and not charged.
///
/// # Panics
///
/// If `max_chunk_chars` is below [`MIN_CHUNK_CHARS`].
pub fn chunk(doc: &CorpusDocument, max_chunk_chars: usize) -> Vec<DocumentChunk> {
    assert!(
        max_chunk_chars >= MIN_CHUNK_CHARS,
        "max_chunk_chars must be at least {MIN_CHUNK_CHARS}"
    );
    let mut packer = Packer {
        doc_id: &doc.doc_id,
        chunks: Vec::new(),
        parts: Vec::new(),
        used: 0,
    };
    for paragraph in doc.paragraphs() {
        let len = paragraph.chars().count();
        if len <= max_chunk_chars {
            if packer.used + len > max_chunk_chars {
                packer.flush(PARAGRAPH_BREAK);
            }
            packer.parts.push(paragraph);
            packer.used += len;
            continue;
        }
        packer.flush(PARAGRAPH_BREAK);
        for sentence in split_sentences(paragraph) {
            let slen = sentence.chars().count();
            if slen > max_chunk_chars {
                packer.flush(" ");
                packer.emit(sentence.to_string(), true);
                continue;
            }
            // sentences are rejoined with a single space, which is charged
            let extra = if packer.parts.is_empty() { slen } else { slen + 1 };
            if packer.used + extra > max_chunk_chars {
                packer.flush(" ");
                packer.used = slen;
            } else {
                packer.used += extra;
            }
            packer.parts.push(sentence);
        }
        packer.flush(" ");
    }
    packer.flush(PARAGRAPH_BREAK);
    packer.chunks
}

struct Packer<'a> {
    doc_id: &'a str,
    chunks: Vec<DocumentChunk>,
    parts: Vec<&'a str>,
    used: usize,
}

impl Packer<'_> {
    fn flush(&mut self, sep: &str) {
        if self.parts.is_empty() {
            return;
        }
        let text = self.parts.join(sep);
        self.parts.clear();
        self.used = 0;
        self.emit(text, false);
    }

    fn emit(&mut self, text: String, oversized: bool) {
        self.chunks.push(DocumentChunk {
            doc_id: self.doc_id.to_string(),
            chunk_index: self.chunks.len(),
            text,
            oversized,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn doc(text: &str) -> CorpusDocument {
        CorpusDocument {
            doc_id: "d".into(),
            source_path: "d.txt".into(),
            text: text.into(),
            word_count: text.split_whitespace().count(),
        }
    }

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn bundled_supply_chain_corpus_is_one_chunk_of_about_400_words() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/corpus/supply_chain.txt");
        let docs = ingest(&[path]).unwrap();
        assert_eq!(docs.len(), 1);
        assert!((350..=450).contains(&docs[0].word_count), "{}", docs[0].word_count);
        assert_eq!(chunk(&docs[0], DEFAULT_MAX_CHUNK_CHARS).len(), 1);
    }

    #[test]
    fn whitespace_only_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "blank.txt", "  \n\t \n\n   ");
        let err = ingest(&[p]).unwrap_err();
        assert!(err.to_string().contains("empty document"), "{err}");
    }

    #[test]
    fn unreadable_file_error_names_path() {
        let err = ingest(&["/definitely/not/here.txt"]).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.txt"));
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latin1.txt");
        fs::write(&path, [0x63, 0x61, 0x66, 0xe9]).unwrap();
        assert!(matches!(
            ingest(&[path]).unwrap_err(),
            CorpusError::NotUtf8 { .. }
        ));
    }

    #[test]
    fn two_paragraph_file_splits_into_two_chunks_when_budget_is_tight() {
        let dir = tempfile::tempdir().unwrap();
        let first = "word ".repeat(50);
        let second = "other ".repeat(50);
        let p = write_file(dir.path(), "two.txt", &format!("{first}\n\n{second}\n"));
        let docs = ingest(&[p]).unwrap();
        assert_eq!(docs[0].paragraphs().count(), 2);
        // 249 + 299 chars do not fit together under 300
        let chunks = chunk(&docs[0], 300);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunk(&docs[0], 6000).len(), 1);
    }

    #[test]
    fn normalization_is_nfc_and_collapses_whitespace() {
        // "e" + combining acute -> precomposed
        let raw = "  Caf\u{0065}\u{0301}   au\tlait \n second   line\n\n\n  Next para  ";
        assert_eq!(normalize_text(raw), "Caf\u{00e9} au lait second line\nNext para");
    }

    #[test]
    fn markdown_is_stripped() {
        let md = "# Title\n\nSome *emphasis* and a [link](http://x.y).\n\n- item one\n- item two\n";
        let text = normalize_text(&strip_markdown(md));
        assert_eq!(text, "Title\nSome emphasis and a link.\nitem one\nitem two");
    }

    #[test]
    fn duplicate_file_names_get_distinct_ids() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let p1 = write_file(a.path(), "x.txt", "alpha");
        let p2 = write_file(b.path(), "x.txt", "beta");
        let docs = ingest(&[p1, p2]).unwrap();
        assert_ne!(docs[0].doc_id, docs[1].doc_id);
    }

    #[test]
    fn ingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.md", "Hello  *world*.\n\nBye.");
        assert_eq!(ingest(&[&p]).unwrap(), ingest(&[&p]).unwrap());
    }

    #[test]
    fn empty_paragraph_list_gives_no_chunks() {
        assert!(chunk(&doc(""), 6000).is_empty());
    }

    #[test]
    fn three_3000_char_paragraphs_pack_two_then_one() {
        let para = |c: char| std::iter::repeat(c).take(3000).collect::<String>();
        let text = [para('a'), para('b'), para('c')].join(PARAGRAPH_BREAK);
        let chunks = chunk(&doc(&text), 6000);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text.split(PARAGRAPH_BREAK).count(), 2);
        assert_eq!(chunks[1].text, para('c'));
        assert_eq!(chunks[0].chunk_index, 0);
        assert_eq!(chunks[1].chunk_index, 1);
    }

    #[test]
    fn long_paragraph_splits_on_sentences_and_flags_giant_sentence() {
        let sentence = format!("{}.", "x".repeat(150));
        let giant = format!("{}.", "y".repeat(400));
        let para = format!("{s} {s} {s} {g} {s}", s = sentence, g = giant);
        let chunks = chunk(&doc(&para), 320);
        let texts: Vec<_> = chunks.iter().map(|c| (c.text.len(), c.oversized)).collect();
        assert_eq!(texts, vec![(303, false), (151, false), (401, true), (151, false)]);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("One. Two? Three! 3.5 stays"),
            vec!["One.", "Two?", "Three!", "3.5 stays"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn collect_skips_other_extensions() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "b.md", "b");
        write_file(dir.path(), "a.txt", "a");
        write_file(dir.path(), "c.pdf", "c");
        let files = collect_corpus_files(dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap())
            .collect();
        assert_eq!(names, vec!["a.txt", "b.md"]);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            collect_corpus_files(empty.path()),
            Err(CorpusError::NoDocuments { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sentences_of(text: &str) -> Vec<String> {
            let mut all: Vec<String> = text
                .split(PARAGRAPH_BREAK)
                .flat_map(|p| split_sentences(p).into_iter().map(str::to_string))
                .collect();
            all.sort();
            all
        }

        proptest! {
            #[test]
            fn chunking_preserves_sentences(
                paras in prop::collection::vec(
                    prop::collection::vec("[a-z]{1,40}( [a-z]{1,30}){0,6}[.!?]", 1..12),
                    0..8),
                max in 200usize..900,
            ) {
                let text = paras
                    .iter()
                    .map(|p| p.join(" "))
                    .collect::<Vec<_>>()
                    .join(PARAGRAPH_BREAK);
                let d = doc(&text);
                let chunks = chunk(&d, max);
                let rejoined: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
                prop_assert_eq!(sentences_of(&rejoined.join(PARAGRAPH_BREAK)), sentences_of(&text));
                for c in &chunks {
                    let content: usize = c.text.split(PARAGRAPH_BREAK).map(|p| p.chars().count()).sum();
                    prop_assert!(c.oversized || content <= max);
                }
                if d.paragraphs().all(|p| p.chars().count() <= max) {
                    prop_assert_eq!(rejoined.join(PARAGRAPH_BREAK), text);
                }
            }
        }
    }
}
