//! Pre-linked document collections, topics, and sentence-window passage
//! sharding.
//!
//! Entity mention offsets are character (Unicode scalar) offsets into the
//! document body, matching the JSONL records produced by common entity
//! linkers.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_STRIDE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    #[serde(default)]
    pub surface: String,
    /// Character offset of the first character of the mention.
    pub start: usize,
    /// Character offset one past the last character of the mention.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub entity_mentions: Vec<EntityMention>,
}

impl Document {
    /// Title and body joined, as indexed in the document word index.
    pub fn indexed_text(&self) -> String {
        if self.title.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n{}", self.title, self.body)
        }
    }

    pub fn entity_tokens(&self) -> Vec<String> {
        self.entity_mentions.iter().map(|m| m.entity_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_idx: usize,
    /// Inclusive range of sentence indices.
    pub sentence_range: (usize, usize),
    pub text: String,
    #[serde(rename = "entities")]
    pub entity_mentions: Vec<EntityMention>,
}

impl Passage {
    pub fn id(&self) -> String {
        passage_id(&self.doc_id, self.passage_idx)
    }

    /// Text sent to a scorer: the parent title followed by the passage.
    pub fn scoring_text(&self, title: &str) -> String {
        if title.is_empty() {
            self.text.clone()
        } else {
            format!("{title} {}", self.text)
        }
    }

    pub fn entity_tokens(&self) -> Vec<String> {
        self.entity_mentions.iter().map(|m| m.entity_id.clone()).collect()
    }
}

pub fn passage_id(doc_id: &str, passage_idx: usize) -> String {
    format!("{doc_id}#{passage_idx}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    #[serde(default)]
    pub entity_ids: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            query_id: query_id.into(),
            text: text.into(),
            entity_ids: Vec::new(),
        }
    }

    pub fn with_entities<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.entity_ids = ids.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CorpusRecord {
    id: String,
    #[serde(default)]
    title: String,
    contents: String,
    #[serde(default)]
    entities: Vec<EntityMention>,
}

/// Warning counters collected while loading a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Mentions whose end offset ran past the body and was clamped.
    pub clamped_mentions: usize,
    /// Mentions left empty (or with an empty entity id) and removed.
    pub dropped_mentions: usize,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Vec<Document>, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), path)
}

pub fn read_corpus(reader: impl BufRead, origin: &Path) -> Result<(Vec<Document>, LoadReport)> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let mut report = LoadReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate doc_id {:?} at {}:{}",
                record.id,
                origin.display(),
                lineno + 1
            )));
        }
        let body_chars = record.contents.chars().count();
        let mut mentions = Vec::with_capacity(record.entities.len());
        for mut m in record.entities {
            if m.end > body_chars {
                m.end = body_chars;
                report.clamped_mentions += 1;
            }
            if m.start >= m.end || m.entity_id.is_empty() {
                report.dropped_mentions += 1;
                continue;
            }
            mentions.push(m);
        }
        docs.push(Document {
            doc_id: record.id,
            title: record.title,
            body: record.contents,
            entity_mentions: mentions,
        });
    }
    if report.clamped_mentions + report.dropped_mentions > 0 {
        log::warn!(
            "{}: clamped {} and dropped {} entity mentions",
            origin.display(),
            report.clamped_mentions,
            report.dropped_mentions
        );
    }
    Ok((docs, report))
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for doc in docs {
        let record = CorpusRecord {
            id: doc.doc_id.clone(),
            title: doc.title.clone(),
            contents: doc.body.clone(),
            entities: doc.entity_mentions.clone(),
        };
        let line = serde_json::to_string(&record).expect("corpus record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Topics: `query_id<TAB>text[<TAB>entity;entity;...]`. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_topics(BufReader::new(file), path)
}

pub fn read_topics(reader: impl BufRead, origin: &Path) -> Result<Vec<Query>> {
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let qid = fields.next().unwrap_or_default().trim();
        let text = fields
            .next()
            .ok_or_else(|| Error::parse(origin, lineno + 1, "expected query_id<TAB>text"))?;
        let entity_ids = fields
            .next()
            .map(|s| {
                s.split(';')
                    .map(str::trim)
                    .filter(|e| !e.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        if qid.is_empty() {
            return Err(Error::parse(origin, lineno + 1, "empty query_id"));
        }
        if !seen.insert(qid.to_string()) {
            return Err(Error::Validation(format!("duplicate query_id {qid:?} in topics")));
        }
        queries.push(Query {
            query_id: qid.to_string(),
            text: text.trim().to_string(),
            entity_ids,
        });
    }
    Ok(queries)
}

pub fn write_topics(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for q in queries {
        writeln!(out, "{}\t{}\t{}", q.query_id, q.text, q.entity_ids.join(";"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Byte ranges of the sentences of `text`.
///
/// A sentence ends after a run of `.`, `!` or `?` that is followed by
/// whitespace or the end of text, so decimals such as "3.5" stay intact. The
/// ranges tile the text: leading whitespace belongs to the following sentence
/// and trailing whitespace to the last one. Whitespace-only text has no
/// sentences.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        match chars.peek() {
            Some(&(_, next)) if next.is_whitespace() => {
                let end = i + c.len_utf8();
                spans.push(start..end);
                start = end;
            }
            None => {
                spans.push(start..text.len());
                start = text.len();
            }
            _ => {}
        }
    }
    if start < text.len() {
        if text[start..].trim().is_empty() {
            if let Some(last) = spans.last_mut() {
                last.end = text.len();
            }
        } else {
            spans.push(start..text.len());
        }
    }
    spans
}

/// Split a document into overlapping windows of `window` sentences whose
/// first sentences are `stride` apart. Emission stops after the first window
/// that reaches the last sentence.
pub fn shard_passages(doc: &Document, window: usize, stride: usize) -> Result<Vec<Passage>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Validation(format!(
            "invalid passage window {window} / stride {stride}: need 1 <= stride <= window"
        )));
    }
    let spans = sentence_spans(&doc.body);
    let n = spans.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    // Sentence index of each mention, by its start offset.
    let char_to_byte: Vec<usize> = doc.body.char_indices().map(|(b, _)| b).collect();
    let mention_sentence: Vec<usize> = doc
        .entity_mentions
        .iter()
        .map(|m| {
            let byte = char_to_byte.get(m.start).copied().unwrap_or(doc.body.len());
            spans.partition_point(|s| s.end <= byte).min(n - 1)
        })
        .collect();

    let mut passages = Vec::new();
    let mut first = 0;
    loop {
        let last = (first + window - 1).min(n - 1);
        let text = doc.body[spans[first].start..spans[last].end].trim().to_string();
        let entity_mentions = doc
            .entity_mentions
            .iter()
            .zip(&mention_sentence)
            .filter(|(_, &s)| s >= first && s <= last)
            .map(|(m, _)| m.clone())
            .collect();
        passages.push(Passage {
            doc_id: doc.doc_id.clone(),
            passage_idx: passages.len(),
            sentence_range: (first, last),
            text,
            entity_mentions,
        });
        if last == n - 1 {
            break;
        }
        first += stride;
    }
    Ok(passages)
}

/// An in-memory collection: documents plus their passages.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    passages: Vec<Vec<Passage>>,
    window: usize,
    stride: usize,
}

impl Corpus {
    pub fn new(docs: Vec<Document>, window: usize, stride: usize) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate doc_id {:?}", d.doc_id)));
            }
        }
        let passages = docs
            .iter()
            .map(|d| shard_passages(d, window, stride))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            docs,
            by_id,
            passages,
            window,
            stride,
        })
    }

    pub fn with_default_sharding(docs: Vec<Document>) -> Result<Self> {
        Self::new(docs, DEFAULT_WINDOW, DEFAULT_STRIDE)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn passages(&self, doc_id: &str) -> Option<&[Passage]> {
        self.by_id.get(doc_id).map(|&i| self.passages[i].as_slice())
    }

    pub fn all_passages(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter().flatten()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}
