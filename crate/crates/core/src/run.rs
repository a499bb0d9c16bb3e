//! Ranked runs and the TREC six-column run format.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub unit_id: String,
    pub score: f64,
    /// Tag of the stage that produced `score`.
    pub stage: String,
}

impl RunEntry {
    pub fn new(unit_id: impl Into<String>, score: f64, stage: impl Into<String>) -> Self {
        RunEntry {
            unit_id: unit_id.into(),
            score,
            stage: stage.into(),
        }
    }
}

/// Descending score, then ascending unit id.
pub fn rank_order(a: &RunEntry, b: &RunEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.unit_id.cmp(&b.unit_id))
}

/// A ranked list for one query. Entries are sorted by descending score with
/// ties broken by ascending unit id, and unit ids are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredRun {
    pub query_id: String,
    pub entries: Vec<RunEntry>,
}

impl ScoredRun {
    /// Sort `entries` into rank order, rejecting duplicates and non-finite
    /// scores.
    pub fn new(query_id: impl Into<String>, mut entries: Vec<RunEntry>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite score for {} in query {query_id}",
                    e.unit_id
                )));
            }
            if !seen.insert(e.unit_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate unit {} in query {query_id}",
                    e.unit_id
                )));
            }
        }
        entries.sort_by(rank_order);
        Ok(ScoredRun { query_id, entries })
    }

    /// Wrap entries that are already in rank order.
    pub(crate) fn from_sorted(query_id: impl Into<String>, entries: Vec<RunEntry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
        ScoredRun {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.unit_id.as_str()).collect()
    }

    pub fn truncated(mut self, depth: usize) -> Self {
        self.entries.truncate(depth);
        self
    }

    pub fn score_of(&self, unit_id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.unit_id == unit_id).map(|e| e.score)
    }
}

/// Write runs in TREC format: `qid Q0 docid rank score tag`. Scores use the
/// shortest representation that round-trips. An optional header is written
/// as `#`-prefixed comment lines.
pub fn write_trec_run<W: Write>(mut out: W, runs: &[ScoredRun], tag: &str, header: &[String]) -> std::io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for run in runs {
        for (rank, e) in run.entries.iter().enumerate() {
            writeln!(out, "{} Q0 {} {} {} {}", run.query_id, e.unit_id, rank + 1, e.score, tag)?;
        }
    }
    out.flush()
}

pub fn save_trec_run(path: impl AsRef<Path>, runs: &[ScoredRun], tag: &str, header: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trec_run(std::io::BufWriter::new(file), runs, tag, header).map_err(|e| Error::io(path, e))
}

/// Read a TREC run. Queries come back in order of first appearance; entries
/// are ordered by descending score, ties by file rank. The tag column becomes
/// each entry's stage.
pub fn read_trec_run(reader: impl BufRead, origin: &Path) -> Result<Vec<ScoredRun>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(u64, RunEntry)>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = trimmed.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(origin, lineno + 1, format!("expected 6 columns, got {}", f.len())));
        }
        let rank: u64 = f[3]
            .parse()
            .map_err(|_| Error::parse(origin, lineno + 1, format!("bad rank {:?}", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(origin, lineno + 1, format!("bad score {:?}", f[4])))?;
        if !rows.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        rows.entry(f[0].to_string())
            .or_default()
            .push((rank, RunEntry::new(f[2], score, f[5])));
    }
    order
        .into_iter()
        .map(|qid| {
            let mut entries = rows.remove(&qid).unwrap_or_default();
            entries.sort_by(|a, b| {
                b.1.score
                    .partial_cmp(&a.1.score)
                    .unwrap_or(Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            let mut seen = HashSet::new();
            for (_, e) in &entries {
                if !seen.insert(e.unit_id.clone()) {
                    return Err(Error::Validation(format!("duplicate doc {} for query {qid}", e.unit_id)));
                }
            }
            Ok(ScoredRun {
                query_id: qid,
                entries: entries.into_iter().map(|(_, e)| e).collect(),
            })
        })
        .collect()
}

pub fn load_trec_run(path: impl AsRef<Path>) -> Result<Vec<ScoredRun>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trec_run(BufReader::new(file), path)
}

/// Check a TREC run file: six columns, `Q0`, ranks contiguous from 1 per
/// query, non-increasing scores, one declared tag, unique documents per
/// query, queries in contiguous blocks. Returns every violation found.
pub fn validate_trec_run(reader: impl BufRead) -> std::io::Result<Vec<String>> {
    let mut problems = Vec::new();
    let mut tag: Option<String> = None;
    let mut finished: HashSet<String> = HashSet::new();
    let mut current: Option<(String, u64, f64, HashSet<String>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = trimmed.split_whitespace().collect();
        if f.len() != 6 {
            problems.push(format!("line {lineno}: expected 6 columns, got {}", f.len()));
            continue;
        }
        if f[1] != "Q0" {
            problems.push(format!("line {lineno}: second column is {:?}, expected Q0", f[1]));
        }
        match &tag {
            None => tag = Some(f[5].to_string()),
            Some(t) if t != f[5] => {
                problems.push(format!("line {lineno}: tag {:?} differs from declared {t:?}", f[5]))
            }
            _ => {}
        }
        let Ok(rank) = f[3].parse::<u64>() else {
            problems.push(format!("line {lineno}: bad rank {:?}", f[3]));
            continue;
        };
        let score = match f[4].parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                problems.push(format!("line {lineno}: bad score {:?}", f[4]));
                continue;
            }
        };
        let qid = f[0];
        let starts_new = current.as_ref().is_none_or(|(q, ..)| q != qid);
        if starts_new {
            if let Some((q, ..)) = current.take() {
                finished.insert(q);
            }
            if finished.contains(qid) {
                problems.push(format!("line {lineno}: query {qid} appears in more than one block"));
            }
            if rank != 1 {
                problems.push(format!("line {lineno}: query {qid} starts at rank {rank}, expected 1"));
            }
            let mut docs = HashSet::new();
            docs.insert(f[2].to_string());
            current = Some((qid.to_string(), rank, score, docs));
            continue;
        }
        let (_, prev_rank, prev_score, docs) = current.as_mut().expect("current block");
        if rank != *prev_rank + 1 {
            problems.push(format!("line {lineno}: rank {rank} follows {prev_rank}"));
        }
        if score > *prev_score {
            problems.push(format!("line {lineno}: score {score} rises above {prev_score}"));
        }
        if !docs.insert(f[2].to_string()) {
            problems.push(format!("line {lineno}: duplicate document {} for query {qid}", f[2]));
        }
        *prev_rank = rank;
        *prev_score = score;
    }
    Ok(problems)
}
