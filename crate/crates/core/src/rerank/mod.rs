//! Passage-level re-ranking with max-passage document aggregation.
//!
//! A [`Scorer`] assigns each (query, passage) pair a relevance probability in
//! `[0, 1]`. [`rerank_run`] scores every passage of the top documents of a
//! run, takes the maximum per document, and keeps the per-passage scores so
//! they can seed feedback models.

mod builtin;
mod external;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::corpus::{passage_id, Corpus, Query};
use crate::error::{Error, Result};
use crate::run::{RunEntry, ScoredRun};

pub use builtin::{IdentityScorer, LexicalScorer, QrelsOracleScorer};
pub use external::{ExternalOptions, HttpScorer, ProcessScorer, ScoreRequestJson, ScoreResponseJson};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ScoreError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringPassage {
    pub pid: String,
    pub doc_id: String,
    /// Title plus passage text.
    pub text: String,
    /// The parent document's score in the run being re-ranked, normalized to
    /// `[0, 1]` over the re-ranked prefix.
    pub prior: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringRequest<'a> {
    pub qid: &'a str,
    pub query: &'a str,
    pub passages: &'a [ScoringPassage],
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    /// One score per passage, in request order, each within `[0, 1]`.
    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        (**self).score_batch(request)
    }
}

/// Per-document passage scores, indexed by passage ordinal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassageScores {
    docs: BTreeMap<String, Vec<f64>>,
}

impl PassageScores {
    pub fn insert(&mut self, doc_id: impl Into<String>, scores: Vec<f64>) {
        self.docs.insert(doc_id.into(), scores);
    }

    pub fn doc(&self, doc_id: &str) -> Option<&[f64]> {
        self.docs.get(doc_id).map(Vec::as_slice)
    }

    pub fn doc_score(&self, doc_id: &str) -> Option<f64> {
        self.doc(doc_id).map(max_passage)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn extend(&mut self, other: PassageScores) {
        self.docs.extend(other.docs);
    }

    /// `(passage_id, score)` for every scored passage, ordered by document id
    /// then passage ordinal.
    pub fn passage_entries(&self) -> Vec<(String, f64)> {
        self.docs
            .iter()
            .flat_map(|(d, s)| s.iter().enumerate().map(move |(i, &v)| (passage_id(d, i), v)))
            .collect()
    }

    /// `(doc_id, max-passage score)` for every scored document.
    pub fn doc_entries(&self) -> Vec<(String, f64)> {
        self.docs.iter().map(|(d, s)| (d.clone(), max_passage(s))).collect()
    }
}

/// Maximum passage score; 0 for a document without passages.
pub fn max_passage(scores: &[f64]) -> f64 {
    scores.iter().copied().fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s)))).unwrap_or(0.0)
}

/// Record of every batch of documents sent to a scorer for one query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringTrace {
    pub calls: Vec<(String, Vec<String>)>,
}

impl ScoringTrace {
    pub fn record(&mut self, stage: &str, doc_ids: Vec<String>) {
        if !doc_ids.is_empty() {
            self.calls.push((stage.to_string(), doc_ids));
        }
    }

    /// Number of distinct documents sent to the scorer across all stages.
    pub fn unique_scored_count(&self) -> usize {
        self.calls
            .iter()
            .flat_map(|(_, ids)| ids.iter())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn total_scored(&self) -> usize {
        self.calls.iter().map(|(_, ids)| ids.len()).sum()
    }

    pub fn merge(&mut self, other: ScoringTrace) {
        self.calls.extend(other.calls);
    }
}

pub fn unique_scored_count(trace: &ScoringTrace) -> usize {
    trace.unique_scored_count()
}

#[derive(Debug, Clone)]
pub struct RerankOptions {
    pub depth: usize,
    pub batch_size: usize,
    pub stage: String,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            depth: 1000,
            batch_size: DEFAULT_BATCH_SIZE,
            stage: "rerank".into(),
        }
    }
}

/// Score every passage of `docs` and return `(doc_id, max-passage score)`
/// per document plus the passage table.
pub fn score_documents(
    query: &Query,
    docs: &[(String, f64)],
    corpus: &Corpus,
    scorer: &dyn Scorer,
    batch_size: usize,
) -> Result<(Vec<(String, f64)>, PassageScores)> {
    let priors = normalized_priors(docs.iter().map(|d| d.1));
    let with_priors: Vec<(String, f64)> = docs.iter().map(|d| d.0.clone()).zip(priors).collect();
    score_documents_with_priors(query, &with_priors, corpus, scorer, batch_size)
}

/// Like [`score_documents`], but the second element of each pair is already
/// the `[0, 1]` prior handed to the scorer.
pub fn score_documents_with_priors(
    query: &Query,
    docs: &[(String, f64)],
    corpus: &Corpus,
    scorer: &dyn Scorer,
    batch_size: usize,
) -> Result<(Vec<(String, f64)>, PassageScores)> {
    let batch_size = batch_size.max(1);
    let mut requests = Vec::new();
    let mut counts = Vec::with_capacity(docs.len());
    for (doc_id, prior) in docs {
        let prior = *prior;
        let doc = corpus.document(doc_id).ok_or_else(|| {
            Error::Validation(format!("document {doc_id} of query {} not in corpus", query.query_id))
        })?;
        let passages = corpus.passages(doc_id).unwrap_or_default();
        counts.push(passages.len());
        requests.extend(passages.iter().map(|p| ScoringPassage {
            pid: p.id(),
            doc_id: doc_id.clone(),
            text: p.scoring_text(&doc.title),
            prior,
        }));
    }

    let mut flat = Vec::with_capacity(requests.len());
    for (batch, chunk) in requests.chunks(batch_size).enumerate() {
        let request = ScoringRequest {
            qid: &query.query_id,
            query: &query.text,
            passages: chunk,
        };
        let fail = |message: String| Error::Scorer {
            qid: query.query_id.clone(),
            batch,
            message: format!("{}: {message}", scorer.name()),
        };
        let scores = scorer.score_batch(&request).map_err(|e| fail(e.0))?;
        if scores.len() != chunk.len() {
            return Err(fail(format!("returned {} scores for {} passages", scores.len(), chunk.len())));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0 || **s > 1.0) {
            return Err(fail(format!("score {bad} outside [0, 1]")));
        }
        flat.extend(scores);
    }

    let mut table = PassageScores::default();
    let mut doc_scores = Vec::with_capacity(docs.len());
    let mut rest = flat.as_slice();
    for ((doc_id, _), n) in docs.iter().zip(counts) {
        let (mine, tail) = rest.split_at(n);
        rest = tail;
        doc_scores.push((doc_id.clone(), max_passage(mine)));
        table.insert(doc_id.clone(), mine.to_vec());
    }
    Ok((doc_scores, table))
}

/// Re-rank the top `depth` documents of `run` by max-passage score.
///
/// Documents below the depth keep their relative order and stage tag; their
/// scores are squashed linearly into `[-2, -1]` so they sort after every
/// re-scored document.
pub fn rerank_run(
    query: &Query,
    run: &ScoredRun,
    corpus: &Corpus,
    scorer: &dyn Scorer,
    opts: &RerankOptions,
    trace: &mut ScoringTrace,
) -> Result<(ScoredRun, PassageScores)> {
    if opts.depth == 0 || run.is_empty() {
        return Ok((run.clone(), PassageScores::default()));
    }
    let depth = opts.depth.min(run.len());
    let head: Vec<(String, f64)> = run.entries[..depth]
        .iter()
        .map(|e| (e.unit_id.clone(), e.score))
        .collect();
    let (scored, table) = score_documents(query, &head, corpus, scorer, opts.batch_size)?;
    trace.record(&opts.stage, head.into_iter().map(|(d, _)| d).collect());

    let mut entries: Vec<RunEntry> = scored
        .into_iter()
        .map(|(d, s)| RunEntry::new(d, s, opts.stage.clone()))
        .collect();
    entries.sort_by(crate::run::rank_order);
    entries.extend(squash_tail(&run.entries[depth..]));
    Ok((ScoredRun::from_sorted(run.query_id.clone(), entries), table))
}

fn squash_tail(tail: &[RunEntry]) -> Vec<RunEntry> {
    let m = tail.len();
    tail.iter()
        .enumerate()
        .map(|(i, e)| {
            let score = if m == 1 { -1.0 } else { -1.0 - i as f64 / (m - 1) as f64 };
            RunEntry::new(e.unit_id.clone(), score, e.stage.clone())
        })
        .collect()
}

/// Map run scores onto `[0, 1]`: divide by the maximum when all are
/// positive, otherwise min-max scale. Equal scores map to 1.
pub fn normalized_priors(scores: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let (lo, hi) = scores
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    scores
        .map(|s| {
            if lo > 0.0 {
                s / hi
            } else if hi > lo {
                (s - lo) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}
