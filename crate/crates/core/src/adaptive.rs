//! Adaptive expansion: spend a fixed scoring budget alternating between the
//! first-stage run and a frontier that is re-derived from what has been
//! scored so far.
//!
//! Each round (a) scores the next batch of the initial pool, (b) refreshes the
//! frontier once from every document scored so far, and (c) scores the next
//! batch of the frontier. When one pool runs dry its share of the budget
//! goes to the other.

use std::cmp::Ordering;
use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::collection::Collection;
use crate::corpus::{Corpus, Query};
use crate::error::{Error, Result};
use crate::expansion::{duet_retrieve, expand_query, feedback_from_scores, DuetParams, ExpansionConfig};
use crate::index::{Bm25Params, InvertedIndex, VocabKind, WeightedQuery};
use crate::rerank::{normalized_priors, score_documents_with_priors, PassageScores, Scorer, ScoringTrace, DEFAULT_BATCH_SIZE};
use crate::run::{rank_order, RunEntry, ScoredRun};

/// What a frontier source sees when asked for a new frontier.
pub struct FrontierContext<'a> {
    pub query: &'a Query,
    /// Every document scored so far with its max-passage score, in scoring order.
    pub scored: &'a [(String, f64)],
    pub passages: &'a PassageScores,
    /// The documents of the most recent batch with their scores.
    pub last_batch: &'a [(String, f64)],
}

/// A ranked list of candidate documents; scored documents are filtered out
/// by the driver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frontier {
    pub ranking: Vec<(String, f64)>,
    /// The source could not build its preferred query and degraded.
    pub fallback: bool,
}

pub trait FrontierSource: Sync {
    fn refresh(&self, ctx: &FrontierContext<'_>) -> Result<Frontier>;
}

/// Frontier from a LEE duet retrieval whose feedback is the passage table of
/// all scored documents.
pub struct LeeFrontier<'a> {
    pub collection: &'a Collection,
    pub config: ExpansionConfig,
    pub bm25: Bm25Params,
}

impl FrontierSource for LeeFrontier<'_> {
    fn refresh(&self, ctx: &FrontierContext<'_>) -> Result<Frontier> {
        let feedback = match feedback_from_scores(ctx.passages, self.config.fb_docs, self.config.unit_kind, "adaptive") {
            Ok(f) => f,
            // Scored documents without passages leave nothing to learn from.
            Err(Error::Validation(why)) => {
                log::warn!("query {}: {why}; frontier left empty", ctx.query.query_id);
                return Ok(Frontier { ranking: Vec::new(), fallback: true });
            }
            Err(e) => return Err(e),
        };
        let (fw, fe) = self.collection.feedback_indexes(self.config.unit_kind);
        let queries = expand_query(ctx.query, &feedback, fw, fe, &self.config)?;
        let params = DuetParams {
            lambda: self.config.lambda,
            k_lee: self.config.k_lee,
            depth: self.config.k_lee,
            bm25: self.bm25,
        };
        let result = duet_retrieve(
            &ctx.query.query_id,
            queries.word.as_ref(),
            queries.entity.as_ref(),
            &self.collection.doc_word,
            &self.collection.doc_entity,
            &params,
            "frontier",
        );
        match result {
            Ok(r) => Ok(Frontier {
                ranking: r.run.entries.into_iter().map(|e| (e.unit_id, e.score)).collect(),
                fallback: r.fallback || queries.fallbacks > 0 || feedback.degenerate,
            }),
            Err(Error::DegenerateModel(why)) => {
                log::warn!("{why}; frontier left empty");
                Ok(Frontier { ranking: Vec::new(), fallback: true })
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GarMode {
    Bm25Terms,
    EntityTerms,
}

impl fmt::Display for GarMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GarMode::Bm25Terms => "bm25-terms",
            GarMode::EntityTerms => "entity-terms",
        })
    }
}

impl FromStr for GarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25-terms" | "bm25" => Ok(GarMode::Bm25Terms),
            "entity-terms" | "entity" => Ok(GarMode::EntityTerms),
            other => Err(Error::Validation(format!("unknown GAR mode {other:?}"))),
        }
    }
}

/// Neighbour query for a scored document.
///
/// `Bm25Terms` takes the document's `n_terms` highest `tf · idf` words from a
/// word index; `EntityTerms` its `n_terms` most frequently mentioned entities
/// from an entity index. Ties go to the smaller term. Weights are uniform.
/// Returns `None` when the document has no terms of that kind.
pub fn gar_frontier_query(doc_id: &str, index: &InvertedIndex, mode: GarMode, n_terms: usize) -> Result<Option<WeightedQuery>> {
    let expected = match mode {
        GarMode::Bm25Terms => VocabKind::Word,
        GarMode::EntityTerms => VocabKind::Entity,
    };
    if index.kind() != expected {
        return Err(Error::Validation(format!("{mode} needs a {expected} index, got {}", index.kind())));
    }
    let terms = index
        .unit_terms(doc_id)
        .ok_or_else(|| Error::Validation(format!("document {doc_id} not in the {} index", index.kind())))?;
    let mut weighted: Vec<(&str, f64)> = terms
        .into_iter()
        .map(|(t, tf)| {
            let w = match mode {
                GarMode::Bm25Terms => f64::from(tf) * index.idf(t),
                GarMode::EntityTerms => f64::from(tf),
            };
            (t, w)
        })
        .collect();
    weighted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0)));
    weighted.truncate(n_terms);
    if weighted.is_empty() {
        return Ok(None);
    }
    WeightedQuery::uniform(expected, weighted.into_iter().map(|(t, _)| t)).map(Some)
}

/// GAR-style frontier: BM25 neighbours of the best document in the last batch.
pub struct GarFrontier<'a> {
    pub collection: &'a Collection,
    pub mode: GarMode,
    pub n_terms: usize,
    pub bm25: Bm25Params,
    pub depth: usize,
}

impl FrontierSource for GarFrontier<'_> {
    fn refresh(&self, ctx: &FrontierContext<'_>) -> Result<Frontier> {
        let best = ctx
            .last_batch
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| b.0.cmp(&a.0)));
        let Some((doc_id, _)) = best else {
            return Ok(Frontier::default());
        };
        let index = match self.mode {
            GarMode::Bm25Terms => &self.collection.doc_word,
            GarMode::EntityTerms => &self.collection.doc_entity,
        };
        match gar_frontier_query(doc_id, index, self.mode, self.n_terms)? {
            Some(q) => Ok(Frontier {
                ranking: index.bm25_search(&q, self.bm25, self.depth)?,
                fallback: false,
            }),
            None => Ok(Frontier { ranking: Vec::new(), fallback: true }),
        }
    }
}

/// A frontier that never changes; useful for tests and for replaying a
/// precomputed candidate list.
#[derive(Debug, Clone, Default)]
pub struct StaticFrontier(pub Vec<(String, f64)>);

impl FrontierSource for StaticFrontier {
    fn refresh(&self, _ctx: &FrontierContext<'_>) -> Result<Frontier> {
        Ok(Frontier { ranking: self.0.clone(), fallback: false })
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    pub budget: usize,
    pub batch: usize,
    /// Passages per scorer request.
    pub batch_size: usize,
    pub stage: String,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            budget: 1000,
            batch: 16,
            batch_size: DEFAULT_BATCH_SIZE,
            stage: "adaptive".into(),
        }
    }
}

/// Per-query accounting, written as one JSON line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveStats {
    pub qid: String,
    pub unique_scored: usize,
    pub batches: usize,
    pub frontier_refreshes: usize,
    pub fallbacks: usize,
    /// Documents left in the final frontier that the budget never reached.
    pub unscored_frontier: usize,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub run: ScoredRun,
    pub stats: AdaptiveStats,
    pub trace: ScoringTrace,
    pub passages: PassageScores,
}

/// Which pool a batch was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pool {
    Initial,
    Frontier,
}

struct State {
    scored: Vec<(String, f64)>,
    seen: HashSet<String>,
    initial: VecDeque<(String, f64)>,
    frontier: VecDeque<(String, f64)>,
    remaining: usize,
    trace: ScoringTrace,
    table: PassageScores,
    last: Vec<(String, f64)>,
}

impl State {
    /// Move unseen documents from `pool` into `out` until it holds `n`.
    fn pop(pool: &mut VecDeque<(String, f64)>, seen: &HashSet<String>, out: &mut Vec<(String, f64)>, n: usize) {
        while out.len() < n {
            let Some(next) = pool.pop_front() else { break };
            if !seen.contains(&next.0) && !out.iter().any(|(d, _)| *d == next.0) {
                out.push(next);
            }
        }
    }

    /// Up to one batch from `first`. A draw from the initial pool is topped
    /// up from the frontier once the initial pool runs out.
    fn draw(&mut self, first: Pool, batch: usize) -> Vec<(String, f64)> {
        let n = batch.min(self.remaining);
        let (a, b) = match first {
            Pool::Initial => (&mut self.initial, &mut self.frontier),
            Pool::Frontier => (&mut self.frontier, &mut self.initial),
        };
        let mut out = Vec::with_capacity(n);
        Self::pop(a, &self.seen, &mut out, n);
        if first == Pool::Initial {
            Self::pop(b, &self.seen, &mut out, n);
        }
        out
    }
}

struct Scoring<'a> {
    query: &'a Query,
    corpus: &'a Corpus,
    scorer: &'a dyn Scorer,
    batch_size: usize,
}

impl Scoring<'_> {
    /// Score one batch of `(doc, prior)` and fold it into the state.
    fn run(&self, batch: Vec<(String, f64)>, stage: &str, state: &mut State) -> Result<()> {
        let (scores, passages) = score_documents_with_priors(self.query, &batch, self.corpus, self.scorer, self.batch_size)?;
        state.remaining -= batch.len();
        let ids: Vec<String> = batch.into_iter().map(|(d, _)| d).collect();
        state.seen.extend(ids.iter().cloned());
        state.trace.record(stage, ids);
        state.table.extend(passages);
        state.scored.extend(scores.iter().cloned());
        state.last = scores;
        Ok(())
    }
}

/// Run the adaptive loop for one query.
///
/// `r0` is the first-stage ranking. Frontier batches are only drawn while
/// the frontier has unscored documents; otherwise the budget flows back to
/// the initial pool on the next round.
pub fn adaptive_expand(
    query: &Query,
    r0: &ScoredRun,
    corpus: &Corpus,
    scorer: &dyn Scorer,
    frontier: &dyn FrontierSource,
    opts: &AdaptiveOptions,
) -> Result<AdaptiveOutcome> {
    if opts.batch == 0 {
        return Err(Error::Validation("adaptive batch must be positive".into()));
    }
    if opts.budget < opts.batch {
        return Err(Error::Validation(format!(
            "budget {} is smaller than the batch {}",
            opts.budget, opts.batch
        )));
    }
    if r0.is_empty() {
        return Err(Error::Validation(format!("query {}: empty initial run", query.query_id)));
    }

    let priors = normalized_priors(r0.entries.iter().map(|e| e.score));
    let mut state = State {
        scored: Vec::new(),
        seen: HashSet::new(),
        initial: r0.entries.iter().map(|e| e.unit_id.clone()).zip(priors).collect(),
        frontier: VecDeque::new(),
        remaining: opts.budget,
        trace: ScoringTrace::default(),
        table: PassageScores::default(),
        last: Vec::new(),
    };
    let mut stats = AdaptiveStats {
        qid: query.query_id.clone(),
        ..AdaptiveStats::default()
    };
    let initial_stage = format!("{}:initial", opts.stage);
    let frontier_stage = format!("{}:frontier", opts.stage);

    let scoring = Scoring { query, corpus, scorer, batch_size: opts.batch_size };
    while state.remaining > 0 {
        // (a)
        let batch_a = state.draw(Pool::Initial, opts.batch);
        let drew_a = !batch_a.is_empty();
        if drew_a {
            scoring.run(batch_a, &initial_stage, &mut state)?;
            stats.batches += 1;
        }
        if state.remaining == 0 || state.scored.is_empty() {
            break;
        }

        // (b)
        let fresh = {
            let ctx = FrontierContext {
                query,
                scored: &state.scored,
                passages: &state.table,
                last_batch: &state.last,
            };
            frontier.refresh(&ctx)?
        };
        stats.frontier_refreshes += 1;
        stats.fallbacks += usize::from(fresh.fallback);
        state.frontier = fresh
            .ranking
            .into_iter()
            .filter(|(d, _)| !state.seen.contains(d))
            .collect();
        let fprior = normalized_priors(state.frontier.iter().map(|f| f.1));
        for (f, p) in state.frontier.iter_mut().zip(fprior) {
            f.1 = p;
        }

        // (c)
        let batch_c = state.draw(Pool::Frontier, opts.batch);
        let drew_c = !batch_c.is_empty();
        if drew_c {
            scoring.run(batch_c, &frontier_stage, &mut state)?;
            stats.batches += 1;
        }
        if !drew_a && !drew_c {
            break;
        }
    }

    stats.unique_scored = state.trace.unique_scored_count();
    stats.unscored_frontier = state.frontier.iter().filter(|(d, _)| !state.seen.contains(d)).count();
    let stage = opts.stage.clone();
    let mut entries: Vec<RunEntry> = state
        .scored
        .into_iter()
        .map(|(d, s)| RunEntry::new(d, s, stage.clone()))
        .collect();
    entries.sort_by(rank_order);
    Ok(AdaptiveOutcome {
        run: ScoredRun::new(r0.query_id.clone(), entries)?,
        stats,
        trace: state.trace,
        passages: state.table,
    })
}
