//! Relevance-model query expansion over scored feedback units.
//!
//! A [`FeedbackSet`] turns re-ranker scores into `P(Q|D)`. From it we build
//! a word relevance model (RM3 without the idf factor, LCE with it), an entity
//! model mixing an entity unigram model with an entity co-occurrence model,
//! and finally interpolate each with the original query and fuse the two
//! BM25 retrievals ("duet").

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::analyze_unique;
use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::index::{Bm25Params, InvertedIndex, VocabKind, WeightedQuery};
use crate::rerank::PassageScores;
use crate::run::{RunEntry, ScoredRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Document,
    Passage,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitKind::Document => "document",
            UnitKind::Passage => "passage",
        })
    }
}

impl FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "document" | "doc" => Ok(UnitKind::Document),
            "passage" => Ok(UnitKind::Passage),
            other => Err(Error::Validation(format!("unknown feedback unit kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub fb_docs: usize,
    pub fb_terms: usize,
    pub original_query_weight: f64,
    pub beta: f64,
    pub lambda: f64,
    pub k_lee: usize,
    pub unit_kind: UnitKind,
    pub use_idf_factor: bool,
    pub use_entity_pairs: bool,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            fb_docs: 10,
            fb_terms: 20,
            original_query_weight: 0.5,
            beta: 0.5,
            lambda: 0.5,
            k_lee: 1000,
            unit_kind: UnitKind::Passage,
            use_idf_factor: true,
            use_entity_pairs: true,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("original_query_weight", self.original_query_weight)?;
        unit("beta", self.beta)?;
        unit("lambda", self.lambda)?;
        if self.fb_docs == 0 || self.fb_terms == 0 || self.k_lee == 0 {
            return Err(Error::Validation("fb_docs, fb_terms and k_lee must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEntry {
    pub unit_id: String,
    /// `P(Q|D)`: the unit's score divided by the feedback set's total.
    pub p: f64,
}

/// The units assumed relevant, with normalized re-ranker scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSet {
    pub unit_kind: UnitKind,
    pub entries: Vec<FeedbackEntry>,
    pub source_stage: String,
    /// Set when every feedback score was zero and `p` fell back to uniform.
    pub degenerate: bool,
}

impl FeedbackSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Take the top `fb_docs` of `scored` (by score, ties by id) and normalize
/// their scores into a distribution.
pub fn build_feedback(scored: &[(String, f64)], fb_docs: usize, unit_kind: UnitKind, stage: &str) -> Result<FeedbackSet> {
    if fb_docs == 0 {
        return Err(Error::Validation("fb_docs must be positive".into()));
    }
    if scored.is_empty() {
        return Err(Error::Validation("no scored units to build feedback from".into()));
    }
    if let Some((id, s)) = scored.iter().find(|(_, s)| !s.is_finite() || *s < 0.0) {
        return Err(Error::Validation(format!("feedback score {s} of {id} is not a nonnegative number")));
    }
    let mut ranked: Vec<&(String, f64)> = scored.iter().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(fb_docs);
    let total: f64 = ranked.iter().map(|(_, s)| s).sum();
    let degenerate = total <= 0.0;
    let n = ranked.len() as f64;
    let entries = ranked
        .into_iter()
        .map(|(id, s)| FeedbackEntry {
            unit_id: id.clone(),
            p: if degenerate { 1.0 / n } else { s / total },
        })
        .collect();
    if degenerate {
        log::warn!("{stage}: all feedback scores are zero; using uniform P(Q|D)");
    }
    Ok(FeedbackSet {
        unit_kind,
        entries,
        source_stage: stage.to_string(),
        degenerate,
    })
}

/// Feedback from re-ranker output: passage units take each scored passage's
/// own score, document units take the max-passage document score.
pub fn feedback_from_scores(table: &PassageScores, fb_docs: usize, unit_kind: UnitKind, stage: &str) -> Result<FeedbackSet> {
    let scored = match unit_kind {
        UnitKind::Passage => table.passage_entries(),
        UnitKind::Document => table.doc_entries(),
    };
    build_feedback(&scored, fb_docs, unit_kind, stage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    Rm3,
    Lce,
    LeeWord,
    LeeEntity,
}

/// A truncated, renormalized distribution over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub vocab_kind: VocabKind,
    pub mode: ModelMode,
    /// Sorted by descending weight, ties by ascending term.
    pub weights: Vec<(String, f64)>,
}

impl RelevanceModel {
    pub fn weight(&self, term: &str) -> f64 {
        self.weights.iter().find(|(t, _)| t == term).map_or(0.0, |(_, w)| *w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn with_mode(mut self, mode: ModelMode) -> Self {
        self.mode = mode;
        self
    }
}

fn by_weight_then_term(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// Keep the `fb_terms` heaviest positive entries and renormalize to 1.
fn truncate_normalize(raw: BTreeMap<String, f64>, fb_terms: usize, what: &str) -> Result<Vec<(String, f64)>> {
    let mut weights: Vec<(String, f64)> = raw.into_iter().filter(|(_, w)| *w > 0.0).collect();
    weights.sort_by(by_weight_then_term);
    weights.truncate(fb_terms);
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if weights.is_empty() || total <= 0.0 {
        return Err(Error::DegenerateModel(format!("{what}: no term carries positive weight")));
    }
    for (_, w) in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

fn normalize_map(mut raw: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = raw.values().sum();
    if total > 0.0 {
        for w in raw.values_mut() {
            *w /= total;
        }
    }
    raw
}

fn check_kind(index: &InvertedIndex, expected: VocabKind) -> Result<()> {
    if index.kind() != expected {
        return Err(Error::Validation(format!(
            "expected a {expected} index, got a {} index",
            index.kind()
        )));
    }
    Ok(())
}

/// Unnormalized unigram relevance weights:
/// `Σ_D P(Q|D) · tf(t, D) / |D| · [idf(t)]`.
pub fn unigram_weights(feedback: &FeedbackSet, index: &InvertedIndex, use_idf: bool) -> Result<BTreeMap<String, f64>> {
    let mut raw: BTreeMap<String, f64> = BTreeMap::new();
    let mut idf_cache: HashMap<&str, f64> = HashMap::new();
    for entry in &feedback.entries {
        let terms = index.unit_terms(&entry.unit_id).ok_or_else(|| {
            Error::Validation(format!("feedback unit {} missing from {} index", entry.unit_id, index.kind()))
        })?;
        let len = index.unit_length(&entry.unit_id).unwrap_or(0);
        if len == 0 {
            continue;
        }
        for (term, tf) in terms {
            let factor = if use_idf {
                *idf_cache.entry(term).or_insert_with(|| index.idf(term))
            } else {
                1.0
            };
            *raw.entry(term.to_string()).or_insert(0.0) += entry.p * f64::from(tf) / f64::from(len) * factor;
        }
    }
    Ok(raw)
}

/// Word relevance model from feedback units in `index`.
pub fn word_relevance_model(feedback: &FeedbackSet, index: &InvertedIndex, config: &ExpansionConfig) -> Result<RelevanceModel> {
    check_kind(index, VocabKind::Word)?;
    let raw = unigram_weights(feedback, index, config.use_idf_factor)?;
    Ok(RelevanceModel {
        vocab_kind: VocabKind::Word,
        mode: if config.use_idf_factor { ModelMode::Lce } else { ModelMode::Rm3 },
        weights: truncate_normalize(raw, config.fb_terms, "word relevance model")?,
    })
}

/// `P([e1, e2] | R)` for unordered entity pairs co-occurring in a feedback
/// unit. Keys are stored with `e1 < e2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairTable {
    pairs: BTreeMap<(String, String), f64>,
}

impl PairTable {
    pub fn weight(&self, e1: &str, e2: &str) -> f64 {
        let key = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        self.pairs
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.pairs.iter().map(|((a, b), w)| (a.as_str(), b.as_str(), *w))
    }

    /// `Σ_{e_i} P([e, e_i] | R)` for every entity appearing in a pair.
    pub fn row_sums(&self) -> BTreeMap<String, f64> {
        let mut sums = BTreeMap::new();
        for ((a, b), w) in &self.pairs {
            *sums.entry(a.clone()).or_insert(0.0) += w;
            *sums.entry(b.clone()).or_insert(0.0) += w;
        }
        sums
    }
}

/// Entity dependence model: for each pair co-occurring in unit `D`,
/// `Σ_D P(Q|D) · (f(e1,D) + f(e2,D)) / |D| · idf(e1) · idf(e2)`.
pub fn entity_pair_model(feedback: &FeedbackSet, entity_index: &InvertedIndex, _config: &ExpansionConfig) -> Result<PairTable> {
    check_kind(entity_index, VocabKind::Entity)?;
    let mut table = PairTable::default();
    let mut idf_cache: HashMap<&str, f64> = HashMap::new();
    for entry in &feedback.entries {
        let terms = entity_index.unit_terms(&entry.unit_id).ok_or_else(|| {
            Error::Validation(format!("feedback unit {} missing from entity index", entry.unit_id))
        })?;
        let len = entity_index.unit_length(&entry.unit_id).unwrap_or(0);
        if len == 0 || terms.len() < 2 {
            continue;
        }
        let idfs: Vec<f64> = terms
            .iter()
            .map(|(e, _)| *idf_cache.entry(e).or_insert_with(|| entity_index.idf(e)))
            .collect();
        // `terms` is sorted, so (i, j) with i < j gives e_i < e_j.
        for i in 0..terms.len() {
            for j in (i + 1)..terms.len() {
                let (e1, f1) = terms[i];
                let (e2, f2) = terms[j];
                let w = entry.p * f64::from(f1 + f2) / f64::from(len) * idfs[i] * idfs[j];
                *table.pairs.entry((e1.to_string(), e2.to_string())).or_insert(0.0) += w;
            }
        }
    }
    Ok(table)
}

/// Pre-truncation entity weights: `β · pair + (1 − β) · unigram`, where each
/// component is first normalized to sum to 1. Without co-occurring pairs (or
/// with pairs disabled) the pair component is zero.
pub fn entity_mixture_weights(feedback: &FeedbackSet, entity_index: &InvertedIndex, config: &ExpansionConfig) -> Result<BTreeMap<String, f64>> {
    check_kind(entity_index, VocabKind::Entity)?;
    let unigram = normalize_map(unigram_weights(feedback, entity_index, config.use_idf_factor)?);
    let (beta, pair) = if config.use_entity_pairs {
        (config.beta, normalize_map(entity_pair_model(feedback, entity_index, config)?.row_sums()))
    } else {
        (0.0, BTreeMap::new())
    };
    let mut mixed: BTreeMap<String, f64> = BTreeMap::new();
    for (e, w) in unigram {
        *mixed.entry(e).or_insert(0.0) += (1.0 - beta) * w;
    }
    for (e, w) in pair {
        *mixed.entry(e).or_insert(0.0) += beta * w;
    }
    Ok(mixed)
}

pub fn entity_relevance_model(feedback: &FeedbackSet, entity_index: &InvertedIndex, config: &ExpansionConfig) -> Result<RelevanceModel> {
    let mixed = entity_mixture_weights(feedback, entity_index, config)?;
    Ok(RelevanceModel {
        vocab_kind: VocabKind::Entity,
        mode: ModelMode::LeeEntity,
        weights: truncate_normalize(mixed, config.fb_terms, "entity relevance model")?,
    })
}

/// The original query as a uniform distribution over its unique terms
/// (analyzed words, or linked entity ids).
pub fn original_distribution(query: &Query, kind: VocabKind) -> Vec<(String, f64)> {
    let terms: Vec<String> = match kind {
        VocabKind::Word => analyze_unique(&query.text),
        VocabKind::Entity => {
            let mut seen = std::collections::HashSet::new();
            query.entity_ids.iter().filter(|e| seen.insert(*e)).cloned().collect()
        }
    };
    let n = terms.len() as f64;
    terms.into_iter().map(|t| (t, 1.0 / n)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub query: WeightedQuery,
    /// The original query had no terms in this vocabulary, so its weight
    /// was treated as 0.
    pub original_dropped: bool,
}

/// `w0 · P_orig(t) + (1 − w0) · model(t)`.
pub fn make_expanded_query(original: &Query, model: &RelevanceModel, w0: f64) -> Result<ExpandedQuery> {
    if !(0.0..=1.0).contains(&w0) {
        return Err(Error::Validation(format!("original_query_weight {w0} outside [0, 1]")));
    }
    let orig = original_distribution(original, model.vocab_kind);
    let (w0, dropped) = if orig.is_empty() && w0 > 0.0 {
        log::warn!(
            "query {} has no {} terms; original weight treated as 0",
            original.query_id,
            model.vocab_kind
        );
        (0.0, true)
    } else {
        (w0, false)
    };
    let mut combined: BTreeMap<String, f64> = BTreeMap::new();
    for (t, p) in orig {
        *combined.entry(t).or_insert(0.0) += w0 * p;
    }
    for (t, p) in &model.weights {
        *combined.entry(t.clone()).or_insert(0.0) += (1.0 - w0) * p;
    }
    Ok(ExpandedQuery {
        query: WeightedQuery::new(model.vocab_kind, combined)?,
        original_dropped: dropped,
    })
}

/// Expanded word and entity queries for one topic.
#[derive(Debug, Clone, PartialEq)]
pub struct LeeQueries {
    pub word: Option<WeightedQuery>,
    pub entity: Option<WeightedQuery>,
    pub word_model: Option<RelevanceModel>,
    pub entity_model: Option<RelevanceModel>,
    /// Number of sides that degraded (degenerate model or missing original).
    pub fallbacks: usize,
}

/// Build the expanded queries for the duet. The entity side is skipped when
/// `lambda == 1`. A side whose relevance model is degenerate falls back to
/// the original query; a side with neither is dropped.
pub fn expand_query(
    query: &Query,
    feedback: &FeedbackSet,
    word_index: &InvertedIndex,
    entity_index: &InvertedIndex,
    config: &ExpansionConfig,
) -> Result<LeeQueries> {
    config.validate()?;
    let mut out = LeeQueries {
        word: None,
        entity: None,
        word_model: None,
        entity_model: None,
        fallbacks: 0,
    };

    if config.lambda > 0.0 {
        let (q, m, fb) = expand_side(query, VocabKind::Word, config, || {
            word_relevance_model(feedback, word_index, config).map(|m| m.with_mode(ModelMode::LeeWord))
        })?;
        out.word = q;
        out.word_model = m;
        out.fallbacks += fb;
    }
    if config.lambda < 1.0 {
        let (q, m, fb) = expand_side(query, VocabKind::Entity, config, || {
            entity_relevance_model(feedback, entity_index, config)
        })?;
        out.entity = q;
        out.entity_model = m;
        out.fallbacks += fb;
    }
    Ok(out)
}

type Side = (Option<WeightedQuery>, Option<RelevanceModel>, usize);

fn expand_side(query: &Query, kind: VocabKind, config: &ExpansionConfig, model: impl FnOnce() -> Result<RelevanceModel>) -> Result<Side> {
    match model() {
        Ok(m) => {
            let e = make_expanded_query(query, &m, config.original_query_weight)?;
            Ok((Some(e.query), Some(m), usize::from(e.original_dropped)))
        }
        Err(Error::DegenerateModel(why)) => {
            log::warn!("query {}: {why}; {kind} side uses the original query", query.query_id);
            let orig = original_distribution(query, kind);
            if orig.is_empty() {
                Ok((None, None, 1))
            } else {
                Ok((Some(WeightedQuery::new(kind, orig)?), None, 1))
            }
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuetParams {
    pub lambda: f64,
    pub k_lee: usize,
    pub depth: usize,
    pub bm25: Bm25Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuetResult {
    pub run: ScoredRun,
    /// The requested interpolation could not be used because one side had
    /// no query; the other side was used alone.
    pub fallback: bool,
}

/// Min-max normalize scores to [0, 1]; a list of equal scores maps to 1.
pub fn min_max(list: &[(String, f64)]) -> Vec<(String, f64)> {
    let lo = list.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = list.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    list.iter()
        .map(|(id, s)| {
            let v = if hi > lo { (s - lo) / (hi - lo) } else { 1.0 };
            (id.clone(), v)
        })
        .collect()
}

/// Retrieve with each expanded query to depth `k_lee`, min-max normalize the
/// two score lists, and rank by `λ · word + (1 − λ) · entity`, counting a
/// document missing from one list as 0 there. Only lists with a positive
/// interpolation weight contribute candidates. Emits the top `depth`.
pub fn duet_retrieve(
    query_id: &str,
    word_query: Option<&WeightedQuery>,
    entity_query: Option<&WeightedQuery>,
    word_index: &InvertedIndex,
    entity_index: &InvertedIndex,
    params: &DuetParams,
    stage: &str,
) -> Result<DuetResult> {
    if params.k_lee < params.depth {
        return Err(Error::Validation(format!(
            "k_lee {} is below the run depth {}",
            params.k_lee, params.depth
        )));
    }
    if !(0.0..=1.0).contains(&params.lambda) {
        return Err(Error::Validation(format!("lambda {} outside [0, 1]", params.lambda)));
    }
    let (lambda, fallback) = match (word_query, entity_query) {
        (None, None) => {
            return Err(Error::DegenerateModel(format!("query {query_id}: no word or entity query")));
        }
        (Some(_), None) => (1.0, params.lambda < 1.0),
        (None, Some(_)) => (0.0, params.lambda > 0.0),
        (Some(_), Some(_)) => (params.lambda, false),
    };
    if fallback {
        log::warn!("query {query_id}: duet falls back to lambda = {lambda}");
    }

    let mut fused: HashMap<String, f64> = HashMap::new();
    if lambda > 0.0 {
        let q = word_query.expect("word side present");
        for (id, s) in min_max(&word_index.bm25_search(q, params.bm25, params.k_lee)?) {
            *fused.entry(id).or_insert(0.0) += lambda * s;
        }
    }
    if lambda < 1.0 {
        let q = entity_query.expect("entity side present");
        for (id, s) in min_max(&entity_index.bm25_search(q, params.bm25, params.k_lee)?) {
            *fused.entry(id).or_insert(0.0) += (1.0 - lambda) * s;
        }
    }
    let mut entries: Vec<RunEntry> = fused.into_iter().map(|(id, s)| RunEntry::new(id, s, stage)).collect();
    entries.sort_by(crate::run::rank_order);
    entries.truncate(params.depth);
    Ok(DuetResult {
        run: ScoredRun::from_sorted(query_id, entries),
        fallback,
    })
}

/// Write an expanded query as `term<TAB>weight` lines under a header naming
/// the vocabulary and configuration hash.
pub fn write_expanded_query<W: Write>(mut out: W, query_id: &str, query: &WeightedQuery, config_hash: &str) -> std::io::Result<()> {
    writeln!(out, "# qid={query_id}\tvocab_kind={}\tconfig_hash={config_hash}", query.kind)?;
    for (t, w) in &query.terms {
        writeln!(out, "{t}\t{w}")?;
    }
    Ok(())
}

/// Parse the format of [`write_expanded_query`]; returns the query id,
/// config hash and query.
pub fn read_expanded_query(reader: impl BufRead) -> Result<(String, String, WeightedQuery)> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::Validation(format!("unreadable expanded query: {e}")))?
        .ok_or_else(|| Error::Validation("empty expanded query file".into()))?;
    let fields: HashMap<&str, &str> = header
        .trim_start_matches('#')
        .split('\t')
        .filter_map(|kv| kv.trim().split_once('='))
        .collect();
    let kind: VocabKind = fields
        .get("vocab_kind")
        .ok_or_else(|| Error::Validation("expanded query header lacks vocab_kind".into()))?
        .parse()?;
    let mut terms = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::Validation(format!("unreadable expanded query: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let (t, w) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::Validation(format!("bad expanded query line {line:?}")))?;
        let w: f64 = w.parse().map_err(|_| Error::Validation(format!("bad weight in {line:?}")))?;
        terms.push((t.to_string(), w));
    }
    Ok((
        fields.get("qid").unwrap_or(&"").to_string(),
        fields.get("config_hash").unwrap_or(&"").to_string(),
        WeightedQuery::new(kind, terms)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn fb(entries: &[(&str, f64)]) -> FeedbackSet {
        FeedbackSet {
            unit_kind: UnitKind::Document,
            entries: entries
                .iter()
                .map(|(id, p)| FeedbackEntry { unit_id: id.to_string(), p: *p })
                .collect(),
            source_stage: "test".into(),
            degenerate: false,
        }
    }

    fn no_idf(fb_terms: usize) -> ExpansionConfig {
        ExpansionConfig {
            fb_terms,
            use_idf_factor: false,
            ..Default::default()
        }
    }

    fn scored(xs: &[(&str, f64)]) -> Vec<(String, f64)> {
        xs.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    #[test]
    fn feedback_normalizes_scores() {
        let f = build_feedback(&scored(&[("a", 0.8), ("b", 0.2)]), 10, UnitKind::Document, "s").unwrap();
        assert_eq!(f.entries.iter().map(|e| e.p).collect::<Vec<_>>(), [0.8, 0.2]);

        let f = build_feedback(&scored(&[("a", 0.5), ("b", 0.5), ("c", 0.5)]), 2, UnitKind::Document, "s").unwrap();
        assert_eq!(f.entries.iter().map(|e| e.unit_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(f.entries.iter().map(|e| e.p).collect::<Vec<_>>(), [0.5, 0.5]);

        let f = build_feedback(&scored(&[("c", 0.3), ("a", 0.9), ("b", 0.6)]), 3, UnitKind::Passage, "s").unwrap();
        let ps: Vec<f64> = f.entries.iter().map(|e| e.p).collect();
        for (got, want) in ps.iter().zip([0.5, 1.0 / 3.0, 1.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_feedback_is_uniform_and_flagged() {
        let f = build_feedback(&scored(&[("a", 0.0), ("b", 0.0)]), 5, UnitKind::Document, "s").unwrap();
        assert!(f.degenerate);
        assert_eq!(f.entries.iter().map(|e| e.p).collect::<Vec<_>>(), [0.5, 0.5]);
        assert!(build_feedback(&[], 5, UnitKind::Document, "s").is_err());
        assert!(build_feedback(&scored(&[("a", -1.0)]), 5, UnitKind::Document, "s").is_err());
    }

    #[test]
    fn single_unit_model_is_its_term_distribution() {
        let idx = InvertedIndex::build(VocabKind::Word, [("d1", words("plague plague rat flea"))]).unwrap();
        let m = word_relevance_model(&fb(&[("d1", 1.0)]), &idx, &no_idf(10)).unwrap();
        assert_eq!(m.mode, ModelMode::Rm3);
        assert_eq!(m.weights, [("plague".into(), 0.5), ("flea".into(), 0.25), ("rat".into(), 0.25)]);
    }

    #[test]
    fn two_unit_model_matches_hand_computation() {
        let idx = InvertedIndex::build(
            VocabKind::Word,
            [("d1", words("plague plague rat flea")), ("d2", words("rat rat ship ship"))],
        )
        .unwrap();
        let f = fb(&[("d1", 0.75), ("d2", 0.25)]);
        let raw = unigram_weights(&f, &idx, false).unwrap();
        assert_eq!(raw["plague"], 0.375);
        assert_eq!(raw["rat"], 0.3125);
        assert_eq!(raw["flea"], 0.1875);
        assert_eq!(raw["ship"], 0.125);
        // Without the idf factor the unnormalized weights already sum to 1.
        let m = word_relevance_model(&f, &idx, &no_idf(10)).unwrap();
        assert!((m.weight("plague") - 0.375).abs() < 1e-15);
        let top2 = word_relevance_model(&f, &idx, &no_idf(2)).unwrap();
        assert_eq!(top2.len(), 2);
        assert!((top2.weight("rat") - 0.3125 / 0.6875).abs() < 1e-15);
    }

    #[test]
    fn missing_feedback_unit_is_an_error() {
        let idx = InvertedIndex::build(VocabKind::Word, [("d1", words("a"))]).unwrap();
        assert!(matches!(
            word_relevance_model(&fb(&[("zz", 1.0)]), &idx, &no_idf(5)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn empty_feedback_vocabulary_is_degenerate() {
        let idx = InvertedIndex::build(VocabKind::Word, [("d1", Vec::<&str>::new())]).unwrap();
        assert!(matches!(
            word_relevance_model(&fb(&[("d1", 1.0)]), &idx, &no_idf(5)),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn pair_model_single_unit() {
        let idx = InvertedIndex::build(VocabKind::Entity, [("u", words("E1 E1 E2"))]).unwrap();
        // One unit: every idf is ln(1 + 0.5/1.5); scale it out.
        let idf = idx.idf("E1");
        let t = entity_pair_model(&fb(&[("u", 1.0)]), &idx, &ExpansionConfig::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t.weight("E2", "E1") / (idf * idf) - 1.0).abs() < 1e-12);
        assert_eq!(t.weight("E1", "E3"), 0.0);
    }

    #[test]
    fn pairs_need_co_occurrence() {
        let idx = InvertedIndex::build(VocabKind::Entity, [("u", words("E1")), ("v", words("E2"))]).unwrap();
        let t = entity_pair_model(&fb(&[("u", 0.5), ("v", 0.5)]), &idx, &ExpansionConfig::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn beta_endpoints() {
        let idx = InvertedIndex::build(
            VocabKind::Entity,
            [("u", words("E1 E1 E2")), ("v", words("E2 E3")), ("w", words("E4"))],
        )
        .unwrap();
        let f = fb(&[("u", 0.6), ("v", 0.4)]);
        let uni = ExpansionConfig { beta: 0.0, ..Default::default() };
        let m0 = entity_relevance_model(&f, &idx, &uni).unwrap();
        let expected = truncate_normalize(unigram_weights(&f, &idx, true).unwrap(), uni.fb_terms, "x").unwrap();
        assert_eq!(m0.len(), expected.len());
        for ((t0, w0), (t1, w1)) in m0.weights.iter().zip(&expected) {
            assert_eq!(t0, t1);
            assert!((w0 - w1).abs() < 1e-15);
        }

        let single = fb(&[("u", 1.0)]);
        let m1 = entity_relevance_model(&single, &idx, &ExpansionConfig { beta: 1.0, ..Default::default() }).unwrap();
        assert_eq!(m1.weights, [("E1".into(), 0.5), ("E2".into(), 0.5)]);
    }

    #[test]
    fn expanded_query_interpolates() {
        let model = RelevanceModel {
            vocab_kind: VocabKind::Word,
            mode: ModelMode::Rm3,
            weights: vec![("plagu".into(), 0.6), ("rat".into(), 0.4)],
        };
        let q = Query::new("1", "black death");
        let e = make_expanded_query(&q, &model, 0.5).unwrap().query;
        for (t, w) in [("black", 0.25), ("death", 0.25), ("plagu", 0.3), ("rat", 0.2)] {
            assert!((e.weight(t) - w).abs() < 1e-15, "{t}");
        }
        let orig = make_expanded_query(&q, &model, 1.0).unwrap().query;
        assert_eq!(orig.terms, [("black".into(), 0.5), ("death".into(), 0.5)]);
        let pure = make_expanded_query(&q, &model, 0.0).unwrap().query;
        assert_eq!(pure.terms, model.weights);
    }

    #[test]
    fn empty_original_drops_its_weight() {
        let model = RelevanceModel {
            vocab_kind: VocabKind::Entity,
            mode: ModelMode::LeeEntity,
            weights: vec![("Q1".into(), 1.0)],
        };
        let e = make_expanded_query(&Query::new("1", "the"), &model, 0.7).unwrap();
        assert!(e.original_dropped);
        assert_eq!(e.query.terms, [("Q1".into(), 1.0)]);
    }

    #[test]
    fn duet_rejects_shallow_k_lee() {
        let idx = InvertedIndex::build(VocabKind::Word, [("d", words("a"))]).unwrap();
        let eidx = InvertedIndex::build(VocabKind::Entity, [("d", words("E"))]).unwrap();
        let q = WeightedQuery::uniform(VocabKind::Word, ["a"]).unwrap();
        let p = DuetParams { lambda: 0.5, k_lee: 10, depth: 100, bm25: Bm25Params::default() };
        assert!(matches!(
            duet_retrieve("q", Some(&q), None, &idx, &eidx, &p, "lee"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn duet_falls_back_without_entities() {
        let idx = InvertedIndex::build(VocabKind::Word, [("d1", words("a b")), ("d2", words("a"))]).unwrap();
        let eidx = InvertedIndex::build(VocabKind::Entity, [("d1", words("E")), ("d2", vec![])]).unwrap();
        let q = WeightedQuery::uniform(VocabKind::Word, ["b"]).unwrap();
        let p = DuetParams { lambda: 0.5, k_lee: 10, depth: 10, bm25: Bm25Params::default() };
        let r = duet_retrieve("q", Some(&q), None, &idx, &eidx, &p, "lee").unwrap();
        assert!(r.fallback);
        assert_eq!(r.run.ids(), ["d1"]);
    }

    #[test]
    fn expanded_query_text_round_trip() {
        let q = WeightedQuery::new(VocabKind::Entity, [("Q42", 0.7), ("Q7", 0.3)]).unwrap();
        let mut buf = Vec::new();
        write_expanded_query(&mut buf, "301", &q, "abc123").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "# qid=301\tvocab_kind=entity\tconfig_hash=abc123\nQ42\t0.7\nQ7\t0.3\n");
        let (qid, hash, back) = read_expanded_query(buf.as_slice()).unwrap();
        assert_eq!((qid.as_str(), hash.as_str()), ("301", "abc123"));
        assert_eq!(back, q);
    }
}
