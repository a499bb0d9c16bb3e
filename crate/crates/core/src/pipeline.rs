//! End-to-end pipelines and their configuration.
//!
//! - `traditional`: BM25, expand from BM25 feedback, BM25 again, re-rank.
//! - `nlm-feedback`: BM25, re-rank, expand from re-ranker feedback, BM25.
//! - `nlm-feedback-rerank`: the same followed by a second re-rank.
//! - `adaptive`: BM25, then adaptive expansion within a scoring budget.
//!
//! Every stage is emitted as its own run so intermediate results can be
//! evaluated. Configurations are TOML; the SHA-256 of the normalized
//! configuration is written into every run file header.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{adaptive_expand, AdaptiveOptions, FrontierSource, GarFrontier, GarMode, LeeFrontier};
use crate::collection::Collection;
use crate::corpus::{Query, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::load_qrels;
use crate::expansion::{
    build_feedback, duet_retrieve, expand_query, feedback_from_scores, write_expanded_query, DuetParams, ExpansionConfig,
    FeedbackSet, LeeQueries, UnitKind,
};
use crate::index::{Bm25Params, VocabKind, WeightedQuery};
use crate::rerank::{
    rerank_run, ExternalOptions, HttpScorer, IdentityScorer, LexicalScorer, PassageScores, ProcessScorer,
    QrelsOracleScorer, RerankOptions, Scorer, ScoringTrace, DEFAULT_BATCH_SIZE,
};
use crate::run::{save_trec_run, ScoredRun};

/// Environment variable consulted for the HTTP scorer endpoint when the
/// configuration does not name one.
pub const SCORER_ENDPOINT_ENV: &str = "LEE_SCORER_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Traditional,
    NlmFeedback,
    NlmFeedbackRerank,
    Adaptive,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineKind::Traditional => "traditional",
            PipelineKind::NlmFeedback => "nlm-feedback",
            PipelineKind::NlmFeedbackRerank => "nlm-feedback-rerank",
            PipelineKind::Adaptive => "adaptive",
        })
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traditional" => Ok(PipelineKind::Traditional),
            "nlm-feedback" => Ok(PipelineKind::NlmFeedback),
            "nlm-feedback-rerank" => Ok(PipelineKind::NlmFeedbackRerank),
            "adaptive" => Ok(PipelineKind::Adaptive),
            other => Err(Error::Config(format!("unknown pipeline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontierKind {
    Lee,
    GarBm25,
    GarEntity,
}

impl FromStr for FrontierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lee" => Ok(FrontierKind::Lee),
            "gar-bm25" => Ok(FrontierKind::GarBm25),
            "gar-entity" => Ok(FrontierKind::GarEntity),
            other => Err(Error::Config(format!("unknown frontier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSpec {
    /// `lexical`, `qrels-oracle`, `identity`, `process` or `http`.
    pub kind: String,
    pub qrels: Option<PathBuf>,
    pub command: Option<String>,
    pub args: Vec<String>,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    /// Passages per scorer request.
    pub batch_size: usize,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec {
            kind: "lexical".into(),
            qrels: None,
            command: None,
            args: Vec::new(),
            endpoint: None,
            timeout_secs: 60.0,
            retries: 2,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineKind,
    pub corpus: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    /// Depth of every emitted run.
    pub depth: usize,
    pub rerank_depth: usize,
    pub budget: usize,
    pub batch: usize,
    pub window: usize,
    pub stride: usize,
    pub frontier: FrontierKind,
    pub gar_terms: usize,
    pub fold_file: Option<PathBuf>,
    pub bm25: Bm25Params,
    pub scorer: ScorerSpec,
    pub expansion: ExpansionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pipeline: PipelineKind::NlmFeedback,
            corpus: None,
            index_dir: None,
            topics: None,
            depth: 1000,
            rerank_depth: 1000,
            budget: 1000,
            batch: 16,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            frontier: FrontierKind::Lee,
            gar_terms: 10,
            fold_file: None,
            bm25: Bm25Params::default(),
            scorer: ScorerSpec::default(),
            expansion: ExpansionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the normalized TOML form.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Range and consistency checks that need no file system access.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Validation(m) => Error::Config(m),
            other => other,
        };
        self.expansion.validate().map_err(cfg)?;
        self.bm25.validate().map_err(cfg)?;
        if self.depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if self.expansion.k_lee < self.depth {
            return Err(Error::Config(format!(
                "k_lee {} is below the run depth {}",
                self.expansion.k_lee, self.depth
            )));
        }
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(Error::Config(format!(
                "need 1 <= stride <= window, got window {} stride {}",
                self.window, self.stride
            )));
        }
        if self.pipeline == PipelineKind::Adaptive && (self.batch == 0 || self.budget < self.batch) {
            return Err(Error::Config(format!(
                "adaptive needs 0 < batch <= budget, got batch {} budget {}",
                self.batch, self.budget
            )));
        }
        if self.scorer.batch_size == 0 || self.scorer.timeout_secs.is_nan() || self.scorer.timeout_secs <= 0.0 {
            return Err(Error::Config("scorer batch_size and timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Fail early if a referenced path is missing.
    pub fn check_paths(&self) -> Result<()> {
        let paths = [&self.corpus, &self.index_dir, &self.topics, &self.fold_file, &self.scorer.qrels];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn rerank_options(&self, stage: &str) -> RerankOptions {
        RerankOptions {
            depth: self.rerank_depth,
            batch_size: self.scorer.batch_size,
            stage: stage.into(),
        }
    }

    fn duet_params(&self) -> DuetParams {
        DuetParams {
            lambda: self.expansion.lambda,
            k_lee: self.expansion.k_lee,
            depth: self.depth,
            bm25: self.bm25,
        }
    }
}

/// Instantiate the configured scorer. `endpoint_env` is the value of
/// [`SCORER_ENDPOINT_ENV`], used when the configuration names no endpoint.
pub fn build_scorer(spec: &ScorerSpec, endpoint_env: Option<&str>) -> Result<Box<dyn Scorer>> {
    let options = ExternalOptions {
        timeout: Duration::from_secs_f64(spec.timeout_secs),
        retries: spec.retries,
    };
    match spec.kind.as_str() {
        "lexical" => Ok(Box::new(LexicalScorer)),
        "identity" => Ok(Box::new(IdentityScorer)),
        "qrels-oracle" => {
            let path = spec
                .qrels
                .as_ref()
                .ok_or_else(|| Error::Config("the qrels-oracle scorer needs scorer.qrels".into()))?;
            Ok(Box::new(QrelsOracleScorer::new(load_qrels(path)?)))
        }
        "process" => {
            let command = spec
                .command
                .clone()
                .ok_or_else(|| Error::Config("the process scorer needs scorer.command".into()))?;
            Ok(Box::new(ProcessScorer::new(command, spec.args.clone(), options)))
        }
        "http" => {
            let endpoint = spec
                .endpoint
                .clone()
                .or_else(|| endpoint_env.map(String::from))
                .ok_or_else(|| Error::Config(format!("the http scorer needs scorer.endpoint or {SCORER_ENDPOINT_ENV}")))?;
            Ok(Box::new(HttpScorer::new(endpoint, options)))
        }
        other => Err(Error::Config(format!("unknown scorer kind {other:?}"))),
    }
}

/// Load the configured corpus and its indexes. Without an index directory
/// the indexes are built in memory.
pub fn open_collection(config: &PipelineConfig) -> Result<Collection> {
    let path = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("no corpus configured".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("corpus {} does not exist", path.display())));
    }
    let (docs, report) = crate::corpus::load_corpus(path)?;
    if report.clamped_mentions + report.dropped_mentions > 0 {
        log::warn!(
            "{}: {} mention offsets clamped, {} empty mentions dropped",
            path.display(),
            report.clamped_mentions,
            report.dropped_mentions
        );
    }
    let corpus = crate::corpus::Corpus::new(docs, config.window, config.stride)?;
    match &config.index_dir {
        Some(dir) => Collection::load(corpus, dir),
        None => {
            log::info!("no index directory configured; indexing {} documents in memory", corpus.len());
            Collection::build(corpus)
        }
    }
}

/// Load the configured topic file.
pub fn open_topics(config: &PipelineConfig) -> Result<Vec<Query>> {
    let path = config
        .topics
        .as_ref()
        .ok_or_else(|| Error::Config("no topics configured".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("topics {} do not exist", path.display())));
    }
    crate::corpus::load_topics(path)
}

/// Stage names, in emission order.
pub fn stages(kind: PipelineKind) -> &'static [&'static str] {
    match kind {
        PipelineKind::Traditional => &["bm25", "expanded", "expanded-rerank"],
        PipelineKind::NlmFeedback => &["bm25", "rerank", "expanded"],
        PipelineKind::NlmFeedbackRerank => &["bm25", "rerank", "expanded", "expanded-rerank"],
        PipelineKind::Adaptive => &["bm25", "adaptive"],
    }
}

/// Per-query accounting, written as one JSON line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub qid: String,
    /// Distinct documents sent to the scorer over all stages.
    pub unique_scored: usize,
    /// Scorer document slots over all stages, counting repeats.
    pub scored_total: usize,
    pub fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontier_refreshes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unscored_frontier: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub qid: String,
    /// `(stage, run)` in emission order.
    pub runs: Vec<(String, ScoredRun)>,
    pub stats: QueryStats,
    pub expanded: Option<LeeQueries>,
    pub feedback: Option<FeedbackSet>,
    pub trace: ScoringTrace,
}

impl QueryOutput {
    pub fn stage(&self, name: &str) -> Option<&ScoredRun> {
        self.runs.iter().find(|(s, _)| s == name).map(|(_, r)| r)
    }

    pub fn final_run(&self) -> &ScoredRun {
        &self.runs.last().expect("at least one stage").1
    }
}

#[derive(Debug, Clone)]
struct FirstStage {
    bm25: ScoredRun,
    reranked: Option<(ScoredRun, PassageScores, ScoringTrace)>,
}

/// First-stage results keyed by query id. Valid only across configurations
/// that share BM25 parameters, depths, sharding and scorer, which is what a
/// sweep over expansion parameters does.
#[derive(Debug, Default)]
pub struct FirstStageCache {
    entries: Mutex<HashMap<String, FirstStage>>,
}

/// Runs one configuration against one collection and scorer.
pub struct PipelineRunner<'a> {
    pub collection: &'a Collection,
    pub config: &'a PipelineConfig,
    pub scorer: &'a dyn Scorer,
    cache: Arc<FirstStageCache>,
}

impl<'a> PipelineRunner<'a> {
    pub fn new(collection: &'a Collection, config: &'a PipelineConfig, scorer: &'a dyn Scorer) -> Result<Self> {
        config.validate()?;
        Ok(PipelineRunner {
            collection,
            config,
            scorer,
            cache: Arc::default(),
        })
    }

    /// Share first-stage work with other runners.
    pub fn with_cache(mut self, cache: Arc<FirstStageCache>) -> Self {
        self.cache = cache;
        self
    }

    fn bm25_original(&self, query: &Query) -> Result<ScoredRun> {
        match WeightedQuery::uniform(VocabKind::Word, crate::analysis::analyze_unique(&query.text)) {
            Ok(q) => self
                .collection
                .doc_word
                .search_run(&query.query_id, &q, self.config.bm25, self.config.depth, "bm25"),
            Err(_) => {
                log::warn!("query {} has no indexable words", query.query_id);
                ScoredRun::new(query.query_id.clone(), Vec::new())
            }
        }
    }

    fn first_stage(&self, query: &Query, rerank: bool) -> Result<FirstStage> {
        if let Some(hit) = self.cache.entries.lock().unwrap_or_else(|p| p.into_inner()).get(&query.query_id) {
            if !rerank || hit.reranked.is_some() {
                return Ok(hit.clone());
            }
        }
        let bm25 = self.bm25_original(query)?;
        let reranked = if rerank {
            let mut trace = ScoringTrace::default();
            let opts = self.config.rerank_options("rerank");
            let (run, table) = rerank_run(query, &bm25, &self.collection.corpus, self.scorer, &opts, &mut trace)?;
            Some((run, table, trace))
        } else {
            None
        };
        let stage = FirstStage { bm25, reranked };
        self.cache
            .entries
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(query.query_id.clone(), stage.clone());
        Ok(stage)
    }

    /// BM25 scores of the top feedback units for the original query.
    fn bm25_feedback(&self, query: &Query, bm25: &ScoredRun) -> Result<FeedbackSet> {
        let cfg = &self.config.expansion;
        let scored: Vec<(String, f64)> = match cfg.unit_kind {
            UnitKind::Document => bm25.entries.iter().map(|e| (e.unit_id.clone(), e.score)).collect(),
            UnitKind::Passage => {
                let q = WeightedQuery::uniform(VocabKind::Word, crate::analysis::analyze_unique(&query.text))?;
                self.collection.passage_word.bm25_search(&q, self.config.bm25, cfg.fb_docs)?
            }
        };
        build_feedback(&scored, cfg.fb_docs, cfg.unit_kind, "bm25")
    }

    fn expand_and_retrieve(&self, query: &Query, feedback: &FeedbackSet) -> Result<(LeeQueries, ScoredRun, usize)> {
        let cfg = &self.config.expansion;
        let (fw, fe) = self.collection.feedback_indexes(cfg.unit_kind);
        let queries = expand_query(query, feedback, fw, fe, cfg)?;
        let duet = duet_retrieve(
            &query.query_id,
            queries.word.as_ref(),
            queries.entity.as_ref(),
            &self.collection.doc_word,
            &self.collection.doc_entity,
            &self.config.duet_params(),
            "expanded",
        )?;
        let fallbacks = queries.fallbacks + usize::from(duet.fallback) + usize::from(feedback.degenerate);
        Ok((queries, duet.run, fallbacks))
    }

    fn rerank(&self, query: &Query, run: &ScoredRun, stage: &str, trace: &mut ScoringTrace) -> Result<ScoredRun> {
        let opts = self.config.rerank_options(stage);
        Ok(rerank_run(query, run, &self.collection.corpus, self.scorer, &opts, trace)?.0)
    }

    pub fn run_query(&self, query: &Query) -> Result<QueryOutput> {
        let kind = self.config.pipeline;
        let mut trace = ScoringTrace::default();
        let mut runs = Vec::new();
        let mut stats = QueryStats { qid: query.query_id.clone(), ..QueryStats::default() };
        let mut expanded = None;
        let mut feedback = None;

        match kind {
            PipelineKind::Traditional => {
                let first = self.first_stage(query, false)?;
                let fb = self.bm25_feedback(query, &first.bm25)?;
                let (q, run, fallbacks) = self.expand_and_retrieve(query, &fb)?;
                let reranked = self.rerank(query, &run, "expanded-rerank", &mut trace)?;
                stats.fallbacks = fallbacks;
                runs.push(("bm25".to_string(), first.bm25));
                runs.push(("expanded".to_string(), run));
                runs.push(("expanded-rerank".to_string(), reranked));
                expanded = Some(q);
                feedback = Some(fb);
            }
            PipelineKind::NlmFeedback | PipelineKind::NlmFeedbackRerank => {
                let first = self.first_stage(query, true)?;
                let (reranked, table, first_trace) = first.reranked.expect("re-ranked first stage");
                trace.merge(first_trace);
                let cfg = &self.config.expansion;
                let fb = feedback_from_scores(&table, cfg.fb_docs, cfg.unit_kind, "rerank")?;
                let (q, run, fallbacks) = self.expand_and_retrieve(query, &fb)?;
                stats.fallbacks = fallbacks;
                runs.push(("bm25".to_string(), first.bm25));
                runs.push(("rerank".to_string(), reranked));
                if kind == PipelineKind::NlmFeedbackRerank {
                    let second = self.rerank(query, &run, "expanded-rerank", &mut trace)?;
                    runs.push(("expanded".to_string(), run));
                    runs.push(("expanded-rerank".to_string(), second));
                } else {
                    runs.push(("expanded".to_string(), run));
                }
                expanded = Some(q);
                feedback = Some(fb);
            }
            PipelineKind::Adaptive => {
                let first = self.first_stage(query, false)?;
                let opts = AdaptiveOptions {
                    budget: self.config.budget,
                    batch: self.config.batch,
                    batch_size: self.config.scorer.batch_size,
                    stage: "adaptive".into(),
                };
                let lee;
                let gar;
                let source: &dyn FrontierSource = match self.config.frontier {
                    FrontierKind::Lee => {
                        lee = LeeFrontier {
                            collection: self.collection,
                            config: self.config.expansion,
                            bm25: self.config.bm25,
                        };
                        &lee
                    }
                    FrontierKind::GarBm25 | FrontierKind::GarEntity => {
                        gar = GarFrontier {
                            collection: self.collection,
                            mode: if self.config.frontier == FrontierKind::GarBm25 {
                                GarMode::Bm25Terms
                            } else {
                                GarMode::EntityTerms
                            },
                            n_terms: self.config.gar_terms,
                            bm25: self.config.bm25,
                            depth: self.config.expansion.k_lee,
                        };
                        &gar
                    }
                };
                let out = adaptive_expand(query, &first.bm25, &self.collection.corpus, self.scorer, source, &opts)?;
                trace.merge(out.trace);
                stats.fallbacks = out.stats.fallbacks;
                stats.batches = Some(out.stats.batches);
                stats.frontier_refreshes = Some(out.stats.frontier_refreshes);
                stats.unscored_frontier = Some(out.stats.unscored_frontier);
                runs.push(("bm25".to_string(), first.bm25));
                runs.push(("adaptive".to_string(), out.run));
            }
        }
        stats.unique_scored = trace.unique_scored_count();
        stats.scored_total = trace.total_scored();
        Ok(QueryOutput {
            qid: query.query_id.clone(),
            runs,
            stats,
            expanded,
            feedback,
            trace,
        })
    }
}

/// Results of one pipeline over a topic set.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub kind: PipelineKind,
    pub config_hash: String,
    /// Successful queries in topic order.
    pub queries: Vec<QueryOutput>,
    /// Queries that failed, with the reason.
    pub failures: Vec<(String, String)>,
}

impl PipelineOutput {
    /// All queries' runs for one stage, in topic order.
    pub fn stage_runs(&self, stage: &str) -> Vec<ScoredRun> {
        self.queries.iter().filter_map(|q| q.stage(stage).cloned()).collect()
    }

    pub fn final_runs(&self) -> Vec<ScoredRun> {
        self.queries.iter().map(|q| q.final_run().clone()).collect()
    }

    /// Write `<stage>.run` per stage, `stats.jsonl`, and expanded queries
    /// under `queries/`.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = out_dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for stage in stages(self.kind) {
            let path = dir.join(format!("{stage}.run"));
            let header = vec![
                format!("config_hash={}", self.config_hash),
                format!("pipeline={}", self.kind),
                format!("stage={stage}"),
                "indexed_text=title+body".to_string(),
            ];
            save_trec_run(&path, &self.stage_runs(stage), &format!("lee-{stage}"), &header)?;
            written.push(path);
        }

        let stats_path = dir.join("stats.jsonl");
        let mut out = BufWriter::new(File::create(&stats_path).map_err(|e| Error::io(&stats_path, e))?);
        for q in &self.queries {
            let line = serde_json::to_string(&q.stats).expect("stats serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(&stats_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&stats_path, e))?;
        written.push(stats_path);

        let qdir = dir.join("queries");
        for q in &self.queries {
            let Some(lee) = &q.expanded else { continue };
            fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
            for wq in [&lee.word, &lee.entity].into_iter().flatten() {
                let path = qdir.join(format!("{}.{}.tsv", sanitize(&q.qid), wq.kind));
                let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                write_expanded_query(BufWriter::new(file), &q.qid, wq, &self.config_hash)
                    .map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Run every query in parallel. A failing query is logged and reported in
/// [`PipelineOutput::failures`]; the rest still complete.
pub fn run_pipeline(
    collection: &Collection,
    config: &PipelineConfig,
    scorer: &dyn Scorer,
    queries: &[Query],
) -> Result<PipelineOutput> {
    let runner = PipelineRunner::new(collection, config, scorer)?;
    run_with(&runner, queries)
}

pub fn run_with(runner: &PipelineRunner<'_>, queries: &[Query]) -> Result<PipelineOutput> {
    let results: Vec<(String, Result<QueryOutput>)> = queries
        .par_iter()
        .map(|q| (q.query_id.clone(), runner.run_query(q)))
        .collect();
    let mut out = PipelineOutput {
        kind: runner.config.pipeline,
        config_hash: runner.config.config_hash(),
        queries: Vec::new(),
        failures: Vec::new(),
    };
    for (qid, r) in results {
        match r {
            Ok(q) => out.queries.push(q),
            Err(e) => {
                log::error!("query {qid} failed: {e}");
                out.failures.push((qid, e.to_string()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::synthetic::{generate, SyntheticConfig};

    fn fixture() -> (Collection, Vec<Query>, crate::eval::Qrels) {
        let syn = generate(&SyntheticConfig { n_docs: 80, n_queries: 4, ..SyntheticConfig::default() });
        let c = Collection::build(Corpus::with_default_sharding(syn.docs).unwrap()).unwrap();
        (c, syn.queries, syn.qrels)
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let text = r#"
            pipeline = "adaptive"
            depth = 100
            budget = 64
            batch = 8
            [bm25]
            k1 = 1.2
            [scorer]
            kind = "identity"
            [expansion]
            lambda = 1.0
            k_lee = 100
            unit_kind = "document"
        "#;
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.pipeline, PipelineKind::Adaptive);
        assert_eq!(cfg.bm25.k1, 1.2);
        assert_eq!(cfg.bm25.b, 0.4);
        assert_eq!(cfg.expansion.unit_kind, UnitKind::Document);
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        assert_eq!(cfg.config_hash().len(), 64);
        let mut other = cfg.clone();
        other.expansion.beta = 0.25;
        assert_ne!(other.config_hash(), cfg.config_hash());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(PipelineConfig::from_toml_str("depht = 3"), Err(Error::Config(_))));
        let mut cfg = PipelineConfig { depth: 2000, ..PipelineConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.depth = 10;
        cfg.pipeline = PipelineKind::Adaptive;
        cfg.budget = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.corpus = Some("/nonexistent/corpus.jsonl".into());
        assert!(matches!(cfg.check_paths(), Err(Error::Config(_))));
        let spec = ScorerSpec { kind: "http".into(), ..ScorerSpec::default() };
        assert!(matches!(build_scorer(&spec, None), Err(Error::Config(_))));
        assert!(build_scorer(&spec, Some("http://127.0.0.1:9")).is_ok());
        let spec = ScorerSpec { kind: "qrels-oracle".into(), ..ScorerSpec::default() };
        assert!(matches!(build_scorer(&spec, None), Err(Error::Config(_))));
    }

    #[test]
    fn original_weight_one_reproduces_bm25_ranking() {
        let (c, queries, _) = fixture();
        let mut cfg = PipelineConfig { depth: 50, rerank_depth: 20, ..PipelineConfig::default() };
        cfg.expansion.original_query_weight = 1.0;
        cfg.expansion.lambda = 1.0;
        let out = run_pipeline(&c, &cfg, &LexicalScorer, &queries).unwrap();
        for q in &out.queries {
            assert_eq!(q.stage("expanded").unwrap().ids(), q.stage("bm25").unwrap().ids(), "query {}", q.qid);
        }
    }

    #[test]
    fn identity_scorer_makes_feedback_sources_agree() {
        let (c, queries, _) = fixture();
        let mut cfg = PipelineConfig { depth: 40, rerank_depth: 40, ..PipelineConfig::default() };
        cfg.expansion.unit_kind = UnitKind::Document;
        let traditional = PipelineConfig { pipeline: PipelineKind::Traditional, ..cfg.clone() };
        let a = run_pipeline(&c, &traditional, &IdentityScorer, &queries).unwrap();
        let b = run_pipeline(&c, &cfg, &IdentityScorer, &queries).unwrap();
        for (qa, qb) in a.queries.iter().zip(&b.queries) {
            let (fa, fb) = (qa.feedback.as_ref().unwrap(), qb.feedback.as_ref().unwrap());
            assert_eq!(fa.entries.len(), fb.entries.len());
            for (x, y) in fa.entries.iter().zip(&fb.entries) {
                assert_eq!(x.unit_id, y.unit_id);
                assert!((x.p - y.p).abs() < 1e-12);
            }
            assert_eq!(qa.final_run().ids(), qb.final_run().ids());
        }
    }

    #[test]
    fn oracle_feedback_beats_bm25_feedback_on_planted_fixture() {
        let syn = generate(&SyntheticConfig { n_docs: 20, n_queries: 1, hidden_per_topic: 3, distractors_per_topic: 6, ..SyntheticConfig::default() });
        let c = Collection::build(Corpus::with_default_sharding(syn.docs).unwrap()).unwrap();
        let scorer = QrelsOracleScorer::new(syn.qrels.clone());
        let mut cfg = PipelineConfig { depth: 20, rerank_depth: 10, ..PipelineConfig::default() };
        cfg.expansion.fb_docs = 5;
        cfg.expansion.k_lee = 20;
        let nlm = run_pipeline(&c, &cfg, &scorer, &syn.queries).unwrap();
        cfg.pipeline = PipelineKind::Traditional;
        let trad = run_pipeline(&c, &cfg, &scorer, &syn.queries).unwrap();
        let m = [crate::eval::Measure::Recall(10)];
        let r = |o: &PipelineOutput| crate::eval::evaluate_run(&o.final_runs(), &syn.qrels, &m, 20).unwrap().mean(m[0]).unwrap();
        assert!(r(&nlm) >= r(&trad), "{} < {}", r(&nlm), r(&trad));
    }

    #[test]
    fn writes_valid_deterministic_outputs() {
        let (c, queries, _) = fixture();
        let cfg = PipelineConfig { pipeline: PipelineKind::NlmFeedbackRerank, depth: 30, rerank_depth: 10, ..PipelineConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let first = run_pipeline(&c, &cfg, &LexicalScorer, &queries).unwrap().write(dir.path().join("a")).unwrap();
        let second = run_pipeline(&c, &cfg, &LexicalScorer, &queries).unwrap().write(dir.path().join("b")).unwrap();
        assert_eq!(first.len(), second.len());
        for (x, y) in first.iter().zip(&second) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        let run = dir.path().join("a/expanded-rerank.run");
        let problems = crate::run::validate_trec_run(std::io::BufReader::new(File::open(&run).unwrap())).unwrap();
        assert!(problems.is_empty(), "{problems:?}");
        let text = fs::read_to_string(&run).unwrap();
        assert!(text.starts_with(&format!("# config_hash={}", cfg.config_hash())));
        let stats = fs::read_to_string(dir.path().join("a/stats.jsonl")).unwrap();
        let first_line: QueryStats = serde_json::from_str(stats.lines().next().unwrap()).unwrap();
        assert_eq!(first_line.unique_scored, first_line.scored_total.min(first_line.unique_scored));
        assert!(first_line.unique_scored >= 10);
    }

    #[test]
    fn adaptive_stats_shape() {
        let (c, queries, qrels) = fixture();
        let cfg = PipelineConfig { pipeline: PipelineKind::Adaptive, depth: 30, budget: 12, batch: 4, ..PipelineConfig::default() };
        let out = run_pipeline(&c, &cfg, &QrelsOracleScorer::new(qrels), &queries).unwrap();
        for q in &out.queries {
            assert_eq!(q.stats.unique_scored, 12);
            assert_eq!(q.final_run().len(), 12);
            let json = serde_json::to_value(&q.stats).unwrap();
            for key in ["qid", "unique_scored", "batches", "frontier_refreshes", "fallbacks"] {
                assert!(json.get(key).is_some(), "{key}");
            }
        }
    }
}
