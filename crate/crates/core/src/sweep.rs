//! Grid search over expansion parameters with cross-validation folds.
//!
//! Selection only ever looks at training queries: each grid point is run on
//! the queries a fold asks for, and per-query values are memoized so points
//! shared between folds are not recomputed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collection::Collection;
use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Measure, Qrels};
use crate::expansion::ExpansionConfig;
use crate::pipeline::{run_with, FirstStageCache, PipelineConfig, PipelineRunner};
use crate::rerank::Scorer;
use crate::run::ScoredRun;

/// Candidate values per expansion parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub fb_docs: Vec<usize>,
    pub fb_terms: Vec<usize>,
    pub original_query_weight: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k_lee: Vec<usize>,
}

fn tenths() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

impl Default for ParamGrid {
    /// 10 to 100 step 10 for the feedback sizes, 0.1 to 0.9 for the three
    /// weights, and 1000 to 4000 for the duet depth.
    fn default() -> Self {
        ParamGrid {
            fb_docs: (1..=10).map(|i| i * 10).collect(),
            fb_terms: (1..=10).map(|i| i * 10).collect(),
            original_query_weight: tenths(),
            beta: tenths(),
            lambda: tenths(),
            k_lee: vec![1000, 2000, 3000, 4000],
        }
    }
}

/// One assignment of the swept parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub fb_docs: usize,
    pub fb_terms: usize,
    pub original_query_weight: f64,
    pub beta: f64,
    pub lambda: f64,
    pub k_lee: usize,
}

impl GridPoint {
    pub fn apply(&self, base: &ExpansionConfig) -> ExpansionConfig {
        ExpansionConfig {
            fb_docs: self.fb_docs,
            fb_terms: self.fb_terms,
            original_query_weight: self.original_query_weight,
            beta: self.beta,
            lambda: self.lambda,
            k_lee: self.k_lee,
            ..*base
        }
    }

    fn from_config(c: &ExpansionConfig) -> Self {
        GridPoint {
            fb_docs: c.fb_docs,
            fb_terms: c.fb_terms,
            original_query_weight: c.original_query_weight,
            beta: c.beta,
            lambda: c.lambda,
            k_lee: c.k_lee,
        }
    }

    /// Preference among equal scores: smaller `fb_docs`, then smaller
    /// `fb_terms`, then the remaining fields in order.
    pub fn tie_order(&self, other: &Self) -> Ordering {
        self.fb_docs
            .cmp(&other.fb_docs)
            .then(self.fb_terms.cmp(&other.fb_terms))
            .then(self.original_query_weight.total_cmp(&other.original_query_weight))
            .then(self.beta.total_cmp(&other.beta))
            .then(self.lambda.total_cmp(&other.lambda))
            .then(self.k_lee.cmp(&other.k_lee))
    }

    fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}/{}",
            self.fb_docs, self.fb_terms, self.original_query_weight, self.beta, self.lambda, self.k_lee
        )
    }
}

impl ParamGrid {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.fb_docs.len(),
            self.fb_terms.len(),
            self.original_query_weight.len(),
            self.beta.len(),
            self.lambda.len(),
            self.k_lee.len(),
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("every grid dimension needs at least one value".into()));
        }
        Ok(())
    }

    /// Number of points in the full grid.
    pub fn len(&self) -> usize {
        self.fb_docs.len()
            * self.fb_terms.len()
            * self.original_query_weight.len()
            * self.beta.len()
            * self.lambda.len()
            * self.k_lee.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every point of the full grid, `k_lee` varying fastest.
    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        (0..self.len()).map(move |mut i| {
            let mut pick = |n: usize| {
                let j = i % n;
                i /= n;
                j
            };
            let k = pick(self.k_lee.len());
            let l = pick(self.lambda.len());
            let be = pick(self.beta.len());
            let w = pick(self.original_query_weight.len());
            let ft = pick(self.fb_terms.len());
            let fd = pick(self.fb_docs.len());
            GridPoint {
                fb_docs: self.fb_docs[fd],
                fb_terms: self.fb_terms[ft],
                original_query_weight: self.original_query_weight[w],
                beta: self.beta[be],
                lambda: self.lambda[l],
                k_lee: self.k_lee[k],
            }
        })
    }

    /// Grid value nearest to each field of `start`.
    fn snap(&self, start: &GridPoint) -> GridPoint {
        fn near_u(v: &[usize], x: usize) -> usize {
            *v.iter().min_by_key(|&&c| (c.abs_diff(x), c)).expect("non-empty")
        }
        fn near_f(v: &[f64], x: f64) -> f64 {
            *v.iter()
                .min_by(|a, b| (*a - x).abs().total_cmp(&(*b - x).abs()).then(a.total_cmp(b)))
                .expect("non-empty")
        }
        GridPoint {
            fb_docs: near_u(&self.fb_docs, start.fb_docs),
            fb_terms: near_u(&self.fb_terms, start.fb_terms),
            original_query_weight: near_f(&self.original_query_weight, start.original_query_weight),
            beta: near_f(&self.beta, start.beta),
            lambda: near_f(&self.lambda, start.lambda),
            k_lee: near_u(&self.k_lee, start.k_lee),
        }
    }

    /// Points varying one dimension of `at`.
    fn line(&self, at: &GridPoint, dim: usize) -> Vec<GridPoint> {
        match dim {
            0 => self.fb_docs.iter().map(|&v| GridPoint { fb_docs: v, ..*at }).collect(),
            1 => self.fb_terms.iter().map(|&v| GridPoint { fb_terms: v, ..*at }).collect(),
            2 => self
                .original_query_weight
                .iter()
                .map(|&v| GridPoint { original_query_weight: v, ..*at })
                .collect(),
            3 => self.beta.iter().map(|&v| GridPoint { beta: v, ..*at }).collect(),
            4 => self.lambda.iter().map(|&v| GridPoint { lambda: v, ..*at }).collect(),
            _ => self.k_lee.iter().map(|&v| GridPoint { k_lee: v, ..*at }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    FullGrid,
    /// Sweep one parameter at a time from the base configuration, keeping
    /// the best value, for the given number of passes.
    CoordinateDescent { rounds: usize },
}

impl Default for SearchMode {
    fn default() -> Self {
        SearchMode::CoordinateDescent { rounds: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Cross-validation folds keyed by fold id. Stored as JSON:
/// `{"folds": {"0": {"train": [..], "test": [..]}, ..}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub folds: BTreeMap<String, Fold>,
}

impl FoldSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid fold file {}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("folds serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// `k` folds over the sorted query ids, assigned round-robin; each fold
    /// trains on the other folds' test queries.
    pub fn k_fold(query_ids: &[String], k: usize) -> Result<Self> {
        if k < 2 || k > query_ids.len() {
            return Err(Error::Config(format!("cannot make {k} folds from {} queries", query_ids.len())));
        }
        let mut ids: Vec<&String> = query_ids.iter().collect();
        ids.sort();
        ids.dedup();
        let mut tests: Vec<Vec<String>> = vec![Vec::new(); k];
        for (i, q) in ids.iter().enumerate() {
            tests[i % k].push((*q).clone());
        }
        let folds = (0..k)
            .map(|f| {
                let train = (0..k).filter(|&g| g != f).flat_map(|g| tests[g].iter().cloned()).collect();
                (f.to_string(), Fold { train, test: tests[f].clone() })
            })
            .collect();
        Ok(FoldSpec { folds })
    }

    /// Train and test are disjoint within a fold, every id is a known
    /// query, and the test sets partition the query set.
    pub fn validate(&self, query_ids: &[String]) -> Result<()> {
        if self.folds.is_empty() {
            return Err(Error::Validation("fold file defines no folds".into()));
        }
        let known: BTreeSet<&str> = query_ids.iter().map(String::as_str).collect();
        let mut tested: BTreeMap<&str, &str> = BTreeMap::new();
        for (id, fold) in &self.folds {
            let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
            for q in fold.train.iter().chain(&fold.test) {
                if !known.contains(q.as_str()) {
                    return Err(Error::Validation(format!("fold {id} names unknown query {q}")));
                }
            }
            if fold.train.is_empty() || fold.test.is_empty() {
                return Err(Error::Validation(format!("fold {id} has an empty train or test set")));
            }
            for q in &fold.test {
                if train.contains(q.as_str()) {
                    return Err(Error::Validation(format!("query {q} is in both train and test of fold {id}")));
                }
                if let Some(other) = tested.insert(q, id) {
                    return Err(Error::Validation(format!("query {q} is tested in folds {other} and {id}")));
                }
            }
        }
        if let Some(q) = known.iter().find(|q| !tested.contains_key(*q)) {
            return Err(Error::Validation(format!("query {q} is not tested in any fold")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub grid: ParamGrid,
    pub mode: SearchMode,
    pub target: Measure,
    /// Worker threads for grid points; 0 uses the global pool.
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            grid: ParamGrid::default(),
            mode: SearchMode::default(),
            target: Measure::Recall(1000),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold_id: String,
    pub chosen: GridPoint,
    /// Mean target value of the chosen point over the training queries.
    pub train_score: f64,
    /// Query ids the selection looked at.
    pub selection_queries: Vec<String>,
    pub test_queries: Vec<String>,
    /// Distinct grid points scored on the training queries.
    pub points_evaluated: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedPoint {
    pub point: GridPoint,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub target: String,
    pub folds: Vec<FoldResult>,
    pub failed: Vec<FailedPoint>,
    /// Target value per test query, under its own fold's chosen point.
    pub test_values: BTreeMap<String, f64>,
    pub test_mean: f64,
    /// Final-stage runs of each fold's winner on its test queries.
    #[serde(skip)]
    pub test_runs: Vec<ScoredRun>,
}

type PointResult = std::result::Result<BTreeMap<String, (Option<f64>, ScoredRun)>, String>;

/// Evaluates grid points on query subsets, memoizing per-query results.
struct Evaluator<'a> {
    collection: &'a Collection,
    base: &'a PipelineConfig,
    scorer: &'a dyn Scorer,
    queries: HashMap<&'a str, &'a Query>,
    qrels: &'a Qrels,
    target: Measure,
    cache: Arc<FirstStageCache>,
    memo: Mutex<HashMap<String, PointResult>>,
}

impl Evaluator<'_> {
    /// Per-query target values (None for queries without relevant
    /// documents) or the failure message.
    fn eval(&self, point: &GridPoint, qids: &[String]) -> std::result::Result<Vec<(String, Option<f64>, ScoredRun)>, String> {
        let key = point.key();
        let missing: Vec<String> = {
            let memo = self.memo.lock().unwrap_or_else(|p| p.into_inner());
            match memo.get(&key) {
                Some(Err(e)) => return Err(e.clone()),
                Some(Ok(done)) => qids.iter().filter(|q| !done.contains_key(*q)).cloned().collect(),
                None => qids.to_vec(),
            }
        };
        if !missing.is_empty() {
            let fresh = self.compute(point, &missing);
            let mut memo = self.memo.lock().unwrap_or_else(|p| p.into_inner());
            match fresh {
                Ok(values) => {
                    if let Ok(done) = memo.entry(key.clone()).or_insert_with(|| Ok(BTreeMap::new())) {
                        done.extend(values);
                    }
                }
                Err(e) => {
                    memo.insert(key.clone(), Err(e.clone()));
                    return Err(e);
                }
            }
        }
        let memo = self.memo.lock().unwrap_or_else(|p| p.into_inner());
        let done = memo.get(&key).expect("memoized").as_ref().map_err(Clone::clone)?;
        Ok(qids
            .iter()
            .map(|q| {
                let (v, run) = &done[q];
                (q.clone(), *v, run.clone())
            })
            .collect())
    }

    fn compute(&self, point: &GridPoint, qids: &[String]) -> std::result::Result<BTreeMap<String, (Option<f64>, ScoredRun)>, String> {
        let mut config = self.base.clone();
        config.expansion = point.apply(&self.base.expansion);
        let topics: Vec<Query> = qids.iter().map(|q| self.queries[q.as_str()].clone()).collect();
        let runner = PipelineRunner::new(self.collection, &config, self.scorer)
            .map_err(|e| e.to_string())?
            .with_cache(Arc::clone(&self.cache));
        let out = run_with(&runner, &topics).map_err(|e| e.to_string())?;
        if let Some((qid, why)) = out.failures.first() {
            return Err(format!("query {qid}: {why}"));
        }
        let runs = out.final_runs();
        let report = evaluate_run(&runs, self.qrels, &[self.target], config.depth).ok();
        Ok(runs
            .into_iter()
            .map(|r| {
                let v = report.as_ref().and_then(|rep| rep.value(&r.query_id, self.target));
                (r.query_id.clone(), (v, r))
            })
            .collect())
    }
}

/// Mean over queries that have a value; `None` when there are none.
fn mean_of(values: &[(String, Option<f64>, ScoredRun)]) -> Option<f64> {
    let vs: Vec<f64> = values.iter().filter_map(|v| v.1).collect();
    (!vs.is_empty()).then(|| vs.iter().sum::<f64>() / vs.len() as f64)
}

/// Better first: higher score, then the tie order.
fn better(a: &(GridPoint, f64), b: &(GridPoint, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.tie_order(&b.0))
}

/// Cross-validated parameter selection. `base` provides every setting not
/// in the grid; the pipeline's final stage is what gets evaluated.
pub fn sweep(
    collection: &Collection,
    base: &PipelineConfig,
    scorer: &dyn Scorer,
    queries: &[Query],
    qrels: &Qrels,
    folds: &FoldSpec,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    opts.grid.validate()?;
    base.validate()?;
    let ids: Vec<String> = queries.iter().map(|q| q.query_id.clone()).collect();
    folds.validate(&ids)?;
    let pool = if opts.workers > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.workers)))?,
        )
    } else {
        None
    };
    let ev = Evaluator {
        collection,
        base,
        scorer,
        queries: queries.iter().map(|q| (q.query_id.as_str(), q)).collect(),
        qrels,
        target: opts.target,
        cache: Arc::default(),
        memo: Mutex::default(),
    };
    let failed: Mutex<BTreeMap<String, FailedPoint>> = Mutex::default();

    // Score a batch of points on the training queries.
    let score_points = |points: Vec<GridPoint>, train: &[String]| -> Vec<(GridPoint, f64)> {
        let job = || {
            points
                .par_iter()
                .filter_map(|p| match ev.eval(p, train) {
                    Ok(values) => mean_of(&values).map(|m| (*p, m)),
                    Err(error) => {
                        log::warn!("grid point {} failed: {error}", p.key());
                        failed
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .insert(p.key(), FailedPoint { point: *p, error });
                        None
                    }
                })
                .collect::<Vec<_>>()
        };
        match &pool {
            Some(pool) => pool.install(job),
            None => job(),
        }
    };

    let mut fold_results = Vec::new();
    let mut test_values = BTreeMap::new();
    let mut test_runs = Vec::new();
    for (fold_id, fold) in &folds.folds {
        let mut visited = std::collections::HashSet::new();
        let best = match opts.mode {
            SearchMode::FullGrid => {
                let scored = score_points(opts.grid.points().collect(), &fold.train);
                visited.extend(opts.grid.points().map(|p| p.key()));
                scored.into_iter().min_by(better)
            }
            SearchMode::CoordinateDescent { rounds } => {
                let mut at = opts.grid.snap(&GridPoint::from_config(&base.expansion));
                let mut best: Option<(GridPoint, f64)> = None;
                for _ in 0..rounds.max(1) {
                    for dim in 0..6 {
                        let line = opts.grid.line(&at, dim);
                        visited.extend(line.iter().map(|p| p.key()));
                        if let Some(b) = score_points(line, &fold.train).into_iter().min_by(better) {
                            at = b.0;
                            best = Some(b);
                        }
                    }
                }
                best
            }
        };
        let (chosen, train_score) = best.ok_or_else(|| {
            Error::Validation(format!("fold {fold_id}: no grid point produced a result on the training queries"))
        })?;
        let test = ev.eval(&chosen, &fold.test).map_err(|e| {
            Error::Validation(format!("fold {fold_id}: chosen point failed on test queries: {e}"))
        })?;
        for (qid, v, run) in test {
            if let Some(v) = v {
                test_values.insert(qid, v);
            }
            test_runs.push(run);
        }
        fold_results.push(FoldResult {
            fold_id: fold_id.clone(),
            chosen,
            train_score,
            selection_queries: fold.train.clone(),
            test_queries: fold.test.clone(),
            points_evaluated: visited.len(),
        });
    }
    let test_mean = if test_values.is_empty() {
        0.0
    } else {
        test_values.values().sum::<f64>() / test_values.len() as f64
    };
    Ok(SweepReport {
        target: opts.target.to_string(),
        folds: fold_results,
        failed: failed.into_inner().unwrap_or_else(|e| e.into_inner()).into_values().collect(),
        test_values,
        test_mean,
        test_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_291600_points() {
        let g = ParamGrid::default();
        assert_eq!(g.len(), 291_600);
        assert_eq!(g.points().count(), 291_600);
        let first = g.points().next().unwrap();
        assert_eq!((first.fb_docs, first.fb_terms, first.k_lee), (10, 10, 1000));
        assert_eq!(first.original_query_weight, 0.1);
    }

    #[test]
    fn points_are_distinct() {
        let g = ParamGrid {
            fb_docs: vec![1, 2],
            fb_terms: vec![3],
            original_query_weight: vec![0.5, 0.6],
            beta: vec![0.5],
            lambda: vec![0.0, 1.0],
            k_lee: vec![10],
        };
        let keys: BTreeSet<String> = g.points().map(|p| p.key()).collect();
        assert_eq!(keys.len(), 8);
    }

    #[test]
    fn tie_break_prefers_small_feedback() {
        let p = GridPoint {
            fb_docs: 20,
            fb_terms: 10,
            original_query_weight: 0.5,
            beta: 0.5,
            lambda: 0.5,
            k_lee: 1000,
        };
        let q = GridPoint { fb_docs: 10, fb_terms: 90, ..p };
        let r = GridPoint { fb_terms: 5, ..p };
        let mut v = [(p, 0.5), (q, 0.5), (r, 0.5), (p, 0.6)];
        v.sort_by(better);
        assert_eq!(v[0].1, 0.6);
        assert_eq!(v[1].0, q);
        assert_eq!(v[2].0, r);
    }

    #[test]
    fn folds_generate_and_validate() {
        let ids: Vec<String> = (0..7).map(|i| format!("q{i}")).collect();
        let f = FoldSpec::k_fold(&ids, 3).unwrap();
        f.validate(&ids).unwrap();
        assert_eq!(f.folds["0"].test, ["q0", "q3", "q6"]);
        assert_eq!(f.folds["0"].train.len(), 4);

        let mut bad = f.clone();
        bad.folds.get_mut("1").unwrap().train.push("q1".into());
        assert!(bad.validate(&ids).is_err());
        let mut overlap = f.clone();
        overlap.folds.get_mut("1").unwrap().test.push("q0".into());
        assert!(overlap.validate(&ids).is_err());
        let mut missing = f;
        missing.folds.get_mut("2").unwrap().test.clear();
        assert!(missing.validate(&ids).is_err());
        assert!(FoldSpec::k_fold(&ids, 1).is_err());
    }

    #[test]
    fn fold_file_round_trip() {
        let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let f = FoldSpec::k_fold(&ids, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.json");
        f.save(&path).unwrap();
        assert_eq!(FoldSpec::load(&path).unwrap(), f);
    }
}
