//! TREC-style evaluation: NDCG, average precision and recall over runs,
//! plus a paired t-test over per-query values.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::run::ScoredRun;

pub const DEFAULT_DEPTH: usize = 1000;

/// Graded judgments: query → document → grade. Unjudged documents have
/// grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn from_triples<I, Q, D>(triples: I) -> Self
    where
        I: IntoIterator<Item = (Q, D, u32)>,
        Q: Into<String>,
        D: Into<String>,
    {
        let mut q = Qrels::default();
        for (qid, doc, grade) in triples {
            q.insert(qid, doc, grade);
        }
        q
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments.entry(qid.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.judgments.get(qid).and_then(|j| j.get(doc_id)).copied().unwrap_or(0)
    }

    pub fn query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn max_grade(&self) -> u32 {
        self.judgments.values().flat_map(|j| j.values()).copied().max().unwrap_or(0)
    }

    /// Documents with grade >= 1.
    pub fn relevant(&self, qid: &str) -> HashSet<&str> {
        self.judgments
            .get(qid)
            .map(|j| j.iter().filter(|(_, &g)| g >= 1).map(|(d, _)| d.as_str()).collect())
            .unwrap_or_default()
    }

    /// Keep only the given queries.
    pub fn restricted_to(&self, qids: &HashSet<&str>) -> Qrels {
        Qrels {
            judgments: self
                .judgments
                .iter()
                .filter(|(q, _)| qids.contains(q.as_str()))
                .map(|(q, j)| (q.clone(), j.clone()))
                .collect(),
        }
    }
}

/// Qrels in `qid iter docid grade` format. Negative grades count as 0.
pub fn read_qrels(reader: impl BufRead, origin: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        if f.len() != 4 {
            return Err(Error::parse(origin, lineno + 1, format!("expected 4 columns, got {}", f.len())));
        }
        let grade: i64 = f[3]
            .parse()
            .map_err(|_| Error::parse(origin, lineno + 1, format!("bad grade {:?}", f[3])))?;
        qrels.insert(f[0], f[2], grade.max(0) as u32);
    }
    Ok(qrels)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_qrels(BufReader::new(file), path)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (q, j) in &qrels.judgments {
        for (d, g) in j {
            text.push_str(&format!("{q} 0 {d} {g}\n"));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    /// NDCG with linear gain and log2 discount; `None` means full run depth.
    Ndcg(Option<usize>),
    Map,
    Recall(usize),
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Ndcg(None) => write!(f, "ndcg"),
            Measure::Ndcg(Some(k)) => write!(f, "ndcg@{k}"),
            Measure::Map => write!(f, "map"),
            Measure::Recall(k) => write!(f, "recall@{k}"),
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let cutoff = |rest: &str| {
            rest.parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Validation(format!("bad measure cutoff in {s:?}")))
        };
        match s.split_once('@') {
            None if s == "ndcg" => Ok(Measure::Ndcg(None)),
            None if s == "map" => Ok(Measure::Map),
            Some(("ndcg", k)) => Ok(Measure::Ndcg(Some(cutoff(k)?))),
            Some(("recall" | "r", k)) => Ok(Measure::Recall(cutoff(k)?)),
            _ => Err(Error::Validation(format!("unknown measure {s:?}"))),
        }
    }
}

pub fn default_measures() -> Vec<Measure> {
    vec![Measure::Ndcg(None), Measure::Map, Measure::Recall(DEFAULT_DEPTH)]
}

/// Per-query values and their macro average.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub measures: Vec<Measure>,
    pub per_query: BTreeMap<String, Vec<f64>>,
    pub aggregate: Vec<f64>,
    /// Run queries missing from the judgments or lacking relevant documents.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn value(&self, qid: &str, measure: Measure) -> Option<f64> {
        let i = self.measures.iter().position(|m| *m == measure)?;
        self.per_query.get(qid).map(|v| v[i])
    }

    pub fn mean(&self, measure: Measure) -> Option<f64> {
        let i = self.measures.iter().position(|m| *m == measure)?;
        self.aggregate.get(i).copied()
    }

    /// Per-query values of one measure, ordered by query id.
    pub fn column(&self, measure: Measure) -> Vec<(String, f64)> {
        let Some(i) = self.measures.iter().position(|m| *m == measure) else {
            return Vec::new();
        };
        self.per_query.iter().map(|(q, v)| (q.clone(), v[i])).collect()
    }

    /// `measure<TAB>qid<TAB>value` per query followed by `measure<TAB>all<TAB>mean`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (qid, values) in &self.per_query {
            for (m, v) in self.measures.iter().zip(values) {
                out.push_str(&format!("{m}\t{qid}\t{v:.6}\n"));
            }
        }
        for (m, v) in self.measures.iter().zip(&self.aggregate) {
            out.push_str(&format!("{m}\tall\t{v:.6}\n"));
        }
        out
    }
}

/// Evaluate runs (one per query) to `depth`. Runs for queries without any
/// relevant judged document are skipped.
pub fn evaluate_run(runs: &[ScoredRun], qrels: &Qrels, measures: &[Measure], depth: usize) -> Result<EvalReport> {
    let mut report = EvalReport {
        measures: measures.to_vec(),
        ..Default::default()
    };
    for run in runs {
        let Some(judged) = qrels.query(&run.query_id) else {
            log::warn!("no judgments for query {}; skipped", run.query_id);
            report.skipped.push(run.query_id.clone());
            continue;
        };
        let relevant = qrels.relevant(&run.query_id);
        if relevant.is_empty() {
            report.skipped.push(run.query_id.clone());
            continue;
        }
        let ranked: Vec<&str> = run.entries.iter().take(depth).map(|e| e.unit_id.as_str()).collect();
        let values = measures
            .iter()
            .map(|m| match *m {
                Measure::Ndcg(cutoff) => ndcg(&ranked, judged, cutoff.unwrap_or(depth).min(depth)),
                Measure::Map => average_precision(&ranked, &relevant),
                Measure::Recall(k) => recall(&ranked, &relevant, k.min(depth)),
            })
            .collect();
        report.per_query.insert(run.query_id.clone(), values);
    }
    if report.per_query.is_empty() {
        return Err(Error::Validation("no evaluated query has relevance judgments".into()));
    }
    let n = report.per_query.len() as f64;
    report.aggregate = (0..measures.len())
        .map(|i| report.per_query.values().map(|v| v[i]).sum::<f64>() / n)
        .collect();
    Ok(report)
}

fn ndcg(ranked: &[&str], judged: &BTreeMap<String, u32>, cutoff: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, d)| f64::from(judged.get(*d).copied().unwrap_or(0)) / (i as f64 + 2.0).log2())
        .sum();
    let mut grades: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let ideal: f64 = grades
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / (i as f64 + 2.0).log2())
        .sum();
    if ideal > 0.0 {
        dcg / ideal
    } else {
        0.0
    }
}

fn average_precision(ranked: &[&str], relevant: &HashSet<&str>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

fn recall(ranked: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    ranked.iter().take(k).filter(|d| relevant.contains(*d)).count() as f64 / relevant.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

impl TTest {
    pub fn significant(&self) -> bool {
        self.p < 0.05
    }
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation("paired t-test needs at least two queries".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // Differences constant up to rounding.
    if sd == 0.0 || sd <= 1e-12 * mean.abs() {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, p: 1.0, n });
        }
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            n,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, p, n })
}

/// Align two reports on their shared queries and test one measure.
pub fn compare_reports(a: &EvalReport, b: &EvalReport, measure: Measure) -> Result<TTest> {
    let bcol: BTreeMap<String, f64> = b.column(measure).into_iter().collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .column(measure)
        .into_iter()
        .filter_map(|(q, x)| bcol.get(&q).map(|&y| (x, y)))
        .unzip();
    paired_t_test(&xs, &ys)
}
