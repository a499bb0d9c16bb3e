//! Inverted indexes over one vocabulary (stemmed words or entity ids) and
//! exhaustive weighted-term BM25 retrieval.

mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::run::{RunEntry, ScoredRun};

pub use persist::{read_index, write_index};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    Word,
    Entity,
}

impl fmt::Display for VocabKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VocabKind::Word => "word",
            VocabKind::Entity => "entity",
        })
    }
}

impl FromStr for VocabKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(VocabKind::Word),
            "entity" => Ok(VocabKind::Entity),
            other => Err(Error::Validation(format!("unknown vocabulary kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Ordinal of the unit in build order.
    pub unit: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 <= 0.0 || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Validation(format!(
                "bm25 parameters out of range: k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

/// Postings, unit lengths and collection statistics for one vocabulary.
///
/// Terms are held in a sorted dictionary; units keep their build order. A
/// forward (unit → terms) view is kept alongside the postings for feedback
/// models that read whole units.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    kind: VocabKind,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    unit_ids: Vec<String>,
    unit_ordinals: HashMap<String, u32>,
    unit_lengths: Vec<u32>,
    forward: Vec<Vec<(u32, u32)>>,
    total_length: u64,
}

impl InvertedIndex {
    /// Build from `(unit_id, tokens)` pairs. For entity indexes each mention
    /// is one token, so a unit's length is its mention count.
    pub fn build<I, S, T>(kind: VocabKind, units: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut unit_ids = Vec::new();
        let mut unit_ordinals = HashMap::new();
        let mut counts: Vec<BTreeMap<String, u32>> = Vec::new();
        for (id, tokens) in units {
            let id: String = id.into();
            let ordinal = unit_ids.len() as u32;
            if unit_ordinals.insert(id.clone(), ordinal).is_some() {
                return Err(Error::Validation(format!("duplicate unit_id {id:?} in {kind} index")));
            }
            unit_ids.push(id);
            let mut tf = BTreeMap::new();
            for t in tokens {
                *tf.entry(t.as_ref().to_string()).or_insert(0u32) += 1;
            }
            counts.push(tf);
        }

        let mut dictionary: BTreeMap<&str, Vec<Posting>> = BTreeMap::new();
        for (unit, tf) in counts.iter().enumerate() {
            for (term, &n) in tf {
                dictionary.entry(term.as_str()).or_default().push(Posting {
                    unit: unit as u32,
                    tf: n,
                });
            }
        }
        let (terms, postings): (Vec<String>, Vec<Vec<Posting>>) =
            dictionary.into_iter().map(|(t, p)| (t.to_string(), p)).unzip();
        Ok(Self::from_parts(kind, terms, postings, unit_ids))
    }

    /// Assemble from a sorted term dictionary and per-term postings sorted by
    /// unit ordinal. Lengths and the forward view are derived.
    pub(crate) fn from_parts(
        kind: VocabKind,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
        unit_ids: Vec<String>,
    ) -> Self {
        let n = unit_ids.len();
        let mut unit_lengths = vec![0u32; n];
        let mut forward: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (term, list) in postings.iter().enumerate() {
            for p in list {
                unit_lengths[p.unit as usize] += p.tf;
                forward[p.unit as usize].push((term as u32, p.tf));
            }
        }
        let total_length = unit_lengths.iter().map(|&l| u64::from(l)).sum();
        let term_ids = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let unit_ordinals = unit_ids.iter().enumerate().map(|(i, u)| (u.clone(), i as u32)).collect();
        InvertedIndex {
            kind,
            terms,
            term_ids,
            postings,
            unit_ids,
            unit_ordinals,
            unit_lengths,
            forward,
            total_length,
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn avg_length(&self) -> f64 {
        if self.unit_ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.unit_ids.len() as f64
        }
    }

    pub fn total_length(&self) -> u64 {
        self.total_length
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn contains_unit(&self, unit_id: &str) -> bool {
        self.unit_ordinals.contains_key(unit_id)
    }

    pub fn unit_length(&self, unit_id: &str) -> Option<u32> {
        self.unit_ordinals.get(unit_id).map(|&u| self.unit_lengths[u as usize])
    }

    pub fn doc_frequency(&self, term: &str) -> u32 {
        self.term_ids
            .get(term)
            .map_or(0, |&t| self.postings[t as usize].len() as u32)
    }

    /// Postings of `term` as `(unit_id, tf)` pairs in build order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.term_ids.get(term).map_or_else(Vec::new, |&t| {
            self.postings[t as usize]
                .iter()
                .map(|p| (self.unit_ids[p.unit as usize].as_str(), p.tf))
                .collect()
        })
    }

    /// Term frequencies of one unit, sorted by term.
    pub fn unit_terms(&self, unit_id: &str) -> Option<Vec<(&str, u32)>> {
        let &u = self.unit_ordinals.get(unit_id)?;
        Some(
            self.forward[u as usize]
                .iter()
                .map(|&(t, tf)| (self.terms[t as usize].as_str(), tf))
                .collect(),
        )
    }

    pub fn tf(&self, term: &str, unit_id: &str) -> u32 {
        let (Some(&t), Some(&u)) = (self.term_ids.get(term), self.unit_ordinals.get(unit_id)) else {
            return 0;
        };
        let list = &self.postings[t as usize];
        list.binary_search_by_key(&u, |p| p.unit).map_or(0, |i| list[i].tf)
    }

    /// Lucene-style idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        idf_from_counts(self.n_units() as u64, u64::from(self.doc_frequency(term)))
    }

    /// Exhaustive BM25 over the posting lists of the query terms.
    ///
    /// Only units matching at least one positively weighted term are ranked.
    /// Ties are broken by ascending unit id.
    pub fn bm25_search(
        &self,
        query: &WeightedQuery,
        params: Bm25Params,
        k: usize,
    ) -> Result<Vec<(String, f64)>> {
        params.validate()?;
        if query.kind != self.kind {
            return Err(Error::Validation(format!(
                "{} query issued against {} index",
                query.kind, self.kind
            )));
        }
        if k == 0 || self.unit_ids.is_empty() {
            return Ok(Vec::new());
        }
        let avg = self.avg_length();
        let mut scores = vec![0.0f64; self.n_units()];
        let mut touched = vec![false; self.n_units()];
        for (term, weight) in &query.terms {
            if *weight <= 0.0 {
                continue;
            }
            let Some(&t) = self.term_ids.get(term) else {
                continue;
            };
            let list = &self.postings[t as usize];
            let idf = idf_from_counts(self.n_units() as u64, list.len() as u64);
            for p in list {
                let u = p.unit as usize;
                let tf = f64::from(p.tf);
                let norm = params.k1 * (1.0 - params.b + params.b * f64::from(self.unit_lengths[u]) / avg);
                scores[u] += weight * idf * tf * (params.k1 + 1.0) / (tf + norm);
                touched[u] = true;
            }
        }
        let mut hits: Vec<(u32, f64)> = touched
            .iter()
            .enumerate()
            .filter(|(_, &hit)| hit)
            .map(|(u, _)| (u as u32, scores[u]))
            .collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.unit_ids[a.0 as usize].cmp(&self.unit_ids[b.0 as usize]))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        Ok(hits
            .into_iter()
            .map(|(u, s)| (self.unit_ids[u as usize].clone(), s))
            .collect())
    }

    /// [`bm25_search`](Self::bm25_search) packaged as a run.
    pub fn search_run(
        &self,
        query_id: &str,
        query: &WeightedQuery,
        params: Bm25Params,
        k: usize,
        stage: &str,
    ) -> Result<ScoredRun> {
        let hits = self.bm25_search(query, params, k)?;
        Ok(ScoredRun::from_sorted(
            query_id,
            hits.into_iter()
                .map(|(unit_id, score)| RunEntry::new(unit_id, score, stage))
                .collect(),
        ))
    }
}

pub fn idf_from_counts(n_units: u64, df: u64) -> f64 {
    let n = n_units as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// A query as a weighted bag of terms from one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuery {
    pub kind: VocabKind,
    pub terms: Vec<(String, f64)>,
}

impl WeightedQuery {
    /// Merge duplicate terms, drop non-positive weights, and sort by weight
    /// descending then term. Fails if nothing with positive weight remains.
    pub fn new<I, S>(kind: VocabKind, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        for (t, w) in terms {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!("invalid query weight {w}")));
            }
            *merged.entry(t.into()).or_insert(0.0) += w;
        }
        let mut terms: Vec<(String, f64)> = merged.into_iter().filter(|(_, w)| *w > 0.0).collect();
        if terms.is_empty() {
            return Err(Error::Validation(format!("empty {kind} query")));
        }
        terms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        Ok(WeightedQuery { kind, terms })
    }

    /// Each distinct term with weight 1.
    pub fn uniform<I, S>(kind: VocabKind, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = std::collections::BTreeSet::new();
        for t in terms {
            seen.insert(t.into());
        }
        Self::new(kind, seen.into_iter().map(|t| (t, 1.0)))
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.terms.iter().find(|(t, _)| t == term).map_or(0.0, |(_, w)| *w)
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w).sum()
    }
}
