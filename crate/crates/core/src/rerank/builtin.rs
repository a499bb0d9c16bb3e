use std::collections::HashSet;

use super::{ScoreError, Scorer, ScoringRequest};
use crate::analysis::analyze_text;
use crate::eval::Qrels;

/// Fraction of the query's unique analyzed terms present in the passage.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl LexicalScorer {
    pub fn score(query: &str, passage: &str) -> f64 {
        let q: HashSet<String> = analyze_text(query).into_iter().collect();
        let p: HashSet<String> = analyze_text(passage).into_iter().collect();
        q.intersection(&p).count() as f64 / q.len().max(1) as f64
    }
}

impl Scorer for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        let q: HashSet<String> = analyze_text(request.query).into_iter().collect();
        let denom = q.len().max(1) as f64;
        Ok(request
            .passages
            .iter()
            .map(|p| {
                let terms: HashSet<String> = analyze_text(&p.text).into_iter().collect();
                q.intersection(&terms).count() as f64 / denom
            })
            .collect())
    }
}

/// Scores a passage by the judged grade of its parent document divided by
/// the largest grade in the judgments; unjudged documents score 0.
#[derive(Debug, Clone)]
pub struct QrelsOracleScorer {
    qrels: Qrels,
    max_grade: u32,
}

impl QrelsOracleScorer {
    pub fn new(qrels: Qrels) -> Self {
        let max_grade = qrels.max_grade();
        QrelsOracleScorer { qrels, max_grade }
    }
}

impl Scorer for QrelsOracleScorer {
    fn name(&self) -> &str {
        "qrels-oracle"
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        if self.max_grade == 0 {
            return Ok(vec![0.0; request.passages.len()]);
        }
        Ok(request
            .passages
            .iter()
            .map(|p| f64::from(self.qrels.grade(request.qid, &p.doc_id)) / f64::from(self.max_grade))
            .collect())
    }
}

/// Returns each passage's prior: the normalized score its document already
/// had in the run being re-ranked. Re-ranking with it preserves order.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityScorer;

impl Scorer for IdentityScorer {
    fn name(&self) -> &str {
        "identity"
    }

    fn score_batch(&self, request: &ScoringRequest<'_>) -> Result<Vec<f64>, ScoreError> {
        Ok(request.passages.iter().map(|p| p.prior).collect())
    }
}
