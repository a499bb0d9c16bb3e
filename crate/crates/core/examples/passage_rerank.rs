// Max-passage re-ranking of a BM25 run with a built-in scorer.

use lee::analysis::analyze_unique;
use lee::collection::Collection;
use lee::corpus::Corpus;
use lee::index::{Bm25Params, VocabKind, WeightedQuery};
use lee::rerank::{rerank_run, QrelsOracleScorer, RerankOptions, ScoringTrace};
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = generate(&SyntheticConfig { n_docs: 100, n_queries: 2, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs)?)?;
    let query = &synthetic.queries[0];
    let wq = WeightedQuery::uniform(VocabKind::Word, analyze_unique(&query.text))?;
    let bm25 = collection.doc_word.search_run(&query.query_id, &wq, Bm25Params::default(), 30, "bm25")?;

    // The oracle scores a passage by its document's judged grade.
    let scorer = QrelsOracleScorer::new(synthetic.qrels.clone());
    let opts = RerankOptions { depth: 8, ..RerankOptions::default() };
    let mut trace = ScoringTrace::default();
    let (reranked, passages) = rerank_run(query, &bm25, &collection.corpus, &scorer, &opts, &mut trace)?;

    println!("scored {} documents, {} passages", trace.unique_scored_count(), passages.passage_entries().len());
    for e in reranked.entries.iter().take(12) {
        println!("{} {:.3} {} grade={}", e.unit_id, e.score, e.stage, synthetic.qrels.grade(&query.query_id, &e.unit_id));
    }
    // Documents below the re-rank depth sort after every re-scored one.
    assert!(reranked.entries[8..].iter().all(|e| e.score <= -1.0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("passage_rerank failed");
}
