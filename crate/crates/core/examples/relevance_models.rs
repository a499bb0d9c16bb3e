// Word and entity relevance models from scored feedback passages, and the
// expanded queries built from them.

use lee::collection::Collection;
use lee::corpus::{Corpus, Query};
use lee::expansion::{
    entity_pair_model, entity_relevance_model, expand_query, feedback_from_scores, word_relevance_model, ExpansionConfig,
    UnitKind,
};
use lee::rerank::{score_documents, IdentityScorer, LexicalScorer};
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = generate(&SyntheticConfig { n_docs: 120, n_queries: 4, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs)?)?;
    let query: &Query = &synthetic.queries[0];

    // Score the BM25 top 20 passage by passage.
    let q = lee::index::WeightedQuery::uniform(lee::index::VocabKind::Word, lee::analysis::analyze_unique(&query.text))?;
    let top = collection.doc_word.bm25_search(&q, Default::default(), 20)?;
    let (_, table) = score_documents(query, &top, &collection.corpus, &LexicalScorer, 64)?;
    let _ = IdentityScorer; // scores every passage with its document's prior instead

    let config = ExpansionConfig { fb_docs: 10, fb_terms: 8, ..ExpansionConfig::default() };
    let feedback = feedback_from_scores(&table, config.fb_docs, UnitKind::Passage, "rerank")?;
    let (fw, fe) = collection.feedback_indexes(UnitKind::Passage);

    let rm3 = word_relevance_model(&feedback, fw, &ExpansionConfig { use_idf_factor: false, ..config })?;
    let lce = word_relevance_model(&feedback, fw, &config)?;
    println!("RM3 terms: {:?}", rm3.weights.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>());
    println!("LCE terms: {:?}", lce.weights.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>());

    let pairs = entity_pair_model(&feedback, fe, &config)?;
    println!("{} co-occurring entity pairs", pairs.len());
    let entities = entity_relevance_model(&feedback, fe, &config)?;
    for (e, w) in entities.weights.iter().take(5) {
        println!("entity {e} {w:.4}");
    }
    let sum: f64 = entities.weights.iter().map(|(_, w)| w).sum();
    assert!((sum - 1.0).abs() < 1e-9);

    let expanded = expand_query(query, &feedback, fw, fe, &config)?;
    println!("word query: {:?}", expanded.word.as_ref().map(|q| q.terms.len()));
    println!("entity query: {:?}", expanded.entity.as_ref().map(|q| q.terms.len()));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("relevance_models failed");
}
