// Adaptive expansion: alternate batches from the first-stage ranking and
// from a frontier that is refreshed from everything scored so far.

use lee::adaptive::{adaptive_expand, AdaptiveOptions, GarFrontier, GarMode, LeeFrontier};
use lee::analysis::analyze_unique;
use lee::collection::Collection;
use lee::corpus::Corpus;
use lee::eval::{evaluate_run, Measure};
use lee::expansion::ExpansionConfig;
use lee::index::{Bm25Params, VocabKind, WeightedQuery};
use lee::rerank::QrelsOracleScorer;
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = generate(&SyntheticConfig { n_docs: 200, n_queries: 5, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs)?)?;
    let scorer = QrelsOracleScorer::new(synthetic.qrels.clone());
    let bm25 = Bm25Params::default();
    let opts = AdaptiveOptions { budget: 40, batch: 8, ..AdaptiveOptions::default() };

    let lee = LeeFrontier {
        collection: &collection,
        config: ExpansionConfig { fb_docs: 5, fb_terms: 10, k_lee: 100, ..ExpansionConfig::default() },
        bm25,
    };
    let gar = GarFrontier { collection: &collection, mode: GarMode::Bm25Terms, n_terms: 10, bm25, depth: 100 };

    for query in &synthetic.queries {
        let wq = WeightedQuery::uniform(VocabKind::Word, analyze_unique(&query.text))?;
        let r0 = collection.doc_word.search_run(&query.query_id, &wq, bm25, 100, "bm25")?;
        for (name, frontier) in [("lee", &lee as &dyn lee::adaptive::FrontierSource), ("gar", &gar)] {
            let out = adaptive_expand(query, &r0, &collection.corpus, &scorer, frontier, &opts)?;
            assert!(out.stats.unique_scored <= opts.budget);
            let report = evaluate_run(&[out.run], &synthetic.qrels, &[Measure::Recall(40)], 40)?;
            println!(
                "q{} {name}: scored {} in {} batches, R@40 {:.2}",
                query.query_id,
                out.stats.unique_scored,
                out.stats.batches,
                report.mean(Measure::Recall(40)).unwrap_or(0.0)
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("adaptive_expansion failed");
}
