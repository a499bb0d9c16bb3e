// Fuse word and entity retrieval with min-max normalized scores.

use lee::expansion::{duet_retrieve, min_max, DuetParams};
use lee::index::{Bm25Params, InvertedIndex, VocabKind, WeightedQuery};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let words = InvertedIndex::build(
        VocabKind::Word,
        [("d1", vec!["solar", "panel"]), ("d2", vec!["solar", "wind"]), ("d3", vec!["coal"])],
    )?;
    let entities = InvertedIndex::build(
        VocabKind::Entity,
        [("d1", vec!["Sun"]), ("d2", vec!["Wind_power"]), ("d3", vec!["Sun", "Coal"])],
    )?;
    let wq = WeightedQuery::uniform(VocabKind::Word, ["solar", "panel"])?;
    let eq = WeightedQuery::uniform(VocabKind::Entity, ["Sun"])?;

    println!("normalized word list: {:?}", min_max(&words.bm25_search(&wq, Bm25Params::default(), 10)?));
    for lambda in [0.0, 0.5, 1.0] {
        let params = DuetParams { lambda, k_lee: 10, depth: 10, bm25: Bm25Params::default() };
        let result = duet_retrieve("q1", Some(&wq), Some(&eq), &words, &entities, &params, "duet")?;
        let ranked: Vec<_> = result.run.entries.iter().map(|e| format!("{}:{:.3}", e.unit_id, e.score)).collect();
        println!("lambda={lambda}: {}", ranked.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("duet_retrieval failed");
}
