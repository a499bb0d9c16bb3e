// Exhaustive BM25 over word and entity indexes.

use lee::analysis::analyze_unique;
use lee::index::{Bm25Params, InvertedIndex, VocabKind, WeightedQuery};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let texts = [
        ("a", "Jaguars are big cats living in the Americas."),
        ("b", "The Jaguar is a British car maker."),
        ("c", "Big cats: lions, tigers, leopards and jaguars."),
    ];
    let words = InvertedIndex::build(VocabKind::Word, texts.iter().map(|(id, t)| (*id, lee::analysis::analyze_text(t))))?;
    let query = WeightedQuery::uniform(VocabKind::Word, analyze_unique("big jaguar cats"))?;
    for (id, score) in words.bm25_search(&query, Bm25Params::default(), 10)? {
        println!("word   {id} {score:.4}");
    }

    let entities = InvertedIndex::build(
        VocabKind::Entity,
        [("a", vec!["Jaguar_(animal)", "Americas"]), ("b", vec!["Jaguar_Cars", "United_Kingdom"]), ("c", vec!["Lion", "Tiger", "Jaguar_(animal)"])],
    )?;
    let eq = WeightedQuery::new(VocabKind::Entity, [("Jaguar_(animal)", 0.7), ("Lion", 0.3)])?;
    let hits = entities.bm25_search(&eq, Bm25Params { k1: 0.9, b: 0.4 }, 10)?;
    for (id, score) in &hits {
        println!("entity {id} {score:.4}");
    }
    assert_eq!(hits[0].0, "c");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("bm25_search failed");
}
