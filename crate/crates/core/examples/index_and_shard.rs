// Shard documents into sentence-window passages, build the four indexes,
// save them, and reload them.

use lee::collection::Collection;
use lee::corpus::{shard_passages, Corpus, Document, EntityMention};
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let doc = Document {
        doc_id: "d1".into(),
        title: "Rivers".into(),
        body: "The Nile is long. It flows north. Egypt relies on it.".into(),
        entity_mentions: vec![EntityMention { entity_id: "Nile".into(), surface: "Nile".into(), start: 4, end: 8 }],
    };
    // Two-sentence windows with a stride of one sentence.
    for p in shard_passages(&doc, 2, 1)? {
        println!("{} {:?} entities={:?}", p.id(), p.text, p.entity_tokens());
    }

    let synthetic = generate(&SyntheticConfig { n_docs: 80, n_queries: 3, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs.clone())?)?;
    println!(
        "{} docs, {} passages, {} word terms, {} entities",
        collection.corpus.len(),
        collection.passage_word.n_units(),
        collection.doc_word.n_terms(),
        collection.doc_entity.n_terms()
    );

    let dir = tempfile::tempdir()?;
    collection.save(dir.path())?;
    let reloaded = Collection::load(Corpus::with_default_sharding(synthetic.docs)?, dir.path())?;
    assert_eq!(reloaded.doc_word, collection.doc_word);
    assert_eq!(reloaded.passage_entity, collection.passage_entity);
    println!("reloaded indexes match");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("index_and_shard failed");
}
