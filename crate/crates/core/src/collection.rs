//! The four indexes a pipeline works against: word and entity indexes over
//! whole documents (for retrieval) and over passages (for feedback).

use std::path::Path;

use rayon::prelude::*;

use crate::analysis::analyze_text;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::expansion::UnitKind;
use crate::index::{read_index, write_index, InvertedIndex, VocabKind};

const SUBDIRS: [&str; 4] = ["doc-word", "doc-entity", "passage-word", "passage-entity"];

#[derive(Debug, Clone)]
pub struct Collection {
    pub corpus: Corpus,
    pub doc_word: InvertedIndex,
    pub doc_entity: InvertedIndex,
    pub passage_word: InvertedIndex,
    pub passage_entity: InvertedIndex,
}

impl Collection {
    /// Index a corpus. Document word units are title plus body; passage word
    /// units are the passage text alone, so the title is not counted twice
    /// in passage lengths.
    pub fn build(corpus: Corpus) -> Result<Self> {
        let docs = corpus.documents();
        let doc_tokens: Vec<(String, Vec<String>)> = docs
            .par_iter()
            .map(|d| (d.doc_id.clone(), analyze_text(&d.indexed_text())))
            .collect();
        let passages: Vec<_> = corpus.all_passages().collect();
        let passage_tokens: Vec<(String, Vec<String>)> =
            passages.par_iter().map(|p| (p.id(), analyze_text(&p.text))).collect();

        let doc_word = InvertedIndex::build(VocabKind::Word, doc_tokens)?;
        let doc_entity = InvertedIndex::build(
            VocabKind::Entity,
            docs.iter().map(|d| (d.doc_id.clone(), d.entity_tokens())),
        )?;
        let passage_word = InvertedIndex::build(VocabKind::Word, passage_tokens)?;
        let passage_entity = InvertedIndex::build(
            VocabKind::Entity,
            passages.iter().map(|p| (p.id(), p.entity_tokens())),
        )?;
        Ok(Collection {
            corpus,
            doc_word,
            doc_entity,
            passage_word,
            passage_entity,
        })
    }

    /// Word and entity indexes for feedback units of the given kind.
    pub fn feedback_indexes(&self, kind: UnitKind) -> (&InvertedIndex, &InvertedIndex) {
        match kind {
            UnitKind::Document => (&self.doc_word, &self.doc_entity),
            UnitKind::Passage => (&self.passage_word, &self.passage_entity),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let indexes = [&self.doc_word, &self.doc_entity, &self.passage_word, &self.passage_entity];
        for (name, idx) in SUBDIRS.iter().zip(indexes) {
            write_index(idx, dir.join(name))?;
        }
        Ok(())
    }

    /// Load indexes written by [`save`](Self::save) for `corpus`. The corpus
    /// must be the one the indexes were built from.
    pub fn load(corpus: Corpus, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut loaded = Vec::with_capacity(4);
        for name in SUBDIRS {
            let path = dir.join(name);
            if !path.is_dir() {
                return Err(Error::Config(format!("index directory {} does not exist", path.display())));
            }
            loaded.push(read_index(&path)?);
        }
        let [doc_word, doc_entity, passage_word, passage_entity]: [InvertedIndex; 4] =
            loaded.try_into().expect("four indexes");
        if doc_word.n_units() != corpus.len() {
            return Err(Error::Validation(format!(
                "index at {} covers {} documents but the corpus has {}",
                dir.display(),
                doc_word.n_units(),
                corpus.len()
            )));
        }
        Ok(Collection {
            corpus,
            doc_word,
            doc_entity,
            passage_word,
            passage_entity,
        })
    }
}
