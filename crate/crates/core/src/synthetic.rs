//! Seeded generator for collections with planted relevance.
//!
//! Every topic gets a two-word query and four kinds of documents:
//!
//! - *visible* relevant documents mention the query words once or twice
//!   amid topic vocabulary and topic entities;
//! - *hidden* relevant documents use the topic vocabulary and entities but
//!   never the query words, so only expansion can reach them;
//! - *distractors* repeat the query words together with a vocabulary and
//!   entity set of their own, so they dominate a query-word BM25 ranking;
//! - *background* documents draw from a shared vocabulary.
//!
//! Relevance judgments grade visible documents 2, hidden ones 1 and
//! distractors 0.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, EntityMention, Query};
use crate::eval::Qrels;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_queries: usize,
    pub visible_per_topic: usize,
    pub hidden_per_topic: usize,
    pub distractors_per_topic: usize,
    pub topic_vocab: usize,
    pub topic_entities: usize,
    pub background_vocab: usize,
    pub background_entities: usize,
    /// Inclusive range of sentences per document.
    pub sentences: (usize, usize),
    /// Inclusive range of tokens per sentence.
    pub sentence_len: (usize, usize),
    /// Give each query its first topic entity as a linked entity.
    pub link_query_entities: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 13,
            n_docs: 500,
            n_queries: 20,
            visible_per_topic: 2,
            hidden_per_topic: 6,
            distractors_per_topic: 10,
            topic_vocab: 8,
            topic_entities: 4,
            background_vocab: 400,
            background_entities: 120,
            sentences: (4, 14),
            sentence_len: (6, 10),
            link_query_entities: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub docs: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Visible,
    Hidden,
    Distractor,
    Background,
}

/// Builds one document body while tracking entity mention offsets.
struct Writer {
    body: String,
    chars: usize,
    mentions: Vec<EntityMention>,
}

impl Writer {
    fn new() -> Self {
        Writer { body: String::new(), chars: 0, mentions: Vec::new() }
    }

    fn push(&mut self, s: &str) {
        self.body.push_str(s);
        self.chars += s.chars().count();
    }

    fn word(&mut self, w: &str, first: bool) {
        if !first {
            self.push(" ");
        }
        self.push(w);
    }

    fn entity(&mut self, id: &str, first: bool) {
        if !first {
            self.push(" ");
        }
        let surface = id.to_lowercase().replace('_', "");
        let start = self.chars;
        self.push(&surface);
        self.mentions.push(EntityMention {
            entity_id: id.to_string(),
            surface,
            start,
            end: self.chars,
        });
    }

    fn end_sentence(&mut self) {
        self.push(". ");
    }
}

struct Vocab {
    query: Vec<[String; 2]>,
    topic: Vec<Vec<String>>,
    topic_ents: Vec<Vec<String>>,
    noise: Vec<Vec<String>>,
    noise_ents: Vec<Vec<String>>,
    background: Vec<String>,
    background_ents: Vec<String>,
}

impl Vocab {
    fn new(cfg: &SyntheticConfig) -> Self {
        let per_topic = |f: &dyn Fn(usize, usize) -> String, n: usize| -> Vec<Vec<String>> {
            (0..cfg.n_queries).map(|t| (0..n).map(|j| f(t, j)).collect()).collect()
        };
        Vocab {
            query: (0..cfg.n_queries).map(|t| [format!("q{t}a"), format!("q{t}b")]).collect(),
            topic: per_topic(&|t, j| format!("t{t}w{j}"), cfg.topic_vocab),
            topic_ents: per_topic(&|t, j| format!("T{t}_E{j}"), cfg.topic_entities),
            noise: per_topic(&|t, j| format!("x{t}w{j}"), cfg.topic_vocab),
            noise_ents: per_topic(&|t, j| format!("X{t}_E{j}"), cfg.topic_entities),
            background: (0..cfg.background_vocab).map(|j| format!("b{j}")).collect(),
            background_ents: (0..cfg.background_entities).map(|j| format!("B_E{j}")).collect(),
        }
    }
}

/// Generate a collection. Documents are shuffled so ids carry no signal.
pub fn generate(cfg: &SyntheticConfig) -> SyntheticCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = Vocab::new(cfg);

    let mut plan: Vec<(Kind, Option<usize>)> = Vec::new();
    for t in 0..cfg.n_queries {
        plan.extend(std::iter::repeat_n((Kind::Visible, Some(t)), cfg.visible_per_topic));
        plan.extend(std::iter::repeat_n((Kind::Hidden, Some(t)), cfg.hidden_per_topic));
        plan.extend(std::iter::repeat_n((Kind::Distractor, Some(t)), cfg.distractors_per_topic));
    }
    while plan.len() < cfg.n_docs {
        plan.push((Kind::Background, None));
    }
    plan.shuffle(&mut rng);

    let mut docs = Vec::with_capacity(plan.len());
    let mut qrels = Qrels::default();
    for (i, (kind, topic)) in plan.into_iter().enumerate() {
        let doc_id = format!("doc{i:05}");
        let doc = write_doc(&mut rng, cfg, &vocab, &doc_id, kind, topic);
        if let Some(t) = topic {
            let grade = match kind {
                Kind::Visible => 2,
                Kind::Hidden => 1,
                _ => 0,
            };
            qrels.insert(format!("{t}"), doc_id.clone(), grade);
        }
        docs.push(doc);
    }

    let queries = (0..cfg.n_queries)
        .map(|t| {
            let q = Query::new(format!("{t}"), vocab.query[t].join(" "));
            if cfg.link_query_entities {
                q.with_entities([vocab.topic_ents[t][0].clone()])
            } else {
                q
            }
        })
        .collect();
    SyntheticCollection { docs, queries, qrels }
}

fn write_doc(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, v: &Vocab, doc_id: &str, kind: Kind, topic: Option<usize>) -> Document {
    let n_sent = rng.gen_range(cfg.sentences.0..=cfg.sentences.1);
    // Visible documents place each query word in one or two sentences.
    let query_sentences: Vec<usize> = if kind == Kind::Visible {
        (0..rng.gen_range(2..=3)).map(|_| rng.gen_range(0..n_sent)).collect()
    } else {
        Vec::new()
    };
    let mut w = Writer::new();
    for s in 0..n_sent {
        let len = rng.gen_range(cfg.sentence_len.0..=cfg.sentence_len.1);
        for k in 0..len {
            let first = k == 0;
            let roll: f64 = rng.gen();
            match (kind, topic) {
                (Kind::Visible | Kind::Hidden, Some(t)) => {
                    if roll < 0.3 {
                        w.word(v.topic[t].choose(rng).expect("topic vocab"), first);
                    } else if roll < 0.4 {
                        w.entity(v.topic_ents[t].choose(rng).expect("topic entities"), first);
                    } else {
                        background_token(rng, v, &mut w, first);
                    }
                }
                (Kind::Distractor, Some(t)) => {
                    if roll < 0.25 {
                        w.word(v.query[t].choose(rng).expect("query words"), first);
                    } else if roll < 0.5 {
                        w.word(v.noise[t].choose(rng).expect("noise vocab"), first);
                    } else if roll < 0.6 {
                        w.entity(v.noise_ents[t].choose(rng).expect("noise entities"), first);
                    } else {
                        background_token(rng, v, &mut w, first);
                    }
                }
                _ => background_token(rng, v, &mut w, first),
            }
        }
        if let Some(t) = topic {
            for _ in query_sentences.iter().filter(|&&q| q == s) {
                w.word(v.query[t].choose(rng).expect("query words"), false);
            }
        }
        w.end_sentence();
    }
    let body = w.body.trim_end().to_string();
    Document {
        doc_id: doc_id.to_string(),
        title: String::new(),
        body,
        entity_mentions: w.mentions,
    }
}

fn background_token(rng: &mut ChaCha8Rng, v: &Vocab, w: &mut Writer, first: bool) {
    if rng.gen_bool(0.05) {
        w.entity(v.background_ents.choose(rng).expect("background entities"), first);
    } else {
        // Skewed draw so a few background words are common.
        let n = v.background.len();
        let r: f64 = rng.gen();
        w.word(&v.background[((r * r) * n as f64) as usize % n], first);
    }
}
