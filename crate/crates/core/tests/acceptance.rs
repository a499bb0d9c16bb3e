// Acceptance suite: one PASS/FAIL line per criterion. Runs without the
// libtest harness so the lines reach the console uncaptured.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::Units;
use lee::adaptive::{adaptive_expand, AdaptiveOptions, StaticFrontier};
use lee::collection::Collection;
use lee::corpus::{Corpus, Document, Query};
use lee::eval::{evaluate_run, load_qrels, Measure, Qrels};
use lee::expansion::{
    build_feedback, duet_retrieve, entity_mixture_weights, entity_pair_model, entity_relevance_model,
    make_expanded_query, original_distribution, unigram_weights, word_relevance_model, DuetParams,
    ExpansionConfig, FeedbackSet, UnitKind,
};
use lee::index::{Bm25Params, InvertedIndex, VocabKind, WeightedQuery};
use lee::pipeline::{run_pipeline, PipelineConfig, PipelineKind};
use lee::rerank::{rerank_run, LexicalScorer, QrelsOracleScorer, RerankOptions, ScoringTrace};
use lee::run::{load_trec_run, RunEntry, ScoredRun};
use lee::sweep::ParamGrid;
use lee::synthetic::{generate, SyntheticConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn index(kind: VocabKind, units: &Units) -> InvertedIndex {
    InvertedIndex::build(kind, units.iter().map(|(id, t)| (id.clone(), t.clone()))).expect("index builds")
}

fn scores_for(rng: &mut ChaCha8Rng, units: &Units) -> Vec<(String, f64)> {
    units.iter().map(|(id, _)| (id.clone(), rng.gen_range(0.0..1.0))).collect()
}

fn module_feedback(scores: &[(String, f64)], fb_docs: usize) -> FeedbackSet {
    build_feedback(scores, fb_docs, UnitKind::Passage, "fixture").expect("feedback")
}

fn pairs_of(q: &WeightedQuery) -> Vec<(String, f64)> {
    q.terms.clone()
}

fn close(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, tol: f64, what: &str) -> Result<(), String> {
    for k in a.keys().chain(b.keys()) {
        let (x, y) = (a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0));
        ensure((x - y).abs() <= tol, || format!("{what} {k}: module {x} vs oracle {y}"))?;
    }
    Ok(())
}

/// Word units drawn from `t00..`, entity units over the same ids from `E00..`.
fn fixture(rng: &mut ChaCha8Rng) -> (Units, Units) {
    let words = common::random_units(rng, 10, 30, "t", 12);
    let entities: Units = words
        .iter()
        .map(|(id, _)| {
            let v = rng.gen_range(1..=12);
            let len = rng.gen_range(0..=8);
            (id.clone(), (0..len).map(|_| format!("E{:02}", rng.gen_range(0..v))).collect())
        })
        .collect();
    (words, entities)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for case in 0..300 {
        let (words, entities) = fixture(&mut rng);
        let scores = scores_for(&mut rng, &words);
        let fb_docs = rng.gen_range(1..=words.len());
        let fb = common::feedback(&scores, fb_docs);
        let feedback = module_feedback(&scores, fb_docs);
        for (e, (id, p)) in feedback.entries.iter().zip(&fb) {
            ensure(&e.unit_id == id && (e.p - p).abs() <= 1e-12, || format!("case {case}: feedback differs"))?;
        }
        let config = ExpansionConfig {
            fb_docs,
            fb_terms: rng.gen_range(1..=30),
            beta: f64::from(rng.gen_range(0..=10u32)) / 10.0,
            use_idf_factor: rng.gen_bool(0.5),
            ..ExpansionConfig::default()
        };
        let wi = index(VocabKind::Word, &words);
        let ei = index(VocabKind::Entity, &entities);

        // Word relevance model.
        let raw = common::unigram(&words, &fb, config.use_idf_factor);
        close(&unigram_weights(&feedback, &wi, config.use_idf_factor).unwrap(), &raw, 1e-9, "word weight")
            .map_err(|e| format!("case {case}: {e}"))?;
        if raw.values().any(|w| *w > 0.0) {
            let model = word_relevance_model(&feedback, &wi, &config).map_err(|e| format!("case {case}: {e}"))?;
            common::check_model(&model.weights, &raw, config.fb_terms, 1e-9).map_err(|e| format!("case {case} eq1: {e}"))?;
        }

        // Entity pair dependence.
        let want = common::pairs(&entities, &fb);
        let got: BTreeMap<(String, String), f64> = entity_pair_model(&feedback, &ei, &config)
            .unwrap()
            .iter()
            .map(|(a, b, w)| ((a.to_string(), b.to_string()), w))
            .collect();
        ensure(got.keys().eq(want.keys()), || format!("case {case}: pair sets differ"))?;
        for (k, w) in &got {
            ensure((w - want[k]).abs() <= 1e-9, || format!("case {case}: pair {k:?} {w} vs {}", want[k]))?;
        }

        // Entity relevance model.
        let raw = common::entity_mixture(&entities, &fb, config.beta, config.use_idf_factor);
        close(&entity_mixture_weights(&feedback, &ei, &config).unwrap(), &raw, 1e-9, "entity weight")
            .map_err(|e| format!("case {case}: {e}"))?;
        if raw.values().any(|w| *w > 0.0) {
            let model = entity_relevance_model(&feedback, &ei, &config).map_err(|e| format!("case {case}: {e}"))?;
            common::check_model(&model.weights, &raw, config.fb_terms, 1e-9).map_err(|e| format!("case {case} eq3: {e}"))?;
        }

        // Duet fusion.
        let wq = WeightedQuery::new(VocabKind::Word, common::random_query(&mut rng, "t", 30)).unwrap();
        let eq = WeightedQuery::new(VocabKind::Entity, common::random_query(&mut rng, "E", 12)).unwrap();
        let lambda = f64::from(rng.gen_range(0..=10u32)) / 10.0;
        let k = rng.gen_range(1..=12);
        let depth = rng.gen_range(1..=k);
        let params = DuetParams { lambda, k_lee: k, depth, bm25: Bm25Params::default() };
        let got = match duet_retrieve("q", Some(&wq), Some(&eq), &wi, &ei, &params, "duet") {
            Ok(r) => r.run.entries.into_iter().map(|e| (e.unit_id, e.score)).collect::<Vec<_>>(),
            Err(e) => return Err(format!("case {case}: duet failed: {e}")),
        };
        let want = common::duet(&words, &entities, &pairs_of(&wq), &pairs_of(&eq), lambda, k, depth);
        // The last few slots may hold near-ties the oracle cut differently.
        let got_scores: Vec<f64> = got.iter().map(|x| x.1).collect();
        let want_scores: Vec<f64> = want.iter().map(|x| x.1).collect();
        ensure(got_scores.len() == want_scores.len(), || format!("case {case}: duet lengths differ"))?;
        for (a, b) in got_scores.iter().zip(&want_scores) {
            ensure((a - b).abs() <= 1e-9, || format!("case {case}: duet score {a} vs {b}"))?;
        }
        let full = common::duet(&words, &entities, &pairs_of(&wq), &pairs_of(&eq), lambda, k, usize::MAX);
        let restricted: Vec<(String, f64)> = full.into_iter().filter(|(d, _)| got.iter().any(|(g, _)| g == d)).collect();
        common::check_ranking(&got, &restricted, 1e-9).map_err(|e| format!("case {case} eq4: {e}"))?;
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} fixtures in {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..300 {
        let (words, entities) = fixture(&mut rng);
        let wi = index(VocabKind::Word, &words);
        let ei = index(VocabKind::Entity, &entities);
        let wq = WeightedQuery::new(VocabKind::Word, common::random_query(&mut rng, "t", 30)).unwrap();
        let eq = WeightedQuery::new(VocabKind::Entity, common::random_query(&mut rng, "E", 12)).unwrap();
        let k = rng.gen_range(1..=12);
        let depth = rng.gen_range(1..=k);
        let ids = |r: ScoredRun| r.entries.into_iter().map(|e| e.unit_id).collect::<Vec<_>>();
        for (lambda, alone, index) in [(1.0, &wq, &wi), (0.0, &eq, &ei)] {
            let params = DuetParams { lambda, k_lee: k, depth, bm25: Bm25Params::default() };
            let fused = ids(duet_retrieve("q", Some(&wq), Some(&eq), &wi, &ei, &params, "duet").unwrap().run);
            let single: Vec<String> = index.bm25_search(alone, params.bm25, depth).unwrap().into_iter().map(|x| x.0).collect();
            ensure(fused == single, || format!("case {case}: lambda={lambda} ranking differs from single side"))?;
        }

        let scores = scores_for(&mut rng, &words);
        let fb_docs = rng.gen_range(1..=words.len());
        let feedback = module_feedback(&scores, fb_docs);
        let config = ExpansionConfig { fb_docs, fb_terms: rng.gen_range(1..=30), beta: 0.0, ..ExpansionConfig::default() };
        let unigram_only = ExpansionConfig { use_entity_pairs: false, beta: rng.gen_range(0.0..1.0), ..config };
        match (entity_relevance_model(&feedback, &ei, &config), entity_relevance_model(&feedback, &ei, &unigram_only)) {
            (Ok(a), Ok(b)) => ensure(a.weights == b.weights, || format!("case {case}: beta=0 differs from unigram model"))?,
            (Err(_), Err(_)) => {}
            _ => return Err(format!("case {case}: beta=0 and unigram disagree on degeneracy")),
        }

        let text: Vec<String> = (0..rng.gen_range(1..4)).map(|_| format!("t{:02}", rng.gen_range(0..30))).collect();
        let query = Query::new("q", text.join(" ")).with_entities(["E00", "E03"]);
        for (kind, model) in [
            (VocabKind::Word, word_relevance_model(&feedback, &wi, &config)),
            (VocabKind::Entity, entity_relevance_model(&feedback, &ei, &config)),
        ] {
            let Ok(model) = model else { continue };
            let expanded = make_expanded_query(&query, &model, 1.0).unwrap().query;
            let original = WeightedQuery::new(kind, original_distribution(&query, kind)).unwrap();
            ensure(expanded == original, || format!("case {case}: w0=1 {kind} query differs from original"))?;
        }
    }
    Ok("300 fixtures: lambda 0/1, beta 0 and w0 1 exact".into())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonempty = 0;
    for case in 0..200 {
        let mut docs = common::random_units(&mut rng, 50, 40, "w", 25);
        // Duplicated documents force exact score ties.
        if rng.gen_bool(0.3) && docs.len() > 2 {
            let copy = docs[0].1.clone();
            let n = docs.len();
            docs[n - 1].1 = copy;
        }
        let idx = index(VocabKind::Word, &docs);
        let query = WeightedQuery::new(VocabKind::Word, common::random_query(&mut rng, "w", 40)).unwrap();
        let params = if rng.gen_bool(0.5) {
            Bm25Params::default()
        } else {
            Bm25Params { k1: rng.gen_range(0.1..3.0), b: rng.gen_range(0.0..=1.0) }
        };
        let got = idx.bm25_search(&query, params, usize::MAX).unwrap();
        let want = common::bm25(&docs, &query.terms, params.k1, params.b);
        ensure(got == want, || format!("case {case}: ranking differs"))?;
        nonempty += usize::from(!got.is_empty());
    }
    Ok(format!("200 queries, {nonempty} with hits, exact equality"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let synthetic = generate(&SyntheticConfig::default());
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs).unwrap()).unwrap();
    let scorer = QrelsOracleScorer::new(synthetic.qrels.clone());
    let recall = Measure::Recall(100);
    let base = PipelineConfig { depth: 1000, rerank_depth: 100, budget: 100, batch: 16, ..PipelineConfig::default() };
    let mean = |runs: Vec<ScoredRun>| -> f64 {
        evaluate_run(&runs, &synthetic.qrels, &[recall], 1000).unwrap().mean(recall).unwrap()
    };
    let run = |kind| {
        run_pipeline(&collection, &PipelineConfig { pipeline: kind, ..base.clone() }, &scorer, &synthetic.queries).unwrap()
    };
    let traditional = run(PipelineKind::Traditional);
    let nlm = run(PipelineKind::NlmFeedback);
    let adaptive = run(PipelineKind::Adaptive);
    let (t, n) = (mean(traditional.final_runs()), mean(nlm.final_runs()));
    let (a, plain) = (mean(adaptive.final_runs()), mean(nlm.stage_runs("rerank")));
    let elapsed = start.elapsed();
    let summary = format!(
        "R@100 nlm-feedback {n:.3} > traditional {t:.3}; R@budget adaptive {a:.3} >= re-rank {plain:.3}; {elapsed:.1?}"
    );
    ensure(n > t && a >= plain && elapsed < Duration::from_secs(120), || summary.clone())?;
    Ok(summary)
}

fn criterion_5() -> Outcome {
    let docs: Vec<Document> = (0..1503)
        .map(|i| Document {
            doc_id: format!("d{i:04}"),
            title: String::new(),
            body: format!("tok{} shared words here.", i % 7),
            entity_mentions: vec![],
        })
        .collect();
    let corpus = Corpus::with_default_sharding(docs).unwrap();
    let ranked = |ids: std::ops::Range<usize>| {
        let n = ids.len() as f64;
        let entries = ids.enumerate().map(|(r, i)| RunEntry::new(format!("d{i:04}"), n - r as f64, "bm25")).collect();
        ScoredRun::new("q", entries).unwrap()
    };
    let first = ranked(0..1000);
    let expanded = ranked(503..1503);
    let overlap = first.ids().iter().filter(|d| expanded.score_of(d).is_some()).count();
    ensure(overlap == 497, || format!("fixture overlap is {overlap}"))?;

    let query = Query::new("q", "tok3 shared");
    let opts = RerankOptions { depth: 1000, ..RerankOptions::default() };
    let mut trace = ScoringTrace::default();
    rerank_run(&query, &first, &corpus, &LexicalScorer, &opts, &mut trace).unwrap();
    rerank_run(&query, &expanded, &corpus, &LexicalScorer, &RerankOptions { stage: "expanded-rerank".into(), ..opts }, &mut trace)
        .unwrap();
    let two_pass = trace.unique_scored_count();

    let frontier = StaticFrontier(expanded.entries.iter().map(|e| (e.unit_id.clone(), e.score)).collect());
    let out = adaptive_expand(&query, &first, &corpus, &LexicalScorer, &frontier, &AdaptiveOptions { budget: 1000, ..AdaptiveOptions::default() })
        .unwrap();
    let adaptive = out.trace.unique_scored_count();
    let summary = format!("two-pass {two_pass} (2000 scoring calls), adaptive {adaptive}");
    ensure(two_pass == 1503 && adaptive == 1000 && out.stats.unique_scored == 1000, || summary.clone())?;
    Ok(summary)
}

fn criterion_6() -> Outcome {
    let toy = vec![ScoredRun::new(
        "1",
        vec![RunEntry::new("d1", 3.0, "t"), RunEntry::new("d2", 2.0, "t"), RunEntry::new("d3", 1.0, "t")],
    )
    .unwrap()];
    let qrels = Qrels::from_triples([("1", "d1", 1), ("1", "d3", 1)]);
    let ms = [Measure::Map, Measure::Ndcg(None), Measure::Recall(2)];
    let r = evaluate_run(&toy, &qrels, &ms, 1000).unwrap();
    let idcg = 1.0 + 1.0 / 3f64.log2();
    for (m, want) in [(Measure::Map, (1.0 + 2.0 / 3.0) / 2.0), (Measure::Ndcg(None), 1.5 / idcg), (Measure::Recall(2), 0.5)] {
        let got = r.mean(m).unwrap();
        ensure((got - want).abs() <= 1e-4, || format!("toy {m}: {got} vs {want}"))?;
    }

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/trec_eval");
    let qrels = load_qrels(dir.join("qrels.txt")).map_err(|e| e.to_string())?;
    let runs = load_trec_run(dir.join("run.txt")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(&fs::read_to_string(dir.join("expected.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let names = [
        ("map", Measure::Map),
        ("ndcg", Measure::Ndcg(None)),
        ("ndcg_cut_10", Measure::Ndcg(Some(10))),
        ("recall_10", Measure::Recall(10)),
        ("recall_100", Measure::Recall(100)),
    ];
    let measures: Vec<Measure> = names.iter().map(|x| x.1).collect();
    let report = evaluate_run(&runs, &qrels, &measures, 1000).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (qid, values) in &expected {
        for (name, m) in names {
            let got = report.value(qid, m).ok_or_else(|| format!("{qid} missing from report"))?;
            let want = values[name];
            ensure((got - want).abs() <= 1e-4, || format!("{qid} {name}: {got} vs reference {want}"))?;
            compared += 1;
        }
    }
    ensure(expected.len() == 50, || format!("fixture has {} queries", expected.len()))?;
    Ok(format!("toy values and {compared} reference values within 1e-4"))
}

fn criterion_7() -> Outcome {
    let synthetic = generate(&SyntheticConfig { n_docs: 200, n_queries: 6, ..SyntheticConfig::default() });
    let built = Collection::build(Corpus::with_default_sharding(synthetic.docs.clone()).unwrap()).unwrap();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    built.save(tmp.path().join("index")).map_err(|e| e.to_string())?;
    let loaded = Collection::load(Corpus::with_default_sharding(synthetic.docs).unwrap(), tmp.path().join("index"))
        .map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        for (a, b) in [(&built.doc_word, &loaded.doc_word), (&built.passage_word, &loaded.passage_word)] {
            let terms: Vec<(String, f64)> = (0..3).map(|_| (a.terms()[rng.gen_range(0..a.n_terms())].clone(), rng.gen_range(0.1..1.0))).collect();
            let q = WeightedQuery::new(VocabKind::Word, terms).unwrap();
            ensure(a.bm25_search(&q, Bm25Params::default(), 1000).unwrap() == b.bm25_search(&q, Bm25Params::default(), 1000).unwrap(), || {
                "search results differ after reload".into()
            })?;
        }
        for (a, b) in [(&built.doc_entity, &loaded.doc_entity), (&built.passage_entity, &loaded.passage_entity)] {
            let terms: Vec<(String, f64)> = (0..2).map(|_| (a.terms()[rng.gen_range(0..a.n_terms())].clone(), 1.0)).collect();
            let q = WeightedQuery::new(VocabKind::Entity, terms).unwrap();
            ensure(a.bm25_search(&q, Bm25Params::default(), 1000).unwrap() == b.bm25_search(&q, Bm25Params::default(), 1000).unwrap(), || {
                "entity results differ after reload".into()
            })?;
        }
    }

    let oracle = QrelsOracleScorer::new(synthetic.qrels.clone());
    let mut files = 0;
    for kind in [PipelineKind::Traditional, PipelineKind::NlmFeedbackRerank, PipelineKind::Adaptive] {
        for scorer in [&LexicalScorer as &dyn lee::rerank::Scorer, &oracle] {
            let config = PipelineConfig { pipeline: kind, depth: 200, rerank_depth: 50, budget: 48, ..PipelineConfig::default() };
            let a = run_pipeline(&built, &config, scorer, &synthetic.queries).map_err(|e| e.to_string())?;
            let b = run_pipeline(&loaded, &config, scorer, &synthetic.queries).map_err(|e| e.to_string())?;
            ensure(a.config_hash == b.config_hash, || "config hash differs".into())?;
            let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
            let pa = a.write(&da).map_err(|e| e.to_string())?;
            b.write(&db).map_err(|e| e.to_string())?;
            for p in pa {
                let rel = p.strip_prefix(&da).unwrap();
                let (x, y) = (fs::read(&p).unwrap(), fs::read(db.join(rel)).map_err(|e| e.to_string())?);
                ensure(x == y, || format!("{kind}/{}: {} differs", scorer.name(), rel.display()))?;
                files += 1;
            }
            fs::remove_dir_all(&da).ok();
            fs::remove_dir_all(&db).ok();
        }
    }
    Ok(format!("reloaded indexes search identically; {files} output files byte-identical"))
}

fn criterion_8() -> Outcome {
    let grid = ParamGrid::default();
    let planned = grid.len();
    let enumerated = grid.points().count();
    let distinct: std::collections::HashSet<String> = grid.points().map(|p| format!("{p:?}")).collect();
    let summary = format!("planner {planned}, enumerated {enumerated}, distinct {}", distinct.len());
    ensure(planned == 291_600 && enumerated == 291_600 && distinct.len() == 291_600, || summary.clone())?;
    Ok(summary)
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("brute-force model oracles", criterion_1),
        ("endpoint identities", criterion_2),
        ("bm25 equivalence", criterion_3),
        ("feedback precision (directional)", criterion_4),
        ("scoring-cost accounting", criterion_5),
        ("evaluation correctness", criterion_6),
        ("determinism and round-trip", criterion_7),
        ("grid arithmetic", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
