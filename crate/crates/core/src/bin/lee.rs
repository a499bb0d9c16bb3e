//! Command-line front end. Exit codes: 0 ok, 1 configuration error,
//! 2 runtime error, 3 validation failure.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lee::analysis::STOPWORDS;
use lee::collection::Collection;
use lee::corpus::{load_corpus, Corpus};
use lee::error::{Error, Result};
use lee::eval::{compare_reports, evaluate_run, load_qrels, Measure};
use lee::expansion::{duet_retrieve, read_expanded_query, UnitKind};
use lee::index::{VocabKind, WeightedQuery};
use lee::pipeline::{
    build_scorer, open_collection, open_topics, run_pipeline, FrontierKind, PipelineConfig, PipelineKind,
    SCORER_ENDPOINT_ENV,
};
use lee::rerank::{rerank_run, ScoringTrace};
use lee::run::{load_trec_run, save_trec_run, validate_trec_run};
use lee::sweep::{sweep, FoldSpec, ParamGrid, SearchMode, SweepOptions};

#[derive(Parser)]
#[command(name = "lee", version, about = "Word and entity query expansion with neural feedback")]
struct Cli {
    /// Print the built-in stopword list and exit.
    #[arg(long)]
    print_stopwords: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save the document and passage indexes for a corpus.
    Index {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the passages of every document as JSON lines.
    Shard {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// BM25 retrieval of the original topics.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "word")]
        vocab: VocabKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Max-passage re-ranking of an existing run.
    Rerank {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write expanded word and entity queries for every topic.
    Expand {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fused word and entity retrieval from expanded query files.
    Duet {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of `<qid>.word.tsv` / `<qid>.entity.tsv` files.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adaptive expansion within a scoring budget.
    Adaptive {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured pipeline, writing one run per stage.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a run against relevance judgments.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated, e.g. `ndcg,map,recall@1000`.
        #[arg(long, default_value = "ndcg,map,recall@1000", value_delimiter = ',')]
        measures: Vec<Measure>,
        #[arg(long, default_value_t = 1000)]
        depth: usize,
        /// Second run for a paired t-test on every measure.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated grid search over expansion parameters.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        qrels: PathBuf,
        /// Fold file; defaults to the configured one or five generated folds.
        #[arg(long)]
        folds: Option<PathBuf>,
        /// TOML grid overriding the default ranges.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Evaluate every point instead of coordinate descent.
        #[arg(long)]
        full_grid: bool,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value = "recall@1000")]
        target: Measure,
        /// Only print the number of points the search would consider.
        #[arg(long)]
        plan: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a TREC run file.
    ValidateRun { path: PathBuf },
}

/// Configuration file plus per-field overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pipeline: Option<PipelineKind>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index_dir: Option<PathBuf>,
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    rerank_depth: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    frontier: Option<FrontierKind>,
    #[arg(long)]
    gar_terms: Option<usize>,
    #[arg(long)]
    fold_file: Option<PathBuf>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// lexical, identity, qrels-oracle, process or http.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    scorer_qrels: Option<PathBuf>,
    #[arg(long)]
    scorer_command: Option<String>,
    #[arg(long = "scorer-arg")]
    scorer_args: Vec<String>,
    #[arg(long, env = SCORER_ENDPOINT_ENV)]
    scorer_endpoint: Option<String>,
    #[arg(long)]
    scorer_timeout_secs: Option<f64>,
    #[arg(long)]
    scorer_retries: Option<u32>,
    #[arg(long)]
    scorer_batch_size: Option<usize>,
    #[arg(long)]
    fb_docs: Option<usize>,
    #[arg(long)]
    fb_terms: Option<usize>,
    #[arg(long)]
    original_query_weight: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k_lee: Option<usize>,
    #[arg(long)]
    unit_kind: Option<UnitKind>,
    #[arg(long)]
    no_idf_factor: bool,
    #[arg(long)]
    no_entity_pairs: bool,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value.clone() {
            $target = v;
        }
    };
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        set!(c.pipeline, self.pipeline);
        if self.corpus.is_some() {
            c.corpus = self.corpus.clone();
        }
        if self.index_dir.is_some() {
            c.index_dir = self.index_dir.clone();
        }
        if self.topics.is_some() {
            c.topics = self.topics.clone();
        }
        if self.fold_file.is_some() {
            c.fold_file = self.fold_file.clone();
        }
        set!(c.depth, self.depth);
        set!(c.rerank_depth, self.rerank_depth);
        set!(c.budget, self.budget);
        set!(c.batch, self.batch);
        set!(c.window, self.window);
        set!(c.stride, self.stride);
        set!(c.frontier, self.frontier);
        set!(c.gar_terms, self.gar_terms);
        set!(c.bm25.k1, self.k1);
        set!(c.bm25.b, self.b);
        set!(c.scorer.kind, self.scorer);
        if self.scorer_qrels.is_some() {
            c.scorer.qrels = self.scorer_qrels.clone();
        }
        if self.scorer_command.is_some() {
            c.scorer.command = self.scorer_command.clone();
        }
        if !self.scorer_args.is_empty() {
            c.scorer.args = self.scorer_args.clone();
        }
        if c.scorer.endpoint.is_none() {
            c.scorer.endpoint = self.scorer_endpoint.clone();
        }
        set!(c.scorer.timeout_secs, self.scorer_timeout_secs);
        set!(c.scorer.retries, self.scorer_retries);
        set!(c.scorer.batch_size, self.scorer_batch_size);
        let e = &mut c.expansion;
        set!(e.fb_docs, self.fb_docs);
        set!(e.fb_terms, self.fb_terms);
        set!(e.original_query_weight, self.original_query_weight);
        set!(e.beta, self.beta);
        set!(e.lambda, self.lambda);
        set!(e.k_lee, self.k_lee);
        set!(e.unit_kind, self.unit_kind);
        if self.no_idf_factor {
            e.use_idf_factor = false;
        }
        if self.no_entity_pairs {
            e.use_entity_pairs = false;
        }
        c.validate()?;
        c.check_paths()?;
        Ok(c)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn header(cfg: &PipelineConfig, stage: &str) -> Vec<String> {
    vec![format!("config_hash={}", cfg.config_hash()), format!("stage={stage}")]
}

fn finish_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let collection = open_collection(cfg)?;
    let topics = open_topics(cfg)?;
    let scorer = build_scorer(&cfg.scorer, None)?;
    let output = run_pipeline(&collection, cfg, scorer.as_ref(), &topics)?;
    for path in output.write(out)? {
        println!("{}", path.display());
    }
    if let Some((qid, why)) = output.failures.first() {
        return Err(Error::Scorer {
            qid: qid.clone(),
            batch: 0,
            message: format!("{} of {} queries failed; first: {why}", output.failures.len(), topics.len()),
        });
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Index { cfg, out } => {
            let mut c = cfg.resolve()?;
            c.index_dir = None;
            let collection = open_collection(&c)?;
            collection.save(&out)?;
            println!(
                "indexed {} documents and {} passages into {}",
                collection.corpus.len(),
                collection.passage_word.n_units(),
                out.display()
            );
        }
        Command::Shard { cfg, out } => {
            let c = cfg.resolve()?;
            let path = c.corpus.as_ref().ok_or_else(|| Error::Config("no corpus configured".into()))?;
            let (docs, _) = load_corpus(path)?;
            let corpus = Corpus::new(docs, c.window, c.stride)?;
            let mut w = create(&out)?;
            for p in corpus.all_passages() {
                let line = serde_json::to_string(p).expect("passage serializes");
                writeln!(w, "{line}").map_err(|e| Error::Io { path: out.clone(), source: e })?;
            }
            w.flush().map_err(|e| Error::Io { path: out.clone(), source: e })?;
        }
        Command::Search { cfg, vocab, out } => {
            let c = cfg.resolve()?;
            let collection = open_collection(&c)?;
            let mut runs = Vec::new();
            for q in open_topics(&c)? {
                let terms = match vocab {
                    VocabKind::Word => lee::analysis::analyze_unique(&q.text),
                    VocabKind::Entity => q.entity_ids.clone(),
                };
                let index = match vocab {
                    VocabKind::Word => &collection.doc_word,
                    VocabKind::Entity => &collection.doc_entity,
                };
                match WeightedQuery::uniform(vocab, terms) {
                    Ok(wq) => runs.push(index.search_run(&q.query_id, &wq, c.bm25, c.depth, "bm25")?),
                    Err(_) => log::warn!("query {} has no {vocab} terms", q.query_id),
                }
            }
            save_trec_run(&out, &runs, "lee-bm25", &header(&c, "bm25"))?;
        }
        Command::Rerank { cfg, run, out } => {
            let c = cfg.resolve()?;
            let collection = open_collection(&c)?;
            let scorer = build_scorer(&c.scorer, None)?;
            let topics = open_topics(&c)?;
            let mut reranked = Vec::new();
            for r in load_trec_run(&run)? {
                let Some(q) = topics.iter().find(|q| q.query_id == r.query_id) else {
                    log::warn!("run query {} not in topics; skipped", r.query_id);
                    continue;
                };
                let opts = lee::rerank::RerankOptions {
                    depth: c.rerank_depth,
                    batch_size: c.scorer.batch_size,
                    stage: "rerank".into(),
                };
                let mut trace = ScoringTrace::default();
                reranked.push(rerank_run(q, &r, &collection.corpus, scorer.as_ref(), &opts, &mut trace)?.0);
            }
            save_trec_run(&out, &reranked, "lee-rerank", &header(&c, "rerank"))?;
        }
        Command::Expand { cfg, out } => {
            let mut c = cfg.resolve()?;
            if c.pipeline == PipelineKind::Adaptive {
                return Err(Error::Config("expand needs a traditional or nlm-feedback pipeline".into()));
            }
            c.pipeline = match c.pipeline {
                PipelineKind::Traditional => PipelineKind::Traditional,
                _ => PipelineKind::NlmFeedback,
            };
            finish_pipeline(&c, &out)?;
        }
        Command::Duet { cfg, queries, out } => {
            let c = cfg.resolve()?;
            let collection = open_collection(&c)?;
            let runs = duet_from_files(&c, &collection, &queries)?;
            save_trec_run(&out, &runs, "lee-duet", &header(&c, "duet"))?;
        }
        Command::Adaptive { cfg, out } => {
            let mut c = cfg.resolve()?;
            c.pipeline = PipelineKind::Adaptive;
            c.validate()?;
            finish_pipeline(&c, &out)?;
        }
        Command::Run { cfg, out } => finish_pipeline(&cfg.resolve()?, &out)?,
        Command::Evaluate { run, qrels, measures, depth, compare, out } => {
            let qrels = load_qrels(&qrels)?;
            let report = evaluate_run(&load_trec_run(&run)?, &qrels, &measures, depth)?;
            let mut text = report.to_tsv();
            if let Some(other) = compare {
                let b = evaluate_run(&load_trec_run(&other)?, &qrels, &measures, depth)?;
                for m in &measures {
                    let t = compare_reports(&report, &b, *m)?;
                    text.push_str(&format!(
                        "ttest\t{m}\tt={:.6}\tp={:.6}\tsignificant={}\n",
                        t.t,
                        t.p,
                        t.significant()
                    ));
                }
            }
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?,
                None => print!("{text}"),
            }
        }
        Command::Sweep { cfg, qrels, folds, grid, full_grid, rounds, workers, target, plan, out } => {
            let grid = match grid {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    toml::from_str(&text).map_err(|e| Error::Config(format!("invalid grid: {e}")))?
                }
                None => ParamGrid::default(),
            };
            let mode = if full_grid { SearchMode::FullGrid } else { SearchMode::CoordinateDescent { rounds } };
            if plan {
                let n = match mode {
                    SearchMode::FullGrid => grid.len(),
                    SearchMode::CoordinateDescent { rounds } => {
                        rounds.max(1)
                            * (grid.fb_docs.len()
                                + grid.fb_terms.len()
                                + grid.original_query_weight.len()
                                + grid.beta.len()
                                + grid.lambda.len()
                                + grid.k_lee.len())
                    }
                };
                println!("{n}");
                return Ok(());
            }
            let c = cfg.resolve()?;
            let collection = open_collection(&c)?;
            let topics = open_topics(&c)?;
            let qrels = load_qrels(&qrels)?;
            let folds = match folds.or_else(|| c.fold_file.clone()) {
                Some(path) => FoldSpec::load(path)?,
                None => {
                    let ids: Vec<String> = topics.iter().map(|q| q.query_id.clone()).collect();
                    FoldSpec::k_fold(&ids, 5.min(ids.len()))?
                }
            };
            let scorer = build_scorer(&c.scorer, None)?;
            let opts = SweepOptions { grid, mode, target, workers };
            let report = sweep(&collection, &c, scorer.as_ref(), &topics, &qrels, &folds, &opts)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    fs::write(dir.join("sweep.json"), json + "\n")
                        .map_err(|e| Error::Io { path: dir.join("sweep.json"), source: e })?;
                    save_trec_run(dir.join("test.run"), &report.test_runs, "lee-sweep", &header(&c, "sweep-test"))?;
                    println!("{}", dir.display());
                }
                None => println!("{json}"),
            }
        }
        Command::ValidateRun { path } => {
            let file = File::open(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let problems = validate_trec_run(BufReader::new(file)).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("{}: {p}", path.display());
                }
                return Err(Error::Validation(format!("{} problems in {}", problems.len(), path.display())));
            }
            println!("{}: ok", path.display());
        }
    }
    Ok(())
}

fn duet_from_files(c: &PipelineConfig, collection: &Collection, dir: &Path) -> Result<Vec<lee::run::ScoredRun>> {
    let mut by_qid: std::collections::BTreeMap<String, (Option<WeightedQuery>, Option<WeightedQuery>)> =
        std::collections::BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::Io { path: dir.into(), source: e })?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
            continue;
        }
        let file = File::open(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        let (qid, _, q) = read_expanded_query(BufReader::new(file))?;
        let slot = by_qid.entry(qid).or_default();
        match q.kind {
            VocabKind::Word => slot.0 = Some(q),
            VocabKind::Entity => slot.1 = Some(q),
        }
    }
    let params = lee::expansion::DuetParams {
        lambda: c.expansion.lambda,
        k_lee: c.expansion.k_lee,
        depth: c.depth,
        bm25: c.bm25,
    };
    by_qid
        .into_iter()
        .map(|(qid, (w, e))| {
            duet_retrieve(&qid, w.as_ref(), e.as_ref(), &collection.doc_word, &collection.doc_entity, &params, "duet")
                .map(|r| r.run)
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.print_stopwords {
        let mut out = io::stdout().lock();
        for w in STOPWORDS {
            let _ = writeln!(out, "{w}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(1);
    };
    match execute(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
