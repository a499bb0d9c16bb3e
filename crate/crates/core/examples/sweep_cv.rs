// Cross-validated parameter selection over a small grid.

use lee::collection::Collection;
use lee::corpus::Corpus;
use lee::eval::Measure;
use lee::pipeline::{PipelineConfig, PipelineKind};
use lee::rerank::QrelsOracleScorer;
use lee::sweep::{sweep, FoldSpec, ParamGrid, SearchMode, SweepOptions};
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = generate(&SyntheticConfig { n_docs: 150, n_queries: 6, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs)?)?;
    let scorer = QrelsOracleScorer::new(synthetic.qrels.clone());

    let mut base = PipelineConfig { pipeline: PipelineKind::NlmFeedback, depth: 100, rerank_depth: 20, ..PipelineConfig::default() };
    base.expansion.k_lee = 100;
    let grid = ParamGrid {
        fb_docs: vec![5, 10],
        fb_terms: vec![10, 20],
        original_query_weight: vec![0.3, 0.7],
        beta: vec![0.5],
        lambda: vec![0.2, 0.8],
        k_lee: vec![100],
    };
    println!("full grid has {} points", grid.len());

    let ids: Vec<String> = synthetic.queries.iter().map(|q| q.query_id.clone()).collect();
    let folds = FoldSpec::k_fold(&ids, 3)?;
    let opts = SweepOptions { grid, mode: SearchMode::CoordinateDescent { rounds: 2 }, target: Measure::Recall(100), workers: 2 };
    let report = sweep(&collection, &base, &scorer, &synthetic.queries, &synthetic.qrels, &folds, &opts)?;
    for f in &report.folds {
        println!(
            "fold {}: lambda={} w0={} fb_docs={} train={:.3} ({} points)",
            f.fold_id, f.chosen.lambda, f.chosen.original_query_weight, f.chosen.fb_docs, f.train_score, f.points_evaluated
        );
    }
    println!("held-out mean {}: {:.3}", report.target, report.test_mean);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("sweep_cv failed");
}
