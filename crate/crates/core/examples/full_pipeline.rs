// End-to-end runs of the three pipelines on a synthetic collection, with
// per-stage run files written to a temporary directory.

use lee::collection::Collection;
use lee::corpus::Corpus;
use lee::eval::{evaluate_run, Measure};
use lee::pipeline::{run_pipeline, stages, PipelineConfig, PipelineKind};
use lee::rerank::QrelsOracleScorer;
use lee::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let synthetic = generate(&SyntheticConfig { n_docs: 200, n_queries: 5, ..SyntheticConfig::default() });
    let collection = Collection::build(Corpus::with_default_sharding(synthetic.docs)?)?;
    let scorer = QrelsOracleScorer::new(synthetic.qrels.clone());
    let out = tempfile::tempdir()?;

    for kind in [PipelineKind::Traditional, PipelineKind::NlmFeedback, PipelineKind::Adaptive] {
        let mut config = PipelineConfig { pipeline: kind, depth: 100, rerank_depth: 50, budget: 50, ..PipelineConfig::default() };
        config.expansion.k_lee = 100;
        let output = run_pipeline(&collection, &config, &scorer, &synthetic.queries)?;
        assert!(output.failures.is_empty());
        let files = output.write(out.path().join(kind.to_string()))?;
        for stage in stages(kind) {
            let report = evaluate_run(&output.stage_runs(stage), &synthetic.qrels, &[Measure::Recall(50)], 100)?;
            println!("{:<20} {stage:<16} R@50 {:.3}", kind.to_string(), report.mean(Measure::Recall(50)).unwrap_or(0.0));
        }
        println!("{} files written", files.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("full_pipeline failed");
}
