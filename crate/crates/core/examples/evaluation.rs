// NDCG, MAP and recall over runs, plus a paired t-test between two runs.

use lee::eval::{compare_reports, evaluate_run, Measure, Qrels};
use lee::run::{RunEntry, ScoredRun};

fn run(qid: &str, ids: &[&str]) -> ScoredRun {
    let n = ids.len() as f64;
    let entries = ids.iter().enumerate().map(|(i, id)| RunEntry::new(*id, n - i as f64, "demo")).collect();
    ScoredRun::new(qid, entries).expect("valid run")
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let qrels = Qrels::from_triples([
        ("1", "a", 2),
        ("1", "b", 1),
        ("2", "c", 1),
        ("2", "d", 1),
        ("3", "e", 1),
    ]);
    let good = vec![run("1", &["a", "b", "x"]), run("2", &["c", "y", "d"]), run("3", &["e", "z"])];
    let poor = vec![run("1", &["x", "b", "a"]), run("2", &["y", "z", "c"]), run("3", &["z", "e"])];
    let measures = [Measure::Ndcg(None), Measure::Map, Measure::Recall(2)];

    let a = evaluate_run(&good, &qrels, &measures, 1000)?;
    let b = evaluate_run(&poor, &qrels, &measures, 1000)?;
    print!("{}", a.to_tsv());
    for m in measures {
        let t = compare_reports(&a, &b, m)?;
        println!("{m}: {:.4} vs {:.4}, t={:.3} p={:.3}", a.mean(m).unwrap(), b.mean(m).unwrap(), t.t, t.p);
    }
    assert_eq!(a.value("1", Measure::Ndcg(None)), Some(1.0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("evaluation failed");
}
