// Plugging in a re-ranker served over HTTP. A toy server on localhost
// answers the JSON scoring protocol; a real deployment would point
// `LEE_SCORER_ENDPOINT` at its model server instead.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use lee::corpus::{Corpus, Document, Query};
use lee::pipeline::{build_scorer, ScorerSpec};
use lee::rerank::{score_documents, LexicalScorer, ScoreRequestJson, ScoreResponseJson};

/// Answer `requests` POSTs with lexical-overlap scores, then exit.
fn serve(listener: TcpListener, requests: usize) {
    for stream in listener.incoming().take(requests) {
        let mut stream = stream.expect("connection");
        let mut reader = BufReader::new(stream.try_clone().expect("clone"));
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).expect("header");
            if line.trim().is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().expect("length");
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).expect("body");
        let req: ScoreRequestJson = serde_json::from_slice(&body).expect("request json");
        let resp = ScoreResponseJson {
            scores: req.passages.iter().map(|p| LexicalScorer::score(&req.query, &p.text)).collect(),
            qid: req.qid,
        };
        let json = serde_json::to_string(&resp).expect("response json");
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}", json.len())
            .expect("write");
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let docs = vec![
        Document { doc_id: "d1".into(), title: String::new(), body: "Tea grows on hills. Coffee grows too.".into(), entity_mentions: vec![] },
        Document { doc_id: "d2".into(), title: String::new(), body: "Green tea and black tea differ.".into(), entity_mentions: vec![] },
    ];
    let corpus = Corpus::with_default_sharding(docs)?;
    let query = Query::new("q", "green tea");

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("http://{}/score", listener.local_addr()?);
    let server = thread::spawn(move || serve(listener, 1));

    // The endpoint could equally come from the environment variable.
    let spec = ScorerSpec { kind: "http".into(), ..ScorerSpec::default() };
    let scorer = build_scorer(&spec, Some(&endpoint))?;
    let (scores, _) = score_documents(&query, &[("d1".into(), 1.0), ("d2".into(), 0.5)], &corpus, scorer.as_ref(), 64)?;
    server.join().expect("server thread");
    for (doc, s) in &scores {
        println!("{doc} {s:.3}");
    }
    assert!(scores[1].1 > scores[0].1);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("external_scorer failed");
}
