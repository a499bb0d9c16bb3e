// Brute-force reference evaluators. Each works from raw token lists by
// direct summation and shares no code with the library beyond its types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

/// `(unit_id, tokens)` pairs.
pub type Units = Vec<(String, Vec<String>)>;

pub fn random_units<R: Rng>(rng: &mut R, max_units: usize, vocab: usize, prefix: &str, max_len: usize) -> Units {
    let n = rng.gen_range(1..=max_units);
    let v = rng.gen_range(1..=vocab);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(0..=max_len);
            let toks = (0..len).map(|_| format!("{prefix}{:02}", rng.gen_range(0..v))).collect();
            (format!("u{i:02}"), toks)
        })
        .collect()
}

pub fn count(tokens: &[String], term: &str) -> usize {
    tokens.iter().filter(|t| *t == term).count()
}

pub fn vocabulary(units: &Units) -> BTreeSet<String> {
    units.iter().flat_map(|(_, t)| t.iter().cloned()).collect()
}

pub fn idf(units: &Units, term: &str) -> f64 {
    let n = units.len() as f64;
    let df = units.iter().filter(|(_, t)| t.iter().any(|x| x == term)).count() as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Top `k` units by score (ties by id), scores divided by their sum; all
/// zero gives a uniform distribution.
pub fn feedback(scores: &[(String, f64)], k: usize) -> Vec<(String, f64)> {
    let mut top = scores.to_vec();
    top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    top.truncate(k);
    let total: f64 = top.iter().map(|x| x.1).sum();
    let n = top.len() as f64;
    top.into_iter()
        .map(|(id, s)| (id, if total > 0.0 { s / total } else { 1.0 / n }))
        .collect()
}

fn tokens<'a>(units: &'a Units, id: &str) -> &'a [String] {
    &units.iter().find(|(u, _)| u == id).expect("feedback unit in fixture").1
}

/// Unnormalized unigram weights over every term of the feedback units.
pub fn unigram(units: &Units, fb: &[(String, f64)], use_idf: bool) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (id, p) in fb {
        let toks = tokens(units, id);
        if toks.is_empty() {
            continue;
        }
        let distinct: BTreeSet<&String> = toks.iter().collect();
        for w in distinct {
            let factor = if use_idf { idf(units, w) } else { 1.0 };
            *out.entry(w.clone()).or_insert(0.0) += p * count(toks, w) as f64 / toks.len() as f64 * factor;
        }
    }
    out
}

/// Entity dependence over every unordered pair of the entity vocabulary;
/// pairs that never share a feedback unit are left out.
pub fn pairs(units: &Units, fb: &[(String, f64)]) -> BTreeMap<(String, String), f64> {
    let vocab: Vec<String> = vocabulary(units).into_iter().collect();
    let mut out = BTreeMap::new();
    for i in 0..vocab.len() {
        for j in (i + 1)..vocab.len() {
            let (e1, e2) = (&vocab[i], &vocab[j]);
            let mut total = 0.0;
            let mut seen = false;
            for (id, p) in fb {
                let toks = tokens(units, id);
                let (f1, f2) = (count(toks, e1), count(toks, e2));
                if f1 > 0 && f2 > 0 {
                    seen = true;
                    total += p * (f1 + f2) as f64 / toks.len() as f64 * idf(units, e1) * idf(units, e2);
                }
            }
            if seen {
                out.insert((e1.clone(), e2.clone()), total);
            }
        }
    }
    out
}

fn normalized(m: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let s: f64 = m.values().sum();
    if s > 0.0 {
        m.into_iter().map(|(k, v)| (k, v / s)).collect()
    } else {
        m
    }
}

/// `β · pair-sum + (1 − β) · unigram`, each component normalized first.
pub fn entity_mixture(units: &Units, fb: &[(String, f64)], beta: f64, use_idf: bool) -> BTreeMap<String, f64> {
    let uni = normalized(unigram(units, fb, use_idf));
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for ((a, b), w) in pairs(units, fb) {
        *sums.entry(a).or_insert(0.0) += w;
        *sums.entry(b).or_insert(0.0) += w;
    }
    let pair = normalized(sums);
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (e, w) in uni {
        *out.entry(e).or_insert(0.0) += (1.0 - beta) * w;
    }
    for (e, w) in pair {
        *out.entry(e).or_insert(0.0) += beta * w;
    }
    out
}

/// Check a truncated, renormalized model against unnormalized oracle
/// weights. Near-ties at the truncation boundary may be broken either way.
pub fn check_model(model: &[(String, f64)], raw: &BTreeMap<String, f64>, fb_terms: usize, tol: f64) -> Result<(), String> {
    let positive: Vec<(&String, f64)> = raw.iter().filter(|(_, w)| **w > 0.0).map(|(t, w)| (t, *w)).collect();
    let expect_len = fb_terms.min(positive.len());
    if model.len() != expect_len {
        return Err(format!("model has {} terms, expected {expect_len}", model.len()));
    }
    let kept: BTreeSet<&str> = model.iter().map(|(t, _)| t.as_str()).collect();
    let floor = model
        .iter()
        .map(|(t, _)| raw.get(t).copied().ok_or_else(|| format!("term {t} unknown to the oracle")))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    for (t, w) in &positive {
        if !kept.contains(t.as_str()) && *w > floor + 1e-12 {
            return Err(format!("dropped {t} ({w}) outranks a kept term ({floor})"));
        }
    }
    let total: f64 = model.iter().map(|(t, _)| raw[t]).sum();
    for (t, w) in model {
        let want = raw[t] / total;
        if (w - want).abs() > tol {
            return Err(format!("{t}: module {w} vs oracle {want}"));
        }
    }
    Ok(())
}

/// BM25 of every unit matching a positively weighted term, sorted by score
/// then id. Arithmetic follows the textbook formula term by term in query
/// order.
pub fn bm25(units: &Units, query: &[(String, f64)], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = units.len() as f64;
    let total: usize = units.iter().map(|(_, t)| t.len()).sum();
    let avg = total as f64 / n;
    let mut out = Vec::new();
    for (id, toks) in units {
        let mut score = 0.0;
        let mut hit = false;
        for (term, weight) in query {
            if *weight <= 0.0 {
                continue;
            }
            let tf = count(toks, term) as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let norm = k1 * (1.0 - b + b * toks.len() as f64 / avg);
            score += weight * idf(units, term) * tf * (k1 + 1.0) / (tf + norm);
        }
        if hit {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Duet fusion: each side's BM25 list to `k`, min-max normalized, mixed by
/// λ with absent documents counted as 0.
pub fn duet(
    words: &Units,
    entities: &Units,
    wq: &[(String, f64)],
    eq: &[(String, f64)],
    lambda: f64,
    k: usize,
    depth: usize,
) -> Vec<(String, f64)> {
    let side = |units: &Units, q: &[(String, f64)]| -> BTreeMap<String, f64> {
        let mut list = bm25(units, q, 0.9, 0.4);
        list.truncate(k);
        let lo = list.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let hi = list.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        list.into_iter()
            .map(|(id, s)| (id, if hi > lo { (s - lo) / (hi - lo) } else { 1.0 }))
            .collect()
    };
    let mut fused: BTreeMap<String, f64> = BTreeMap::new();
    if lambda > 0.0 {
        for (id, s) in side(words, wq) {
            *fused.entry(id).or_insert(0.0) += lambda * s;
        }
    }
    if lambda < 1.0 {
        for (id, s) in side(entities, eq) {
            *fused.entry(id).or_insert(0.0) += (1.0 - lambda) * s;
        }
    }
    let mut out: Vec<(String, f64)> = fused.into_iter().collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out.truncate(depth);
    out
}

/// A ranking agrees with oracle scores if every id carries its oracle score
/// and consecutive entries are ordered, allowing near-equal scores to come
/// in either order.
pub fn check_ranking(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("{} results, oracle has {}", got.len(), want.len()));
    }
    let oracle: BTreeMap<&str, f64> = want.iter().map(|(d, s)| (d.as_str(), *s)).collect();
    for (d, s) in got {
        let o = oracle.get(d.as_str()).ok_or_else(|| format!("{d} not in oracle ranking"))?;
        if (s - o).abs() > tol {
            return Err(format!("{d}: score {s} vs oracle {o}"));
        }
    }
    for w in got.windows(2) {
        let (a, b) = (oracle[w[0].0.as_str()], oracle[w[1].0.as_str()]);
        if a < b - tol || ((a - b).abs() <= 1e-15 && w[0].0 > w[1].0) {
            return Err(format!("{} ranked above {}", w[0].0, w[1].0));
        }
    }
    Ok(())
}

/// Random weighted query over `vocab` terms named `{prefix}NN`.
pub fn random_query<R: Rng>(rng: &mut R, prefix: &str, vocab: usize) -> Vec<(String, f64)> {
    let mut ids: Vec<usize> = (0..vocab.max(1)).collect();
    ids.shuffle(rng);
    let n = rng.gen_range(1..=ids.len().min(5));
    ids[..n]
        .iter()
        .map(|i| (format!("{prefix}{i:02}"), f64::from(rng.gen_range(1..=4u32)) / 4.0))
        .collect()
}
