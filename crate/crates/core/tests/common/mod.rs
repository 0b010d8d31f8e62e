//! Independent oracles shared by the integration and acceptance suites.
//!
//! Everything here recomputes expected values by a different route than the
//! library: linear scans instead of indexes, exhaustive span enumeration
//! instead of capped longest-match, normal equations instead of centered
//! sums, direct formula evaluation instead of posting-list accumulation.

#![allow(dead_code)]

use std::collections::BTreeSet;

use unicode_segmentation::UnicodeSegmentation;

// ---------------------------------------------------------------------------
// Brute-force co-occurrence counting
// ---------------------------------------------------------------------------

/// Postings recovered by scanning every document for every entity.
pub struct BruteIndex {
    entities: Vec<String>,
    postings: Vec<Vec<u64>>,
}

impl BruteIndex {
    pub fn build(docs: &[BTreeSet<String>], entities: &[String]) -> Self {
        let postings = entities
            .iter()
            .map(|e| {
                docs.iter()
                    .enumerate()
                    .filter(|(_, set)| set.contains(e))
                    .map(|(i, _)| i as u64)
                    .collect()
            })
            .collect();
        BruteIndex { entities: entities.to_vec(), postings }
    }

    fn lookup(&self, entity: &str) -> &[u64] {
        self.entities
            .iter()
            .position(|e| e == entity)
            .map(|i| self.postings[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn count(&self, entity: &str) -> u64 {
        self.lookup(entity).len() as u64
    }

    /// Two-pointer merge of the scanned lists.
    pub fn pair_docs(&self, e1: &str, e2: &str) -> Vec<u64> {
        if e1 == e2 {
            return self.lookup(e1).to_vec();
        }
        let (a, b) = (self.lookup(e1), self.lookup(e2));
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Exhaustive longest-match linking oracle
// ---------------------------------------------------------------------------

/// Normalization re-derived char by char: lowercase, collapse whitespace.
pub fn oracle_normalize(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lc in c.to_lowercase() {
                out.push(lc);
            }
        }
    }
    out
}

/// Greedy longest-match simulated by brute force over all token spans, with
/// candidate selection by linear scan of the raw rows.
pub fn oracle_link(
    rows: &[(String, String, f64)],
    min_surface_chars: usize,
    text: &str,
) -> Vec<(String, usize, usize)> {
    let tokens: Vec<(usize, &str)> = text.unicode_word_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched: Option<(usize, String, usize, usize)> = None;
        for len in (1..=tokens.len() - i).rev() {
            let start = tokens[i].0;
            let (last_start, last_tok) = tokens[i + len - 1];
            let end = last_start + last_tok.len();
            let span = oracle_normalize(&text[start..end]);
            // Best candidate for this surface by exhaustive row scan.
            let mut best: Option<(String, f64)> = None;
            for (surface, entity, prior) in rows {
                let normalized = oracle_normalize(surface);
                if normalized.chars().count() < min_surface_chars || normalized != span {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((be, bp)) => {
                        prior > bp || (prior == bp && entity < be)
                    }
                };
                if better {
                    best = Some((entity.clone(), *prior));
                }
            }
            if let Some((entity, _)) = best {
                matched = Some((len, entity, start, end));
                break;
            }
        }
        match matched {
            Some((len, entity, start, end)) => {
                out.push((entity, start, end));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

// ---------------------------------------------------------------------------
// SQuAD-convention answer normalization oracle
// ---------------------------------------------------------------------------

/// The four-step convention implemented as successive string rewrites:
/// lowercase, strip punctuation, blank out whole-word articles, collapse
/// whitespace.
pub fn oracle_squad_normalize(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mut depunct = String::new();
    for c in lowered.chars() {
        if !(c.is_alphanumeric() || c.is_whitespace()) {
            continue;
        }
        depunct.push(c);
    }
    // Replace article words with a space, detecting boundaries by hand.
    let chars: Vec<char> = depunct.chars().collect();
    let mut no_articles = String::new();
    let mut i = 0;
    while i < chars.len() {
        let mut replaced = false;
        if i == 0 || chars[i - 1].is_whitespace() {
            for article in ["the", "an", "a"] {
                let len = article.chars().count();
                if i + len <= chars.len()
                    && chars[i..i + len].iter().collect::<String>() == article
                    && (i + len == chars.len() || chars[i + len].is_whitespace())
                {
                    no_articles.push(' ');
                    i += len;
                    replaced = true;
                    break;
                }
            }
        }
        if !replaced {
            no_articles.push(chars[i]);
            i += 1;
        }
    }
    let mut fixed = String::new();
    for word in no_articles.split_whitespace() {
        if !fixed.is_empty() {
            fixed.push(' ');
        }
        fixed.push_str(word);
    }
    fixed
}

// ---------------------------------------------------------------------------
// Closed-form least squares via normal equations
// ---------------------------------------------------------------------------

/// Solve [[n, Sx], [Sx, Sxx]] beta = [Sy, Sxy] by 2x2 inversion; returns
/// (slope, intercept, r_squared).
pub fn oracle_ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let mean_y = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

// ---------------------------------------------------------------------------
// Direct-formula BM25 oracle
// ---------------------------------------------------------------------------

/// Score one (query, passage) pair by scanning raw texts: no index, no
/// accumulators.
pub fn oracle_bm25_score(
    passages: &[String],
    passage_idx: usize,
    query: &str,
    k1: f64,
    b: f64,
) -> f64 {
    let tokenize = |text: &str| -> Vec<String> {
        text.unicode_words().map(str::to_lowercase).collect()
    };
    let n = passages.len() as f64;
    let lengths: Vec<usize> = passages.iter().map(|p| tokenize(p).len()).collect();
    let avg = lengths.iter().sum::<usize>() as f64 / n;
    let passage_tokens = tokenize(&passages[passage_idx]);
    let mut terms: Vec<String> = tokenize(query);
    terms.sort();
    terms.dedup();
    let mut score = 0.0;
    for term in &terms {
        let tf = passage_tokens.iter().filter(|t| *t == term).count() as f64;
        if tf == 0.0 {
            continue;
        }
        let df = passages
            .iter()
            .filter(|p| tokenize(p).iter().any(|t| t == term))
            .count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let len = lengths[passage_idx] as f64;
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
    }
    score
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// floor(log10(count)) recomputed through the decimal string length.
pub fn oracle_count_bin(count: u64) -> u32 {
    assert!(count >= 1);
    count.to_string().len() as u32 - 1
}
