//! BM25 passage retrieval, top-k answer recall curves, oracle context
//! extraction, and few-shot prompt construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::eval::{bin_values, normalize_answer, BinCurve, BinScheme};
use crate::util::write_atomic;

/// Maximum passage length in whitespace tokens.
pub const MAX_PASSAGE_TOKENS: usize = 300;

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: u64,
    pub doc_id: u64,
    pub text: String,
    /// Whitespace token count; always > 0.
    pub token_count: u32,
}

/// Split a document into passages: paragraphs separated by blank lines, with
/// paragraphs over [`MAX_PASSAGE_TOKENS`] whitespace tokens further split at
/// sentence boundaries (token-splitting a single oversized sentence as a
/// last resort). The concatenated pieces reproduce the paragraph's token
/// sequence. Passage ids are local to the document, starting at 0.
pub fn segment_passages(document: &Document) -> Vec<Passage> {
    let mut passages = Vec::new();
    for paragraph in split_paragraphs(&document.text) {
        for piece in split_to_limit(paragraph) {
            let token_count = piece.split_whitespace().count();
            if token_count == 0 {
                continue;
            }
            passages.push(Passage {
                passage_id: passages.len() as u64,
                doc_id: document.internal_id,
                text: piece.trim().to_string(),
                token_count: token_count as u32,
            });
        }
    }
    passages
}

/// Contiguous runs of non-blank lines.
fn split_paragraphs(text: &str) -> Vec<&str> {
    let mut paragraphs = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0usize;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                paragraphs.push(&text[s..end]);
            }
        } else {
            if start.is_none() {
                start = Some(line_start);
            }
            end = offset;
        }
    }
    if let Some(s) = start {
        paragraphs.push(&text[s..end]);
    }
    paragraphs
}

/// Split one paragraph into pieces of at most [`MAX_PASSAGE_TOKENS`]
/// whitespace tokens, preferring sentence boundaries.
fn split_to_limit(paragraph: &str) -> Vec<String> {
    if paragraph.split_whitespace().count() <= MAX_PASSAGE_TOKENS {
        return vec![paragraph.to_string()];
    }
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut current_tokens = 0usize;
    for sentence in paragraph.split_sentence_bounds() {
        let sentence_tokens = sentence.split_whitespace().count();
        if sentence_tokens > MAX_PASSAGE_TOKENS {
            if current_tokens > 0 {
                pieces.push(std::mem::take(&mut current));
                current_tokens = 0;
            }
            let tokens: Vec<&str> = sentence.split_whitespace().collect();
            for chunk in tokens.chunks(MAX_PASSAGE_TOKENS) {
                pieces.push(chunk.join(" "));
            }
            continue;
        }
        if current_tokens + sentence_tokens > MAX_PASSAGE_TOKENS && current_tokens > 0 {
            pieces.push(std::mem::take(&mut current));
            current_tokens = 0;
        }
        current.push_str(sentence);
        current_tokens += sentence_tokens;
    }
    if current_tokens > 0 {
        pieces.push(current);
    }
    pieces
}

/// Case-folded word tokens with punctuation stripped; the BM25 tokenizer.
pub fn bm25_tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TermPostings {
    /// (passage index, term frequency), ascending by passage index.
    postings: Vec<(u32, u32)>,
}

/// Okapi BM25 index over a passage set. Immutable after build; queries can
/// run concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    passages: Vec<Passage>,
    /// BM25 token length per passage (tokenizer tokens, not whitespace).
    lengths: Vec<u32>,
    avg_length: f64,
    terms: BTreeMap<String, TermPostings>,
}

/// Build a BM25 index with the standard Okapi statistics.
pub fn build_bm25(passages: Vec<Passage>, k1: f64, b: f64) -> Result<Bm25Index> {
    if passages.is_empty() {
        return Err(Error::EmptyInput("no passages to index".into()));
    }
    if !(k1.is_finite() && k1 >= 0.0) || !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("bad BM25 parameters k1={k1}, b={b}")));
    }
    let mut terms: BTreeMap<String, TermPostings> = BTreeMap::new();
    let mut lengths = Vec::with_capacity(passages.len());
    for (idx, passage) in passages.iter().enumerate() {
        let tokens = bm25_tokenize(&passage.text);
        lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *tf.entry(token).or_insert(0) += 1;
        }
        for (term, freq) in tf {
            terms.entry(term).or_insert_with(|| TermPostings { postings: Vec::new() })
                .postings
                .push((idx as u32, freq));
        }
    }
    let avg_length = lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64;
    Ok(Bm25Index { k1, b, passages, lengths, avg_length, terms })
}

impl Bm25Index {
    pub fn passage_count(&self) -> usize {
        self.passages.len()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn avg_length(&self) -> f64 {
        self.avg_length
    }

    /// Smoothed inverse document frequency, ln(1 + (N - df + 0.5)/(df + 0.5)).
    /// Non-negative for any df, unlike the raw Okapi form which turns
    /// negative for terms in more than half the corpus.
    fn idf(&self, document_frequency: u64) -> f64 {
        let n = self.passages.len() as f64;
        let df = document_frequency as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Rank passages for a query: descending BM25 score, ties broken by
    /// ascending passage id, at most `k` results. Only passages sharing at
    /// least one term with the query are returned.
    pub fn query_topk(&self, question: &str, k: usize) -> Vec<(&Passage, f64)> {
        // Unique query terms in sorted order keep score accumulation
        // deterministic across platforms.
        let query_terms: BTreeSet<String> = bm25_tokenize(question).into_iter().collect();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &query_terms {
            let Some(tp) = self.terms.get(term) else { continue };
            let idf = self.idf(tp.postings.len() as u64);
            for &(passage_idx, tf) in &tp.postings {
                let len = self.lengths[passage_idx as usize] as f64;
                let tf = tf as f64;
                let denom = tf + self.k1 * (1.0 - self.b + self.b * len / self.avg_length);
                *scores.entry(passage_idx).or_insert(0.0) += idf * tf * (self.k1 + 1.0) / denom;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.passages[a.0 as usize].passage_id.cmp(&self.passages[b.0 as usize].passage_id))
        });
        ranked
            .into_iter()
            .take(k)
            .map(|(idx, score)| (&self.passages[idx as usize], score))
            .collect()
    }

    /// Validate invariants after deserialization.
    fn validate(&self) -> Result<()> {
        if self.passages.is_empty() {
            return Err(Error::invalid("BM25 index has no passages"));
        }
        if self.lengths.len() != self.passages.len() {
            return Err(Error::invalid("BM25 lengths do not match passage count"));
        }
        let mean = self.lengths.iter().map(|&l| l as f64).sum::<f64>() / self.lengths.len() as f64;
        if (mean - self.avg_length).abs() > 1e-9 * mean.max(1.0) {
            return Err(Error::invalid("BM25 average length does not match stored lengths"));
        }
        for (term, tp) in &self.terms {
            if tp.postings.len() > self.passages.len() {
                return Err(Error::invalid(format!(
                    "document frequency of {term:?} exceeds passage count"
                )));
            }
            if tp.postings.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::invalid(format!("postings for {term:?} not ascending")));
            }
        }
        Ok(())
    }
}

/// Persist a BM25 index as JSON.
pub fn save_bm25(index: &Bm25Index, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, index)?;
        writeln!(w)
    })
}

pub fn load_bm25(path: &Path) -> Result<Bm25Index> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let index: Bm25Index = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::malformed(path, 0, e.to_string()))?;
    index.validate()?;
    Ok(index)
}

/// True iff any gold alias appears in `text` as a contiguous run of
/// normalized tokens. Aliases that normalize to nothing never match.
pub fn contains_answer(text: &str, golds: &[String]) -> bool {
    let haystack: Vec<String> =
        normalize_answer(text).split_whitespace().map(str::to_string).collect();
    golds.iter().any(|gold| {
        let needle: Vec<String> =
            normalize_answer(gold).split_whitespace().map(str::to_string).collect();
        !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == &needle[..])
    })
}

/// Input record to [`recall_curve`]: one linked question with its gold
/// aliases and relevant-document count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallRecord {
    pub id: String,
    pub question: String,
    pub golds: Vec<String>,
    pub relevant_doc_count: u64,
}

/// Top-k answer recall per log-spaced relevant-document-count bin, for each
/// requested k. A question is recalled at k iff any of its top-k passages
/// contains a gold alias under [`contains_answer`].
pub fn recall_curve(
    records: &[RecallRecord],
    index: &Bm25Index,
    ks: &[usize],
    scheme: &BinScheme,
) -> Result<Vec<(usize, BinCurve)>> {
    use rayon::prelude::*;

    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid("k values must be >= 1"));
    }
    let max_k = *ks.iter().max().expect("non-empty ks");
    // For each record, the rank of the first answer-bearing passage.
    let first_hit: Vec<Option<usize>> = records
        .par_iter()
        .map(|record| {
            index
                .query_topk(&record.question, max_k)
                .iter()
                .position(|(p, _)| contains_answer(&p.text, &record.golds))
        })
        .collect();
    let mut curves = Vec::with_capacity(ks.len());
    for &k in ks {
        let values: Vec<(u64, f64)> = records
            .iter()
            .zip(&first_hit)
            .map(|(record, hit)| {
                let recalled = hit.is_some_and(|rank| rank < k);
                (record.relevant_doc_count, if recalled { 1.0 } else { 0.0 })
            })
            .collect();
        curves.push((k, bin_values(&values, scheme)?));
    }
    Ok(curves)
}

/// Extract the window of [`MAX_PASSAGE_TOKENS`] whitespace tokens around the
/// first normalized occurrence of the gold answer in a page, clipped at the
/// page boundaries. Errors when the answer does not occur.
pub fn oracle_context(page_text: &str, gold_answer: &str) -> Result<String> {
    let tokens: Vec<(usize, &str)> = whitespace_token_spans(page_text);
    let needle: Vec<String> =
        normalize_answer(gold_answer).split_whitespace().map(str::to_string).collect();
    if needle.is_empty() {
        return Err(Error::invalid(format!(
            "gold answer {gold_answer:?} normalizes to nothing"
        )));
    }
    // Normalized tokens that survive normalization, with their original
    // token index (articles and pure punctuation drop out).
    let mut normalized: Vec<(String, usize)> = Vec::with_capacity(tokens.len());
    for (i, &(_, tok)) in tokens.iter().enumerate() {
        let n = normalize_answer(tok);
        if !n.is_empty() {
            normalized.push((n, i));
        }
    }
    let hit = normalized
        .windows(needle.len())
        .position(|w| w.iter().map(|(t, _)| t.as_str()).eq(needle.iter().map(String::as_str)));
    let Some(pos) = hit else {
        return Err(Error::invalid(format!(
            "gold answer {gold_answer:?} not found in page"
        )));
    };
    let occ_start = normalized[pos].1;
    let occ_end = normalized[pos + needle.len() - 1].1;

    let half = MAX_PASSAGE_TOKENS / 2;
    let mut start = occ_start.saturating_sub(half);
    let mut end = (start + MAX_PASSAGE_TOKENS).min(tokens.len());
    if end - start < MAX_PASSAGE_TOKENS {
        start = end.saturating_sub(MAX_PASSAGE_TOKENS);
    }
    end = end.max((occ_end + 1).min(tokens.len()));

    let byte_start = tokens[start].0;
    let (last_start, last_tok) = tokens[end - 1];
    let byte_end = last_start + last_tok.len();
    Ok(page_text[byte_start..byte_end].to_string())
}

fn whitespace_token_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for chunk in text.split_inclusive(char::is_whitespace) {
        let trimmed = chunk.trim_end_matches(char::is_whitespace);
        if !trimmed.is_empty() {
            out.push((offset, trimmed));
        }
        offset += chunk.len();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ClosedBook,
    Bm25,
    Oracle,
}

/// One in-context example: `answers[0]` is printed after `A:`, any alias
/// satisfies the answer-containment check in BM25 mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptExample {
    pub question: String,
    pub answers: Vec<String>,
    pub passages: Vec<String>,
}

/// The test-side input: the question and, for retrieval modes, its context
/// passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptQuery {
    pub question: String,
    pub passages: Vec<String>,
}

/// Assemble a few-shot prompt of `Q:`/`A:` blocks ending in the unanswered
/// test block.
///
/// Closed-book blocks are `Q: {q}\nA: {a}\n`; retrieval modes prefix each
/// block (including the test block) with its passages, one per line. In BM25
/// mode every in-context example must have at least one passage containing
/// one of its answers; callers are expected to swap out violating examples.
pub fn build_prompt(
    incontext: &[PromptExample],
    test: &PromptQuery,
    mode: PromptMode,
    shots: usize,
) -> Result<String> {
    if incontext.len() < shots {
        return Err(Error::invalid(format!(
            "{shots} shots requested but only {} in-context examples given",
            incontext.len()
        )));
    }
    let with_passages = matches!(mode, PromptMode::Bm25 | PromptMode::Oracle);
    let mut prompt = String::new();
    for (i, example) in incontext.iter().take(shots).enumerate() {
        if example.answers.is_empty() {
            return Err(Error::invalid(format!("in-context example {i} has no answers")));
        }
        if with_passages {
            if example.passages.is_empty() {
                return Err(Error::invalid(format!(
                    "in-context example {i} has no passages in {mode:?} mode"
                )));
            }
            if mode == PromptMode::Bm25
                && !example.passages.iter().any(|p| contains_answer(p, &example.answers))
            {
                return Err(Error::invalid(format!(
                    "no passage of in-context example {i} contains its answer; swap the example"
                )));
            }
            for passage in &example.passages {
                prompt.push_str(passage);
                prompt.push('\n');
            }
        }
        prompt.push_str("Q: ");
        prompt.push_str(&example.question);
        prompt.push_str("\nA: ");
        prompt.push_str(&example.answers[0]);
        prompt.push('\n');
    }
    if with_passages {
        if test.passages.is_empty() {
            return Err(Error::invalid(format!("test question has no passages in {mode:?} mode")));
        }
        for passage in &test.passages {
            prompt.push_str(passage);
            prompt.push('\n');
        }
    }
    prompt.push_str("Q: ");
    prompt.push_str(&test.question);
    prompt.push_str("\nA:");
    Ok(prompt)
}
