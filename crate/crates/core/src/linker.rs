//! Dictionary entity linking: resolve surface forms in text to entity ids.
//!
//! The linker is a deterministic gazetteer matcher. It walks the word tokens
//! of a text left to right and greedily takes the longest token span whose
//! normalized text equals a gazetteer surface form; among candidates for that
//! surface the highest prior wins, with ties broken by lexicographically
//! smallest entity id. Matched spans are consumed, so mentions never overlap.
//!
//! Externally produced annotations (from any other linker) can be imported
//! from jsonl instead, via [`import_annotations`].

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{read_shard_documents, CorpusManifest};
use crate::error::{Error, Result};
use crate::util::for_each_line;

/// Surface forms shorter than this after normalization are dropped at load
/// time; single characters are overwhelmingly noise.
pub const MIN_SURFACE_CHARS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity_id: String,
    pub prior: f64,
}

/// Mapping from normalized surface form to entity candidates, each with a
/// prior in [0, 1]. Candidates for one surface are kept sorted best-first
/// (prior descending, entity id ascending), so the first candidate is the
/// link target.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    surfaces: HashMap<String, Vec<Candidate>>,
    max_surface_tokens: usize,
}

/// One linked span of a document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityMention {
    pub entity_id: String,
    /// Byte span into the original text; spans of the mentions returned for
    /// one document never overlap.
    pub start: usize,
    pub end: usize,
    /// The normalized surface form that matched.
    pub surface: String,
}

/// The per-document record feeding the co-occurrence index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedDocument {
    #[serde(rename = "doc_id")]
    pub internal_id: u64,
    pub entities: BTreeSet<String>,
}

/// Case-fold and collapse whitespace runs to single spaces.
pub fn normalize_surface(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, word) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

impl Gazetteer {
    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    /// Candidates for a normalized surface form, best first.
    pub fn candidates(&self, normalized_surface: &str) -> Option<&[Candidate]> {
        self.surfaces.get(normalized_surface).map(|v| v.as_slice())
    }

    /// Build a gazetteer from (surface, entity, prior) rows. Surfaces are
    /// normalized; rows whose surface is shorter than [`MIN_SURFACE_CHARS`]
    /// after normalization are dropped; duplicate (surface, entity) rows keep
    /// the max prior.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, f64)>,
    {
        let mut surfaces: HashMap<String, Vec<Candidate>> = HashMap::new();
        for (surface, entity_id, prior) in rows {
            if !(0.0..=1.0).contains(&prior) {
                return Err(Error::invalid(format!(
                    "prior {prior} for surface {surface:?} outside [0,1]"
                )));
            }
            if entity_id.is_empty() {
                return Err(Error::invalid(format!("empty entity id for surface {surface:?}")));
            }
            let normalized = normalize_surface(&surface);
            if normalized.chars().count() < MIN_SURFACE_CHARS {
                continue;
            }
            let candidates = surfaces.entry(normalized).or_default();
            match candidates.iter_mut().find(|c| c.entity_id == entity_id) {
                Some(existing) => existing.prior = existing.prior.max(prior),
                None => candidates.push(Candidate { entity_id, prior }),
            }
        }
        let mut max_surface_tokens = 0;
        for (surface, candidates) in surfaces.iter_mut() {
            candidates.sort_by(|a, b| {
                b.prior
                    .total_cmp(&a.prior)
                    .then_with(|| a.entity_id.cmp(&b.entity_id))
            });
            let total: f64 = candidates.iter().map(|c| c.prior).sum();
            if total > 1.0 + 1e-9 {
                return Err(Error::invalid(format!(
                    "priors for surface {surface:?} sum to {total}, must be <= 1"
                )));
            }
            max_surface_tokens = max_surface_tokens.max(surface.unicode_words().count());
        }
        Ok(Gazetteer { surfaces, max_surface_tokens })
    }
}

/// Load a gazetteer from a TSV file of `surface<TAB>entity_id<TAB>prior`
/// lines.
pub fn load_gazetteer(path: &Path) -> Result<Gazetteer> {
    let mut rows = Vec::new();
    for_each_line(path, |line_no, line| {
        if line.is_empty() {
            return Ok(());
        }
        let mut fields = line.split('\t');
        let (surface, entity, prior) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(e), Some(p), None) => (s, e, p),
            _ => {
                return Err(Error::malformed(
                    path,
                    line_no,
                    "expected 3 tab-separated fields: surface, entity_id, prior",
                ))
            }
        };
        let prior: f64 = prior
            .trim()
            .parse()
            .map_err(|e| Error::malformed(path, line_no, format!("bad prior: {e}")))?;
        if !(0.0..=1.0).contains(&prior) {
            return Err(Error::malformed(path, line_no, format!("prior {prior} outside [0,1]")));
        }
        if entity.is_empty() {
            return Err(Error::malformed(path, line_no, "empty entity id"));
        }
        rows.push((surface.to_string(), entity.to_string(), prior));
        Ok(())
    })?;
    Gazetteer::from_rows(rows)
}

/// Link one text: greedy longest match over word-token boundaries, left to
/// right. A span of tokens matches when the normalized slice from the first
/// token's start to the last token's end equals a gazetteer surface form.
pub fn link_text(gazetteer: &Gazetteer, text: &str) -> Vec<EntityMention> {
    if gazetteer.is_empty() {
        return Vec::new();
    }
    let tokens: Vec<(usize, &str)> = text.unicode_word_indices().collect();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = gazetteer.max_surface_tokens.min(tokens.len() - i);
        let mut advanced = false;
        for len in (1..=longest).rev() {
            let start = tokens[i].0;
            let (last_start, last_tok) = tokens[i + len - 1];
            let end = last_start + last_tok.len();
            let surface = normalize_surface(&text[start..end]);
            if let Some(candidates) = gazetteer.candidates(&surface) {
                mentions.push(EntityMention {
                    entity_id: candidates[0].entity_id.clone(),
                    start,
                    end,
                    surface,
                });
                i += len;
                advanced = true;
                break;
            }
        }
        if !advanced {
            i += 1;
        }
    }
    mentions
}

/// Deduplicated entity set of one text.
pub fn link_entity_set(gazetteer: &Gazetteer, text: &str) -> BTreeSet<String> {
    link_text(gazetteer, text).into_iter().map(|m| m.entity_id).collect()
}

fn link_shard(
    gazetteer: &Gazetteer,
    manifest: &CorpusManifest,
    shard_idx: usize,
) -> Result<Vec<LinkedDocument>> {
    let docs = read_shard_documents(manifest, shard_idx)?;
    Ok(docs
        .par_iter()
        .map(|doc| LinkedDocument {
            internal_id: doc.internal_id,
            entities: link_entity_set(gazetteer, &doc.text),
        })
        .collect())
}

/// Link every document of the corpus, one [`LinkedDocument`] per document in
/// internal-id order. One shard is buffered at a time; documents within a
/// shard are linked in parallel, with results identical to a sequential run.
pub fn link_corpus<'a>(
    gazetteer: &'a Gazetteer,
    manifest: &'a CorpusManifest,
) -> impl Iterator<Item = Result<LinkedDocument>> + 'a {
    let mut shard_idx = 0usize;
    let mut buf: std::vec::IntoIter<LinkedDocument> = Vec::new().into_iter();
    let mut failed = false;
    std::iter::from_fn(move || loop {
        if failed {
            return None;
        }
        if let Some(doc) = buf.next() {
            return Some(Ok(doc));
        }
        if shard_idx >= manifest.shards.len() {
            return None;
        }
        match link_shard(gazetteer, manifest, shard_idx) {
            Ok(docs) => {
                shard_idx += 1;
                buf = docs.into_iter();
            }
            Err(e) => {
                failed = true;
                return Some(Err(e));
            }
        }
    })
}

/// Convenience wrapper collecting [`link_corpus`] into one vector.
pub fn link_corpus_all(
    gazetteer: &Gazetteer,
    manifest: &CorpusManifest,
) -> Result<Vec<LinkedDocument>> {
    link_corpus(gazetteer, manifest).collect()
}

/// Import externally produced annotations from a jsonl file of
/// `{"doc_id": integer, "entities": [string, ...]}` lines. Entities are
/// deduplicated; doc ids are validated against the manifest when given.
pub fn import_annotations(
    path: &Path,
    manifest: Option<&CorpusManifest>,
) -> Result<Vec<LinkedDocument>> {
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        if line.trim().is_empty() {
            return Ok(());
        }
        let doc: LinkedDocument = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if doc.entities.iter().any(|e| e.is_empty()) {
            return Err(Error::malformed(path, line_no, "empty entity id"));
        }
        if let Some(m) = manifest {
            if doc.internal_id >= m.total_documents {
                return Err(Error::malformed(
                    path,
                    line_no,
                    format!(
                        "doc_id {} out of range (corpus has {} documents)",
                        doc.internal_id, m.total_documents
                    ),
                ));
            }
        }
        out.push(doc);
        Ok(())
    })?;
    Ok(out)
}
