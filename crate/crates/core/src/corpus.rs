//! Corpus ingestion: sharded text corpora with stable, dense internal
//! document ids.
//!
//! A corpus is an ordered list of shards. Ingestion assigns internal ids in
//! (shard order, record order), skipping records whose text is empty or
//! whitespace-only. The resulting [`CorpusManifest`] is immutable and is the
//! sole handle downstream stages use to read documents.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line with fields `{"id": optional string, "text": string}`.
    Jsonl,
    /// Each regular file under a shard directory is one document, ordered by
    /// lexicographic path.
    Textdir,
}

/// A single text unit of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    /// Dense id in ingestion order, unique and contiguous from 0.
    pub internal_id: u64,
    pub external_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: PathBuf,
    /// Internal id of the first document in this shard.
    pub offset: u64,
    /// Number of non-skipped documents in this shard.
    pub count: u64,
}

/// Immutable description of an ingested corpus. Safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: CorpusFormat,
    pub total_documents: u64,
    /// Records dropped because their text was empty or whitespace-only.
    pub skipped_records: u64,
    /// Shards that contributed at least one document, in ingestion order.
    pub shards: Vec<ShardEntry>,
}

#[derive(Deserialize, Serialize)]
struct JsonlRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
}

/// Ingest a corpus and assign internal document ids.
///
/// Ids are assigned in (shard order, record order) and are deterministic
/// across runs on byte-identical inputs. Shards that contribute zero
/// documents are dropped from the manifest so shard offsets stay strictly
/// increasing.
pub fn ingest_corpus(paths: &[PathBuf], format: CorpusFormat) -> Result<CorpusManifest> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no corpus shards given".into()));
    }
    let mut shards = Vec::new();
    let mut next_id = 0u64;
    let mut skipped = 0u64;
    for path in paths {
        let (count, skips) = match format {
            CorpusFormat::Jsonl => count_jsonl_shard(path)?,
            CorpusFormat::Textdir => count_textdir_shard(path)?,
        };
        skipped += skips;
        if count == 0 {
            continue;
        }
        shards.push(ShardEntry { path: path.clone(), offset: next_id, count });
        next_id += count;
    }
    if next_id == 0 {
        return Err(Error::EmptyInput(format!(
            "no non-empty documents found in {} shard(s)",
            paths.len()
        )));
    }
    Ok(CorpusManifest { format, total_documents: next_id, skipped_records: skipped, shards })
}

/// Fetch a single document by internal id. Scans the owning shard.
pub fn get_document(manifest: &CorpusManifest, internal_id: u64) -> Result<Document> {
    if internal_id >= manifest.total_documents {
        return Err(Error::DocIdOutOfRange { id: internal_id, total: manifest.total_documents });
    }
    let shard_idx = manifest
        .shards
        .partition_point(|s| s.offset + s.count <= internal_id);
    let shard = &manifest.shards[shard_idx];
    let mut found = None;
    read_shard(manifest.format, shard, &mut |doc| {
        let keep_going = doc.internal_id < internal_id;
        if doc.internal_id == internal_id {
            found = Some(doc);
        }
        Ok(keep_going)
    })?;
    found.ok_or_else(|| {
        Error::invalid(format!(
            "shard {} changed on disk: document {internal_id} no longer present",
            shard.path.display()
        ))
    })
}

/// Read every document of one shard, in internal-id order.
pub fn read_shard_documents(manifest: &CorpusManifest, shard_idx: usize) -> Result<Vec<Document>> {
    let shard = &manifest.shards[shard_idx];
    let mut docs = Vec::with_capacity(shard.count as usize);
    read_shard(manifest.format, shard, &mut |doc| {
        docs.push(doc);
        Ok(true)
    })?;
    if docs.len() as u64 != shard.count {
        return Err(Error::invalid(format!(
            "shard {} changed on disk: expected {} documents, found {}",
            shard.path.display(),
            shard.count,
            docs.len()
        )));
    }
    Ok(docs)
}

/// Stream all documents of the corpus in internal-id order. Reads one shard
/// at a time.
pub fn stream_documents(
    manifest: &CorpusManifest,
) -> impl Iterator<Item = Result<Document>> + '_ {
    let mut shard_idx = 0usize;
    let mut buf: std::vec::IntoIter<Document> = Vec::new().into_iter();
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
        match read_shard_documents(manifest, shard_idx) {
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

impl CorpusManifest {
    /// Check the structural invariants: offsets strictly increasing and
    /// contiguous, counts summing to the total.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0u64;
        for shard in &self.shards {
            if shard.count == 0 || shard.offset != expected {
                return Err(Error::invalid(format!(
                    "manifest shard {} has offset {} (expected {}) with count {}",
                    shard.path.display(),
                    shard.offset,
                    expected,
                    shard.count
                )));
            }
            expected += shard.count;
        }
        if expected != self.total_documents {
            return Err(Error::invalid(format!(
                "manifest shard counts sum to {expected}, total_documents is {}",
                self.total_documents
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            writeln!(w)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::malformed(path, 0, e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Serialize one document as a corpus jsonl line.
pub fn document_to_jsonl(doc: &Document) -> String {
    let record = JsonlRecord { id: doc.external_id.clone(), text: doc.text.clone() };
    serde_json::to_string(&record).expect("jsonl record serializes")
}

fn is_skippable(text: &str) -> bool {
    text.trim().is_empty()
}

fn count_jsonl_shard(path: &Path) -> Result<(u64, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut count = 0u64;
    let mut skipped = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, idx as u64 + 1, e.to_string()))?;
        if is_skippable(&record.text) {
            skipped += 1;
        } else {
            count += 1;
        }
    }
    Ok((count, skipped))
}

/// Walk the parsed, non-skipped records of a jsonl shard. The callback gets
/// the record ordinal within the shard; returning `false` stops the walk.
fn for_each_jsonl_doc(
    path: &Path,
    f: &mut dyn FnMut(u64, JsonlRecord) -> Result<bool>,
) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut ordinal = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, idx as u64 + 1, e.to_string()))?;
        if is_skippable(&record.text) {
            continue;
        }
        let keep_going = f(ordinal, record)?;
        ordinal += 1;
        if !keep_going {
            break;
        }
    }
    Ok(())
}

/// Regular files under `dir`, recursively, sorted by lexicographic path.
fn textdir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            let ty = entry.file_type().map_err(|e| Error::io(&path, e))?;
            if ty.is_dir() {
                stack.push(path);
            } else if ty.is_file() {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn count_textdir_shard(dir: &Path) -> Result<(u64, u64)> {
    let mut count = 0u64;
    let mut skipped = 0u64;
    for file in textdir_files(dir)? {
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        if is_skippable(&text) {
            skipped += 1;
        } else {
            count += 1;
        }
    }
    Ok((count, skipped))
}

/// Walk the documents of one shard in order. The callback returns `false`
/// to stop early.
fn read_shard(
    format: CorpusFormat,
    shard: &ShardEntry,
    f: &mut dyn FnMut(Document) -> Result<bool>,
) -> Result<()> {
    match format {
        CorpusFormat::Jsonl => for_each_jsonl_doc(&shard.path, &mut |ordinal, record| {
            f(Document {
                internal_id: shard.offset + ordinal,
                external_id: record.id,
                text: record.text,
            })
        }),
        CorpusFormat::Textdir => {
            let mut ordinal = 0u64;
            for file in textdir_files(&shard.path)? {
                let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
                if is_skippable(&text) {
                    continue;
                }
                let external = file
                    .strip_prefix(&shard.path)
                    .unwrap_or(&file)
                    .to_string_lossy()
                    .into_owned();
                let keep_going = f(Document {
                    internal_id: shard.offset + ordinal,
                    external_id: Some(external),
                    text,
                })?;
                ordinal += 1;
                if !keep_going {
                    return Ok(());
                }
            }
            Ok(())
        }
    }
}
