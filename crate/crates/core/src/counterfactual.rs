//! Counterfactual corpus construction: sample linked questions per count
//! bin, collect the union of their relevant documents, and emit the corpus
//! with those documents removed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{document_to_jsonl, read_shard_documents, CorpusFormat, CorpusManifest};
use crate::error::{Error, Result};
use crate::eval::count_bin;
use crate::index::EntityIndex;
use crate::qa::LinkedQa;
use crate::util::write_atomic;

/// Questions sampled from one log-spaced relevant-document-count bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSample {
    /// Decimal bin exponent: counts in [10^bin, 10^(bin+1)).
    pub bin: u32,
    pub examples: Vec<LinkedQa>,
}

/// A reproducible sampling plan: up to `n_per_bin` questions per occupied
/// bin, drawn with the recorded seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub n_per_bin: usize,
    pub bins: Vec<BinSample>,
}

/// Summary of a finished filtering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalManifest {
    pub seed: u64,
    pub n_per_bin: usize,
    /// Sampled QA ids per bin exponent.
    pub sampled_qa_ids: BTreeMap<u32, Vec<String>>,
    pub original_documents: u64,
    pub removed_documents: u64,
    pub kept_documents: u64,
    pub removed_fraction: f64,
}

/// Sample up to `n_per_bin` linked examples uniformly from every occupied
/// log-spaced bin. Bins with fewer records contribute all of them.
/// Deterministic given the seed.
pub fn sample_per_bin(linked: &[LinkedQa], n_per_bin: usize, seed: u64) -> Result<SamplePlan> {
    let mut by_bin: BTreeMap<u32, Vec<&LinkedQa>> = BTreeMap::new();
    for record in linked.iter().filter(|r| r.is_linked()) {
        by_bin.entry(count_bin(record.relevant_doc_count)?).or_default().push(record);
    }
    if by_bin.is_empty() {
        return Err(Error::EmptyInput("no linked records to sample".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bins = Vec::with_capacity(by_bin.len());
    for (bin, records) in by_bin {
        let take = n_per_bin.min(records.len());
        let mut chosen: Vec<usize> =
            rand::seq::index::sample(&mut rng, records.len(), take).into_iter().collect();
        chosen.sort_unstable();
        bins.push(BinSample {
            bin,
            examples: chosen.into_iter().map(|i| records[i].clone()).collect(),
        });
    }
    Ok(SamplePlan { seed, n_per_bin, bins })
}

/// The union of relevant-document ids over all sampled questions, sorted and
/// deduplicated.
pub fn removal_set(plan: &SamplePlan, index: &EntityIndex) -> Vec<u64> {
    let mut ids = BTreeSet::new();
    for bin in &plan.bins {
        for example in &bin.examples {
            let (Some(q), Some(a)) = (&example.question_entity, &example.answer_entity) else {
                continue;
            };
            ids.extend(index.docs_for_pair(q, a).ids());
        }
    }
    ids.into_iter().collect()
}

/// Result of [`filter_corpus`]: where the filtered shards were written plus
/// the document tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub shard_paths: Vec<PathBuf>,
    pub id_map_path: PathBuf,
    pub original_documents: u64,
    pub removed_documents: u64,
    pub kept_documents: u64,
    pub removed_fraction: f64,
}

/// Write the corpus minus the removal set into `out_dir`, one output shard
/// per input shard (same file names), plus an `id_map.csv` mapping old to
/// new dense internal ids.
///
/// For jsonl corpora the surviving records are copied byte-for-byte, so an
/// empty removal set reproduces the input shards exactly. Textdir corpora
/// are re-emitted as jsonl with the original external ids.
pub fn filter_corpus(
    manifest: &CorpusManifest,
    removal_ids: &[u64],
    out_dir: &Path,
) -> Result<FilterOutcome> {
    let removal: HashSet<u64> = removal_ids.iter().copied().collect();
    for &id in removal_ids {
        if id >= manifest.total_documents {
            return Err(Error::DocIdOutOfRange { id, total: manifest.total_documents });
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut seen_names = HashSet::new();
    let mut shard_paths = Vec::with_capacity(manifest.shards.len());
    let id_map_path = out_dir.join("id_map.csv");
    let mut kept = 0u64;

    write_atomic(&id_map_path, |id_map| {
        writeln!(id_map, "old_id,new_id")?;
        let mut next_new_id = 0u64;
        for (shard_idx, shard) in manifest.shards.iter().enumerate() {
            let name = shard
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("shard-{shard_idx:05}"));
            let out_name = match manifest.format {
                CorpusFormat::Jsonl => name,
                CorpusFormat::Textdir => format!("{name}.jsonl"),
            };
            if !seen_names.insert(out_name.clone()) {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("duplicate shard file name {out_name:?} in output directory"),
                ));
            }
            let out_path = out_dir.join(&out_name);
            let result = match manifest.format {
                CorpusFormat::Jsonl => filter_jsonl_shard(
                    manifest, shard_idx, &removal, &out_path, &mut next_new_id, id_map,
                ),
                CorpusFormat::Textdir => filter_textdir_shard(
                    manifest, shard_idx, &removal, &out_path, &mut next_new_id, id_map,
                ),
            };
            result.map_err(|e| std::io::Error::other(e.to_string()))?;
            shard_paths.push(out_path);
        }
        kept = next_new_id;
        Ok(())
    })?;

    let removed = removal.len() as u64;
    Ok(FilterOutcome {
        shard_paths,
        id_map_path,
        original_documents: manifest.total_documents,
        removed_documents: removed,
        kept_documents: kept,
        removed_fraction: removed as f64 / manifest.total_documents as f64,
    })
}

/// Copy surviving jsonl lines verbatim, byte for byte.
fn filter_jsonl_shard(
    manifest: &CorpusManifest,
    shard_idx: usize,
    removal: &HashSet<u64>,
    out_path: &Path,
    next_new_id: &mut u64,
    id_map: &mut dyn Write,
) -> Result<()> {
    #[derive(Deserialize)]
    struct TextOnly {
        text: String,
    }

    let shard = &manifest.shards[shard_idx];
    let file = File::open(&shard.path).map_err(|e| Error::io(&shard.path, e))?;
    let mut reader = BufReader::new(file);
    let mut new_id = *next_new_id;
    write_atomic(out_path, |out| {
        let mut internal_id = shard.offset;
        let mut line_no = 0u64;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let line = std::str::from_utf8(&buf).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let record: TextOnly = serde_json::from_str(trimmed).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{line_no}: {e}", shard.path.display()),
                )
            })?;
            if record.text.trim().is_empty() {
                continue;
            }
            let keep = !removal.contains(&internal_id);
            if keep {
                out.write_all(&buf)?;
                writeln!(id_map, "{internal_id},{new_id}")?;
                new_id += 1;
            }
            internal_id += 1;
        }
        Ok(())
    })?;
    *next_new_id = new_id;
    Ok(())
}

fn filter_textdir_shard(
    manifest: &CorpusManifest,
    shard_idx: usize,
    removal: &HashSet<u64>,
    out_path: &Path,
    next_new_id: &mut u64,
    id_map: &mut dyn Write,
) -> Result<()> {
    let docs = read_shard_documents(manifest, shard_idx)?;
    let mut new_id = *next_new_id;
    write_atomic(out_path, |out| {
        for doc in &docs {
            if removal.contains(&doc.internal_id) {
                continue;
            }
            writeln!(out, "{}", document_to_jsonl(doc))?;
            writeln!(id_map, "{},{new_id}", doc.internal_id)?;
            new_id += 1;
        }
        Ok(())
    })?;
    *next_new_id = new_id;
    Ok(())
}

/// Assemble the removal manifest for a finished run.
pub fn removal_manifest(plan: &SamplePlan, outcome: &FilterOutcome) -> RemovalManifest {
    let sampled_qa_ids = plan
        .bins
        .iter()
        .map(|b| (b.bin, b.examples.iter().map(|e| e.id.clone()).collect()))
        .collect();
    RemovalManifest {
        seed: plan.seed,
        n_per_bin: plan.n_per_bin,
        sampled_qa_ids,
        original_documents: outcome.original_documents,
        removed_documents: outcome.removed_documents,
        kept_documents: outcome.kept_documents,
        removed_fraction: outcome.removed_fraction,
    }
}
