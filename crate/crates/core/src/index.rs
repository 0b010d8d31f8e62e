//! Entity-to-document-id index with fast occurrence and co-occurrence counts.
//!
//! The index maps each entity id to the strictly increasing list of internal
//! document ids that mention it. Single-entity counts are posting-list
//! lengths; pair counts are galloping intersections driven from the shorter
//! list, which suits the heavy asymmetry between head and long-tail entities.
//!
//! # File format
//!
//! Index files are binary and fully pinned so independent implementations can
//! interoperate:
//!
//! ```text
//! magic      "LTKX" (4 bytes)
//! version    u32 little-endian, currently 1
//! doc_count  u64 little-endian
//! n_entities u64 little-endian
//! dictionary n_entities records, sorted lexicographically by entity id:
//!              entity id byte length  u32 LE
//!              entity id              UTF-8 bytes
//!              postings offset        u64 LE (from start of postings region)
//!              postings byte length   u64 LE
//! postings   per entity: doc ids delta-encoded as unsigned LEB128
//!            (first value absolute, then gaps)
//! ```
//!
//! Shard files produced by parallel builds use the same layout with magic
//! "LTKS" and the document-count field replaced by the shard's id range
//! (start u64 LE, end u64 LE).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linker::LinkedDocument;
use crate::util::write_atomic;

const INDEX_MAGIC: &[u8; 4] = b"LTKX";
const SHARD_MAGIC: &[u8; 4] = b"LTKS";
const FORMAT_VERSION: u32 = 1;

/// A strictly increasing sequence of internal document ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PostingList(Vec<u64>);

impl PostingList {
    /// Validate that `ids` is strictly increasing.
    pub fn new(ids: Vec<u64>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("posting list must be strictly increasing"));
        }
        Ok(PostingList(ids))
    }

    pub fn ids(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> u64 {
        self.0.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<u64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct IndexEntry {
    entity_id: String,
    postings: Vec<u64>,
}

/// Immutable entity-to-posting-list index over one corpus. Safe for unlimited
/// concurrent readers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityIndex {
    doc_count: u64,
    /// Sorted lexicographically by entity id.
    entries: Vec<IndexEntry>,
}

/// Index over a contiguous internal-id range, the unit of parallel builds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexShard {
    /// Covered ids: `range.0 <= id < range.1`.
    pub range: (u64, u64),
    entries: Vec<IndexEntry>,
}

/// Build one index shard from linked documents sorted by internal id.
///
/// Every document id must fall inside `id_range` and ids must be strictly
/// increasing; the resulting postings transcribe the input entity sets
/// exactly.
pub fn build_shard<I>(linked_docs: I, id_range: (u64, u64)) -> Result<IndexShard>
where
    I: IntoIterator<Item = LinkedDocument>,
{
    if id_range.0 > id_range.1 {
        return Err(Error::invalid(format!(
            "invalid shard range [{}, {})",
            id_range.0, id_range.1
        )));
    }
    let mut postings: std::collections::BTreeMap<String, Vec<u64>> = std::collections::BTreeMap::new();
    let mut last_id: Option<u64> = None;
    for doc in linked_docs {
        if doc.internal_id < id_range.0 || doc.internal_id >= id_range.1 {
            return Err(Error::DocIdOutOfRange { id: doc.internal_id, total: id_range.1 });
        }
        if let Some(prev) = last_id {
            if doc.internal_id <= prev {
                return Err(Error::invalid(format!(
                    "linked documents not sorted: id {} after id {prev}",
                    doc.internal_id
                )));
            }
        }
        last_id = Some(doc.internal_id);
        for entity in &doc.entities {
            postings.entry(entity.clone()).or_default().push(doc.internal_id);
        }
    }
    let entries = postings
        .into_iter()
        .map(|(entity_id, postings)| IndexEntry { entity_id, postings })
        .collect();
    Ok(IndexShard { range: id_range, entries })
}

/// Merge shards into a full index. Shard ranges must be disjoint and cover
/// `[0, total)` contiguously; the merge output is independent of the order in
/// which shards are passed.
pub fn merge_shards(shards: Vec<IndexShard>) -> Result<EntityIndex> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("no shards to merge".into()));
    }
    let mut shards = shards;
    shards.sort_by_key(|s| s.range.0);
    let mut expected = 0u64;
    for shard in &shards {
        if shard.range.0 != expected {
            return Err(Error::invalid(format!(
                "shard ranges must be disjoint and cover [0, total): found [{}, {}) where {} was expected",
                shard.range.0, shard.range.1, expected
            )));
        }
        expected = shard.range.1;
    }
    let doc_count = expected;
    let mut merged: std::collections::BTreeMap<String, Vec<u64>> = std::collections::BTreeMap::new();
    for shard in shards {
        for entry in shard.entries {
            merged.entry(entry.entity_id).or_default().extend(entry.postings);
        }
    }
    let entries: Vec<IndexEntry> = merged
        .into_iter()
        .map(|(entity_id, postings)| IndexEntry { entity_id, postings })
        .collect();
    for entry in &entries {
        if entry.postings.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "merged postings for {:?} are not strictly increasing",
                entry.entity_id
            )));
        }
    }
    Ok(EntityIndex { doc_count, entries })
}

/// Build a full index in one step, partitioning `[0, doc_count)` into
/// `shards` contiguous ranges built in parallel and merged.
pub fn build_index(
    mut linked_docs: Vec<LinkedDocument>,
    doc_count: u64,
    shards: usize,
) -> Result<EntityIndex> {
    use rayon::prelude::*;

    linked_docs.sort_by_key(|d| d.internal_id);
    let shards = shards.clamp(1, 64) as u64;
    let chunk = doc_count.div_ceil(shards).max(1);
    let mut ranges = Vec::new();
    let mut start = 0u64;
    while start < doc_count {
        let end = (start + chunk).min(doc_count);
        ranges.push((start, end));
        start = end;
    }
    if ranges.is_empty() {
        ranges.push((0, doc_count));
    }
    let parts: Vec<Vec<LinkedDocument>> = {
        let mut parts: Vec<Vec<LinkedDocument>> = ranges.iter().map(|_| Vec::new()).collect();
        for doc in linked_docs {
            if doc.internal_id >= doc_count {
                return Err(Error::DocIdOutOfRange { id: doc.internal_id, total: doc_count });
            }
            let idx = (doc.internal_id / chunk) as usize;
            parts[idx].push(doc);
        }
        parts
    };
    let built: Result<Vec<IndexShard>> = ranges
        .into_par_iter()
        .zip(parts)
        .map(|(range, docs)| build_shard(docs, range))
        .collect();
    merge_shards(built?)
}

impl EntityIndex {
    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn entity_count(&self) -> u64 {
        self.entries.len() as u64
    }

    /// Iterate entity ids in dictionary (lexicographic) order.
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.entity_id.as_str())
    }

    fn postings(&self, entity: &str) -> Option<&[u64]> {
        self.entries
            .binary_search_by(|e| e.entity_id.as_str().cmp(entity))
            .ok()
            .map(|i| self.entries[i].postings.as_slice())
    }

    /// Number of documents containing `entity`; 0 when absent.
    pub fn count_entity(&self, entity: &str) -> u64 {
        self.postings(entity).map_or(0, |p| p.len() as u64)
    }

    /// Number of documents containing both entities.
    pub fn count_pair(&self, e1: &str, e2: &str) -> u64 {
        self.docs_for_pair(e1, e2).len()
    }

    /// The sorted document ids containing both entities.
    pub fn docs_for_pair(&self, e1: &str, e2: &str) -> PostingList {
        if e1 == e2 {
            return PostingList(self.postings(e1).map_or_else(Vec::new, <[u64]>::to_vec));
        }
        let (Some(a), Some(b)) = (self.postings(e1), self.postings(e2)) else {
            return PostingList::default();
        };
        PostingList(intersect_galloping(a, b))
    }
}

/// Galloping (exponential probe + binary search) intersection, driven from
/// the shorter list.
fn intersect_galloping(a: &[u64], b: &[u64]) -> Vec<u64> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut out = Vec::new();
    let mut base = 0usize;
    for &x in short {
        if base >= long.len() {
            break;
        }
        // Exponential probe for the window that can contain x.
        let mut bound = 1usize;
        while base + bound < long.len() && long[base + bound] < x {
            bound <<= 1;
        }
        let hi = (base + bound + 1).min(long.len());
        let lo = base + (bound >> 1);
        let pos = lo + long[lo..hi].partition_point(|&v| v < x);
        if pos < long.len() && long[pos] == x {
            out.push(x);
            base = pos + 1;
        } else {
            base = pos;
        }
    }
    out
}

mod leb128 {
    use std::io::{Read, Write};

    pub fn write_u64<W: Write>(w: &mut W, mut value: u64) -> std::io::Result<()> {
        loop {
            let mut byte = (value & 0x7f) as u8;
            value >>= 7;
            if value != 0 {
                byte |= 0x80;
            }
            w.write_all(&[byte])?;
            if value == 0 {
                return Ok(());
            }
        }
    }

    pub fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
        let mut value = 0u64;
        let mut shift = 0u32;
        loop {
            let mut buf = [0u8; 1];
            r.read_exact(&mut buf)?;
            let byte = buf[0];
            if shift >= 64 || (shift == 63 && byte > 1) {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    "LEB128 value overflows u64",
                ));
            }
            value |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
            shift += 7;
        }
    }
}

fn encode_postings(postings: &[u64]) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut prev = 0u64;
    for (i, &id) in postings.iter().enumerate() {
        let delta = if i == 0 { id } else { id - prev };
        leb128::write_u64(&mut buf, delta).expect("vec write");
        prev = id;
    }
    buf
}

fn decode_postings(bytes: &[u8], doc_bound: u64, entity: &str, path: &Path) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    let mut cursor = std::io::Cursor::new(bytes);
    let mut prev: Option<u64> = None;
    while (cursor.position() as usize) < bytes.len() {
        let delta = leb128::read_u64(&mut cursor)
            .map_err(|e| bad_file(path, format!("postings for {entity:?}: {e}")))?;
        let id = match prev {
            None => delta,
            Some(p) => p
                .checked_add(delta)
                .ok_or_else(|| bad_file(path, format!("postings for {entity:?} overflow")))?,
        };
        if let Some(p) = prev {
            if id <= p {
                return Err(bad_file(
                    path,
                    format!("postings for {entity:?} are not strictly increasing"),
                ));
            }
        }
        if id >= doc_bound {
            return Err(bad_file(
                path,
                format!("posting {id} for {entity:?} exceeds document bound {doc_bound}"),
            ));
        }
        out.push(id);
        prev = Some(id);
    }
    Ok(out)
}

fn bad_file(path: &Path, msg: impl Into<String>) -> Error {
    Error::IndexFormat { path: path.to_path_buf(), msg: msg.into() }
}

fn write_entries<W: Write>(w: &mut W, entries: &[IndexEntry]) -> std::io::Result<()> {
    let mut encoded: Vec<Vec<u8>> = Vec::with_capacity(entries.len());
    let mut offset = 0u64;
    for entry in entries {
        let bytes = encode_postings(&entry.postings);
        w.write_all(&(entry.entity_id.len() as u32).to_le_bytes())?;
        w.write_all(entry.entity_id.as_bytes())?;
        w.write_all(&offset.to_le_bytes())?;
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        offset += bytes.len() as u64;
        encoded.push(bytes);
    }
    for bytes in &encoded {
        w.write_all(bytes)?;
    }
    Ok(())
}

/// Read exactly `len` bytes without trusting `len` for pre-allocation, so a
/// corrupted length field yields an error instead of an absurd allocation.
fn read_exact_buf<R: Read>(r: &mut R, len: usize, path: &Path, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(len.min(1 << 16));
    let got = r
        .take(len as u64)
        .read_to_end(&mut buf)
        .map_err(|e| bad_file(path, format!("truncated {what}: {e}")))?;
    if got != len {
        return Err(bad_file(path, format!("truncated {what}: wanted {len} bytes, got {got}")));
    }
    Ok(buf)
}

fn read_u32_le<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u32> {
    let buf = read_exact_buf(r, 4, path, what)?;
    Ok(u32::from_le_bytes(buf.try_into().unwrap()))
}

fn read_u64_le<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<u64> {
    let buf = read_exact_buf(r, 8, path, what)?;
    Ok(u64::from_le_bytes(buf.try_into().unwrap()))
}

fn read_entries<R: Read>(
    r: &mut R,
    n_entities: u64,
    doc_bound: u64,
    path: &Path,
) -> Result<Vec<IndexEntry>> {
    struct DictEntry {
        entity_id: String,
        offset: u64,
        byte_len: u64,
    }
    let mut dict = Vec::with_capacity(n_entities.min(1 << 16) as usize);
    for i in 0..n_entities {
        let name_len = read_u32_le(r, path, "dictionary")? as usize;
        let name = read_exact_buf(r, name_len, path, "dictionary")?;
        let entity_id = String::from_utf8(name)
            .map_err(|_| bad_file(path, format!("dictionary entry {i} is not UTF-8")))?;
        let offset = read_u64_le(r, path, "dictionary")?;
        let byte_len = read_u64_le(r, path, "dictionary")?;
        dict.push(DictEntry { entity_id, offset, byte_len });
    }
    let mut expected_offset = 0u64;
    for (i, entry) in dict.iter().enumerate() {
        if i > 0 && dict[i - 1].entity_id >= entry.entity_id {
            return Err(bad_file(path, "dictionary is not sorted by entity id"));
        }
        if entry.offset != expected_offset {
            return Err(bad_file(
                path,
                format!("postings for {:?} are not contiguous", entry.entity_id),
            ));
        }
        expected_offset += entry.byte_len;
    }
    let mut postings_region = Vec::new();
    r.read_to_end(&mut postings_region).map_err(|e| bad_file(path, e.to_string()))?;
    if postings_region.len() as u64 != expected_offset {
        return Err(bad_file(
            path,
            format!(
                "postings region is {} bytes, dictionary expects {expected_offset}",
                postings_region.len()
            ),
        ));
    }
    let mut entries = Vec::with_capacity(dict.len());
    for entry in dict {
        let start = entry.offset as usize;
        let end = start + entry.byte_len as usize;
        let postings = decode_postings(&postings_region[start..end], doc_bound, &entry.entity_id, path)?;
        entries.push(IndexEntry { entity_id: entry.entity_id, postings });
    }
    Ok(entries)
}

/// Serialize an index in the pinned binary format. Atomic: the file appears
/// only after a complete write.
pub fn save_index(index: &EntityIndex, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_index_to(index, w))
}

/// Serialize an index to any writer, e.g. for byte-level comparisons.
pub fn write_index_to<W: Write>(index: &EntityIndex, w: &mut W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&index.doc_count.to_le_bytes())?;
    w.write_all(&(index.entries.len() as u64).to_le_bytes())?;
    write_entries(&mut w, &index.entries)?;
    w.flush()
}

/// Load and validate an index file. Fails closed: any malformed header,
/// truncation, or non-canonical postings is an error, never a wrong answer.
pub fn load_index(path: &Path) -> Result<EntityIndex> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let magic = read_exact_buf(&mut r, 4, path, "header")?;
    if magic != INDEX_MAGIC {
        return Err(bad_file(path, format!("bad magic {magic:02x?}")));
    }
    let version = read_u32_le(&mut r, path, "header")?;
    if version != FORMAT_VERSION {
        return Err(bad_file(path, format!("unsupported version {version}")));
    }
    let doc_count = read_u64_le(&mut r, path, "header")?;
    let n_entities = read_u64_le(&mut r, path, "header")?;
    let entries = read_entries(&mut r, n_entities, doc_count, path)?;
    Ok(EntityIndex { doc_count, entries })
}

/// Serialize an index shard (magic "LTKS", id range in place of doc count).
pub fn save_shard(shard: &IndexShard, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut w = BufWriter::new(w);
        w.write_all(SHARD_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&shard.range.0.to_le_bytes())?;
        w.write_all(&shard.range.1.to_le_bytes())?;
        w.write_all(&(shard.entries.len() as u64).to_le_bytes())?;
        write_entries(&mut w, &shard.entries)?;
        w.flush()
    })
}

pub fn load_shard(path: &Path) -> Result<IndexShard> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let magic = read_exact_buf(&mut r, 4, path, "header")?;
    if magic != SHARD_MAGIC {
        return Err(bad_file(path, format!("bad magic {magic:02x?}")));
    }
    let version = read_u32_le(&mut r, path, "header")?;
    if version != FORMAT_VERSION {
        return Err(bad_file(path, format!("unsupported version {version}")));
    }
    let start = read_u64_le(&mut r, path, "header")?;
    let end = read_u64_le(&mut r, path, "header")?;
    if start > end {
        return Err(bad_file(path, format!("invalid shard range [{start}, {end})")));
    }
    let n_entities = read_u64_le(&mut r, path, "header")?;
    let entries = read_entries(&mut r, n_entities, end, path)?;
    for entry in &entries {
        if entry.postings.iter().any(|&id| id < start) {
            return Err(bad_file(
                path,
                format!("posting below shard range start for {:?}", entry.entity_id),
            ));
        }
    }
    Ok(IndexShard { range: (start, end), entries })
}
