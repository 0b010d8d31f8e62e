//! Cross-module integration tests on synthetic corpora, checked against
//! linear-scan oracles.

mod common;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltk_core::corpus::{get_document, ingest_corpus, CorpusFormat, CorpusManifest, Document};
use ltk_core::eval::{audit_sample, heuristic_counts, HeuristicMode};
use ltk_core::index::{build_index, build_shard, merge_shards, EntityIndex};
use ltk_core::linker::{
    import_annotations, link_corpus_all, link_entity_set, load_gazetteer, Gazetteer,
    LinkedDocument,
};
use ltk_core::qa::{link_qa_dataset, QaExample};

/// Synthetic corpus of `n` documents over numbered entity surfaces, split
/// into jsonl shards of roughly equal size.
fn write_corpus(
    dir: &std::path::Path,
    n: usize,
    n_entities: usize,
    shards: usize,
    seed: u64,
) -> (Vec<PathBuf>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(1..=5);
        let mut words = Vec::new();
        for _ in 0..k {
            words.push(format!("entity{:03}", rng.random_range(0..n_entities)));
            words.push("filler".to_string());
        }
        texts.push(words.join(" "));
    }
    let per_shard = n.div_ceil(shards);
    let mut paths = Vec::new();
    for (i, chunk) in texts.chunks(per_shard).enumerate() {
        let path = dir.join(format!("shard-{i:02}.jsonl"));
        let mut content = String::new();
        for text in chunk {
            writeln!(content, "{{\"text\":\"{text}\"}}").unwrap();
        }
        std::fs::write(&path, content).unwrap();
        paths.push(path);
    }
    (paths, texts)
}

fn entity_gazetteer(n_entities: usize) -> Gazetteer {
    Gazetteer::from_rows(
        (0..n_entities).map(|i| (format!("entity{i:03}"), format!("E{i:03}"), 0.9)),
    )
    .unwrap()
}

#[test]
fn thousand_doc_corpus_round_trips_against_scan_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, texts) = write_corpus(dir.path(), 1000, 40, 7, 11);
    let manifest = ingest_corpus(&paths, CorpusFormat::Jsonl).unwrap();
    assert_eq!(manifest.total_documents, 1000);
    assert_eq!(manifest.shards.len(), 7);

    // The linear-scan oracle is the in-memory text list itself.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let id = rng.random_range(0..1000u64);
        let doc = get_document(&manifest, id).unwrap();
        assert_eq!(doc.internal_id, id);
        assert_eq!(doc.text, texts[id as usize]);
    }
    let first = get_document(&manifest, 0).unwrap();
    assert_eq!(first.text, texts[0]);
    let last = get_document(&manifest, 999).unwrap();
    assert_eq!(last.text, texts[999]);

    let again = ingest_corpus(&paths, CorpusFormat::Jsonl).unwrap();
    assert_eq!(manifest, again);
}

#[test]
fn link_corpus_equals_per_document_linking_and_is_parallel_safe() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, texts) = write_corpus(dir.path(), 500, 25, 4, 21);
    let manifest = ingest_corpus(&paths, CorpusFormat::Jsonl).unwrap();
    let gazetteer = entity_gazetteer(25);

    let sequential = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| link_corpus_all(&gazetteer, &manifest))
        .unwrap();
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| link_corpus_all(&gazetteer, &manifest))
        .unwrap();
    assert_eq!(sequential, parallel);

    // Oracle: map link over the raw texts.
    assert_eq!(sequential.len(), texts.len());
    for (i, doc) in sequential.iter().enumerate() {
        assert_eq!(doc.internal_id, i as u64);
        assert_eq!(doc.entities, link_entity_set(&gazetteer, &texts[i]));
    }
}

#[test]
fn sharded_index_build_equals_single_shard_build() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, _) = write_corpus(dir.path(), 300, 30, 7, 31);
    let manifest = ingest_corpus(&paths, CorpusFormat::Jsonl).unwrap();
    let gazetteer = entity_gazetteer(30);
    let linked = link_corpus_all(&gazetteer, &manifest).unwrap();

    let single = merge_shards(vec![
        build_shard(linked.clone(), (0, manifest.total_documents)).unwrap()
    ])
    .unwrap();
    let sharded = build_index(linked, manifest.total_documents, 7).unwrap();
    assert_eq!(single, sharded);
    for e1 in single.entities() {
        assert_eq!(single.count_entity(e1), sharded.count_entity(e1));
    }
}

#[test]
fn import_annotations_matches_reference_parse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let mut content = String::new();
    let mut expected = Vec::new();
    for i in 0..100u64 {
        let entities: Vec<String> = (0..(i % 4)).map(|j| format!("E{j}")).collect();
        let quoted: Vec<String> = entities.iter().map(|e| format!("\"{e}\"")).collect();
        writeln!(content, "{{\"doc_id\":{i},\"entities\":[{}]}}", quoted.join(",")).unwrap();
        expected.push((i, entities.into_iter().collect::<BTreeSet<String>>()));
    }
    std::fs::write(&path, content).unwrap();
    let docs = import_annotations(&path, None).unwrap();
    assert_eq!(docs.len(), 100);
    for (doc, (id, entities)) in docs.iter().zip(&expected) {
        assert_eq!(doc.internal_id, *id);
        assert_eq!(&doc.entities, entities);
    }
}

#[test]
fn gazetteer_file_round_trips_against_line_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.tsv");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut content = String::new();
    let mut rows = Vec::new();
    for i in 0..10_000 {
        let surface = format!("surface {i:05}");
        let entity = format!("Entity_{i:05}");
        let prior = (rng.random_range(1..=99) as f64) / 100.0;
        writeln!(content, "{surface}\t{entity}\t{prior}").unwrap();
        rows.push((surface, entity, prior));
    }
    std::fs::write(&path, content).unwrap();
    let gazetteer = load_gazetteer(&path).unwrap();
    assert_eq!(gazetteer.len(), 10_000);
    for (surface, entity, prior) in rows {
        let candidates = gazetteer.candidates(&surface).unwrap();
        assert_eq!(candidates.len(), 1);
        assert_eq!(candidates[0].entity_id, entity);
        assert_eq!(candidates[0].prior, prior);
    }
}

fn linked_fixture() -> (Vec<ltk_core::qa::LinkedQa>, EntityIndex, Vec<BTreeSet<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n_docs = 400usize;
    let entities: Vec<String> = (0..20).map(|i| format!("E{i:03}")).collect();
    let docs: Vec<BTreeSet<String>> = (0..n_docs)
        .map(|_| {
            (0..rng.random_range(1..=4))
                .map(|_| entities[rng.random_range(0..entities.len())].clone())
                .collect()
        })
        .collect();
    let linked_docs: Vec<LinkedDocument> = docs
        .iter()
        .enumerate()
        .map(|(i, set)| LinkedDocument { internal_id: i as u64, entities: set.clone() })
        .collect();
    let index = build_index(linked_docs, n_docs as u64, 3).unwrap();

    let gazetteer = Gazetteer::from_rows(
        (0..20).map(|i| (format!("word{i:03}"), format!("E{i:03}"), 0.9)),
    )
    .unwrap();
    let examples: Vec<QaExample> = (0..120)
        .map(|i| {
            let q = rng.random_range(0..20);
            let a = rng.random_range(0..20);
            QaExample {
                id: format!("qa{i:03}"),
                question: format!("something about word{q:03} here"),
                answers: vec![format!("word{a:03}")],
            }
        })
        .collect();
    let (linked, _) = link_qa_dataset(&examples, &gazetteer, &index).unwrap();
    (linked, index, docs)
}

#[test]
fn heuristic_counts_match_brute_force() {
    let (linked, index, docs) = linked_fixture();
    let entities: Vec<String> = (0..20).map(|i| format!("E{i:03}")).collect();
    let brute = common::BruteIndex::build(&docs, &entities);
    let by_id: std::collections::HashMap<&str, &ltk_core::qa::LinkedQa> =
        linked.iter().map(|r| (r.id.as_str(), r)).collect();

    let pair = heuristic_counts(&linked, &index, HeuristicMode::Pair);
    assert!(!pair.is_empty());
    for (id, count) in &pair {
        let record = by_id[id.as_str()];
        assert_eq!(*count, record.relevant_doc_count);
        let q = record.question_entity.as_deref().unwrap();
        let a = record.answer_entity.as_deref().unwrap();
        assert_eq!(*count, brute.pair_docs(q, a).len() as u64);
    }
    let question_only = heuristic_counts(&linked, &index, HeuristicMode::QuestionOnly);
    let answer_only = heuristic_counts(&linked, &index, HeuristicMode::AnswerOnly);
    for (((id, p), (_, q)), (_, a)) in pair.iter().zip(&question_only).zip(&answer_only) {
        let record = by_id[id.as_str()];
        let qe = record.question_entity.as_deref().unwrap();
        let ae = record.answer_entity.as_deref().unwrap();
        assert_eq!(*q, brute.count(qe));
        assert_eq!(*a, brute.count(ae));
        assert!(p <= q && p <= a, "pair count must never exceed single counts");
    }
}

#[test]
fn audit_sample_is_deterministic_and_members_are_relevant() {
    let (linked, index, _) = linked_fixture();
    let n_linked = linked.iter().filter(|r| r.is_linked()).count();
    assert!(n_linked >= 20, "fixture needs enough linked records, got {n_linked}");

    let s1 = audit_sample(&linked, &index, 20, 99).unwrap();
    let s2 = audit_sample(&linked, &index, 20, 99).unwrap();
    assert_eq!(s1, s2);
    let distinct: BTreeSet<&str> = s1.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(distinct.len(), 20);

    let by_id: std::collections::HashMap<&str, &ltk_core::qa::LinkedQa> =
        linked.iter().map(|r| (r.id.as_str(), r)).collect();
    for (id, doc_id) in &s1 {
        let record = by_id[id.as_str()];
        let docs = index.docs_for_pair(
            record.question_entity.as_deref().unwrap(),
            record.answer_entity.as_deref().unwrap(),
        );
        assert!(docs.ids().contains(doc_id), "sampled doc must be relevant to its QA");
    }

    assert!(audit_sample(&linked, &index, n_linked + 1, 1).is_err());
}

#[test]
fn sample_per_bin_takes_min_of_bin_size_and_quota() {
    use ltk_core::counterfactual::sample_per_bin;
    use ltk_core::qa::{LinkedQa, QaStatus};

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut table = Vec::new();
    for i in 0..10_000 {
        let count = rng.random_range(1..=100_000u64);
        table.push(LinkedQa {
            id: format!("r{i}"),
            status: QaStatus::Linked,
            discard_reason: None,
            question_entity: Some("Q".into()),
            answer_entity: Some("A".into()),
            relevant_doc_count: count,
            question_entity_count: count,
            answer_entity_count: count,
        });
    }
    let plan = sample_per_bin(&table, 100, 4).unwrap();

    // Counting oracle: per-bin population via the digit-count rule.
    let mut population = std::collections::BTreeMap::new();
    for r in &table {
        *population.entry(common::oracle_count_bin(r.relevant_doc_count)).or_insert(0usize) += 1;
    }
    assert_eq!(plan.bins.len(), population.len());
    for bin in &plan.bins {
        let expected = population[&bin.bin].min(100);
        assert_eq!(bin.examples.len(), expected, "bin {}", bin.bin);
        for ex in &bin.examples {
            assert_eq!(common::oracle_count_bin(ex.relevant_doc_count), bin.bin);
        }
    }
}

#[test]
fn textdir_and_jsonl_streams_agree() {
    let dir = tempfile::tempdir().unwrap();
    let tdir = dir.path().join("docs");
    std::fs::create_dir(&tdir).unwrap();
    let texts = ["alpha beta", "gamma", "delta eps"];
    for (i, text) in texts.iter().enumerate() {
        std::fs::write(tdir.join(format!("{i:02}.txt")), text).unwrap();
    }
    let manifest = ingest_corpus(&[tdir], CorpusFormat::Textdir).unwrap();
    let docs: Vec<Document> =
        ltk_core::corpus::stream_documents(&manifest).collect::<Result<_, _>>().unwrap();
    assert_eq!(docs.len(), 3);
    for (i, doc) in docs.iter().enumerate() {
        assert_eq!(doc.text, texts[i]);
        assert_eq!(doc.internal_id, i as u64);
    }
}

#[test]
fn manifest_survives_missing_shard_with_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, _) = write_corpus(dir.path(), 10, 5, 2, 1);
    let manifest = ingest_corpus(&paths, CorpusFormat::Jsonl).unwrap();
    std::fs::remove_file(&paths[1]).unwrap();
    let err = get_document(&manifest, manifest.total_documents - 1).unwrap_err();
    assert!(matches!(err, ltk_core::Error::Io { .. }));
    let _ = CorpusManifest::load(&dir.path().join("nonexistent.json")).unwrap_err();
}
