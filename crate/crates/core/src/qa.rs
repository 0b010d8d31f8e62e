//! Resolve QA examples to salient question/answer entities and their
//! relevant-document counts.
//!
//! The salient answer entity is the entity found in the most ground-truth
//! answer aliases (one vote per alias). The salient question entity is the
//! question mention that co-occurs most with the answer entity in the corpus.
//! Examples with no answer entity, no question entity, or zero co-occurring
//! documents are discarded with the reason recorded.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::EntityIndex;
use crate::linker::{link_entity_set, Gazetteer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    /// Ground-truth answer aliases, non-empty.
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    NoQuestionEntity,
    NoAnswerEntity,
    ZeroRelevantDocs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaStatus {
    Linked,
    Discarded,
}

/// A QA example resolved against a gazetteer and a co-occurrence index.
///
/// When `status` is `Linked`, both entities are set and
/// `relevant_doc_count >= 1`. Discarded records keep whatever was resolved
/// before the discard rule fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedQa {
    pub id: String,
    pub status: QaStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_reason: Option<DiscardReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_entity: Option<String>,
    pub relevant_doc_count: u64,
    pub question_entity_count: u64,
    pub answer_entity_count: u64,
}

impl LinkedQa {
    pub fn is_linked(&self) -> bool {
        self.status == QaStatus::Linked
    }
}

/// Per-reason discard tallies for one dataset run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardStats {
    pub total: u64,
    pub linked: u64,
    pub no_question_entity: u64,
    pub no_answer_entity: u64,
    pub zero_relevant_docs: u64,
}

/// Tally, per entity, the number of answer aliases in which it is found.
/// One vote per alias, regardless of repeated mentions inside the alias.
pub fn answer_entity_tally(gazetteer: &Gazetteer, answers: &[String]) -> BTreeMap<String, u64> {
    let mut tally = BTreeMap::new();
    for alias in answers {
        for entity in link_entity_set(gazetteer, alias) {
            *tally.entry(entity).or_insert(0) += 1;
        }
    }
    tally
}

fn argmax_tally(tally: &BTreeMap<String, u64>) -> Option<&str> {
    // BTreeMap iterates in ascending key order, so keeping strict maxima
    // breaks ties toward the lexicographically smallest entity id.
    let mut best: Option<(&str, u64)> = None;
    for (entity, &votes) in tally {
        if best.is_none_or(|(_, b)| votes > b) {
            best = Some((entity, votes));
        }
    }
    best.map(|(e, _)| e)
}

/// Link one QA example against the corpus index.
///
/// The question and every answer alias are linked separately, which is
/// equivalent to linking their concatenation with hard boundaries between
/// the parts: a surface form can never match across a question/alias
/// boundary.
pub fn link_qa_example(ex: &QaExample, gazetteer: &Gazetteer, index: &EntityIndex) -> LinkedQa {
    let mut record = LinkedQa {
        id: ex.id.clone(),
        status: QaStatus::Discarded,
        discard_reason: None,
        question_entity: None,
        answer_entity: None,
        relevant_doc_count: 0,
        question_entity_count: 0,
        answer_entity_count: 0,
    };

    let tally = answer_entity_tally(gazetteer, &ex.answers);
    let Some(answer_entity) = argmax_tally(&tally).map(str::to_string) else {
        record.discard_reason = Some(DiscardReason::NoAnswerEntity);
        return record;
    };
    record.answer_entity_count = index.count_entity(&answer_entity);
    record.answer_entity = Some(answer_entity.clone());

    let question_entities: BTreeSet<String> = link_entity_set(gazetteer, &ex.question);
    if question_entities.is_empty() {
        record.discard_reason = Some(DiscardReason::NoQuestionEntity);
        return record;
    }
    // Ascending iteration + strict maximum: ties go to the smallest id.
    let mut best: Option<(String, u64)> = None;
    for candidate in question_entities {
        let pairs = index.count_pair(&candidate, &answer_entity);
        if best.as_ref().is_none_or(|(_, b)| pairs > *b) {
            best = Some((candidate, pairs));
        }
    }
    let (question_entity, relevant) = best.expect("non-empty question entity set");
    record.question_entity_count = index.count_entity(&question_entity);
    record.question_entity = Some(question_entity);
    record.relevant_doc_count = relevant;

    if relevant == 0 {
        record.discard_reason = Some(DiscardReason::ZeroRelevantDocs);
        return record;
    }
    record.status = QaStatus::Linked;
    record
}

/// Link a whole dataset, in parallel with deterministic output order.
pub fn link_qa_dataset(
    examples: &[QaExample],
    gazetteer: &Gazetteer,
    index: &EntityIndex,
) -> Result<(Vec<LinkedQa>, DiscardStats)> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::DuplicateId(ex.id.clone()));
        }
        if ex.answers.is_empty() {
            return Err(Error::invalid(format!("example {:?} has no answers", ex.id)));
        }
        if ex.question.is_empty() {
            return Err(Error::invalid(format!("example {:?} has an empty question", ex.id)));
        }
    }
    let records: Vec<LinkedQa> = examples
        .par_iter()
        .map(|ex| link_qa_example(ex, gazetteer, index))
        .collect();
    let mut stats = DiscardStats { total: records.len() as u64, ..DiscardStats::default() };
    for record in &records {
        match record.discard_reason {
            None => stats.linked += 1,
            Some(DiscardReason::NoQuestionEntity) => stats.no_question_entity += 1,
            Some(DiscardReason::NoAnswerEntity) => stats.no_answer_entity += 1,
            Some(DiscardReason::ZeroRelevantDocs) => stats.zero_relevant_docs += 1,
        }
    }
    Ok((records, stats))
}

/// Split off a seeded holdout of examples for few-shot prompts. Returns
/// (kept, holdout); the holdout should be excluded from analysis runs.
pub fn split_holdout(
    examples: Vec<QaExample>,
    holdout_size: usize,
    seed: u64,
) -> Result<(Vec<QaExample>, Vec<QaExample>)> {
    use rand::SeedableRng;

    if holdout_size > examples.len() {
        return Err(Error::invalid(format!(
            "holdout of {holdout_size} requested from {} examples",
            examples.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<usize> =
        rand::seq::index::sample(&mut rng, examples.len(), holdout_size).into_iter().collect();
    let mut kept = Vec::with_capacity(examples.len() - holdout_size);
    let mut holdout = Vec::with_capacity(holdout_size);
    for (i, ex) in examples.into_iter().enumerate() {
        if chosen.contains(&i) {
            holdout.push(ex);
        } else {
            kept.push(ex);
        }
    }
    Ok((kept, holdout))
}
