//! Exact-match QA scoring, log-binned accuracy curves, human
//! leave-one-annotator-out accuracy, baseline counting heuristics, and the
//! relevance-audit workflow.

use std::collections::HashSet;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::EntityIndex;
use crate::qa::LinkedQa;

/// One model prediction, ingested from an external run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: String,
}

/// Normalize an answer string: case-fold, drop punctuation and symbol
/// characters, remove the whole-word articles a/an/the, and collapse
/// whitespace to single spaces.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let depunct: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut out = String::with_capacity(depunct.len());
    for word in depunct.split_whitespace() {
        if matches!(word, "a" | "an" | "the") {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// True iff the prediction equals any gold alias after normalization. No
/// substring credit.
pub fn exact_match(prediction: &str, golds: &[String]) -> bool {
    let normalized = normalize_answer(prediction);
    golds.iter().any(|g| normalize_answer(g) == normalized)
}

/// Log-spaced binning scheme: base-10 bins with a minimum per-bin sample
/// count below which a bin is flagged as trimmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinScheme {
    pub min_samples_per_bin: u64,
}

impl BinScheme {
    pub fn new(min_samples_per_bin: u64) -> Result<Self> {
        if min_samples_per_bin == 0 {
            return Err(Error::invalid("min_samples_per_bin must be >= 1"));
        }
        Ok(BinScheme { min_samples_per_bin })
    }
}

impl Default for BinScheme {
    fn default() -> Self {
        BinScheme { min_samples_per_bin: 500 }
    }
}

/// Decimal exponent of the bin a count falls in: counts in [10^b, 10^(b+1))
/// map to bin b. Exact integer arithmetic, no float edge cases.
pub fn count_bin(count: u64) -> Result<u32> {
    if count == 0 {
        return Err(Error::invalid(
            "zero relevant-document count: zero-count examples must be discarded upstream",
        ));
    }
    let mut bin = 0u32;
    let mut c = count;
    while c >= 10 {
        c /= 10;
        bin += 1;
    }
    Ok(bin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Inclusive lower edge, 10^b.
    pub lower: u128,
    /// Exclusive upper edge, 10^(b+1).
    pub upper: u128,
    pub samples: u64,
    pub mean: f64,
    /// Under the minimum sample count; excluded from the reported curve but
    /// kept so histograms can still be rendered.
    pub trimmed: bool,
}

/// Occupied log-spaced bins in ascending order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BinCurve {
    pub bins: Vec<Bin>,
}

impl BinCurve {
    /// Bins meeting the minimum sample count.
    pub fn reported(&self) -> impl Iterator<Item = &Bin> {
        self.bins.iter().filter(|b| !b.trimmed)
    }

    /// Render as CSV with header `bin_lo,bin_hi,n,value,trimmed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,n,value,trimmed\n");
        for bin in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                bin.lower, bin.upper, bin.samples, bin.mean, bin.trimmed
            ));
        }
        out
    }
}

/// Average `[0,1]` values into log-spaced count bins.
pub fn bin_values(records: &[(u64, f64)], scheme: &BinScheme) -> Result<BinCurve> {
    let mut sums: std::collections::BTreeMap<u32, (u64, f64)> = std::collections::BTreeMap::new();
    for &(count, value) in records {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("bin value {value} outside [0,1]")));
        }
        let bin = count_bin(count)?;
        let slot = sums.entry(bin).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += value;
    }
    let bins = sums
        .into_iter()
        .map(|(b, (n, sum))| Bin {
            lower: 10u128.pow(b),
            upper: 10u128.pow(b + 1),
            samples: n,
            mean: sum / n as f64,
            trimmed: n < scheme.min_samples_per_bin,
        })
        .collect();
    Ok(BinCurve { bins })
}

/// Accuracy per log-spaced relevant-document-count bin.
pub fn accuracy_by_bin(records: &[(u64, bool)], scheme: &BinScheme) -> Result<BinCurve> {
    let values: Vec<(u64, f64)> =
        records.iter().map(|&(c, ok)| (c, if ok { 1.0 } else { 0.0 })).collect();
    bin_values(&values, scheme)
}

/// Leave-one-annotator-out accuracy: each rater is scored with exact match
/// against the union of the other raters' answers; a rater with several
/// aliases counts as correct if any alias matches. Returns one accuracy per
/// example, the mean over raters.
pub fn human_loo_accuracy(
    examples: &[(String, Vec<Vec<String>>)],
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(examples.len());
    for (id, raters) in examples {
        if raters.len() < 2 {
            return Err(Error::invalid(format!(
                "example {id:?} has {} rater(s), need at least 2",
                raters.len()
            )));
        }
        let mut correct = 0usize;
        for (held_out, answers) in raters.iter().enumerate() {
            let union: Vec<String> = raters
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held_out)
                .flat_map(|(_, a)| a.iter().cloned())
                .collect();
            if answers.iter().any(|alias| exact_match(alias, &union)) {
                correct += 1;
            }
        }
        out.push((id.clone(), correct as f64 / raters.len() as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicMode {
    /// Documents containing both salient entities (the relevant-doc count).
    Pair,
    /// Documents containing the salient question entity alone.
    QuestionOnly,
    /// Documents containing the salient answer entity alone.
    AnswerOnly,
}

/// Per-example document counts under one of the counting heuristics.
/// Only `Linked` records are counted; discarded records are skipped.
pub fn heuristic_counts(
    linked: &[LinkedQa],
    index: &EntityIndex,
    mode: HeuristicMode,
) -> Vec<(String, u64)> {
    linked
        .iter()
        .filter(|r| r.is_linked())
        .map(|r| {
            let q = r.question_entity.as_deref().expect("linked record has question entity");
            let a = r.answer_entity.as_deref().expect("linked record has answer entity");
            let count = match mode {
                HeuristicMode::Pair => index.count_pair(q, a),
                HeuristicMode::QuestionOnly => index.count_entity(q),
                HeuristicMode::AnswerOnly => index.count_entity(a),
            };
            (r.id.clone(), count)
        })
        .collect()
}

/// Keep only linked records whose pair count is below `max_pair_count`, the
/// subpopulation where single-entity baselines lose their signal.
pub fn subpopulation_filter(records: &[LinkedQa], max_pair_count: u64) -> Vec<LinkedQa> {
    records
        .iter()
        .filter(|r| r.is_linked() && r.relevant_doc_count < max_pair_count)
        .cloned()
        .collect()
}

/// Draw `n` distinct linked QA examples and one uniformly random relevant
/// document for each, for manual relevance audits. Deterministic given the
/// seed; output follows the input table order.
pub fn audit_sample(
    linked: &[LinkedQa],
    index: &EntityIndex,
    n: usize,
    seed: u64,
) -> Result<Vec<(String, u64)>> {
    use rand::Rng;

    let eligible: Vec<&LinkedQa> = linked.iter().filter(|r| r.is_linked()).collect();
    if eligible.len() < n {
        return Err(Error::invalid(format!(
            "audit sample of {n} requested but only {} linked records available",
            eligible.len()
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(&mut rng, eligible.len(), n).into_iter().collect();
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(n);
    for idx in chosen {
        let record = eligible[idx];
        let q = record.question_entity.as_deref().expect("linked");
        let a = record.answer_entity.as_deref().expect("linked");
        let docs = index.docs_for_pair(q, a);
        if docs.is_empty() {
            return Err(Error::invalid(format!(
                "record {:?} is linked but has no relevant documents in this index",
                record.id
            )));
        }
        let pick = rng.random_range(0..docs.ids().len());
        out.push((record.id.clone(), docs.ids()[pick]));
    }
    Ok(out)
}

/// Manual audit label for one (question, document) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditLabel {
    /// Contains enough information to answer the question.
    Full,
    /// Contains relevant information, but not enough to answer.
    Partial,
    /// Contains no relevant information.
    None,
}

impl std::str::FromStr for AuditLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(AuditLabel::Full),
            "partial" => Ok(AuditLabel::Partial),
            "none" => Ok(AuditLabel::None),
            other => Err(Error::invalid(format!(
                "unknown audit label {other:?}, expected full|partial|none"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPrecision {
    pub full: f64,
    pub partial: f64,
    pub none: f64,
    /// Fraction of documents with at least some relevant information.
    pub precision: f64,
}

/// Aggregate audit labels into class fractions; precision is full + partial.
pub fn audit_precision(labels: &[AuditLabel]) -> Result<AuditPrecision> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("no audit labels".into()));
    }
    let n = labels.len() as f64;
    let full = labels.iter().filter(|l| **l == AuditLabel::Full).count() as f64 / n;
    let partial = labels.iter().filter(|l| **l == AuditLabel::Partial).count() as f64 / n;
    let none = labels.iter().filter(|l| **l == AuditLabel::None).count() as f64 / n;
    Ok(AuditPrecision { full, partial, none, precision: full + partial })
}

/// Score a prediction file against gold answers, by example id. Every
/// example must have exactly one prediction.
pub fn score_predictions(
    examples: &[crate::qa::QaExample],
    predictions: &[PredictionRecord],
) -> Result<Vec<(String, bool)>> {
    let mut by_id = std::collections::HashMap::with_capacity(predictions.len());
    let mut seen = HashSet::with_capacity(predictions.len());
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
        by_id.insert(p.id.as_str(), p);
    }
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let p = by_id
            .get(ex.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no prediction for example {:?}", ex.id)))?;
        out.push((ex.id.clone(), exact_match(&p.prediction, &ex.answers)));
    }
    Ok(out)
}

/// Mean of values over records whose count is below `max_count`: the rare
/// slice fed to model-scaling fits.
pub fn rare_slice_mean(records: &[(u64, f64)], max_count: u64) -> Result<f64> {
    let slice: Vec<f64> =
        records.iter().filter(|(c, _)| *c < max_count).map(|&(_, v)| v).collect();
    if slice.is_empty() {
        return Err(Error::EmptyInput(format!("no records with count < {max_count}")));
    }
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}
