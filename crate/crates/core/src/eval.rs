//! Scoring, threshold selection and evaluation reports.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldSet, IgnKeys, PreparedCorpus, Vocabulary};
use crate::exec::{map_ordered, Execution};
use crate::layers::Mode;
use crate::model::HinModel;
use crate::rng::{substream, Stream};
use crate::Result;

/// Records scoring below this floor are never materialized.
pub const SCORE_FLOOR: f64 = 1e-4;

/// Margin subtracted from the cut score so the strict `score > δ`
/// comparison includes the boundary record.
pub const DELTA_MARGIN: f64 = 1e-12;

/// One scored candidate fact.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub score: f64,
}

/// Score every candidate pair of every document in eval mode. Documents
/// fan out over the executor; the merge order is fixed (ascending document
/// id), so output is identical for both executors. Records are sorted by
/// (doc id, score descending) with a deterministic tiebreak.
pub fn score_corpus(
    model: &HinModel,
    corpus: &PreparedCorpus,
    exec: Execution,
) -> Result<Vec<PredictionRecord>> {
    let mut doc_order: Vec<usize> = (0..corpus.docs.len()).collect();
    doc_order.sort_by(|&a, &b| corpus.docs[a].id.cmp(&corpus.docs[b].id));

    let per_doc = map_ordered(exec, &doc_order, |&di| {
        let doc = &corpus.docs[di];
        let mut rng = substream(0, Stream::Dropout, 0, 0);
        let mut df = model.begin_doc(doc, Mode::Eval, &mut rng)?;
        let mut out = Vec::new();
        for pair in &doc.pairs {
            let pf = df.forward_pair(pair, &mut rng)?;
            for (r, &p) in pf.probabilities.iter().enumerate() {
                if p >= SCORE_FLOOR {
                    out.push(PredictionRecord {
                        doc_id: doc.id.clone(),
                        head: pair.head,
                        tail: pair.tail,
                        relation: r,
                        score: p,
                    });
                }
            }
        }
        Ok(out)
    })?;

    let mut records: Vec<PredictionRecord> = per_doc.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

/// Sort by (doc id, score descending), tiebreaking on (head, tail,
/// relation) for full determinism.
pub fn sort_records(records: &mut [PredictionRecord]) {
    records.sort_by(|a, b| {
        a.doc_id
            .cmp(&b.doc_id)
            .then(b.score.partial_cmp(&a.score).expect("finite scores"))
            .then(a.head.cmp(&b.head))
            .then(a.tail.cmp(&b.tail))
            .then(a.relation.cmp(&b.relation))
    });
}

/// One line per record: doc id, head, tail, relation name, score to nine
/// decimal places.
pub fn format_records(records: &[PredictionRecord], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for r in records {
        let name = if r.relation < vocab.relations.len() {
            vocab.relation_name(r.relation)
        } else {
            "?"
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.9}\n",
            r.doc_id, r.head, r.tail, name, r.score
        ));
    }
    out
}

/// Outcome of the ranked threshold sweep.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdChoice {
    /// Threshold to apply with strict `score > delta`; +∞ when even the
    /// best prefix has zero F1 (predict nothing).
    pub delta: f64,
    /// Raw score of the last record in the best prefix.
    pub cut_score: Option<f64>,
    pub best_f1: f64,
    pub prefix_len: usize,
}

/// Rank records by confidence and sweep prefixes: the score of the last
/// record in the F1-maximizing prefix becomes the cut, with F1 ties broken
/// toward the larger prefix (higher recall). The applied threshold sits
/// just below the cut so the strict comparison keeps the boundary record.
pub fn select_threshold(records: &[PredictionRecord], gold: &GoldSet) -> ThresholdChoice {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.doc_id.cmp(&b.doc_id))
            .then(a.head.cmp(&b.head))
            .then(a.tail.cmp(&b.tail))
            .then(a.relation.cmp(&b.relation))
    });

    let total_gold = gold.len();
    let mut tp = 0usize;
    let mut best_f1 = 0.0f64;
    let mut best_prefix = 0usize;
    for (i, r) in sorted.iter().enumerate() {
        if gold.contains(&r.doc_id, r.head, r.tail, r.relation) {
            tp += 1;
        }
        let f1 = f1_score(tp, i + 1, total_gold);
        if f1 >= best_f1 && f1 > 0.0 {
            best_f1 = f1;
            best_prefix = i + 1;
        }
    }
    if best_prefix == 0 {
        return ThresholdChoice {
            delta: f64::INFINITY,
            cut_score: None,
            best_f1: 0.0,
            prefix_len: 0,
        };
    }
    let cut = sorted[best_prefix - 1].score;
    ThresholdChoice {
        delta: cut - DELTA_MARGIN,
        cut_score: Some(cut),
        best_f1,
        prefix_len: best_prefix,
    }
}

fn f1_score(tp: usize, predicted: usize, gold: usize) -> f64 {
    let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Recall per evidence-count bucket, sizes included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBucket {
    pub label: String,
    pub size: usize,
    pub recalled: usize,
    pub recall: f64,
}

/// Full evaluation at a fixed threshold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_f1: f64,
    /// Applied threshold; `None` encodes +∞ (empty prediction set).
    pub delta: Option<f64>,
    pub predicted: usize,
    pub gold: usize,
    pub true_positives: usize,
    pub ign_predicted: usize,
    pub ign_gold: usize,
    pub ign_true_positives: usize,
    /// Buckets for evidence counts 1..6 and ≥7.
    pub evidence_recall: Vec<EvidenceBucket>,
    /// Facts with no annotated evidence, reported separately.
    pub zero_evidence: EvidenceBucket,
}

impl EvalReport {
    pub fn delta_or_inf(&self) -> f64 {
        self.delta.unwrap_or(f64::INFINITY)
    }
}

fn bucket_label(evidence_len: usize) -> Option<&'static str> {
    match evidence_len {
        0 => None,
        1 => Some("1"),
        2 => Some("2"),
        3 => Some("3"),
        4 => Some("4"),
        5 => Some("5"),
        6 => Some("6"),
        _ => Some(">=7"),
    }
}

/// Recall grouped by the number of supporting sentences of each gold fact.
/// Facts with empty evidence go to a separate zero bucket, excluded from
/// the main table.
pub fn recall_by_evidence(
    predicted: &HashSet<(String, usize, usize, usize)>,
    gold: &GoldSet,
) -> (Vec<EvidenceBucket>, EvidenceBucket) {
    let labels = ["1", "2", "3", "4", "5", "6", ">=7"];
    let mut size = vec![0usize; labels.len()];
    let mut hit = vec![0usize; labels.len()];
    let mut zero = EvidenceBucket { label: "0".into(), size: 0, recalled: 0, recall: 0.0 };
    for f in &gold.facts {
        let recalled =
            predicted.contains(&(f.doc_id.clone(), f.head, f.tail, f.relation));
        match bucket_label(f.evidence_len) {
            None => {
                zero.size += 1;
                if recalled {
                    zero.recalled += 1;
                }
            }
            Some(label) => {
                let i = labels.iter().position(|l| *l == label).expect("known label");
                size[i] += 1;
                if recalled {
                    hit[i] += 1;
                }
            }
        }
    }
    zero.recall = if zero.size == 0 { 0.0 } else { zero.recalled as f64 / zero.size as f64 };
    let table = labels
        .iter()
        .enumerate()
        .map(|(i, label)| EvidenceBucket {
            label: label.to_string(),
            size: size[i],
            recalled: hit[i],
            recall: if size[i] == 0 { 0.0 } else { hit[i] as f64 / size[i] as f64 },
        })
        .collect();
    (table, zero)
}

/// Evaluate records against gold at threshold `delta` (strict `>`).
///
/// The Ign variant removes, from both the predicted and gold sides, every
/// fact whose surface-name combination and relation also appear in the
/// training split (`ign`); pass [`IgnKeys::empty`] to make it coincide with
/// plain F1. `corpus` supplies entity surface names for predicted records.
pub fn evaluate_f1(
    records: &[PredictionRecord],
    gold: &GoldSet,
    delta: f64,
    ign: &IgnKeys,
    corpus: &PreparedCorpus,
) -> EvalReport {
    let predicted: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.score > delta).collect();
    let predicted_keys: HashSet<(String, usize, usize, usize)> = predicted
        .iter()
        .map(|r| (r.doc_id.clone(), r.head, r.tail, r.relation))
        .collect();

    let tp = gold
        .facts
        .iter()
        .filter(|f| predicted_keys.contains(&(f.doc_id.clone(), f.head, f.tail, f.relation)))
        .count();
    let precision = if predicted_keys.is_empty() {
        0.0
    } else {
        tp as f64 / predicted_keys.len() as f64
    };
    let recall = if gold.is_empty() { 0.0 } else { tp as f64 / gold.len() as f64 };
    let f1 = f1_score(tp, predicted_keys.len(), gold.len());

    // Ign universe: drop name-overlapping facts from both sides.
    let ign_gold: Vec<_> = gold.facts.iter().filter(|f| !ign.overlaps(f)).collect();
    let ign_gold_keys: HashSet<(String, usize, usize, usize)> = ign_gold
        .iter()
        .map(|f| (f.doc_id.clone(), f.head, f.tail, f.relation))
        .collect();
    let mut ign_predicted = 0usize;
    let mut ign_tp = 0usize;
    for r in &predicted {
        let keep = match corpus.doc_by_id(&r.doc_id) {
            Some(doc) => {
                let heads = &doc.entity_names[r.head];
                let tails = &doc.entity_names[r.tail];
                !heads.iter().any(|hn| {
                    tails.iter().any(|tn| ign.contains(hn, tn, r.relation))
                })
            }
            None => true,
        };
        if keep {
            ign_predicted += 1;
            if ign_gold_keys.contains(&(r.doc_id.clone(), r.head, r.tail, r.relation)) {
                ign_tp += 1;
            }
        }
    }
    let ign_f1 = f1_score(ign_tp, ign_predicted, ign_gold.len());

    let (evidence_recall, zero_evidence) = recall_by_evidence(&predicted_keys, gold);

    EvalReport {
        precision,
        recall,
        f1,
        ign_f1,
        delta: if delta.is_finite() { Some(delta) } else { None },
        predicted: predicted_keys.len(),
        gold: gold.len(),
        true_positives: tp,
        ign_predicted,
        ign_gold: ign_gold.len(),
        ign_true_positives: ign_tp,
        evidence_recall,
        zero_evidence,
    }
}

/// Human-readable rendering of a report.
pub fn render_report(report: &EvalReport) -> String {
    let delta = match report.delta {
        Some(d) => format!("{d:.9}"),
        None => "inf".into(),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "precision {:.6}  recall {:.6}  F1 {:.6}  Ign F1 {:.6}  delta {}\n",
        report.precision, report.recall, report.f1, report.ign_f1, delta
    ));
    out.push_str(&format!(
        "predicted {}  gold {}  true positives {}\n",
        report.predicted, report.gold, report.true_positives
    ));
    out.push_str(&format!(
        "ign universe: predicted {}  gold {}  true positives {}\n",
        report.ign_predicted, report.ign_gold, report.ign_true_positives
    ));
    out.push_str("recall by number of supporting sentences:\n");
    out.push_str("  evidence   facts  recalled  recall\n");
    for b in &report.evidence_recall {
        out.push_str(&format!(
            "  {:<9} {:>5} {:>9}  {:.4}\n",
            b.label, b.size, b.recalled, b.recall
        ));
    }
    if report.zero_evidence.size > 0 {
        out.push_str(&format!(
            "  (no evidence: {} facts, recall {:.4})\n",
            report.zero_evidence.size, report.zero_evidence.recall
        ));
    }
    out
}
