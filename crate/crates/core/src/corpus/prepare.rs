//! Model-ready views of documents: id sequences, span offsets, candidate
//! pairs with dense labels, and gold-fact sets for scoring.

use std::collections::HashSet;

use super::{bucket_index, enumerate_pairs, Document, Vocabulary};
use crate::{HinError, Result};

/// Reserved id 0 in the type and coreference tables marks tokens outside
/// any mention.
pub const NONE_ID: usize = 0;

/// One candidate pair ready for a forward pass.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub head: usize,
    pub tail: usize,
    pub labels: Vec<f64>,
    pub dist_ab_idx: usize,
    pub dist_ba_idx: usize,
    /// True iff any label coordinate is set.
    pub positive: bool,
}

/// A document lowered to id sequences over the whole token stream.
#[derive(Clone, Debug)]
pub struct PreparedDoc {
    pub id: String,
    pub n: usize,
    /// Distinct mention surface names per entity (for Ign F1 matching).
    pub entity_names: Vec<Vec<String>>,
    pub word_ids: Vec<usize>,
    /// 0 = outside any mention, otherwise type id + 1.
    pub type_ids: Vec<usize>,
    /// 0 = outside any mention, otherwise 1 + first-appearance rank of the
    /// entity, clamped to the coreference table size.
    pub coref_ids: Vec<usize>,
    /// Global token ranges [start, end) per sentence.
    pub sent_ranges: Vec<(usize, usize)>,
    /// Global token spans per entity mention.
    pub mention_spans: Vec<Vec<(usize, usize)>>,
    pub first_starts: Vec<usize>,
    pub pairs: Vec<PreparedPair>,
}

/// A gold fact with everything scoring needs.
#[derive(Clone, Debug)]
pub struct GoldFact {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub evidence_len: usize,
    pub head_names: Vec<String>,
    pub tail_names: Vec<String>,
}

/// Gold facts over a corpus with set-membership queries.
#[derive(Clone, Debug, Default)]
pub struct GoldSet {
    pub facts: Vec<GoldFact>,
    keys: HashSet<(String, usize, usize, usize)>,
}

impl GoldSet {
    /// Assemble directly from fact records (fixtures and tests).
    pub fn from_facts(facts: Vec<GoldFact>) -> Self {
        let keys = facts
            .iter()
            .map(|f| (f.doc_id.clone(), f.head, f.tail, f.relation))
            .collect();
        GoldSet { facts, keys }
    }

    pub fn from_docs(docs: &[Document], vocab: &Vocabulary) -> Result<Self> {
        let mut facts = Vec::new();
        let mut keys = HashSet::new();
        for d in docs {
            for (fi, f) in d.facts.iter().enumerate() {
                let relation = vocab.relation_id(&f.relation).ok_or_else(|| HinError::Ingestion {
                    path: d.id.clone(),
                    record: fi,
                    field: "labels.r".into(),
                    msg: format!("unknown relation string `{}`", f.relation),
                })?;
                let names = |e: usize| -> Vec<String> {
                    let mut v: Vec<String> =
                        d.entities[e].mentions.iter().map(|m| m.name.clone()).collect();
                    v.sort();
                    v.dedup();
                    v
                };
                keys.insert((d.id.clone(), f.head, f.tail, relation));
                facts.push(GoldFact {
                    doc_id: d.id.clone(),
                    head: f.head,
                    tail: f.tail,
                    relation,
                    evidence_len: f.evidence.len(),
                    head_names: names(f.head),
                    tail_names: names(f.tail),
                });
            }
        }
        Ok(GoldSet { facts, keys })
    }

    pub fn contains(&self, doc_id: &str, head: usize, tail: usize, relation: usize) -> bool {
        self.keys.contains(&(doc_id.to_string(), head, tail, relation))
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

/// Surface-name overlap keys from a training split: a dev/test fact whose
/// (head name, tail name, relation) triple appears here is removed from the
/// Ign F1 universe.
#[derive(Clone, Debug, Default)]
pub struct IgnKeys {
    keys: HashSet<(String, String, usize)>,
}

impl IgnKeys {
    pub fn from_gold(train: &GoldSet) -> Self {
        let mut keys = HashSet::new();
        for f in &train.facts {
            for hn in &f.head_names {
                for tn in &f.tail_names {
                    keys.insert((hn.clone(), tn.clone(), f.relation));
                }
            }
        }
        IgnKeys { keys }
    }

    pub fn empty() -> Self {
        IgnKeys::default()
    }

    pub fn contains(&self, head_name: &str, tail_name: &str, relation: usize) -> bool {
        self.keys
            .contains(&(head_name.to_string(), tail_name.to_string(), relation))
    }

    /// Whether any name combination of this fact overlaps the training set.
    pub fn overlaps(&self, f: &GoldFact) -> bool {
        f.head_names.iter().any(|hn| {
            f.tail_names
                .iter()
                .any(|tn| self.keys.contains(&(hn.clone(), tn.clone(), f.relation)))
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A corpus lowered for the model, with a flat (doc, pair) index for
/// batching and the gold set for scoring.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub docs: Vec<PreparedDoc>,
    pub gold: GoldSet,
    /// Flattened (doc index, pair index) covering every candidate pair.
    pub pair_index: Vec<(usize, usize)>,
    doc_index: std::collections::HashMap<String, usize>,
}

impl PreparedCorpus {
    /// Lower a corpus. `label_width` is the model's relation output width;
    /// label vectors are padded up to it and it must cover the vocabulary.
    pub fn prepare(
        docs: &[Document],
        vocab: &Vocabulary,
        coref_buckets: usize,
        label_width: usize,
    ) -> Result<Self> {
        if label_width < vocab.relations.len() {
            return Err(HinError::invalid(
                "label width",
                format!(
                    "relation inventory {} exceeds label width {label_width}",
                    vocab.relations.len()
                ),
            ));
        }
        let mut prepared = Vec::with_capacity(docs.len());
        for d in docs {
            prepared.push(prepare_doc(d, vocab, coref_buckets, label_width)?);
        }
        let gold = GoldSet::from_docs(docs, vocab)?;
        let mut pair_index = Vec::new();
        for (di, d) in prepared.iter().enumerate() {
            for pi in 0..d.pairs.len() {
                pair_index.push((di, pi));
            }
        }
        let doc_index = prepared
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        Ok(PreparedCorpus { docs: prepared, gold, pair_index, doc_index })
    }

    pub fn doc_by_id(&self, id: &str) -> Option<&PreparedDoc> {
        self.doc_index.get(id).map(|&i| &self.docs[i])
    }

    pub fn pair_count(&self) -> usize {
        self.pair_index.len()
    }
}

fn prepare_doc(
    doc: &Document,
    vocab: &Vocabulary,
    coref_buckets: usize,
    label_width: usize,
) -> Result<PreparedDoc> {
    let n = doc.token_count();
    let mut word_ids = Vec::with_capacity(n);
    let mut sent_ranges = Vec::with_capacity(doc.sentences.len());
    let mut offset = 0;
    for s in &doc.sentences {
        sent_ranges.push((offset, offset + s.len()));
        for tok in s {
            word_ids.push(vocab.word_id(tok));
        }
        offset += s.len();
    }

    // Coreference ids follow document order of first appearance.
    let mut order: Vec<usize> = (0..doc.entities.len()).collect();
    order.sort_by_key(|&e| doc.first_mention_start(e));
    let mut coref_rank = vec![0usize; doc.entities.len()];
    for (rank, &e) in order.iter().enumerate() {
        coref_rank[e] = (rank + 1).min(coref_buckets.saturating_sub(1));
    }

    let mut type_ids = vec![NONE_ID; n];
    let mut coref_ids = vec![NONE_ID; n];
    let mut mention_spans = Vec::with_capacity(doc.entities.len());
    let mut first_starts = Vec::with_capacity(doc.entities.len());
    let mut entity_names = Vec::with_capacity(doc.entities.len());
    for (ei, e) in doc.entities.iter().enumerate() {
        let mut names: Vec<String> = e.mentions.iter().map(|m| m.name.clone()).collect();
        names.sort();
        names.dedup();
        entity_names.push(names);
        let tid = vocab.type_id(&e.etype).ok_or_else(|| HinError::Ingestion {
            path: doc.id.clone(),
            record: ei,
            field: "vertexSet.type".into(),
            msg: format!("entity type `{}` not in the vocabulary", e.etype),
        })? + 1;
        let mut spans = Vec::with_capacity(e.mentions.len());
        for m in &e.mentions {
            let base = doc.sentence_offset(m.sent_id);
            let (gs, ge) = (base + m.start, base + m.end);
            for t in gs..ge {
                type_ids[t] = tid;
                coref_ids[t] = coref_rank[ei];
            }
            spans.push((gs, ge));
        }
        mention_spans.push(spans);
        first_starts.push(doc.first_mention_start(ei));
    }

    let pairs = enumerate_pairs(doc, vocab)?
        .into_iter()
        .map(|p| {
            let positive = p.labels.iter().any(|&y| y > 0.0);
            let mut labels = p.labels;
            labels.resize(label_width, 0.0);
            PreparedPair {
                head: p.head,
                tail: p.tail,
                labels,
                dist_ab_idx: bucket_index(p.bucket_ab),
                dist_ba_idx: bucket_index(p.bucket_ba),
                positive,
            }
        })
        .collect();

    Ok(PreparedDoc {
        id: doc.id.clone(),
        n,
        entity_names,
        word_ids,
        type_ids,
        coref_ids,
        sent_ranges,
        mention_spans,
        first_starts,
        pairs,
    })
}
