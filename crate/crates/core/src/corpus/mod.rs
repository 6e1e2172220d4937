//! Corpus model: documents, entities, relation facts, vocabularies,
//! candidate-pair enumeration and distance features.

mod docred;
mod prepare;
mod synth;
mod vocab;

pub use docred::{load_docred, load_docred_checked, serialize_docred, LoadStats};
pub use prepare::{GoldFact, GoldSet, IgnKeys, PreparedCorpus, PreparedDoc, PreparedPair};
pub use synth::{gen_synthetic, SynthSpec};
pub use vocab::{build_vocab, load_vectors, Coverage, PretrainedVectors, Vocabulary, PAD_ID, UNK_ID};

use crate::{HinError, Result};

/// One contiguous token span inside a sentence referring to an entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mention {
    pub sent_id: usize,
    /// Token span [start, end) within the sentence.
    pub start: usize,
    pub end: usize,
    pub name: String,
}

/// All mentions of one entity plus its type label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub mentions: Vec<Mention>,
    pub etype: String,
}

/// A gold relation between entity indices, with supporting sentence ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationFact {
    pub head: usize,
    pub tail: usize,
    pub relation: String,
    pub evidence: Vec<usize>,
}

/// A tokenized document with annotated entities and facts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub facts: Vec<RelationFact>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    /// Global token offset of the start of a sentence.
    pub fn sentence_offset(&self, sent_id: usize) -> usize {
        self.sentences[..sent_id].iter().map(|s| s.len()).sum()
    }

    /// Global token offset of an entity's first mention.
    pub fn first_mention_start(&self, entity: usize) -> usize {
        self.entities[entity]
            .mentions
            .iter()
            .map(|m| self.sentence_offset(m.sent_id) + m.start)
            .min()
            .expect("entities have at least one mention after ingestion")
    }
}

/// One ordered candidate entity pair with a dense binary label vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    /// y_r = 1 iff a gold fact (head, tail, r) exists; all-zero is a valid
    /// negative pair.
    pub labels: Vec<f64>,
    pub bucket_ab: i64,
    pub bucket_ba: i64,
}

/// Signed log-spaced bucket for a token distance: exact for |x| ≤ 4, then
/// [5,7]→5, [8,15]→6, [16,31]→7, [32,63]→8, ≥64→9, mirrored for negatives.
pub fn distance_bucket(x: i64) -> i64 {
    let mag = x.unsigned_abs();
    let b = match mag {
        0..=4 => mag as i64,
        5..=7 => 5,
        8..=15 => 6,
        16..=31 => 7,
        32..=63 => 8,
        _ => 9,
    };
    if x < 0 {
        -b
    } else {
        b
    }
}

/// Number of rows a distance embedding table needs.
pub const DIST_BUCKETS: usize = 19;

/// Table row for a bucket (buckets span −9..=9).
pub fn bucket_index(bucket: i64) -> usize {
    (bucket + 9) as usize
}

/// Relative-distance buckets for an ordered entity pair, from the first
/// mentions' global token offsets: d_ab = start_a − start_b, d_ba = −d_ab.
pub fn relative_distance_buckets(doc: &Document, a: usize, b: usize) -> (i64, i64) {
    let start_a = doc.first_mention_start(a) as i64;
    let start_b = doc.first_mention_start(b) as i64;
    let d_ab = start_a - start_b;
    (distance_bucket(d_ab), distance_bucket(-d_ab))
}

/// All ordered pairs (a, b) with a ≠ b — m(m−1) for m entities — with label
/// vectors filled from the document's facts. Documents with fewer than two
/// entities yield an empty list.
pub fn enumerate_pairs(doc: &Document, vocab: &Vocabulary) -> Result<Vec<PairExample>> {
    let m = doc.entities.len();
    if m < 2 {
        return Ok(Vec::new());
    }
    let l = vocab.relations.len();
    let mut label_map: std::collections::HashMap<(usize, usize), Vec<f64>> =
        std::collections::HashMap::new();
    for (fi, fact) in doc.facts.iter().enumerate() {
        let rid = vocab.relation_id(&fact.relation).ok_or_else(|| HinError::Ingestion {
            path: doc.id.clone(),
            record: fi,
            field: "labels.r".into(),
            msg: format!("unknown relation string `{}`", fact.relation),
        })?;
        label_map
            .entry((fact.head, fact.tail))
            .or_insert_with(|| vec![0.0; l])[rid] = 1.0;
    }
    let mut out = Vec::with_capacity(m * (m - 1));
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let labels = label_map.remove(&(a, b)).unwrap_or_else(|| vec![0.0; l]);
            let (bucket_ab, bucket_ba) = relative_distance_buckets(doc, a, b);
            out.push(PairExample {
                doc_id: doc.id.clone(),
                head: a,
                tail: b,
                labels,
                bucket_ab,
                bucket_ba,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_entity_doc() -> Document {
        Document {
            id: "d0".into(),
            sentences: vec![
                vec!["A".into(), "works".into(), "at".into(), "B".into()],
                vec!["B".into(), "hired".into(), "A".into()],
            ],
            entities: vec![
                Entity {
                    mentions: vec![
                        Mention { sent_id: 0, start: 0, end: 1, name: "A".into() },
                        Mention { sent_id: 1, start: 2, end: 3, name: "A".into() },
                    ],
                    etype: "PER".into(),
                },
                Entity {
                    mentions: vec![Mention { sent_id: 0, start: 3, end: 4, name: "B".into() }],
                    etype: "ORG".into(),
                },
            ],
            facts: vec![RelationFact {
                head: 0,
                tail: 1,
                relation: "works_at".into(),
                evidence: vec![0],
            }],
        }
    }

    fn vocab_for(doc: &Document) -> Vocabulary {
        build_vocab(std::slice::from_ref(doc), None, 1).unwrap().0
    }

    #[test]
    fn bucket_examples_from_the_scheme() {
        // starts 3 and 10: d_ab = −7, d_ba = +7.
        assert_eq!(distance_bucket(-7), -5);
        assert_eq!(distance_bucket(7), 5);
        assert_eq!(distance_bucket(0), 0);
        // starts 0 and 40: |d| = 40 falls in [32, 63].
        assert_eq!(distance_bucket(-40), -8);
        assert_eq!(distance_bucket(40), 8);
        assert_eq!(distance_bucket(64), 9);
        assert_eq!(distance_bucket(4), 4);
        assert_eq!(distance_bucket(5), 5);
    }

    #[test]
    fn bucketing_is_odd() {
        for x in -200..=200 {
            assert_eq!(distance_bucket(-x), -distance_bucket(x));
        }
        assert!(bucket_index(-9) == 0 && bucket_index(9) == DIST_BUCKETS - 1);
    }

    #[test]
    fn pair_distance_buckets_from_first_mentions() {
        let doc = two_entity_doc();
        // First mentions: entity 0 at token 0, entity 1 at token 3.
        let (ab, ba) = relative_distance_buckets(&doc, 0, 1);
        assert_eq!((ab, ba), (-3, 3));
    }

    #[test]
    fn three_entities_give_six_pairs() {
        let mut doc = two_entity_doc();
        doc.entities.push(Entity {
            mentions: vec![Mention { sent_id: 1, start: 0, end: 1, name: "B".into() }],
            etype: "ORG".into(),
        });
        let vocab = vocab_for(&doc);
        let pairs = enumerate_pairs(&doc, &vocab).unwrap();
        assert_eq!(pairs.len(), 6);
    }

    #[test]
    fn labels_fill_only_the_annotated_direction() {
        let doc = two_entity_doc();
        let vocab = vocab_for(&doc);
        let pairs = enumerate_pairs(&doc, &vocab).unwrap();
        assert_eq!(pairs.len(), 2);
        let fwd = pairs.iter().find(|p| p.head == 0 && p.tail == 1).unwrap();
        let rev = pairs.iter().find(|p| p.head == 1 && p.tail == 0).unwrap();
        let rid = vocab.relation_id("works_at").unwrap();
        assert_eq!(fwd.labels[rid], 1.0);
        assert!(fwd.labels.iter().sum::<f64>() == 1.0);
        assert!(rev.labels.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn label_matrix_matches_brute_force_scan() {
        // Five entities, three facts.
        let mut doc = two_entity_doc();
        doc.facts.clear();
        doc.entities = (0..5)
            .map(|i| Entity {
                mentions: vec![Mention {
                    sent_id: 0,
                    start: i.min(3),
                    end: i.min(3) + 1,
                    name: format!("e{i}"),
                }],
                etype: "PER".into(),
            })
            .collect();
        doc.facts = vec![
            RelationFact { head: 0, tail: 1, relation: "r0".into(), evidence: vec![0] },
            RelationFact { head: 0, tail: 1, relation: "r1".into(), evidence: vec![1] },
            RelationFact { head: 3, tail: 2, relation: "r0".into(), evidence: vec![0, 1] },
        ];
        let vocab = vocab_for(&doc);
        let pairs = enumerate_pairs(&doc, &vocab).unwrap();
        assert_eq!(pairs.len(), 20);
        for p in &pairs {
            for (rid, rel) in vocab.relations.iter().enumerate() {
                let expect = doc
                    .facts
                    .iter()
                    .any(|f| f.head == p.head && f.tail == p.tail && &f.relation == rel);
                assert_eq!(p.labels[rid] == 1.0, expect);
            }
        }
        // Every gold fact appears in exactly one pair's label vector.
        let total: f64 = pairs.iter().flat_map(|p| p.labels.iter()).sum();
        assert_eq!(total, doc.facts.len() as f64);
    }

    #[test]
    fn fewer_than_two_entities_is_empty_not_error() {
        let mut doc = two_entity_doc();
        doc.entities.truncate(1);
        doc.facts.clear();
        let vocab = vocab_for(&doc);
        assert!(enumerate_pairs(&doc, &vocab).unwrap().is_empty());
    }

    #[test]
    fn unknown_relation_string_is_an_ingestion_error() {
        let doc = two_entity_doc();
        let mut other = doc.clone();
        other.facts[0].relation = "unheard_of".into();
        let vocab = vocab_for(&doc);
        let err = enumerate_pairs(&other, &vocab).unwrap_err().to_string();
        assert!(err.contains("unheard_of"), "{err}");
    }
}
