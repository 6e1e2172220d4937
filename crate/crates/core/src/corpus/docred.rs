//! DocRED-schema JSON ingestion and serialization.
//!
//! A corpus file is a JSON list of records: `title`, `sents` (list of token
//! lists), `vertexSet` (one mention list per entity; each mention has
//! `name`, `sent_id`, `pos` = [start, end) and `type`), and optional
//! `labels` (`h`, `t`, `r`, `evidence`). Empty sentences are dropped and
//! sentence ids reindexed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, Entity, Mention, RelationFact, Vocabulary};
use crate::{HinError, Result};

#[derive(Debug, Deserialize, Serialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: [usize; 2],
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<RawLabel>,
}

/// Counts reported alongside a successful load.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadStats {
    pub documents: usize,
    pub dropped_empty_sentences: usize,
}

/// Load a corpus file. Relation strings are kept verbatim; pass a
/// vocabulary via [`load_docred_checked`] to reject unknown ones at
/// ingestion.
pub fn load_docred(path: impl AsRef<Path>) -> Result<(Vec<Document>, LoadStats)> {
    load_docred_checked(path, None)
}

/// Load a corpus file, validating every relation string against `vocab`
/// when one is supplied.
pub fn load_docred_checked(
    path: impl AsRef<Path>,
    vocab: Option<&Vocabulary>,
) -> Result<(Vec<Document>, LoadStats)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| HinError::io(&display, e))?;
    let records: Vec<RawRecord> =
        serde_json::from_str(&text).map_err(|e| HinError::Json { path: display.clone(), source: e })?;

    let mut stats = LoadStats { documents: records.len(), ..Default::default() };
    let mut docs = Vec::with_capacity(records.len());
    for (ri, rec) in records.into_iter().enumerate() {
        let (doc, dropped) = validate_record(&display, ri, rec, vocab)?;
        stats.dropped_empty_sentences += dropped;
        docs.push(doc);
    }
    Ok((docs, stats))
}

fn ingestion(path: &str, record: usize, field: impl Into<String>, msg: impl Into<String>) -> HinError {
    HinError::Ingestion {
        path: path.to_string(),
        record,
        field: field.into(),
        msg: msg.into(),
    }
}

fn validate_record(
    path: &str,
    ri: usize,
    rec: RawRecord,
    vocab: Option<&Vocabulary>,
) -> Result<(Document, usize)> {
    // Drop empty sentences, reindexing sentence ids.
    let mut remap = vec![usize::MAX; rec.sents.len()];
    let mut sentences = Vec::with_capacity(rec.sents.len());
    for (i, s) in rec.sents.into_iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        remap[i] = sentences.len();
        sentences.push(s);
    }
    let dropped = remap.iter().filter(|&&m| m == usize::MAX).count();

    let mut entities = Vec::with_capacity(rec.vertex_set.len());
    for (ei, mentions) in rec.vertex_set.into_iter().enumerate() {
        if mentions.is_empty() {
            return Err(ingestion(
                path,
                ri,
                format!("vertexSet[{ei}]"),
                "entity has no mentions",
            ));
        }
        let etype = mentions[0].etype.clone();
        let mut out = Vec::with_capacity(mentions.len());
        for (mi, m) in mentions.into_iter().enumerate() {
            let field = format!("vertexSet[{ei}][{mi}]");
            if m.etype != etype {
                return Err(ingestion(
                    path,
                    ri,
                    field,
                    format!("mention type `{}` differs from entity type `{etype}`", m.etype),
                ));
            }
            if m.sent_id >= remap.len() || remap[m.sent_id] == usize::MAX {
                return Err(ingestion(
                    path,
                    ri,
                    format!("{field}.sent_id"),
                    format!("sentence id {} out of range", m.sent_id),
                ));
            }
            let sent_id = remap[m.sent_id];
            let [start, end] = m.pos;
            if start >= end {
                return Err(ingestion(
                    path,
                    ri,
                    format!("{field}.pos"),
                    format!("empty span [{start}, {end})"),
                ));
            }
            if end > sentences[sent_id].len() {
                return Err(ingestion(
                    path,
                    ri,
                    format!("{field}.pos"),
                    format!(
                        "span [{start}, {end}) exceeds sentence length {}",
                        sentences[sent_id].len()
                    ),
                ));
            }
            out.push(Mention { sent_id, start, end, name: m.name });
        }
        entities.push(Entity { mentions: out, etype });
    }

    let mut facts = Vec::with_capacity(rec.labels.len());
    for (li, label) in rec.labels.into_iter().enumerate() {
        let field = format!("labels[{li}]");
        if label.h >= entities.len() || label.t >= entities.len() {
            return Err(ingestion(
                path,
                ri,
                format!("{field}.h/t"),
                format!("entity index out of range (h={}, t={}, entities={})", label.h, label.t, entities.len()),
            ));
        }
        if label.h == label.t {
            return Err(ingestion(path, ri, format!("{field}.h/t"), "head equals tail"));
        }
        if let Some(v) = vocab {
            if v.relation_id(&label.r).is_none() {
                return Err(ingestion(
                    path,
                    ri,
                    format!("{field}.r"),
                    format!("unknown relation string `{}`", label.r),
                ));
            }
        }
        let mut evidence = Vec::with_capacity(label.evidence.len());
        for ev in label.evidence {
            if ev >= remap.len() {
                return Err(ingestion(
                    path,
                    ri,
                    format!("{field}.evidence"),
                    format!("sentence id {ev} out of range"),
                ));
            }
            if remap[ev] != usize::MAX {
                evidence.push(remap[ev]);
            }
        }
        facts.push(RelationFact {
            head: label.h,
            tail: label.t,
            relation: label.r,
            evidence,
        });
    }

    Ok((
        Document { id: rec.title, sentences, entities, facts },
        dropped,
    ))
}

/// Serialize documents back to the corpus schema. Deterministic for a given
/// document list.
pub fn serialize_docred(docs: &[Document]) -> String {
    let records: Vec<RawRecord> = docs
        .iter()
        .map(|d| RawRecord {
            title: d.id.clone(),
            sents: d.sentences.clone(),
            vertex_set: d
                .entities
                .iter()
                .map(|e| {
                    e.mentions
                        .iter()
                        .map(|m| RawMention {
                            name: m.name.clone(),
                            sent_id: m.sent_id,
                            pos: [m.start, m.end],
                            etype: e.etype.clone(),
                        })
                        .collect()
                })
                .collect(),
            labels: d
                .facts
                .iter()
                .map(|f| RawLabel {
                    h: f.head,
                    t: f.tail,
                    r: f.relation.clone(),
                    evidence: f.evidence.clone(),
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("corpus records serialize")
}
