//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! Every positive fact (h, t, r) is expressed by two trigger tokens planted
//! in two distinct sentences: one sentence holds the relation's head trigger
//! next to a mention of h, the other holds the tail trigger with a mention
//! of t. Evidence records those two sentences, so every fact requires
//! cross-sentence aggregation and labels are a deterministic function of
//! document content. Distractor sentences carry noise triggers and mentions
//! of entities outside any fact; trigger sentences carry exactly one
//! mention, so no unintended (entity, trigger) co-occurrence arises.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Entity, Mention, RelationFact};
use crate::rng::{substream, Stream};
use crate::{HinError, Result};

const ENTITY_TYPES: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];
const NOISE_TRIGGERS: usize = 4;
const SENTENCE_LEN: usize = 6;

/// Generation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub documents: usize,
    pub entities_per_doc: usize,
    pub relation_count: usize,
    pub sentences_per_doc: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            documents: 32,
            entities_per_doc: 4,
            relation_count: 4,
            sentences_per_doc: 6,
            vocab_size: 200,
            seed: 7,
        }
    }
}

pub fn head_trigger(relation: usize) -> String {
    format!("rt{relation}h")
}

pub fn tail_trigger(relation: usize) -> String {
    format!("rt{relation}t")
}

pub fn relation_name(relation: usize) -> String {
    format!("R{relation}")
}

enum Item {
    Token(String),
    Mention(usize),
}

/// Generate a corpus. Identical specs produce byte-identical corpora.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Vec<Document>> {
    validate(spec)?;
    let name_pool: Vec<String> = (0..spec.entities_per_doc.max(3) * 2)
        .map(|i| format!("en{i}"))
        .collect();
    let essential = name_pool.len() + 2 * spec.relation_count + NOISE_TRIGGERS;
    let filler_count = spec.vocab_size.saturating_sub(essential).max(4);
    let fillers: Vec<String> = (0..filler_count).map(|i| format!("w{i}")).collect();
    let noise: Vec<String> = (0..NOISE_TRIGGERS).map(|i| format!("nz{i}")).collect();

    let facts_per_doc = facts_per_doc(spec);
    let mut docs = Vec::with_capacity(spec.documents);
    for di in 0..spec.documents {
        let mut rng = substream(spec.seed, Stream::Synth, di as u64, 0);
        docs.push(gen_document(spec, di, facts_per_doc, &name_pool, &fillers, &noise, &mut rng)?);
    }
    Ok(docs)
}

fn facts_per_doc(spec: &SynthSpec) -> usize {
    // Two sentences per fact, keeping at least one trigger-free sentence
    // when possible so entities outside facts have somewhere to appear.
    let by_sentences = (spec.sentences_per_doc.saturating_sub(1)) / 2;
    spec.relation_count.min(by_sentences).max(1)
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let err = |msg: String| Err(HinError::invalid("synth spec", msg));
    if spec.documents == 0
        || spec.entities_per_doc == 0
        || spec.relation_count == 0
        || spec.sentences_per_doc == 0
        || spec.vocab_size == 0
    {
        return err("all spec values must be at least 1".into());
    }
    if spec.entities_per_doc < 2 {
        return err("at least 2 entities per document are needed to form a pair".into());
    }
    if spec.sentences_per_doc < 2 {
        return err("at least 2 sentences per document are needed for cross-sentence evidence".into());
    }
    let f = facts_per_doc(spec);
    let clean = spec.sentences_per_doc - 2 * f;
    // Worst case every entity outside the chosen facts needs a slot in a
    // trigger-free sentence, two mentions per sentence.
    let max_unplaced = spec.entities_per_doc.saturating_sub(2);
    if max_unplaced > clean * 2 {
        return err(format!(
            "{} entities cannot fit the {} trigger-free sentence slots",
            spec.entities_per_doc,
            clean * 2
        ));
    }
    Ok(())
}

fn gen_document(
    spec: &SynthSpec,
    di: usize,
    facts_per_doc: usize,
    name_pool: &[String],
    fillers: &[String],
    noise: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Document> {
    let m = spec.entities_per_doc;
    let l = spec.sentences_per_doc;

    let mut names: Vec<&String> = name_pool.iter().collect();
    names.shuffle(rng);
    let names: Vec<String> = names.into_iter().take(m).cloned().collect();

    // One fact per chosen relation keeps the trigger pattern unambiguous.
    let mut relations: Vec<usize> = (0..spec.relation_count).collect();
    relations.shuffle(rng);
    relations.truncate(facts_per_doc);
    let mut facts: Vec<(usize, usize, usize)> = Vec::new();
    for &r in &relations {
        let h = rng.gen_range(0..m);
        let mut t = rng.gen_range(0..m - 1);
        if t >= h {
            t += 1;
        }
        facts.push((h, t, r));
    }

    let mut slots: Vec<usize> = (0..l).collect();
    slots.shuffle(rng);
    let mut items: Vec<Vec<Item>> = (0..l).map(|_| Vec::new()).collect();
    let mut fact_records = Vec::new();
    for (fi, &(h, t, r)) in facts.iter().enumerate() {
        let s_head = slots[2 * fi];
        let s_tail = slots[2 * fi + 1];
        items[s_head].push(Item::Token(head_trigger(r)));
        items[s_head].push(Item::Mention(h));
        items[s_tail].push(Item::Token(tail_trigger(r)));
        items[s_tail].push(Item::Mention(t));
        let mut evidence = vec![s_head, s_tail];
        evidence.sort_unstable();
        fact_records.push(RelationFact {
            head: h,
            tail: t,
            relation: relation_name(r),
            evidence,
        });
    }

    // Entities outside any fact still need a mention; they go into
    // trigger-free sentences, at most two per sentence.
    let clean: Vec<usize> = slots[2 * facts.len()..].to_vec();
    let mut in_fact = vec![false; m];
    for &(h, t, _) in &facts {
        in_fact[h] = true;
        in_fact[t] = true;
    }
    let mut queue: Vec<usize> = (0..m).filter(|&e| !in_fact[e]).collect();
    // Occasional extra mention of a fact entity exercises mention averaging.
    for &(h, t, _) in &facts {
        if rng.gen_bool(0.5) {
            queue.push(if rng.gen_bool(0.5) { h } else { t });
        }
    }
    let capacity = clean.len() * 2;
    queue.truncate(capacity);
    let unplaced: Vec<usize> = (0..m).filter(|&e| !in_fact[e]).collect();
    if unplaced.len() > capacity {
        return Err(HinError::invalid(
            "synth spec",
            format!("document {di}: {} entities exceed distractor capacity {capacity}", unplaced.len()),
        ));
    }
    for (qi, &e) in queue.iter().enumerate() {
        items[clean[qi % clean.len().max(1)]].push(Item::Mention(e));
    }
    for &s in &clean {
        if rng.gen_bool(0.5) {
            items[s].push(Item::Token(noise[rng.gen_range(0..noise.len())].clone()));
        }
    }

    // Assemble token lists: pad with fillers, then shuffle positions.
    let mut sentences: Vec<Vec<String>> = Vec::with_capacity(l);
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); m];
    for (sid, sentence_items) in items.into_iter().enumerate() {
        let mut slots: Vec<Option<Item>> = sentence_items.into_iter().map(Some).collect();
        while slots.len() < SENTENCE_LEN {
            slots.push(None);
        }
        slots.shuffle(rng);
        let mut tokens = Vec::with_capacity(slots.len());
        for slot in slots {
            match slot {
                None => tokens.push(fillers[rng.gen_range(0..fillers.len())].clone()),
                Some(Item::Token(t)) => tokens.push(t),
                Some(Item::Mention(e)) => {
                    mentions[e].push(Mention {
                        sent_id: sid,
                        start: tokens.len(),
                        end: tokens.len() + 1,
                        name: names[e].clone(),
                    });
                    tokens.push(names[e].clone());
                }
            }
        }
        sentences.push(tokens);
    }

    let entities = (0..m)
        .map(|e| Entity {
            mentions: std::mem::take(&mut mentions[e]),
            etype: ENTITY_TYPES[e % ENTITY_TYPES.len()].to_string(),
        })
        .collect();

    Ok(Document {
        id: format!("synth-{di:04}"),
        sentences,
        entities,
        facts: fact_records,
    })
}
