//! Document encoding and per-pair forward passes.
//!
//! A [`DocForward`] owns one tape per document: parameters are bound once,
//! the encoding (token states and pooled sentence vectors) is computed once
//! and reused by every candidate pair of that document, and pair-specific
//! work builds on top. Gradients for all pairs of a document therefore flow
//! through a single shared encoding subgraph.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{AttnIdx, HinIndex, LstmIdx};
use crate::corpus::{PreparedDoc, PreparedPair};
use crate::layers::{
    additive_attention_pool, bilstm_forward, dropout_apply, ffnn_relu_dropout, AttnBound,
    FfnnBound, LstmBound, LstmDirBound, Mode,
};
use crate::tensor::{Fault, ParamSet, Tape, Value};
use crate::{HinError, Result};

/// Borrowed view of a model: configuration, index, parameters.
#[derive(Clone, Copy)]
pub struct ModelRef<'a> {
    pub cfg: &'a ModelConfig,
    pub idx: &'a HinIndex,
    pub set: &'a ParamSet,
}

/// Everything produced for one candidate pair.
#[derive(Clone, Debug)]
pub struct PairForward {
    pub head: usize,
    pub tail: usize,
    /// Per-relation probabilities, on the tape (for loss building).
    pub probs: Value,
    /// The same probabilities, extracted.
    pub probabilities: Vec<f64>,
    /// Entity-level inference vector.
    pub entity_vec: Vec<f64>,
    /// Sentence-level inference vectors (empty in the flat path).
    pub sentence_vecs: Vec<Vec<f64>>,
    /// Document-level inference vector.
    pub doc_vec: Vec<f64>,
    /// Sentence attention weights (empty in the flat path).
    pub sentence_weights: Vec<f64>,
    /// Per-subspace (E_b − E_a) blocks before the entity net (empty when
    /// the translation term is ablated).
    pub translation_blocks: Vec<Vec<f64>>,
    /// Per-subspace bi-affine blocks (empty when ablated).
    pub bilinear_blocks: Vec<Vec<f64>>,
}

struct Encoding {
    /// Embedded (and input-dropout) token rows, [n×(d_w+d_t+d_c)].
    embedded: Value,
    /// Token states from the document encoder, [n×d].
    token_h: Value,
    /// Pooled sentence vectors S_j (hierarchical path only).
    sent_pooled: Vec<Value>,
    /// Document vector for the flat path, computed once per document.
    flat_doc: Option<Value>,
}

/// The matching construction comparing a pooled sentence vector with the
/// entity-level vector: [s ; i_e ; s − i_e ; s ∘ i_e].
pub(crate) fn matching_features(tape: &mut Tape, s: Value, i_e: Value) -> Result<Value> {
    let diff = tape.sub(s, i_e)?;
    let prod = tape.hadamard(s, i_e)?;
    tape.concat_last(&[s, i_e, diff, prod])
}

/// One document's forward state.
pub struct DocForward<'a> {
    pub tape: Tape,
    cfg: &'a ModelConfig,
    idx: &'a HinIndex,
    doc: &'a PreparedDoc,
    bound: Vec<Value>,
    enc: Encoding,
    mode: Mode,
}

fn lstm_bound(bound: &[Value], idx: &LstmIdx, hidden: usize) -> LstmBound {
    LstmBound {
        fw: LstmDirBound { w_x: bound[idx.fw_w_x], w_h: bound[idx.fw_w_h], b: bound[idx.fw_b] },
        bw: LstmDirBound { w_x: bound[idx.bw_w_x], w_h: bound[idx.bw_w_h], b: bound[idx.bw_b] },
        hidden,
    }
}

fn attn_bound(bound: &[Value], idx: &AttnIdx) -> AttnBound {
    AttnBound { query: bound[idx.u], w: bound[idx.w], b: bound[idx.b] }
}

fn ffnn_bound(bound: &[Value], layers: &[(usize, usize)]) -> FfnnBound {
    FfnnBound { layers: layers.iter().map(|(w, b)| (bound[*w], bound[*b])).collect() }
}

/// Encode a document: bind parameters, embed tokens, run the token and
/// sentence encoders, pool sentence vectors. Dropout draws come from `rng`
/// in a fixed order, so a given (mode, rng state) is fully deterministic.
pub fn encode_document<'a>(
    m: ModelRef<'a>,
    doc: &'a PreparedDoc,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    fault: Option<Fault>,
) -> Result<DocForward<'a>> {
    if doc.n == 0 {
        return Err(HinError::EmptyInput { op: "encode_document" });
    }
    let mut tape = Tape::new();
    tape.set_fault(fault);
    let bound = m.set.bind(&mut tape);
    let cfg = m.cfg;
    let idx = m.idx;

    let words = tape.gather_rows(bound[idx.word], &doc.word_ids)?;
    let types = tape.gather_rows(bound[idx.etype], &doc.type_ids)?;
    let corefs = tape.gather_rows(bound[idx.coref], &doc.coref_ids)?;
    let embedded = tape.concat_last(&[words, types, corefs])?;
    let embedded = dropout_apply(&mut tape, embedded, cfg.dropout, mode, rng)?;

    let token_h = bilstm_forward(&mut tape, embedded, &lstm_bound(&bound, &idx.lstm_e, cfg.hidden))?;

    let mut sent_pooled = Vec::new();
    let mut flat_doc = None;
    if cfg.ablation.flat_document {
        let ctx = bilstm_forward(&mut tape, token_h, &lstm_bound(&bound, &idx.lstm_d, cfg.hidden))?;
        flat_doc = Some(tape.mean_axis0(ctx)?);
    } else {
        let lstm_s = idx.lstm_s.as_ref().expect("hierarchical path has a sentence encoder");
        let attn_w = idx.attn_word.as_ref().expect("hierarchical path has word attention");
        for &(start, end) in &doc.sent_ranges {
            let ids: Vec<usize> = (start..end).collect();
            let sent_x = tape.gather_rows(embedded, &ids)?;
            let sent_h = bilstm_forward(&mut tape, sent_x, &lstm_bound(&bound, lstm_s, cfg.hidden))?;
            let mask = vec![true; end - start];
            let (pooled, _) =
                additive_attention_pool(&mut tape, sent_h, &attn_bound(&bound, attn_w), &mask)?;
            sent_pooled.push(pooled);
        }
    }

    Ok(DocForward {
        tape,
        cfg,
        idx,
        doc,
        bound,
        enc: Encoding { embedded, token_h, sent_pooled, flat_doc },
        mode,
    })
}

impl<'a> DocForward<'a> {
    pub fn doc(&self) -> &PreparedDoc {
        self.doc
    }

    /// Snapshot of the embedded token rows.
    pub fn embedded_data(&self) -> Vec<f64> {
        self.tape.data(self.enc.embedded).to_vec()
    }

    /// Snapshot of the shared token states, for cache-identity checks.
    pub fn token_hidden_data(&self) -> Vec<f64> {
        self.tape.data(self.enc.token_h).to_vec()
    }

    /// Snapshot of the pooled sentence vectors.
    pub fn sentence_pooled_data(&self) -> Vec<Vec<f64>> {
        self.enc.sent_pooled.iter().map(|v| self.tape.data(*v).to_vec()).collect()
    }

    /// Mean of the token states over a mention span, then over mentions.
    pub fn entity_representation(&mut self, entity: usize) -> Result<Value> {
        let spans = &self.doc.mention_spans[entity];
        if spans.is_empty() {
            return Err(HinError::invalid(
                "entity_representation",
                format!("entity {entity} of {} has no mentions", self.doc.id),
            ));
        }
        let mut mention_reps = Vec::with_capacity(spans.len());
        for &(start, end) in spans {
            let ids: Vec<usize> = (start..end).collect();
            let toks = self.tape.gather_rows(self.enc.token_h, &ids)?;
            mention_reps.push(self.tape.mean_axis0(toks)?);
        }
        let stacked = self.tape.stack_rows(&mention_reps)?;
        self.tape.mean_axis0(stacked)
    }

    /// Project an entity vector into subspace k.
    fn project(&mut self, e: Value, k: usize) -> Result<Value> {
        let (w0, w1) = self.idx.proj[k];
        let hidden = self.tape.matvec(self.bound[w0], e)?;
        let act = self.tape.relu(hidden)?;
        // w1 is stored [d × d_s] and applied transposed.
        self.tape.matvec_t(self.bound[w1], act)
    }

    /// Entity-level inference vector plus the pre-net blocks for
    /// inspection: per subspace, the bi-affine pairing, the translation
    /// difference, and both projections, then the distance-difference
    /// embedding, all through the entity net.
    pub fn entity_inference(
        &mut self,
        e_a: Value,
        e_b: Value,
        pair: &PreparedPair,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Value, Vec<Value>, Vec<Value>)> {
        let cfg = self.cfg;
        let mut parts = Vec::new();
        let mut translations = Vec::new();
        let mut bilinears = Vec::new();
        for k in 0..cfg.k_eff() {
            let ea_k = self.project(e_a, k)?;
            let eb_k = self.project(e_b, k)?;
            if !cfg.ablation.no_bilinear {
                let r = self.idx.biaffine[k];
                let bl = self.tape.biaffine(ea_k, eb_k, self.bound[r])?;
                bilinears.push(bl);
                parts.push(bl);
            }
            if !cfg.ablation.no_translation {
                let diff = self.tape.sub(eb_k, ea_k)?;
                translations.push(diff);
                parts.push(diff);
            }
            parts.push(ea_k);
            parts.push(eb_k);
        }
        let dist_ba = self.tape.row(self.bound[self.idx.dist], pair.dist_ba_idx)?;
        let dist_ab = self.tape.row(self.bound[self.idx.dist], pair.dist_ab_idx)?;
        let dist_diff = self.tape.sub(dist_ba, dist_ab)?;
        parts.push(dist_diff);
        let cat = self.tape.concat_last(&parts)?;
        let ge = ffnn_bound(&self.bound, &self.idx.ge);
        let i_e = ffnn_relu_dropout(&mut self.tape, cat, &ge, cfg.dropout, self.mode, rng)?;
        Ok((i_e, translations, bilinears))
    }

    /// Sentence-level inference vectors for one pair: each pooled sentence
    /// vector is matched against the entity-level vector by concatenation,
    /// difference and elementwise product through the sentence net.
    pub fn sentence_inference(
        &mut self,
        i_e: Value,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Value>> {
        let pooled = self.enc.sent_pooled.clone();
        if self.cfg.ablation.no_sentence_inference {
            return Ok(pooled);
        }
        let gs_idx = self.idx.gs.as_ref().expect("sentence net present").clone();
        let gs = ffnn_bound(&self.bound, &gs_idx);
        let mut out = Vec::with_capacity(pooled.len());
        for s in pooled {
            let cat = matching_features(&mut self.tape, s, i_e)?;
            out.push(ffnn_relu_dropout(
                &mut self.tape,
                cat,
                &gs,
                self.cfg.dropout,
                self.mode,
                rng,
            )?);
        }
        Ok(out)
    }

    /// Document-level inference: encode the sentence-inference sequence and
    /// pool it with sentence attention. Returns (document vector, weights,
    /// context rows).
    pub fn document_inference(
        &mut self,
        sent_inference: &[Value],
    ) -> Result<(Value, Value, Value)> {
        let stacked = self.tape.stack_rows(sent_inference)?;
        let ctx = bilstm_forward(
            &mut self.tape,
            stacked,
            &lstm_bound(&self.bound, &self.idx.lstm_d, self.cfg.hidden),
        )?;
        let attn = self.idx.attn_sent.as_ref().expect("hierarchical path has sentence attention");
        let mask = vec![true; sent_inference.len()];
        let (pooled, weights) =
            additive_attention_pool(&mut self.tape, ctx, &attn_bound(&self.bound, attn), &mask)?;
        Ok((pooled, weights, ctx))
    }

    /// Full per-pair forward pass.
    pub fn forward_pair(&mut self, pair: &PreparedPair, rng: &mut ChaCha8Rng) -> Result<PairForward> {
        if pair.head == pair.tail {
            return Err(HinError::invalid("forward_pair", "head equals tail"));
        }
        let e_a = self.entity_representation(pair.head)?;
        let e_b = self.entity_representation(pair.tail)?;
        let (i_e, translations, bilinears) = self.entity_inference(e_a, e_b, pair, rng)?;

        let (i_d, weights, sentence_vecs) = if self.cfg.ablation.flat_document {
            let flat = self.enc.flat_doc.expect("flat path pre-computes its document vector");
            (flat, None, Vec::new())
        } else {
            let sent_inf = self.sentence_inference(i_e, rng)?;
            let (i_d, w, _) = self.document_inference(&sent_inf)?;
            let vecs = sent_inf.iter().map(|v| self.tape.data(*v).to_vec()).collect();
            (i_d, Some(w), vecs)
        };

        let joint = self.tape.concat_last(&[i_e, i_d])?;
        let logits_w = self.tape.matvec(self.bound[self.idx.out_w], joint)?;
        let logits = self.tape.add(logits_w, self.bound[self.idx.out_b])?;
        let probs = self.tape.sigmoid(logits)?;

        Ok(PairForward {
            head: pair.head,
            tail: pair.tail,
            probs,
            probabilities: self.tape.data(probs).to_vec(),
            entity_vec: self.tape.data(i_e).to_vec(),
            sentence_vecs,
            doc_vec: self.tape.data(i_d).to_vec(),
            sentence_weights: weights.map(|w| self.tape.data(w).to_vec()).unwrap_or_default(),
            translation_blocks: translations.iter().map(|v| self.tape.data(*v).to_vec()).collect(),
            bilinear_blocks: bilinears.iter().map(|v| self.tape.data(*v).to_vec()).collect(),
        })
    }

    /// Summed binary cross entropy of a pair's probabilities against its
    /// label vector.
    pub fn pair_loss(&mut self, pf: &PairForward, labels: &[f64]) -> Result<Value> {
        self.tape.bce_loss(pf.probs, labels)
    }

    /// Scale a scalar node (for batch averaging).
    pub fn scale(&mut self, v: Value, c: f64) -> Result<Value> {
        self.tape.scale(v, c)
    }

    /// Sum scalar losses on this tape.
    pub fn sum_losses(&mut self, losses: &[Value]) -> Result<Value> {
        let mut acc = losses[0];
        for l in &losses[1..] {
            acc = self.tape.add(acc, *l)?;
        }
        Ok(acc)
    }

    pub fn backward(&mut self, loss: Value) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Per-parameter gradients, aligned to the parameter set.
    pub fn collect_grads(&self, set: &ParamSet) -> Vec<Option<Vec<f64>>> {
        set.collect_from_tape(&self.tape, &self.bound)
    }

    pub fn loss_value(&self, v: Value) -> f64 {
        self.tape.tensor(v).item()
    }

    pub fn relu_margin(&self) -> f64 {
        self.tape.relu_margin()
    }
}
