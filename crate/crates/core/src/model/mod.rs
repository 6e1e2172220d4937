//! The hierarchical inference model: entity-, sentence- and document-level
//! inference over encoded documents, with ablation switches.

mod config;
mod forward;
mod params;

pub use config::{
    param_count, param_manifest, AblationFlag, AblationFlags, ModelConfig, VocabDims,
};
pub use forward::{encode_document, DocForward, ModelRef, PairForward};
pub use params::{init_params, param_trainable, HinIndex};

use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    build_vocab, gen_synthetic, PreparedCorpus, PreparedDoc, SynthSpec, Vocabulary,
};
use crate::layers::Mode;
use crate::rng::{substream, Stream};
use crate::tensor::{finite_diff_check, Fault, GradCheckReport, ParamSet, ProbeEval};
use crate::Result;

/// A configured model with its parameters.
#[derive(Clone, Debug)]
pub struct HinModel {
    pub config: ModelConfig,
    pub idx: HinIndex,
    pub params: ParamSet,
}

impl HinModel {
    /// Initialize fresh parameters from a vocabulary and seed.
    pub fn new(config: ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        let params = init_params(&config, vocab, seed)?;
        let idx = HinIndex::resolve(&params, &config)?;
        Ok(HinModel { config, idx, params })
    }

    /// Assemble a model around an existing parameter set (checkpoint load).
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let idx = HinIndex::resolve(&params, &config)?;
        Ok(HinModel { config, idx, params })
    }

    pub fn as_model_ref(&self) -> ModelRef<'_> {
        ModelRef { cfg: &self.config, idx: &self.idx, set: &self.params }
    }

    /// Start a forward pass over one document.
    pub fn begin_doc<'a>(
        &'a self,
        doc: &'a PreparedDoc,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<DocForward<'a>> {
        encode_document(self.as_model_ref(), doc, mode, rng, None)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }
}

/// Fixture corpus for the model-level gradient check: one document, two
/// sentences, two entities, cross-sentence evidence.
pub fn gradcheck_fixture(
    relations: usize,
    seed: u64,
) -> Result<(Vec<crate::corpus::Document>, Vocabulary)> {
    let docs = gen_synthetic(&SynthSpec {
        documents: 1,
        entities_per_doc: 2,
        relation_count: relations.min(2),
        sentences_per_doc: 2,
        vocab_size: 24,
        seed,
    })?;
    let (vocab, _) = build_vocab(&docs, None, 1)?;
    Ok((docs, vocab))
}

/// Check every named parameter of a model against central differences on a
/// two-sentence fixture. The word table is thawed so it is checked too;
/// dropout is inactive because the probe runs in eval mode.
pub fn gradcheck_model(
    config: &ModelConfig,
    seed: u64,
    probe_cap: usize,
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    gradcheck_model_eps(config, seed, probe_cap, fault, GRADCHECK_EPS)
}

/// Step size for the model-level check. Large within the permitted range:
/// the deep composition attenuates some per-element gradients to ~1e-9,
/// where a small step leaves the central difference dominated by f64
/// rounding of the O(1) loss; truncation along those same attenuated
/// coordinates shrinks with the attenuation, so the large step costs
/// nothing.
pub const GRADCHECK_EPS: f64 = 1e-3;

pub fn gradcheck_model_eps(
    config: &ModelConfig,
    seed: u64,
    probe_cap: usize,
    fault: Option<Fault>,
    eps: f64,
) -> Result<GradCheckReport> {
    let mut config = config.clone();
    config.freeze_word_embeddings = false;

    let (docs, vocab) = gradcheck_fixture(config.relations, seed)?;
    let corpus = PreparedCorpus::prepare(&docs, &vocab, config.coref_buckets, config.relations)?;
    let doc = &corpus.docs[0];

    let model = HinModel::new(config, &vocab, seed)?;
    let HinModel { config, idx, mut params } = model;

    let run = |set: &ParamSet, want_grads: bool| -> Result<(f64, f64, Vec<Option<Vec<f64>>>)> {
        let m = ModelRef { cfg: &config, idx: &idx, set };
        let mut rng = substream(seed, Stream::Dropout, 0, 0);
        let mut df = encode_document(m, doc, Mode::Eval, &mut rng, fault)?;
        let mut losses = Vec::new();
        for pair in &doc.pairs {
            let pf = df.forward_pair(pair, &mut rng)?;
            losses.push(df.pair_loss(&pf, &pair.labels)?);
        }
        let total = df.sum_losses(&losses)?;
        // Mean over pairs and relations: rescaling the summed loss toward
        // O(0.1) lowers the f64 rounding floor of the central differences
        // without changing what the check verifies.
        let scale = 1.0 / (doc.pairs.len() * config.relations) as f64;
        let mean = df.scale(total, scale)?;
        let value = df.loss_value(mean);
        let margin = df.relu_margin();
        let grads = if want_grads {
            df.backward(mean)?;
            df.collect_grads(set)
        } else {
            Vec::new()
        };
        Ok((value, margin, grads))
    };

    finite_diff_check(
        &mut params,
        |set| {
            let (value, relu_margin, _) = run(set, false)?;
            Ok(ProbeEval { value, relu_margin })
        },
        |set| {
            let (_, _, grads) = run(set, true)?;
            Ok(grads)
        },
        eps,
        probe_cap,
        seed,
    )
}
