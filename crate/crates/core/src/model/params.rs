//! Parameter-set construction and the typed index into it.

use super::config::{walk_params, InitKind, ModelConfig, VocabDims};
use crate::corpus::Vocabulary;
use crate::layers::uniform_init;
use crate::rng::{name_salt, substream, Stream};
use crate::tensor::{ParamSet, Tensor};
use crate::{HinError, Result};

#[derive(Clone, Copy, Debug)]
pub struct LstmIdx {
    pub fw_w_x: usize,
    pub fw_w_h: usize,
    pub fw_b: usize,
    pub bw_w_x: usize,
    pub bw_w_h: usize,
    pub bw_b: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIdx {
    pub u: usize,
    pub w: usize,
    pub b: usize,
}

/// Typed parameter indices, resolved once per model.
#[derive(Clone, Debug)]
pub struct HinIndex {
    pub word: usize,
    pub etype: usize,
    pub coref: usize,
    pub dist: usize,
    pub lstm_e: LstmIdx,
    pub lstm_s: Option<LstmIdx>,
    pub lstm_d: LstmIdx,
    pub attn_word: Option<AttnIdx>,
    pub attn_sent: Option<AttnIdx>,
    /// (w0, w1) per subspace.
    pub proj: Vec<(usize, usize)>,
    pub biaffine: Vec<usize>,
    /// (w, b) per layer.
    pub ge: Vec<(usize, usize)>,
    pub gs: Option<Vec<(usize, usize)>>,
    pub out_w: usize,
    pub out_b: usize,
}

fn require(set: &ParamSet, name: &str) -> Result<usize> {
    set.find(name)
        .ok_or_else(|| HinError::invalid("model", format!("missing parameter `{name}`")))
}

fn resolve_lstm(set: &ParamSet, prefix: &str) -> Result<LstmIdx> {
    Ok(LstmIdx {
        fw_w_x: require(set, &format!("{prefix}.fw.w_x"))?,
        fw_w_h: require(set, &format!("{prefix}.fw.w_h"))?,
        fw_b: require(set, &format!("{prefix}.fw.b"))?,
        bw_w_x: require(set, &format!("{prefix}.bw.w_x"))?,
        bw_w_h: require(set, &format!("{prefix}.bw.w_h"))?,
        bw_b: require(set, &format!("{prefix}.bw.b"))?,
    })
}

fn resolve_attn(set: &ParamSet, prefix: &str) -> Result<AttnIdx> {
    Ok(AttnIdx {
        u: require(set, &format!("{prefix}.u"))?,
        w: require(set, &format!("{prefix}.w"))?,
        b: require(set, &format!("{prefix}.b"))?,
    })
}

impl HinIndex {
    pub fn resolve(set: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let fl = cfg.ablation.flat_document;
        let mut proj = Vec::new();
        for k in 0..cfg.k_eff() {
            proj.push((
                require(set, &format!("proj.{k}.w0"))?,
                require(set, &format!("proj.{k}.w1"))?,
            ));
        }
        let mut biaffine = Vec::new();
        if !cfg.ablation.no_bilinear {
            for k in 0..cfg.k_eff() {
                biaffine.push(require(set, &format!("biaffine.{k}"))?);
            }
        }
        let ge = vec![
            (require(set, "ge.0.w")?, require(set, "ge.0.b")?),
            (require(set, "ge.1.w")?, require(set, "ge.1.b")?),
        ];
        let gs = if !fl && !cfg.ablation.no_sentence_inference {
            Some(vec![
                (require(set, "gs.0.w")?, require(set, "gs.0.b")?),
                (require(set, "gs.1.w")?, require(set, "gs.1.b")?),
            ])
        } else {
            None
        };
        Ok(HinIndex {
            word: require(set, "embed.word")?,
            etype: require(set, "embed.etype")?,
            coref: require(set, "embed.coref")?,
            dist: require(set, "embed.dist")?,
            lstm_e: resolve_lstm(set, "lstm_e")?,
            lstm_s: if fl { None } else { Some(resolve_lstm(set, "lstm_s")?) },
            lstm_d: resolve_lstm(set, "lstm_d")?,
            attn_word: if fl { None } else { Some(resolve_attn(set, "attn_w")?) },
            attn_sent: if fl { None } else { Some(resolve_attn(set, "attn_s")?) },
            proj,
            biaffine,
            ge,
            gs,
            out_w: require(set, "out.w")?,
            out_b: require(set, "out.b")?,
        })
    }
}

/// Whether a parameter receives gradient updates under this configuration.
pub fn param_trainable(name: &str, cfg: &ModelConfig) -> bool {
    !(name == "embed.word" && cfg.freeze_word_embeddings)
}

/// Build and initialize the full parameter set. Each parameter draws from
/// its own seed substream keyed by name, so the draw is independent of
/// vocabulary sizes elsewhere in the set. Word rows covered by pretrained
/// vectors are copied in place of the random init.
pub fn init_params(cfg: &ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    if vocab.relations.len() > cfg.relations {
        return Err(HinError::invalid(
            "model config",
            format!(
                "relation inventory {} exceeds configured output width {}",
                vocab.relations.len(),
                cfg.relations
            ),
        ));
    }
    let dims = VocabDims { words: vocab.tokens.len(), types: vocab.types.len() };
    let mut set = ParamSet::new();
    let mut failure = None;
    walk_params(cfg, &dims, &mut |name, shape, kind| {
        if failure.is_some() {
            return;
        }
        let mut rng = substream(seed, Stream::Init, name_salt(&name), 0);
        let mut tensor = match kind {
            InitKind::Weight(fan_in) => uniform_init(shape, fan_in, &mut rng),
            InitKind::Zeros => Tensor::zeros(shape),
            InitKind::LstmBias => {
                let h = shape[0] / 4;
                let mut b = vec![0.0; shape[0]];
                for v in &mut b[h..2 * h] {
                    *v = 1.0;
                }
                Tensor::vector(b)
            }
        };
        if name == "embed.word" {
            let dim = cfg.d_w;
            for (&id, row) in &vocab.pretrained_rows {
                if row.len() != dim {
                    failure = Some(HinError::invalid(
                        "pretrained vectors",
                        format!("dimension {} does not match d_w {}", row.len(), dim),
                    ));
                    return;
                }
                tensor.data[id * dim..(id + 1) * dim].copy_from_slice(row);
            }
        }
        tensor.requires_grad = param_trainable(&name, cfg);
        if let Err(e) = set.add(name, tensor) {
            failure = Some(e);
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(set),
    }
}
