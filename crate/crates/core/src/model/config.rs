//! Model configuration, ablation switches, and the parameter manifest.
//!
//! The manifest — the ordered list of (name, shape) for every parameter —
//! is a pure function of the configuration and vocabulary sizes. Ablated
//! components contribute no parameters.

use serde::{Deserialize, Serialize};

use crate::corpus::DIST_BUCKETS;
use crate::{HinError, Result};

/// Architecture switches that remove one component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop the (E_b − E_a) block from entity-level inference.
    pub no_translation: bool,
    /// Drop the bi-affine block (and its tensors).
    pub no_bilinear: bool,
    /// One projection space of full width instead of K subspaces.
    pub single_space: bool,
    /// Use the pooled sentence vector directly instead of the matching net.
    pub no_sentence_inference: bool,
    /// Replace the sentence/document hierarchy with a BiLSTM over the whole
    /// document followed by mean pooling.
    pub flat_document: bool,
}

/// One nameable ablation, for the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationFlag {
    NoTranslation,
    NoBilinear,
    SingleSpace,
    NoSentenceInference,
    FlatDocument,
}

impl AblationFlag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no_translation" => Some(Self::NoTranslation),
            "no_bilinear" => Some(Self::NoBilinear),
            "single_space" => Some(Self::SingleSpace),
            "no_sentence_inference" => Some(Self::NoSentenceInference),
            "flat_document" => Some(Self::FlatDocument),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NoTranslation => "no_translation",
            Self::NoBilinear => "no_bilinear",
            Self::SingleSpace => "single_space",
            Self::NoSentenceInference => "no_sentence_inference",
            Self::FlatDocument => "flat_document",
        }
    }

    pub fn all() -> [Self; 5] {
        [
            Self::NoTranslation,
            Self::NoBilinear,
            Self::SingleSpace,
            Self::NoSentenceInference,
            Self::FlatDocument,
        ]
    }

    /// The configuration with this one switch flipped on.
    pub fn applied_to(&self, cfg: &ModelConfig) -> ModelConfig {
        let mut out = cfg.clone();
        match self {
            Self::NoTranslation => out.ablation.no_translation = true,
            Self::NoBilinear => out.ablation.no_bilinear = true,
            Self::SingleSpace => out.ablation.single_space = true,
            Self::NoSentenceInference => out.ablation.no_sentence_inference = true,
            Self::FlatDocument => out.ablation.flat_document = true,
        }
        out
    }
}

/// Dimensions and switches of the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word embedding width.
    pub d_w: usize,
    /// Entity-type embedding width.
    pub d_t: usize,
    /// Coreference embedding width.
    pub d_c: usize,
    /// Distance embedding width.
    pub d_dist: usize,
    /// LSTM hidden size per direction; token representations have width 2h.
    pub hidden: usize,
    /// Number of projection subspaces K.
    pub subspaces: usize,
    /// Subspace width d_s; defaults to d / K.
    pub subspace_dim: Option<usize>,
    /// Relation inventory size l.
    pub relations: usize,
    pub dropout: f64,
    /// Rows in the coreference table (id 0 is reserved for "none").
    pub coref_buckets: usize,
    /// Keep word vectors fixed after initialization.
    pub freeze_word_embeddings: bool,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_w: 100,
            d_t: 20,
            d_c: 20,
            d_dist: 20,
            hidden: 128,
            subspaces: 2,
            subspace_dim: None,
            relations: 96,
            dropout: 0.2,
            coref_buckets: 64,
            freeze_word_embeddings: true,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// A d = 4 configuration small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_w: 6,
            d_t: 2,
            d_c: 2,
            d_dist: 2,
            hidden: 2,
            subspaces: 2,
            subspace_dim: Some(2),
            relations: 3,
            dropout: 0.2,
            coref_buckets: 8,
            freeze_word_embeddings: false,
            ..Default::default()
        }
    }

    /// Token representation width d = 2h.
    pub fn d(&self) -> usize {
        2 * self.hidden
    }

    /// Effective subspace count (single_space forces 1).
    pub fn k_eff(&self) -> usize {
        if self.ablation.single_space {
            1
        } else {
            self.subspaces
        }
    }

    /// Effective subspace width (single_space forces d).
    pub fn ds_eff(&self) -> usize {
        if self.ablation.single_space {
            self.d()
        } else {
            self.subspace_dim.unwrap_or(self.d() / self.subspaces)
        }
    }

    /// Input width of the token embedding concatenation.
    pub fn in_embed(&self) -> usize {
        self.d_w + self.d_t + self.d_c
    }

    /// Per-subspace block width: [bilinear; difference; E_a; E_b] minus the
    /// ablated parts.
    pub fn block_width(&self) -> usize {
        let mut parts = 2;
        if !self.ablation.no_bilinear {
            parts += 1;
        }
        if !self.ablation.no_translation {
            parts += 1;
        }
        parts * self.ds_eff()
    }

    /// Input width of the entity-inference feed-forward net.
    pub fn ge_input_width(&self) -> usize {
        self.k_eff() * self.block_width() + self.d_dist
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(HinError::invalid("model config", msg));
        if self.d_w == 0 || self.d_t == 0 || self.d_c == 0 || self.d_dist == 0 {
            return err("embedding widths must be at least 1".into());
        }
        if self.hidden == 0 || self.subspaces == 0 || self.relations == 0 {
            return err("hidden size, subspace count and relation count must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.coref_buckets < 2 {
            return err("coreference table needs at least the reserved row plus one".into());
        }
        if self.ds_eff() == 0 {
            return err(format!(
                "subspace width d/K = {}/{} is zero; set subspace_dim explicitly",
                self.d(),
                self.subspaces
            ));
        }
        Ok(())
    }
}

/// Vocabulary-dependent table sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabDims {
    pub words: usize,
    pub types: usize,
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum InitKind {
    /// uniform(−√(1/fan_in), +√(1/fan_in)).
    Weight(usize),
    Zeros,
    /// Zeros with the forget-gate block set to 1.
    LstmBias,
}

/// Visit every parameter of the configured model in canonical order.
pub(crate) fn walk_params(
    cfg: &ModelConfig,
    dims: &VocabDims,
    f: &mut impl FnMut(String, Vec<usize>, InitKind),
) {
    let d = cfg.d();
    let h = cfg.hidden;
    let ds = cfg.ds_eff();
    let fl = cfg.ablation.flat_document;

    f("embed.word".into(), vec![dims.words, cfg.d_w], InitKind::Weight(cfg.d_w));
    f("embed.etype".into(), vec![dims.types + 1, cfg.d_t], InitKind::Weight(cfg.d_t));
    f("embed.coref".into(), vec![cfg.coref_buckets, cfg.d_c], InitKind::Weight(cfg.d_c));
    f("embed.dist".into(), vec![DIST_BUCKETS, cfg.d_dist], InitKind::Weight(cfg.d_dist));

    let lstm = |name: &str, input: usize, f: &mut dyn FnMut(String, Vec<usize>, InitKind)| {
        for dir in ["fw", "bw"] {
            f(format!("{name}.{dir}.w_x"), vec![4 * h, input], InitKind::Weight(input));
            f(format!("{name}.{dir}.w_h"), vec![4 * h, h], InitKind::Weight(h));
            f(format!("{name}.{dir}.b"), vec![4 * h], InitKind::LstmBias);
        }
    };
    lstm("lstm_e", cfg.in_embed(), f);
    if !fl {
        lstm("lstm_s", cfg.in_embed(), f);
        f("attn_w.u".into(), vec![d], InitKind::Weight(d));
        f("attn_w.w".into(), vec![d, d], InitKind::Weight(d));
        f("attn_w.b".into(), vec![d], InitKind::Zeros);
    }

    for k in 0..cfg.k_eff() {
        f(format!("proj.{k}.w0"), vec![d, d], InitKind::Weight(d));
        f(format!("proj.{k}.w1"), vec![d, ds], InitKind::Weight(d));
    }
    if !cfg.ablation.no_bilinear {
        for k in 0..cfg.k_eff() {
            f(format!("biaffine.{k}"), vec![ds, ds, ds], InitKind::Weight(ds * ds));
        }
    }
    let ge_in = cfg.ge_input_width();
    f("ge.0.w".into(), vec![d, ge_in], InitKind::Weight(ge_in));
    f("ge.0.b".into(), vec![d], InitKind::Zeros);
    f("ge.1.w".into(), vec![d, d], InitKind::Weight(d));
    f("ge.1.b".into(), vec![d], InitKind::Zeros);

    if !fl && !cfg.ablation.no_sentence_inference {
        f("gs.0.w".into(), vec![d, 4 * d], InitKind::Weight(4 * d));
        f("gs.0.b".into(), vec![d], InitKind::Zeros);
        f("gs.1.w".into(), vec![d, d], InitKind::Weight(d));
        f("gs.1.b".into(), vec![d], InitKind::Zeros);
    }

    // The document-level encoder runs over sentence-inference rows in the
    // hierarchical path and over token states in the flat path; both have
    // width d, so its shapes are ablation-independent.
    lstm("lstm_d", d, f);
    if !fl {
        f("attn_s.u".into(), vec![d], InitKind::Weight(d));
        f("attn_s.w".into(), vec![d, d], InitKind::Weight(d));
        f("attn_s.b".into(), vec![d], InitKind::Zeros);
    }

    f("out.w".into(), vec![cfg.relations, 2 * d], InitKind::Weight(2 * d));
    f("out.b".into(), vec![cfg.relations], InitKind::Zeros);
}

/// Ordered (name, shape) for every parameter — a pure function of the
/// configuration and vocabulary sizes.
pub fn param_manifest(cfg: &ModelConfig, dims: &VocabDims) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    walk_params(cfg, dims, &mut |name, shape, _| out.push((name, shape)));
    out
}

/// Total parameter count under a configuration.
pub fn param_count(cfg: &ModelConfig, dims: &VocabDims) -> usize {
    param_manifest(cfg, dims)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}
