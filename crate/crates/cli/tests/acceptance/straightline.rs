//! Independent straight-line recomputation of the model's forward pass.
//!
//! Plain loops over plain slices, no tape: the arithmetic mirrors the
//! production kernels' summation orders so agreement is expected at the
//! last few ulps, but the control flow is written from the math, not
//! shared with the implementation under test.

use hin_core::corpus::{PreparedDoc, PreparedPair};
use hin_core::model::ModelConfig;
use hin_core::tensor::ParamSet;

pub struct Params<'a>(pub &'a ParamSet);

impl<'a> Params<'a> {
    pub fn data(&self, name: &str) -> &[f64] {
        let id = self.0.find(name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
        &self.0.get(id).tensor.data
    }
}

pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = 0.0;
        for k in 0..cols {
            acc += a[i * cols + k] * x[k];
        }
        out[i] = acc;
    }
    out
}

/// y = Aᵀx for A [rows×cols], x [rows].
pub fn matvec_t(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let xi = x[i];
        for j in 0..cols {
            out[j] += a[i * cols + j] * xi;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn lstm_direction(
    w_x: &[f64],
    w_h: &[f64],
    b: &[f64],
    hidden: usize,
    in_dim: usize,
    xs: &[Vec<f64>],
    reverse: bool,
) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut out = vec![vec![0.0; hidden]; n];
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let zx = matvec(w_x, 4 * hidden, in_dim, &xs[t]);
        let zh = matvec(w_h, 4 * hidden, hidden, &h_prev);
        let z = add(&add(&zx, &zh), b);
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for j in 0..hidden {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[hidden + j]);
            let g_g = z[2 * hidden + j].tanh();
            let o_g = sigmoid(z[3 * hidden + j]);
            let fc = f_g * c_prev[j];
            let ig = i_g * g_g;
            c[j] = fc + ig;
            h[j] = o_g * c[j].tanh();
        }
        out[t] = h.clone();
        h_prev = h;
        c_prev = c;
    }
    out
}

/// Both directions concatenated per position: [n × 2h].
pub fn bilstm(p: &Params, prefix: &str, hidden: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let in_dim = xs[0].len();
    let fw = lstm_direction(
        p.data(&format!("{prefix}.fw.w_x")),
        p.data(&format!("{prefix}.fw.w_h")),
        p.data(&format!("{prefix}.fw.b")),
        hidden,
        in_dim,
        xs,
        false,
    );
    let bw = lstm_direction(
        p.data(&format!("{prefix}.bw.w_x")),
        p.data(&format!("{prefix}.bw.w_h")),
        p.data(&format!("{prefix}.bw.b")),
        hidden,
        in_dim,
        xs,
        true,
    );
    fw.into_iter()
        .zip(bw)
        .map(|(f, b)| f.into_iter().chain(b).collect())
        .collect()
}

/// Additive attention pooling over all-valid rows: returns (pooled, weights).
pub fn attention_pool(p: &Params, prefix: &str, rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let w = p.data(&format!("{prefix}.w"));
    let b = p.data(&format!("{prefix}.b"));
    let u = p.data(&format!("{prefix}.u"));
    let n = rows.len();
    let mut scores = vec![0.0; n];
    for t in 0..n {
        // proj = H·Wᵀ, then + b, then tanh, then ·u.
        let mut score = 0.0;
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += rows[t][k] * w[i * d + k];
            }
            score += (acc + b[i]).tanh() * u[i];
        }
        scores[t] = score;
    }
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; n];
    let mut denom = 0.0;
    for t in 0..n {
        let e = (scores[t] - mx).exp();
        weights[t] = e;
        denom += e;
    }
    for v in &mut weights {
        *v /= denom;
    }
    let mut pooled = vec![0.0; d];
    for t in 0..n {
        for j in 0..d {
            pooled[j] += weights[t] * rows[t][j];
        }
    }
    (pooled, weights)
}

/// Token rows: word ++ type ++ coreference embeddings.
pub fn embed(cfg: &ModelConfig, p: &Params, doc: &PreparedDoc) -> Vec<Vec<f64>> {
    let word = p.data("embed.word");
    let etype = p.data("embed.etype");
    let coref = p.data("embed.coref");
    (0..doc.n)
        .map(|t| {
            let mut row = Vec::with_capacity(cfg.in_embed());
            let w = doc.word_ids[t];
            row.extend_from_slice(&word[w * cfg.d_w..(w + 1) * cfg.d_w]);
            let ty = doc.type_ids[t];
            row.extend_from_slice(&etype[ty * cfg.d_t..(ty + 1) * cfg.d_t]);
            let c = doc.coref_ids[t];
            row.extend_from_slice(&coref[c * cfg.d_c..(c + 1) * cfg.d_c]);
            row
        })
        .collect()
}

fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            out[j] += r[j];
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// Mention means, then the mean over mentions.
pub fn entity_rep(token_h: &[Vec<f64>], spans: &[(usize, usize)]) -> Vec<f64> {
    let mentions: Vec<Vec<f64>> = spans
        .iter()
        .map(|&(s, e)| {
            let rows: Vec<&[f64]> = (s..e).map(|t| token_h[t].as_slice()).collect();
            mean_rows(&rows)
        })
        .collect();
    let refs: Vec<&[f64]> = mentions.iter().map(|m| m.as_slice()).collect();
    mean_rows(&refs)
}

pub fn project(cfg: &ModelConfig, p: &Params, k: usize, e: &[f64]) -> Vec<f64> {
    let d = cfg.d();
    let ds = cfg.ds_eff();
    let hid = matvec(p.data(&format!("proj.{k}.w0")), d, d, e);
    let act: Vec<f64> = hid.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    matvec_t(p.data(&format!("proj.{k}.w1")), d, ds, &act)
}

pub fn biaffine_tri(r: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let ds = a.len();
    let mut out = vec![0.0; ds];
    for i in 0..ds {
        let mut acc = 0.0;
        for j in 0..ds {
            for k in 0..ds {
                acc += a[j] * r[(j * ds + k) * ds + i] * b[k];
            }
        }
        out[i] = acc;
    }
    out
}

/// Two affine layers with ReLU between: the entity and sentence nets.
fn two_layer_net(p: &Params, prefix: &str, out_dim: usize, x: &[f64]) -> Vec<f64> {
    let w0 = p.data(&format!("{prefix}.0.w"));
    let b0 = p.data(&format!("{prefix}.0.b"));
    let w1 = p.data(&format!("{prefix}.1.w"));
    let b1 = p.data(&format!("{prefix}.1.b"));
    let z = add(&matvec(w0, out_dim, x.len(), x), b0);
    let act: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    add(&matvec(w1, out_dim, out_dim, &act), b1)
}

/// Entity-level inference: per-subspace [bilinear; diff; a; b] blocks,
/// distance-difference features, entity net.
pub fn entity_inference(
    cfg: &ModelConfig,
    p: &Params,
    e_a: &[f64],
    e_b: &[f64],
    dist_ab_idx: usize,
    dist_ba_idx: usize,
) -> Vec<f64> {
    let mut cat = Vec::with_capacity(cfg.ge_input_width());
    for k in 0..cfg.k_eff() {
        let ea_k = project(cfg, p, k, e_a);
        let eb_k = project(cfg, p, k, e_b);
        if !cfg.ablation.no_bilinear {
            cat.extend(biaffine_tri(p.data(&format!("biaffine.{k}")), &ea_k, &eb_k));
        }
        if !cfg.ablation.no_translation {
            cat.extend(ea_k.iter().zip(&eb_k).map(|(a, b)| b - a));
        }
        cat.extend_from_slice(&ea_k);
        cat.extend_from_slice(&eb_k);
    }
    let dist = p.data("embed.dist");
    let dd = cfg.d_dist;
    for j in 0..dd {
        cat.push(dist[dist_ba_idx * dd + j] - dist[dist_ab_idx * dd + j]);
    }
    two_layer_net(p, "ge", cfg.d(), &cat)
}

/// Full per-pair forward pass in eval mode: per-relation probabilities.
pub fn forward_pair(
    cfg: &ModelConfig,
    p: &Params,
    doc: &PreparedDoc,
    pair: &PreparedPair,
) -> Vec<f64> {
    let embedded = embed(cfg, p, doc);
    let token_h = bilstm(p, "lstm_e", cfg.hidden, &embedded);

    let e_a = entity_rep(&token_h, &doc.mention_spans[pair.head]);
    let e_b = entity_rep(&token_h, &doc.mention_spans[pair.tail]);
    let i_e = entity_inference(cfg, p, &e_a, &e_b, pair.dist_ab_idx, pair.dist_ba_idx);

    let i_d = if cfg.ablation.flat_document {
        let ctx = bilstm(p, "lstm_d", cfg.hidden, &token_h);
        let refs: Vec<&[f64]> = ctx.iter().map(|r| r.as_slice()).collect();
        mean_rows(&refs)
    } else {
        let mut sent_inf = Vec::with_capacity(doc.sent_ranges.len());
        for &(start, end) in &doc.sent_ranges {
            let rows: Vec<Vec<f64>> = embedded[start..end].to_vec();
            let sent_h = bilstm(p, "lstm_s", cfg.hidden, &rows);
            let (s_j, _) = attention_pool(p, "attn_w", &sent_h);
            if cfg.ablation.no_sentence_inference {
                sent_inf.push(s_j);
            } else {
                let mut cat = Vec::with_capacity(4 * cfg.d());
                cat.extend_from_slice(&s_j);
                cat.extend_from_slice(&i_e);
                cat.extend(s_j.iter().zip(&i_e).map(|(s, e)| s - e));
                cat.extend(s_j.iter().zip(&i_e).map(|(s, e)| s * e));
                sent_inf.push(two_layer_net(p, "gs", cfg.d(), &cat));
            }
        }
        let ctx = bilstm(p, "lstm_d", cfg.hidden, &sent_inf);
        let (i_d, _) = attention_pool(p, "attn_s", &ctx);
        i_d
    };

    let mut joint = Vec::with_capacity(2 * cfg.d());
    joint.extend_from_slice(&i_e);
    joint.extend_from_slice(&i_d);
    let logits = add(
        &matvec(p.data("out.w"), cfg.relations, 2 * cfg.d(), &joint),
        p.data("out.b"),
    );
    logits.into_iter().map(sigmoid).collect()
}
