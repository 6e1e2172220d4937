//! Reusable parameterized layers.
//!
//! Parameter structs own their tensors and know how to initialize
//! themselves; the `*Bound` structs are handles to the same tensors
//! registered on a tape for one forward pass. Weight matrices draw from
//! uniform(−√(1/fan_in), +√(1/fan_in)); biases start at zero except LSTM
//! forget gates, which start at 1.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tape, Tensor, Value};
use crate::{HinError, Result};

/// Train enables dropout; Eval is the identity path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform scale-aware initialization.
pub fn uniform_init(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape/data agreement by construction")
}

// ── embedding table ──────────────────────────────────────────────────

/// A lookup table of row vectors. Frozen tables receive no gradient.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub weights: Tensor,
    pub frozen: bool,
}

impl EmbeddingTable {
    pub fn init(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        EmbeddingTable {
            weights: uniform_init(vec![rows, dim], dim, rng),
            frozen: false,
        }
    }

    pub fn from_rows(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Ok(EmbeddingTable {
            weights: Tensor::matrix(rows, dim, data)?,
            frozen: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape[1]
    }
}

/// Row lookup with scatter-add backward into the table.
pub fn embedding_lookup(tape: &mut Tape, table: Value, ids: &[usize]) -> Result<Value> {
    tape.gather_rows(table, ids)
}

// ── LSTM ─────────────────────────────────────────────────────────────

/// One direction's weights, gates stacked (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmDirParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

/// Independent forward and backward directions.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub fw: LstmDirParams,
    pub bw: LstmDirParams,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let dir = |rng: &mut ChaCha8Rng| {
            let mut b = vec![0.0; 4 * hidden];
            for v in &mut b[hidden..2 * hidden] {
                *v = 1.0;
            }
            LstmDirParams {
                w_x: uniform_init(vec![4 * hidden, input_dim], input_dim, rng),
                w_h: uniform_init(vec![4 * hidden, hidden], hidden, rng),
                b: Tensor::vector(b),
            }
        };
        LstmParams {
            fw: dir(rng),
            bw: dir(rng),
            hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmDirBound {
    pub w_x: Value,
    pub w_h: Value,
    pub b: Value,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmBound {
    pub fw: LstmDirBound,
    pub bw: LstmDirBound,
    pub hidden: usize,
}

fn lstm_direction(
    tape: &mut Tape,
    xs: &[Value],
    p: LstmDirBound,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Value>> {
    let n = xs.len();
    let mut out = vec![xs[0]; n];
    let mut h_prev = tape.zeros(vec![hidden]);
    let mut c_prev = tape.zeros(vec![hidden]);
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let zx = tape.matvec(p.w_x, xs[t])?;
        let zh = tape.matvec(p.w_h, h_prev)?;
        let zs = tape.add(zx, zh)?;
        let z = tape.add(zs, p.b)?;
        let gi = tape.slice_vec(z, 0, hidden)?;
        let gf = tape.slice_vec(z, hidden, hidden)?;
        let gg = tape.slice_vec(z, 2 * hidden, hidden)?;
        let go = tape.slice_vec(z, 3 * hidden, hidden)?;
        let i = tape.sigmoid(gi)?;
        let f = tape.sigmoid(gf)?;
        let g = tape.tanh(gg)?;
        let o = tape.sigmoid(go)?;
        let fc = tape.hadamard(f, c_prev)?;
        let ig = tape.hadamard(i, g)?;
        let c = tape.add(fc, ig)?;
        let ct = tape.tanh(c)?;
        let h = tape.hadamard(o, ct)?;
        out[t] = h;
        h_prev = h;
        c_prev = c;
    }
    Ok(out)
}

/// Run both directions over a [n×in] sequence from zero initial states and
/// concatenate per position: row t is [fw state after tokens 0..t ;
/// bw state after tokens n−1..t], giving [n×2h].
pub fn bilstm_forward(tape: &mut Tape, seq: Value, p: &LstmBound) -> Result<Value> {
    let shape = tape.shape(seq).to_vec();
    let n = match shape.as_slice() {
        [n, _] => *n,
        other => {
            return Err(HinError::ShapeMismatch {
                op: "bilstm_forward",
                lhs: other.to_vec(),
                rhs: vec![0, 0],
            })
        }
    };
    if n == 0 {
        return Err(HinError::EmptyInput { op: "bilstm_forward" });
    }
    let xs: Vec<Value> = (0..n).map(|t| tape.row(seq, t)).collect::<Result<_>>()?;
    let fw = lstm_direction(tape, &xs, p.fw, p.hidden, false)?;
    let bw = lstm_direction(tape, &xs, p.bw, p.hidden, true)?;
    let rows: Vec<Value> = fw
        .iter()
        .zip(&bw)
        .map(|(f, b)| tape.concat_last(&[*f, *b]))
        .collect::<Result<_>>()?;
    tape.stack_rows(&rows)
}

// ── additive attention pooling ───────────────────────────────────────

/// Rank-1 query attention: score_t = uᵀ tanh(W·h_t + b).
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

impl AttentionParams {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionParams {
            query: uniform_init(vec![dim], dim, rng),
            w: uniform_init(vec![dim, dim], dim, rng),
            b: Tensor::zeros(vec![dim]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttnBound {
    pub query: Value,
    pub w: Value,
    pub b: Value,
}

/// Pool the rows of H [n×d] by masked softmax over additive scores.
/// Returns (pooled [d], weights [n]); weights are exposed for reports.
pub fn additive_attention_pool(
    tape: &mut Tape,
    rows: Value,
    p: &AttnBound,
    mask: &[bool],
) -> Result<(Value, Value)> {
    let proj = tape.matmul_bt(rows, p.w)?;
    let n = tape.shape(proj)[0];
    let brows: Vec<Value> = (0..n).map(|_| p.b).collect();
    let bmat = tape.stack_rows(&brows)?;
    let shifted = tape.add(proj, bmat)?;
    let th = tape.tanh(shifted)?;
    let scores = tape.matvec(th, p.query)?;
    let weights = tape.masked_softmax(scores, mask)?;
    let pooled = tape.weighted_sum_rows(rows, weights)?;
    Ok((pooled, weights))
}

// ── feed-forward ─────────────────────────────────────────────────────

/// Affine layers with ReLU between them and an affine final layer.
#[derive(Clone, Debug)]
pub struct FfnnParams {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl FfnnParams {
    /// `widths` lists layer sizes input-first, e.g. `[8, 4, 4]`.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                (
                    uniform_init(vec![w[1], w[0]], w[0], rng),
                    Tensor::zeros(vec![w[1]]),
                )
            })
            .collect();
        FfnnParams { layers }
    }
}

#[derive(Clone, Debug)]
pub struct FfnnBound {
    pub layers: Vec<(Value, Value)>,
}

pub fn ffnn_relu(tape: &mut Tape, x: Value, p: &FfnnBound) -> Result<Value> {
    let mut cur = x;
    let last = p.layers.len().saturating_sub(1);
    for (i, (w, b)) in p.layers.iter().enumerate() {
        let wx = tape.matvec(*w, cur)?;
        cur = tape.add(wx, *b)?;
        if i < last {
            cur = tape.relu(cur)?;
        }
    }
    Ok(cur)
}

/// Feed-forward pass with inverted dropout on the hidden activations.
pub fn ffnn_relu_dropout(
    tape: &mut Tape,
    x: Value,
    p: &FfnnBound,
    dropout: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Value> {
    let mut cur = x;
    let last = p.layers.len().saturating_sub(1);
    for (i, (w, b)) in p.layers.iter().enumerate() {
        let wx = tape.matvec(*w, cur)?;
        cur = tape.add(wx, *b)?;
        if i < last {
            cur = tape.relu(cur)?;
            if dropout > 0.0 {
                cur = dropout_apply(tape, cur, dropout, mode, rng)?;
            }
        }
    }
    Ok(cur)
}

// ── bi-affine pairing ────────────────────────────────────────────────

/// A stack of bilinear forms: one output coordinate per slice.
#[derive(Clone, Debug)]
pub struct BiaffineParams {
    pub r: Tensor,
}

impl BiaffineParams {
    pub fn init(ds: usize, rng: &mut ChaCha8Rng) -> Self {
        BiaffineParams {
            r: uniform_init(vec![ds, ds, ds], ds * ds, rng),
        }
    }
}

/// out_i = e_aᵀ · R[·,·,i] · e_b.
pub fn biaffine(tape: &mut Tape, e_a: Value, e_b: Value, r: Value) -> Result<Value> {
    tape.biaffine(e_a, e_b, r)
}

// ── dropout ──────────────────────────────────────────────────────────

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by 1/(1−p); eval mode returns the input
/// value unchanged.
pub fn dropout_apply(
    tape: &mut Tape,
    x: Value,
    p: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Value> {
    if !(0.0..1.0).contains(&p) {
        return Err(HinError::invalid("dropout", format!("p = {p} outside [0, 1)")));
    }
    if mode == Mode::Eval {
        return Ok(x);
    }
    let n = tape.tensor(x).len();
    let keep_scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() >= p { keep_scale } else { 0.0 })
        .collect();
    let shape = tape.shape(x).to_vec();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.hadamard(x, m)
}
