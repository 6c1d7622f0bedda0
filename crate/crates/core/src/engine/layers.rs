//! Composite layers built from graph primitives.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense layer `x · w + b`. `x` may be a vector or a matrix of row vectors.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.matmul(x, w)?;
    g.add_row(h, b)
}

/// One convolution bank: `weight` is `(window·d) × channels`, `bias` is `[channels]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvKernel {
    pub window: usize,
    pub weight: Var,
    pub bias: Var,
}

/// 1-D convolution (stride 1, no padding) for every kernel, ReLU, then a
/// global max over positions. Returns the concatenated pooled channels.
pub fn conv1d_maxpool<T: Scalar>(g: &mut Graph<T>, x: Var, kernels: &[ConvKernel]) -> Result<Var> {
    let len = g.shape(x)[0];
    let max_window = kernels.iter().map(|k| k.window).max().unwrap_or(0);
    if len < max_window {
        return Err(Error::SequenceTooShort {
            len,
            window: max_window,
        });
    }
    let mut pooled = Vec::with_capacity(kernels.len());
    for k in kernels {
        let windows = g.unfold(x, k.window)?;
        let z = linear(g, windows, k.weight, k.bias)?;
        let a = g.relu(z);
        pooled.push(g.max_rows(a)?);
    }
    g.concat_cols(&pooled)
}

/// Weights of one LSTM direction. Gate order along the `4h` axis is
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmDirection {
    /// `d × 4h`
    pub w_ih: Var,
    /// `h × 4h`
    pub w_hh: Var,
    /// `[4h]`
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub forward: LstmDirection,
    pub backward: Option<LstmDirection>,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmOutput {
    /// `L × h` (or `L × 2h` when bidirectional)
    pub outputs: Var,
    /// Last forward hidden state, concatenated with the first backward one.
    pub last: Var,
}

fn lstm_direction<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &LstmDirection,
    reverse: bool,
) -> Result<(Vec<Var>, Var)> {
    let len = g.shape(x)[0];
    let hidden = g.shape(p.w_hh)[0];
    if g.shape(p.w_hh)[1] != 4 * hidden {
        return Err(Error::ShapeMismatch {
            op: "lstm",
            left: g.shape(p.w_hh).to_vec(),
            right: vec![hidden, 4 * hidden],
        });
    }
    let projected = g.matmul(x, p.w_ih)?;
    let projected = g.add_row(projected, p.bias)?;
    let mut h = g.constant(super::Tensor::zeros(&[hidden]));
    let mut c = g.constant(super::Tensor::zeros(&[hidden]));
    let mut outputs = vec![h; len];
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in order {
        let xt = g.row(projected, t)?;
        let rec = g.matmul(h, p.w_hh)?;
        let z = g.add(xt, rec)?;
        let zi = g.slice_cols(z, 0, hidden)?;
        let zf = g.slice_cols(z, hidden, 2 * hidden)?;
        let zc = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
        let zo = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zc);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        outputs[t] = h;
    }
    Ok((outputs, h))
}

/// Stacked (optionally bidirectional) LSTM over the rows of `x`.
pub fn lstm_forward<T: Scalar>(g: &mut Graph<T>, x: Var, layers: &[LstmLayer]) -> Result<LstmOutput> {
    if g.shape(x).len() != 2 || g.shape(x)[0] == 0 {
        return Err(Error::InvalidTensor("lstm input must be a non-empty L×d matrix".into()));
    }
    if layers.is_empty() {
        return Err(Error::InvalidConfig("lstm needs at least one layer".into()));
    }
    let mut input = x;
    let mut last = x;
    for layer in layers {
        let (fwd, fwd_last) = lstm_direction(g, input, &layer.forward, false)?;
        match &layer.backward {
            Some(bp) => {
                let (bwd, bwd_last) = lstm_direction(g, input, bp, true)?;
                let rows = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &b)| g.concat_cols(&[f, b]))
                    .collect::<Result<Vec<_>>>()?;
                input = g.stack_rows(&rows)?;
                last = g.concat_cols(&[fwd_last, bwd_last])?;
            }
            None => {
                input = g.stack_rows(&fwd)?;
                last = fwd_last;
            }
        }
    }
    Ok(LstmOutput {
        outputs: input,
        last,
    })
}

/// Parameters of a post-norm transformer encoder block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Var,
    /// Per-head `L × L` attention probabilities.
    pub attention: Vec<Var>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = g.normalize_rows(x, T::lit(LAYER_NORM_EPS));
    let s = g.mul_row(n, gain)?;
    g.add_row(s, bias)
}

/// Multi-head scaled dot-product self-attention with residual and layer
/// norm, followed by a ReLU feed-forward with residual and layer norm.
pub fn self_attention_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<AttentionOutput> {
    let d = g.shape(x)[1];
    if p.heads == 0 || d % p.heads != 0 {
        return Err(Error::HeadMismatch {
            dim: d,
            heads: p.heads,
        });
    }
    let dh = d / p.heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let mut heads = Vec::with_capacity(p.heads);
    let mut attention = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (s, e) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, s, e)?;
        let kh = g.slice_cols(k, s, e)?;
        let vh = g.slice_cols(v, s, e)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax_rows(scores);
        attention.push(probs);
        heads.push(g.matmul(probs, vh)?);
    }
    let merged = g.concat_cols(&heads)?;
    let attended = linear(g, merged, p.wo, p.bo)?;
    let res1 = g.add(x, attended)?;
    let h1 = layer_norm(g, res1, p.ln1_gain, p.ln1_bias)?;
    let ff = linear(g, h1, p.ff1_w, p.ff1_b)?;
    let ff = g.relu(ff);
    let ff = linear(g, ff, p.ff2_w, p.ff2_b)?;
    let res2 = g.add(h1, ff)?;
    let output = layer_norm(g, res2, p.ln2_gain, p.ln2_bias)?;
    Ok(AttentionOutput { output, attention })
}
