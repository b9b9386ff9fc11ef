use rand::Rng;

use super::{Graph, Param, Tensor, Var};
use crate::error::{Error, Result};

/// `x·W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.value(x).len(), rate, rng)?;
    g.mask_mul(x, mask)
}

/// Parameter names of one LSTM cell, in storage order.
pub const LSTM_PARAM_NAMES: [&str; 15] = [
    "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o",
];

/// Weights of a peephole LSTM cell. Peepholes are diagonal, stored as vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub dim_in: usize,
    pub units: usize,
    /// Tensors in [`LSTM_PARAM_NAMES`] order.
    pub tensors: Vec<Tensor>,
}

impl LstmCellParams {
    pub fn zeros(dim_in: usize, units: usize) -> Self {
        let tensors = LSTM_PARAM_NAMES
            .iter()
            .map(|n| Tensor::zeros(&Self::shape_of(n, dim_in, units)))
            .collect();
        LstmCellParams { dim_in, units, tensors }
    }

    fn shape_of(name: &str, dim_in: usize, units: usize) -> Vec<usize> {
        match &name[..3] {
            "w_x" => vec![dim_in, units],
            "w_h" => vec![units, units],
            _ => vec![units],
        }
    }

    /// Glorot-uniform matrices, zero peepholes, zero biases except the
    /// forget-gate bias which starts at 1.
    pub fn init<R: Rng + ?Sized>(dim_in: usize, units: usize, rng: &mut R) -> Self {
        let tensors = LSTM_PARAM_NAMES
            .iter()
            .map(|n| {
                let shape = Self::shape_of(n, dim_in, units);
                if shape.len() == 2 {
                    glorot(&shape, rng)
                } else if *n == "b_f" {
                    Tensor::filled(&shape, 1.0)
                } else {
                    Tensor::zeros(&shape)
                }
            })
            .collect();
        LstmCellParams { dim_in, units, tensors }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_params(&self, prefix: &str) -> Vec<Param> {
        LSTM_PARAM_NAMES
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| Param::new(format!("{prefix}.{n}"), t.clone()))
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> LstmVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        LstmVars::from_slice(&vars)
    }
}

pub(crate) fn glorot<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[..shape.len() - 1].iter().product();
    let fan_out = shape[shape.len() - 1] * if shape.len() == 3 { shape[0] } else { 1 };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// LSTM cell weights bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_xi: Var,
    pub w_xf: Var,
    pub w_xc: Var,
    pub w_xo: Var,
    pub w_hi: Var,
    pub w_hf: Var,
    pub w_hc: Var,
    pub w_ho: Var,
    pub w_ci: Var,
    pub w_cf: Var,
    pub w_co: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_c: Var,
    pub b_o: Var,
}

impl LstmVars {
    /// Builds from 15 vars in [`LSTM_PARAM_NAMES`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 15, "an LSTM cell has 15 parameter tensors");
        LstmVars {
            w_xi: v[0],
            w_xf: v[1],
            w_xc: v[2],
            w_xo: v[3],
            w_hi: v[4],
            w_hf: v[5],
            w_hc: v[6],
            w_ho: v[7],
            w_ci: v[8],
            w_cf: v[9],
            w_co: v[10],
            b_i: v[11],
            b_f: v[12],
            b_c: v[13],
            b_o: v[14],
        }
    }
}

fn gate_preact(g: &mut Graph, x: Var, h: Var, wx: Var, wh: Var, peep: Option<(Var, Var)>, b: Var) -> Result<Var> {
    let xw = g.matmul(x, wx)?;
    let hw = g.matmul(h, wh)?;
    let mut s = g.add(xw, hw)?;
    if let Some((c, w)) = peep {
        let pc = g.mul_row(c, w)?;
        s = g.add(s, pc)?;
    }
    g.add_row(s, b)
}

/// One peephole LSTM step for a batch: `x: [B, in]`, `h_prev`, `c_prev: [B, units]`.
///
/// ```text
/// i = σ(x·W_xi + h·W_hi + w_ci⊙c_prev + b_i)
/// f = σ(x·W_xf + h·W_hf + w_cf⊙c_prev + b_f)
/// c = f⊙c_prev + i⊙tanh(x·W_xc + h·W_hc + b_c)
/// o = σ(x·W_xo + h·W_ho + w_co⊙c + b_o)
/// h = o⊙tanh(c)
/// ```
///
/// `rec_mask`, when given, multiplies `h_prev` before the recurrent matmuls.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
    rec_mask: Option<&[f64]>,
) -> Result<(Var, Var)> {
    let h_in = match rec_mask {
        Some(m) => g.mask_mul(h_prev, m.to_vec())?,
        None => h_prev,
    };
    let zi = gate_preact(g, x, h_in, p.w_xi, p.w_hi, Some((c_prev, p.w_ci)), p.b_i)?;
    let i = g.sigmoid(zi);
    let zf = gate_preact(g, x, h_in, p.w_xf, p.w_hf, Some((c_prev, p.w_cf)), p.b_f)?;
    let f = g.sigmoid(zf);
    let zc = gate_preact(g, x, h_in, p.w_xc, p.w_hc, None, p.b_c)?;
    let cand = g.tanh(zc);
    let carry = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(carry, write)?;
    let zo = gate_preact(g, x, h_in, p.w_xo, p.w_ho, Some((c, p.w_co)), p.b_o)?;
    let o = g.sigmoid(zo);
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs the cell over `xs` (one `[B, in]` var per step). Rows whose
/// `lens[b] <= t` carry their state through unchanged. Returns the hidden
/// state after every step plus the final `(h, c)`.
pub fn rnn_unroll(
    g: &mut Graph,
    xs: &[Var],
    p: &LstmVars,
    h0: Var,
    c0: Var,
    lens: &[usize],
    rec_mask: Option<&[f64]>,
) -> Result<(Vec<Var>, Var, Var)> {
    let (mut h, mut c) = (h0, c0);
    let mut hs = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        let (hn, cn) = lstm_cell(g, x, h, c, p, rec_mask)?;
        let keep: Vec<bool> = lens.iter().map(|&l| t < l).collect();
        if keep.iter().all(|&k| k) {
            h = hn;
            c = cn;
        } else {
            h = g.blend_rows(hn, h, keep.clone())?;
            c = g.blend_rows(cn, c, keep)?;
        }
        hs.push(h);
    }
    Ok((hs, h, c))
}

fn reversal_src(t: usize, lens: &[usize]) -> Vec<(usize, usize)> {
    lens.iter()
        .enumerate()
        .map(|(b, &l)| (if t < l { l - 1 - t } else { t }, b))
        .collect()
}

/// Output of [`bilstm`].
#[derive(Debug, Clone)]
pub struct BiStates {
    /// Forward hidden state at each time step.
    pub forward: Vec<Var>,
    /// Backward hidden state at each time step, aligned to input positions.
    pub backward: Vec<Var>,
    /// Forward state at the last valid position.
    pub forward_last: Var,
    /// Backward state at position 0 (end of the reverse traversal).
    pub backward_first: Var,
}

/// Bidirectional LSTM. The backward cell reads each row's valid prefix in
/// reverse; its states are then re-aligned with the input time axis.
#[allow(clippy::too_many_arguments)]
pub fn bilstm(
    g: &mut Graph,
    xs: &[Var],
    lens: &[usize],
    fwd: &LstmVars,
    bwd: &LstmVars,
    init: (Var, Var),
    fwd_mask: Option<&[f64]>,
    bwd_mask: Option<&[f64]>,
) -> Result<BiStates> {
    let (forward, forward_last, _) = rnn_unroll(g, xs, fwd, init.0, init.1, lens, fwd_mask)?;
    let mut rev = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        rev.push(g.stack_rows(xs, reversal_src(t, lens))?);
    }
    let (rev_states, backward_first, _) = rnn_unroll(g, &rev, bwd, init.0, init.1, lens, bwd_mask)?;
    let mut backward = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        backward.push(g.stack_rows(&rev_states, reversal_src(t, lens))?);
    }
    Ok(BiStates {
        forward,
        backward,
        forward_last,
        backward_first,
    })
}

/// Stacks per-step `[B, H]` states into `[B·T, H]` with row `b·T + t`.
pub fn stack_time_major(g: &mut Graph, steps: &[Var]) -> Result<Var> {
    let b = g.value(steps[0]).rows();
    let t = steps.len();
    let src = (0..b).flat_map(|bi| (0..t).map(move |ti| (ti, bi))).collect();
    g.stack_rows(steps, src)
}

/// Additive attention weights bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// `[H, H]`
    pub w_a: Var,
    /// `[H]`
    pub b_a: Var,
    /// `[H]`
    pub v: Var,
}

/// Attention pooling over `states: [B·T, H]` (row `b·T + t`).
///
/// Scores `e_t = v·tanh(W_a s_t + b_a)` are soft-maxed over the first
/// `lens[b]` steps only. Returns the context `[B, H]` and weights `[B, T]`.
pub fn attention_pool(g: &mut Graph, states: Var, lens: &[usize], a: &AttentionVars) -> Result<(Var, Var)> {
    let b = lens.len();
    let rows = g.value(states).rows();
    let h = g.value(states).cols();
    if b == 0 || !rows.is_multiple_of(b) {
        return Err(Error::Input(format!(
            "attention_pool: {rows} state rows for batch of {b}"
        )));
    }
    if let Some(bi) = lens.iter().position(|&l| l == 0) {
        return Err(Error::Input(format!("attention_pool: example {bi} has true_length 0")));
    }
    let t = rows / b;
    let proj = dense(g, states, a.w_a, a.b_a)?;
    let u = g.tanh(proj);
    let v = g.reshape(a.v, &[h, 1])?;
    let e = g.matmul(u, v)?;
    let e = g.reshape(e, &[b, t])?;
    let alpha = g.masked_softmax(e, lens.to_vec())?;
    let ctx = g.weighted_row_sum(alpha, states)?;
    Ok((ctx, alpha))
}
