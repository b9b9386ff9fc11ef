//! The five classifiers: series CNN, parallel CNN, LSTM, BiLSTM and
//! attention BiLSTM, all ending in a single sigmoid unit.
//!
//! Every architecture only looks at the first `effective_length` positions
//! of each example, where the effective length is the true length raised to
//! the minimum the architecture needs (1 for the recurrent models, enough
//! for every convolution and pooling window in the CNNs). Positions past it
//! never reach the output, so appending padding cannot change a prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSequence, Vocabulary, OOV, PAD};
use crate::embed::{word_vector, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::nncore::{
    attention_pool, bilstm, dense, dropout, dropout_mask, glorot, rnn_unroll, stack_time_major, AttentionVars,
    GradCheckReport, Gradients, Graph, LstmCellParams, LstmVars, Param, Tensor, Var, LSTM_PARAM_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SeriesCnn,
    ParallelCnn,
    Lstm,
    Bilstm,
    AttnBilstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::SeriesCnn,
        Architecture::ParallelCnn,
        Architecture::Lstm,
        Architecture::Bilstm,
        Architecture::AttnBilstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::SeriesCnn => "series_cnn",
            Architecture::ParallelCnn => "parallel_cnn",
            Architecture::Lstm => "lstm",
            Architecture::Bilstm => "bilstm",
            Architecture::AttnBilstm => "attn_bilstm",
        }
    }

    /// Human-readable name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::SeriesCnn => "CNN (series)",
            Architecture::ParallelCnn => "CNN (parallel)",
            Architecture::Lstm => "LSTM",
            Architecture::Bilstm => "BiLSTM",
            Architecture::AttnBilstm => "Attention BiLSTM",
        }
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Architecture::SeriesCnn | Architecture::ParallelCnn)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How attention scores each BiLSTM state `s_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScoring {
    /// `v·tanh(W_a s_t + b_a)`
    #[default]
    Additive,
    /// `v·s_t`
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub max_len: usize,
    pub embed_dim: usize,
    pub trainable_embeddings: bool,
    /// Kernel size of both series CNN convolutions.
    pub series_kernel: usize,
    pub series_blocks: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub parallel_kernels: Vec<usize>,
    pub filters: usize,
    pub units: usize,
    pub cnn_dropout: f64,
    pub input_dropout: f64,
    pub recurrent_dropout: f64,
    pub cnn_dense: Vec<usize>,
    pub rnn_dense: Vec<usize>,
    pub attention: AttentionScoring,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::full(Architecture::AttnBilstm)
    }
}

impl ModelSpec {
    /// Full-size configuration: 300-d inputs, 200 filters, 150 LSTM units.
    pub fn full(architecture: Architecture) -> Self {
        ModelSpec {
            architecture,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            embed_dim: 300,
            trainable_embeddings: false,
            series_kernel: 7,
            series_blocks: 2,
            pool_size: 2,
            pool_stride: 2,
            parallel_kernels: vec![3, 6, 9, 12],
            filters: 200,
            units: 150,
            cnn_dropout: 0.5,
            input_dropout: 0.2,
            recurrent_dropout: 0.2,
            cnn_dense: vec![128, 64],
            rnn_dense: vec![64],
            attention: AttentionScoring::Additive,
        }
    }

    /// Small configuration for gradient checks and fast tests:
    /// max_len 8, 8 units, 8 filters.
    pub fn scaled(architecture: Architecture, embed_dim: usize) -> Self {
        ModelSpec {
            architecture,
            max_len: 8,
            embed_dim,
            series_kernel: 2,
            parallel_kernels: vec![2, 3, 4, 5],
            filters: 8,
            units: 8,
            cnn_dense: vec![16, 8],
            rnn_dense: vec![8],
            ..ModelSpec::full(architecture)
        }
    }

    fn kernels(&self) -> Vec<usize> {
        match self.architecture {
            Architecture::SeriesCnn => vec![self.series_kernel; self.series_blocks],
            Architecture::ParallelCnn => self.parallel_kernels.clone(),
            _ => Vec::new(),
        }
    }

    /// Valid output length of the CNN feature extractor for `len` valid
    /// input positions, or `None` if some window does not fit.
    pub fn cnn_valid_len(&self, len: usize) -> Option<usize> {
        match self.architecture {
            Architecture::SeriesCnn => {
                let mut v = len;
                for _ in 0..self.series_blocks {
                    v = v.checked_sub(self.series_kernel)? + 1;
                    v = v.checked_sub(self.pool_size)? / self.pool_stride + 1;
                }
                Some(v)
            }
            Architecture::ParallelCnn => {
                let kmax = *self.parallel_kernels.iter().max()?;
                (len >= kmax).then(|| len - kmax + 1)
            }
            _ => Some(len),
        }
    }

    /// Smallest number of positions the architecture can process.
    pub fn min_len(&self) -> usize {
        (1..=self.max_len.max(1))
            .find(|&l| self.cnn_valid_len(l).is_some_and(|v| v >= 1))
            .unwrap_or(usize::MAX)
    }

    pub fn effective_len(&self, true_length: usize) -> usize {
        true_length.min(self.max_len).max(self.min_len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_len < 1 || self.embed_dim < 1 {
            return bad("model.max_len and model.embed_dim must be positive".into());
        }
        for (name, r) in [
            ("cnn_dropout", self.cnn_dropout),
            ("input_dropout", self.input_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("model.{name} = {r} outside [0, 1)"));
            }
        }
        let widths = if self.architecture.is_cnn() {
            &self.cnn_dense
        } else {
            &self.rnn_dense
        };
        if widths.contains(&0) {
            return bad("dense widths must be positive".into());
        }
        if self.architecture.is_cnn() {
            let ks = self.kernels();
            if self.filters < 1 || ks.is_empty() || ks.contains(&0) || self.pool_size < 1 || self.pool_stride < 1 {
                return bad("CNN filters, kernels, pool size and stride must be positive".into());
            }
            if let Some(k) = ks.iter().find(|&&k| k > self.max_len) {
                return bad(format!("kernel size {k} exceeds max_len {}", self.max_len));
            }
            if self.min_len() > self.max_len {
                return bad(format!(
                    "max_len {} is too short for the convolution and pooling stack",
                    self.max_len
                ));
            }
        } else if self.units < 1 {
            return bad("model.units must be positive".into());
        }
        Ok(())
    }
}

/// Classifier embedding table: row `i` is the vector of classifier token
/// `i`. PAD maps to zeros and OOV to the embedding matrix's OOV row.
pub fn embedding_table(vocab: &Vocabulary, matrix: &EmbeddingMatrix) -> Tensor {
    let d = matrix.dim;
    let mut data = Vec::with_capacity(vocab.len() * d);
    for (i, tok) in vocab.tokens().iter().enumerate() {
        match i {
            PAD => data.extend(std::iter::repeat_n(0.0, d)),
            OOV => data.extend_from_slice(matrix.input_row(OOV)),
            _ => data.extend(word_vector(tok, matrix)),
        }
    }
    Tensor::new(vec![vocab.len(), d], data).expect("consistent shape")
}

/// Mean loss, per-parameter gradients (`None` when frozen) and probabilities.
pub type LossAndGrads = (f64, Vec<Option<Vec<f64>>>, Vec<f64>);

/// A model specification with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltModel {
    pub spec: ModelSpec,
    params: Vec<Param>,
}

/// Intermediate values of one forward pass.
pub(crate) struct Trace {
    pub probs: Var,
    pub alpha: Option<Var>,
    // attention internals, inspected by tests
    #[cfg_attr(not(test), allow(dead_code))]
    pub context: Option<Var>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub states: Option<Var>,
}

struct Binder<'a> {
    vars: &'a [Var],
    params: &'a [Param],
}

impl Binder<'_> {
    fn get(&self, name: &str) -> Result<Var> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Input(format!("missing parameter {name}")))
    }

    fn lstm(&self, prefix: &str) -> Result<LstmVars> {
        let v: Vec<Var> = LSTM_PARAM_NAMES
            .iter()
            .map(|n| self.get(&format!("{prefix}.{n}")))
            .collect::<Result<_>>()?;
        Ok(LstmVars::from_slice(&v))
    }
}

pub fn build_model(spec: &ModelSpec, embeddings: Tensor, seed: u64) -> Result<BuiltModel> {
    spec.validate()?;
    if embeddings.shape().len() != 2 || embeddings.cols() != spec.embed_dim || embeddings.rows() < 2 {
        return Err(Error::Config(format!(
            "embedding table {:?} does not match model.embed_dim {}",
            embeddings.shape(),
            spec.embed_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![if spec.trainable_embeddings {
        Param::new("embedding", embeddings)
    } else {
        Param::frozen("embedding", embeddings)
    }];
    let d = spec.embed_dim;
    let push_dense = |params: &mut Vec<Param>, name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng| {
        params.push(Param::new(format!("{name}.w"), glorot(&[i, o], rng)));
        params.push(Param::new(format!("{name}.b"), Tensor::zeros(&[o])));
    };
    let features = match spec.architecture {
        Architecture::SeriesCnn => {
            let mut cin = d;
            for i in 0..spec.series_blocks {
                let k = spec.series_kernel;
                params.push(Param::new(
                    format!("conv{i}.kernel"),
                    glorot(&[k, cin, spec.filters], &mut rng),
                ));
                params.push(Param::new(format!("conv{i}.bias"), Tensor::zeros(&[spec.filters])));
                cin = spec.filters;
            }
            spec.filters
        }
        Architecture::ParallelCnn => {
            for &k in &spec.parallel_kernels {
                params.push(Param::new(
                    format!("conv_k{k}.kernel"),
                    glorot(&[k, d, spec.filters], &mut rng),
                ));
                params.push(Param::new(format!("conv_k{k}.bias"), Tensor::zeros(&[spec.filters])));
            }
            spec.filters * spec.parallel_kernels.len()
        }
        Architecture::Lstm => {
            params.extend(LstmCellParams::init(d, spec.units, &mut rng).to_params("lstm"));
            spec.units
        }
        Architecture::Bilstm | Architecture::AttnBilstm => {
            params.extend(LstmCellParams::init(d, spec.units, &mut rng).to_params("fwd"));
            params.extend(LstmCellParams::init(d, spec.units, &mut rng).to_params("bwd"));
            let h = 2 * spec.units;
            if spec.architecture == Architecture::AttnBilstm {
                if spec.attention == AttentionScoring::Additive {
                    params.push(Param::new("attn.w_a", glorot(&[h, h], &mut rng)));
                    params.push(Param::new("attn.b_a", Tensor::zeros(&[h])));
                }
                let v = glorot(&[h, 1], &mut rng).reshaped(&[h])?;
                params.push(Param::new("attn.v", v));
                2 * h
            } else {
                h
            }
        }
    };
    let widths = if spec.architecture.is_cnn() {
        &spec.cnn_dense
    } else {
        &spec.rnn_dense
    };
    let mut fin = features;
    for (i, &w) in widths.iter().enumerate() {
        push_dense(&mut params, &format!("dense{i}"), fin, w, &mut rng);
        fin = w;
    }
    push_dense(&mut params, "out", fin, 1, &mut rng);
    Ok(BuiltModel {
        spec: spec.clone(),
        params,
    })
}

impl BuiltModel {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total element count of parameters whose name starts with `prefix`.
    pub fn param_count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.params[0].value.rows()
    }

    /// Adds every parameter to `g` (trainable ones as differentiable leaves).
    pub(crate) fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                // the frozen table is looked up outside the graph instead
                if p.name == "embedding" && !p.trainable {
                    return g.constant(Tensor::zeros(&[0]));
                }
                if p.trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn effective_lens(&self, batch: &[EncodedSequence]) -> Result<Vec<usize>> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let v = self.vocab_size();
        let mut lens = Vec::with_capacity(batch.len());
        for (b, s) in batch.iter().enumerate() {
            let tl = s.true_length.min(s.indices.len());
            if let Some(&bad) = s.indices[..tl].iter().find(|&&i| i >= v) {
                return Err(Error::Input(format!(
                    "example {b}: token index {bad} outside embedding table of {v} rows"
                )));
            }
            if tl == 0 {
                log::warn!("example {b} has no tokens; classifying a single padding position");
            }
            lens.push(self.spec.effective_len(tl));
        }
        Ok(lens)
    }

    /// Token index at position `t`, with everything past the true length
    /// treated as padding.
    fn token_at(s: &EncodedSequence, t: usize, max_len: usize) -> usize {
        if t < s.true_length.min(max_len) {
            s.indices.get(t).copied().unwrap_or(PAD)
        } else {
            PAD
        }
    }

    fn embed(&self, g: &mut Graph, table: Var, idx: Vec<usize>) -> Result<Var> {
        let e = &self.params[0];
        if e.trainable {
            return g.gather(table, idx);
        }
        let d = e.value.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            data.extend_from_slice(e.value.row(i));
        }
        Ok(g.constant(Tensor::new(vec![idx.len(), d], data)?))
    }

    pub(crate) fn trace<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        vars: &[Var],
        batch: &[EncodedSequence],
        training: bool,
        rng: &mut R,
    ) -> Result<Trace> {
        let spec = &self.spec;
        let lens = self.effective_lens(batch)?;
        let steps = *lens.iter().max().expect("non-empty");
        let bsz = batch.len();
        let p = Binder {
            vars,
            params: &self.params,
        };
        let table = vars[0];
        let (mut alpha, mut context, mut states) = (None, None, None);

        let features = if spec.architecture.is_cnn() {
            let idx = batch
                .iter()
                .flat_map(|s| (0..steps).map(move |t| Self::token_at(s, t, spec.max_len)))
                .collect();
            let e = self.embed(g, table, idx)?;
            let x = g.reshape(e, &[bsz, steps, spec.embed_dim])?;
            let f = self.cnn_features(g, &p, x, &lens)?;
            dropout(g, f, spec.cnn_dropout, training, rng)?
        } else {
            let mut xs = Vec::with_capacity(steps);
            for t in 0..steps {
                let idx = batch.iter().map(|s| Self::token_at(s, t, spec.max_len)).collect();
                xs.push(self.embed(g, table, idx)?);
            }
            if training && spec.input_dropout > 0.0 {
                // one mask per sequence, shared by all time steps
                let m = dropout_mask(bsz * spec.embed_dim, spec.input_dropout, rng)?;
                for x in &mut xs {
                    *x = g.mask_mul(*x, m.clone())?;
                }
            }
            let u = spec.units;
            let zeros = g.constant(Tensor::zeros(&[bsz, u]));
            let mut rec_mask = || -> Result<Option<Vec<f64>>> {
                Ok(if training && spec.recurrent_dropout > 0.0 {
                    Some(dropout_mask(bsz * u, spec.recurrent_dropout, rng)?)
                } else {
                    None
                })
            };
            match spec.architecture {
                Architecture::Lstm => {
                    let m = rec_mask()?;
                    let (_, h, _) = rnn_unroll(g, &xs, &p.lstm("lstm")?, zeros, zeros, &lens, m.as_deref())?;
                    h
                }
                _ => {
                    let (mf, mb) = (rec_mask()?, rec_mask()?);
                    let bi = bilstm(
                        g,
                        &xs,
                        &lens,
                        &p.lstm("fwd")?,
                        &p.lstm("bwd")?,
                        (zeros, zeros),
                        mf.as_deref(),
                        mb.as_deref(),
                    )?;
                    let ends = g.concat_cols(&[bi.forward_last, bi.backward_first])?;
                    if spec.architecture == Architecture::Bilstm {
                        ends
                    } else {
                        let per_step: Vec<Var> = bi
                            .forward
                            .iter()
                            .zip(&bi.backward)
                            .map(|(&f, &b)| g.concat_cols(&[f, b]))
                            .collect::<Result<_>>()?;
                        let s = stack_time_major(g, &per_step)?;
                        let (ctx, a) = match spec.attention {
                            AttentionScoring::Additive => {
                                let av = AttentionVars {
                                    w_a: p.get("attn.w_a")?,
                                    b_a: p.get("attn.b_a")?,
                                    v: p.get("attn.v")?,
                                };
                                attention_pool(g, s, &lens, &av)?
                            }
                            AttentionScoring::Dot => {
                                let h = 2 * u;
                                let v = g.reshape(p.get("attn.v")?, &[h, 1])?;
                                let e = g.matmul(s, v)?;
                                let e = g.reshape(e, &[bsz, steps])?;
                                let a = g.masked_softmax(e, lens.clone())?;
                                (g.weighted_row_sum(a, s)?, a)
                            }
                        };
                        alpha = Some(a);
                        context = Some(ctx);
                        states = Some(s);
                        g.concat_cols(&[ctx, ends])?
                    }
                }
            }
        };

        let widths = if spec.architecture.is_cnn() {
            &spec.cnn_dense
        } else {
            &spec.rnn_dense
        };
        let mut h = features;
        for i in 0..widths.len() {
            let y = dense(g, h, p.get(&format!("dense{i}.w"))?, p.get(&format!("dense{i}.b"))?)?;
            h = g.relu(y);
        }
        let z = dense(g, h, p.get("out.w")?, p.get("out.b")?)?;
        let probs = g.sigmoid(z);
        Ok(Trace {
            probs,
            alpha,
            context,
            states,
        })
    }

    fn cnn_features(&self, g: &mut Graph, p: &Binder<'_>, x: Var, lens: &[usize]) -> Result<Var> {
        let spec = &self.spec;
        match spec.architecture {
            Architecture::SeriesCnn => {
                let mut h = x;
                let mut valid = lens.to_vec();
                for i in 0..spec.series_blocks {
                    let c = g.conv1d(h, p.get(&format!("conv{i}.kernel"))?, p.get(&format!("conv{i}.bias"))?)?;
                    h = g.maxpool1d(c, spec.pool_size, spec.pool_stride)?;
                    for v in &mut valid {
                        *v = (*v - spec.series_kernel + 1 - spec.pool_size) / spec.pool_stride + 1;
                    }
                }
                g.global_maxpool(h, &valid)
            }
            _ => {
                let mut branches = Vec::with_capacity(spec.parallel_kernels.len());
                for &k in &spec.parallel_kernels {
                    let c = g.conv1d(
                        x,
                        p.get(&format!("conv_k{k}.kernel"))?,
                        p.get(&format!("conv_k{k}.bias"))?,
                    )?;
                    let valid: Vec<usize> = lens.iter().map(|&v| v - k + 1).collect();
                    branches.push(g.global_maxpool(c, &valid)?);
                }
                g.concat_cols(&branches)
            }
        }
    }

    /// Probability of the sarcastic class for each example.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &[EncodedSequence], training: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let t = self.trace(&mut g, &vars, batch, training, rng)?;
        Ok(g.value(t.probs).data().to_vec())
    }

    /// Inference-mode probabilities.
    pub fn predict(&self, batch: &[EncodedSequence]) -> Result<Vec<f64>> {
        self.forward(batch, false, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Attention weights `[B][T]` (attention BiLSTM only), inference mode.
    pub fn attention_weights(&self, batch: &[EncodedSequence]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let t = self.trace(&mut g, &vars, batch, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        let a = t
            .alpha
            .ok_or_else(|| Error::Input(format!("{} has no attention", self.spec.architecture)))?;
        let a = g.value(a);
        Ok((0..a.rows()).map(|r| a.row(r).to_vec()).collect())
    }

    fn bind_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.name == "embedding" && !p.trainable {
                    g.constant(Tensor::zeros(&[0]))
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Mean BCE loss over the batch, its gradient for every trainable
    /// parameter (`None` for frozen ones) and the probabilities.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &[EncodedSequence],
        labels: &[f64],
        training: bool,
        rng: &mut R,
    ) -> Result<LossAndGrads> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let t = self.trace(&mut g, &vars, batch, training, rng)?;
        let loss = g.bce(t.probs, labels)?;
        let grads: Gradients = g.backward(loss);
        let out = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                p.trainable.then(|| {
                    grads
                        .get(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; p.value.len()])
                })
            })
            .collect();
        Ok((g.value(loss).item(), out, g.value(t.probs).data().to_vec()))
    }
}

/// Finite-difference check of the full model on a fixed two-example batch
/// (lengths `max_len` and `max_len/2 + 1`), with trainable embeddings and
/// dropout active under a fixed mask seed.
pub fn gradcheck_model(spec: &ModelSpec, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let vocab_size = 12;
    let mut spec = spec.clone();
    spec.trainable_embeddings = true;
    let table = crate::nncore::test_tensor(&[vocab_size, spec.embed_dim], seed, 1.0);
    let model = build_model(&spec, table, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let l = spec.max_len;
    let mk = |len: usize, rng: &mut ChaCha8Rng| EncodedSequence {
        indices: (0..l)
            .map(|t| if t < len { rng.random_range(2..vocab_size) } else { PAD })
            .collect(),
        true_length: len,
    };
    let batch = vec![mk(l, &mut rng), mk(l / 2 + 1, &mut rng)];
    let labels = &[1.0, 0.0];
    let mask_seed = seed.wrapping_add(17);

    let (_, grads, _) = model.loss_and_grads(&batch, labels, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
    let analytic: Vec<Vec<f64>> = grads
        .into_iter()
        .zip(model.params())
        .map(|(g, p)| g.unwrap_or_else(|| vec![0.0; p.value.len()]))
        .collect();
    let mut params = model.params().to_vec();
    crate::nncore::compare_gradients(
        &mut params,
        &analytic,
        |ps| {
            let m = BuiltModel {
                spec: spec.clone(),
                params: ps.to_vec(),
            };
            let mut g = Graph::new();
            let vars = m.bind(&mut g);
            let t = m.trace(&mut g, &vars, &batch, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
            let loss = g.bce(t.probs, labels)?;
            Ok(g.value(loss).item())
        },
        tolerance,
    )
}

impl BuiltModel {
    /// Reassembles a model from stored parameters, checking names and shapes
    /// against a freshly built one.
    pub fn from_params(spec: &ModelSpec, params: Vec<Param>) -> Result<Self> {
        let first = params
            .first()
            .filter(|p| p.name == "embedding")
            .ok_or_else(|| Error::Checkpoint("first tensor must be the embedding table".into()))?;
        let reference = build_model(spec, Tensor::zeros(first.value.shape()), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {}, found {}",
                    r.name, p.name
                )));
            }
            if r.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {}: expected shape {:?}, found {:?}",
                    r.name,
                    r.value.shape(),
                    p.value.shape()
                )));
            }
        }
        let params = reference
            .params
            .into_iter()
            .zip(params)
            .map(|(r, p)| Param {
                trainable: r.trainable,
                ..p
            })
            .collect();
        Ok(BuiltModel {
            spec: spec.clone(),
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::test_tensor;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn small(arch: Architecture) -> BuiltModel {
        build_model(&ModelSpec::scaled(arch, 6), test_tensor(&[10, 6], 3, 0.5), 4).unwrap()
    }

    fn seq(tokens: &[usize], max_len: usize) -> EncodedSequence {
        let mut indices = tokens.to_vec();
        indices.resize(max_len, PAD);
        EncodedSequence {
            indices,
            true_length: tokens.len(),
        }
    }

    #[test]
    fn full_size_parameter_counts() {
        let table = Tensor::zeros(&[3, 300]);
        let m = build_model(&ModelSpec::full(Architecture::ParallelCnn), table.clone(), 0).unwrap();
        assert_eq!(m.param_count("conv"), 1_800_800);
        let m = build_model(&ModelSpec::full(Architecture::Lstm), table.clone(), 0).unwrap();
        assert_eq!(m.param_count("lstm."), 271_050);
        let m = build_model(&ModelSpec::full(Architecture::AttnBilstm), table, 0).unwrap();
        assert_eq!(m.param("dense0.w").unwrap().value.shape(), &[600, 64]);
        assert_eq!(m.param_count("fwd."), 271_050);
    }

    #[test]
    fn full_size_series_cnn_shapes() {
        let spec = ModelSpec::full(Architecture::SeriesCnn);
        // 7-wide conv and 2/2 pool twice: 64 → 58 → 29 → 23 → 11
        assert_eq!(spec.cnn_valid_len(64), Some(11));
        assert_eq!(spec.min_len(), 22);
        let p = ModelSpec::full(Architecture::ParallelCnn);
        assert_eq!(p.min_len(), 12);
        assert_eq!(ModelSpec::full(Architecture::Lstm).min_len(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::full(Architecture::ParallelCnn);
        s.max_len = 10;
        assert!(matches!(s.validate(), Err(Error::Config(m)) if m.contains("kernel size 12")));
        let mut s = ModelSpec::full(Architecture::SeriesCnn);
        s.max_len = 12;
        assert!(s.validate().is_err());
        assert!("gru".parse::<Architecture>().is_err());
        let mut s = ModelSpec::scaled(Architecture::Lstm, 4);
        s.units = 0;
        assert!(s.validate().is_err());
        let e = build_model(&ModelSpec::scaled(Architecture::Lstm, 4), Tensor::zeros(&[5, 3]), 0);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn zero_output_layer_gives_half() {
        for arch in Architecture::ALL {
            let mut m = small(arch);
            for n in ["out.w", "out.b"] {
                m.param_mut(n)
                    .unwrap()
                    .value
                    .data_mut()
                    .iter_mut()
                    .for_each(|x| *x = 0.0);
            }
            let p = m.predict(&[seq(&[2, 3, 4], 8), seq(&[], 8)]).unwrap();
            assert!(p.iter().all(|&x| x == 0.5), "{arch}: {p:?}");
        }
    }

    #[test]
    fn empty_batch_and_bad_index() {
        let m = small(Architecture::Lstm);
        assert!(m.predict(&[]).is_err());
        assert!(m.predict(&[seq(&[2, 99], 8)]).is_err());
    }

    #[test]
    fn identical_examples_identical_outputs() {
        for arch in Architecture::ALL {
            let m = small(arch);
            let s = seq(&[2, 5, 7, 3], 8);
            let p = m.predict(&[s.clone(), s]).unwrap();
            assert_eq!(p[0], p[1]);
            assert!(p[0] > 0.0 && p[0] < 1.0);
        }
    }

    #[test]
    fn attention_uniform_when_scores_constant() {
        let mut m = small(Architecture::AttnBilstm);
        m.param_mut("attn.v")
            .unwrap()
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        let batch = [seq(&[2, 3, 4], 8), seq(&[5, 6, 7, 8, 9, 2, 3], 8)];
        let mut g = Graph::new();
        let vars = m.bind_constants(&mut g);
        let t = m
            .trace(&mut g, &vars, &batch, false, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let (ctx, states, alpha) = (
            g.value(t.context.unwrap()),
            g.value(t.states.unwrap()),
            g.value(t.alpha.unwrap()),
        );
        let steps = alpha.cols();
        for (b, len) in [(0usize, 3usize), (1, 7)] {
            for j in 0..ctx.cols() {
                let mean: f64 = (0..len).map(|t| states.row(b * steps + t)[j]).sum::<f64>() / len as f64;
                assert!((ctx.row(b)[j] - mean).abs() < 1e-12);
            }
            for t in 0..steps {
                let want = if t < len { 1.0 / len as f64 } else { 0.0 };
                assert!((alpha.row(b)[t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_normalised_and_masked() {
        let m = small(Architecture::AttnBilstm);
        let w = m.attention_weights(&[seq(&[2, 3, 4], 8), seq(&[5; 8], 8)]).unwrap();
        for (row, len) in w.iter().zip([3, 8]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row[len..].iter().all(|&x| x == 0.0));
        }
        assert!(small(Architecture::Lstm).attention_weights(&[seq(&[2], 8)]).is_err());
    }

    #[test]
    fn all_pad_input_is_defined() {
        for arch in Architecture::ALL {
            let m = small(arch);
            let p = m.predict(&[seq(&[], 8)]).unwrap();
            assert!(p[0].is_finite() && p[0] > 0.0 && p[0] < 1.0);
        }
    }

    #[test]
    fn dot_scoring_variant_runs() {
        let mut spec = ModelSpec::scaled(Architecture::AttnBilstm, 6);
        spec.attention = AttentionScoring::Dot;
        let m = build_model(&spec, test_tensor(&[10, 6], 3, 0.5), 4).unwrap();
        assert!(m.param("attn.w_a").is_none());
        let r = gradcheck_model(&spec, 2, 1e-4).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn full_model_gradients() {
        for arch in Architecture::ALL {
            let r = gradcheck_model(&ModelSpec::scaled(arch, 8), 1, 1e-4).unwrap();
            assert!(r.passed(), "{arch}: {r}");
            assert!(r.checked > 100);
        }
    }

    #[test]
    fn frozen_embeddings_get_no_gradient() {
        let m = small(Architecture::ParallelCnn);
        let (loss, grads, probs) = m
            .loss_and_grads(
                &[seq(&[2, 3, 4, 5, 6], 8)],
                &[1.0],
                false,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        assert!(grads[0].is_none());
        assert!(grads[1..].iter().all(Option::is_some));
        assert!((loss - -probs[0].ln()).abs() < 1e-12);
    }

    #[test]
    fn from_params_checks_layout() {
        let m = small(Architecture::Bilstm);
        let again = BuiltModel::from_params(&m.spec, m.params().to_vec()).unwrap();
        assert_eq!(again, m);
        let mut ps = m.params().to_vec();
        ps[3].value = Tensor::zeros(&[1]);
        let e = BuiltModel::from_params(&m.spec, ps).unwrap_err().to_string();
        assert!(e.contains(&m.params()[3].name), "{e}");
    }

    #[test]
    fn embedding_table_rows() {
        let vocab = Vocabulary::from_entries(vec![("a".into(), 3), ("zz".into(), 1)], 1).unwrap();
        let ev = Vocabulary::from_entries(vec![("a".into(), 3)], 1).unwrap();
        let m = EmbeddingMatrix::from_rows(ev, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = embedding_table(&vocab, &m);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn batch_independence_and_padding(
            arch_i in 0usize..5,
            toks in proptest::collection::vec(proptest::collection::vec(2usize..10, 0..9), 1..5),
            perm_seed in any::<u64>(),
        ) {
            let m = small(Architecture::ALL[arch_i]);
            let batch: Vec<EncodedSequence> = toks.iter().map(|t| seq(&t[..t.len().min(8)], 8)).collect();
            let joint = m.predict(&batch).unwrap();
            for (s, p) in batch.iter().zip(&joint) {
                let single = m.predict(std::slice::from_ref(s)).unwrap()[0];
                prop_assert!((single - p).abs() < 1e-6);
                // more padding, whether or not beyond max_len
                let mut longer = s.clone();
                longer.indices.extend([PAD; 5]);
                let again = m.predict(&[longer]).unwrap()[0];
                prop_assert!((again - p).abs() < 1e-6);
            }
            // permuting the batch permutes the outputs
            let mut order: Vec<usize> = (0..batch.len()).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let permuted: Vec<EncodedSequence> = order.iter().map(|&i| batch[i].clone()).collect();
            let pp = m.predict(&permuted).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert!((pp[k] - joint[i]).abs() < 1e-6);
            }
        }
    }
}
