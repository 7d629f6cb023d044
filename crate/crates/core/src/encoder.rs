//! Instance encoder: token embedding lookup, mean-pooled summary row, the
//! three-layer projection head, the label table and the label fusion block.
//!
//! Every forward pass records an [`InstanceTrace`] so that the matching
//! backward pass can run without recomputation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NormSite, Result};
use crate::math::{self, Matrix, NORM_EPS};

/// How an instance representation is produced from the token outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// Projection head over the summary row.
    Vanilla,
    /// Label-attended pooling over the token rows, then the projection head.
    Fusion,
}

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: Matrix::zeros(1, outputs) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { weight: Matrix::identity(dim), bias: Matrix::zeros(1, dim) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight.row_iter().zip(self.bias.as_slice()).map(|(w, b)| math::dot(w, x) + b).collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], d_y: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut d_x = vec![0.0; self.inputs()];
        for (o, &g) in d_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias.add_at(0, o, g);
            let w = self.weight.row(o);
            let gw = grad.weight.row_mut(o);
            for k in 0..x.len() {
                gw[k] += g * x[k];
                d_x[k] += g * w[k];
            }
        }
        d_x
    }
}

/// Three square affine layers with ReLU after the first two.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub layers: [Linear; 3],
}

/// Activations saved by [`ProjectionHead::forward`].
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    pub output: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn relu_backward(pre: &[f64], d: &mut [f64]) {
    for (g, &p) in d.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        Self { layers: [Linear::identity(dim), Linear::identity(dim), Linear::identity(dim)] }
    }

    pub fn forward(&self, x: &[f64]) -> HeadTrace {
        let pre1 = self.layers[0].forward(x);
        let act1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&act1);
        let act2 = relu(&pre2);
        let output = self.layers[2].forward(&act2);
        HeadTrace { input: x.to_vec(), pre1, act1, pre2, act2, output }
    }

    pub fn backward(&self, trace: &HeadTrace, d_out: &[f64], grad: &mut ProjectionHead) -> Vec<f64> {
        let [g0, g1, g2] = &mut grad.layers;
        let mut d = self.layers[2].backward(&trace.act2, d_out, g2);
        relu_backward(&trace.pre2, &mut d);
        let mut d = self.layers[1].backward(&trace.act1, &d, g1);
        relu_backward(&trace.pre1, &mut d);
        self.layers[0].backward(&trace.input, &d, g0)
    }
}

/// 1-D convolution over the token axis of the label/token interaction matrix.
///
/// `weight` is `C_out × (C_in · width)`, indexed `[o][c * width + k]`.
/// Zero "same" padding puts `(width - 1) / 2` positions on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConv {
    pub weight: Matrix,
    pub bias: Matrix,
    pub width: usize,
}

impl FusionConv {
    pub fn zeros(classes: usize, width: usize) -> Self {
        Self { weight: Matrix::zeros(classes, classes * width), bias: Matrix::zeros(1, classes), width }
    }

    fn left_pad(&self) -> usize {
        (self.width - 1) / 2
    }

    fn channels(&self) -> usize {
        self.bias.cols()
    }

    /// Pre-activation conv output, `C_out × M`.
    fn forward(&self, g: &Matrix) -> Matrix {
        let (c_in, m) = g.shape();
        let c_out = self.channels();
        let pad = self.left_pad() as isize;
        let mut out = Matrix::zeros(c_out, m);
        for o in 0..c_out {
            let w = self.weight.row(o);
            for j in 0..m {
                let mut acc = self.bias.get(0, o);
                for c in 0..c_in {
                    for k in 0..self.width {
                        let src = j as isize + k as isize - pad;
                        if src >= 0 && (src as usize) < m {
                            acc += w[c * self.width + k] * g.get(c, src as usize);
                        }
                    }
                }
                out.set(o, j, acc);
            }
        }
        out
    }

    /// Accumulates kernel gradients and returns `dL/dG`.
    fn backward(&self, g: &Matrix, d_pre: &Matrix, grad: &mut FusionConv) -> Matrix {
        let (c_in, m) = g.shape();
        let pad = self.left_pad() as isize;
        let mut d_g = Matrix::zeros(c_in, m);
        for o in 0..self.channels() {
            for j in 0..m {
                let d = d_pre.get(o, j);
                if d == 0.0 {
                    continue;
                }
                grad.bias.add_at(0, o, d);
                for c in 0..c_in {
                    for k in 0..self.width {
                        let src = j as isize + k as isize - pad;
                        if src >= 0 && (src as usize) < m {
                            let src = src as usize;
                            let idx = c * self.width + k;
                            grad.weight.add_at(o, idx, d * g.get(c, src));
                            d_g.add_at(c, src, d * self.weight.get(o, idx));
                        }
                    }
                }
            }
        }
        d_g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embeddings: Matrix,
    pub head: ProjectionHead,
    pub fusion: FusionConv,
}

/// Learnable label embeddings, one row per class. Rows are normalized at use.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub weights: Matrix,
}

impl LabelTable {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }
}

/// A tokenized example. The summary position is not stored: it is derived
/// from the token rows by [`encode_tokens`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub token_ids: Vec<usize>,
    /// Zero-based class index.
    pub label: usize,
    pub raw_text: String,
}

impl EncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.token_embeddings.cols()
    }

    /// Number of scalar parameters, label table excluded.
    pub fn parameter_count(&self) -> usize {
        self.token_embeddings.len()
            + self.head.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>()
            + self.fusion.weight.len()
            + self.fusion.bias.len()
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let vocab = self.vocab_size();
        match ids.iter().find(|&&id| id >= vocab) {
            Some(&id) => Err(Error::UnknownToken { id, vocab }),
            None => Ok(()),
        }
    }
}

/// Token-level outputs `E`, `(M + 1) × d`: row 0 is the mean of the token
/// embedding rows, rows `1..=M` are the token embeddings themselves.
pub fn encode_tokens(params: &EncoderParams, ex: &TokenizedExample) -> Result<Matrix> {
    params.check_tokens(&ex.token_ids)?;
    let d = params.dim();
    let m = ex.token_ids.len();
    let mut out = Matrix::zeros(m + 1, d);
    for (j, &id) in ex.token_ids.iter().enumerate() {
        out.row_mut(j + 1).copy_from_slice(params.token_embeddings.row(id));
    }
    let inv = 1.0 / m as f64;
    for j in 1..=m {
        for k in 0..d {
            let v = out.get(j, k);
            out.add_at(0, k, v * inv);
        }
    }
    Ok(out)
}

/// Row-wise L2 normalization of the label table.
pub fn label_reprs(labels: &LabelTable) -> Result<Matrix> {
    Ok(normalized_labels(labels)?.0)
}

/// Normalized label rows together with the original row norms.
pub(crate) fn normalized_labels(labels: &LabelTable) -> Result<(Matrix, Vec<f64>)> {
    let mut out = labels.weights.clone();
    let mut norms = Vec::with_capacity(labels.classes());
    for c in 0..labels.classes() {
        let n = math::norm(labels.weights.row(c));
        if n.is_nan() || n < NORM_EPS {
            return Err(Error::NearZeroNorm(NormSite::LabelRow(c)));
        }
        out.row_mut(c).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Deterministic uniform initialization in `[-1/√d, 1/√d]`.
pub fn init_params(seed: u64, vocab: usize, dim: usize, classes: usize, width: usize) -> Result<(EncoderParams, LabelTable)> {
    for (name, v) in [("vocabulary size", vocab), ("dimension", dim), ("class count", classes), ("kernel width", width)] {
        if v == 0 {
            return Err(Error::InvalidShape(format!("{name} must be at least 1")));
        }
    }
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Matrix::new(rows, cols, data).expect("finite draws")
    };
    let token_embeddings = draw(vocab, dim);
    let mut layer = || Linear { weight: draw(dim, dim), bias: draw(1, dim) };
    let head = ProjectionHead { layers: [layer(), layer(), layer()] };
    let fusion = FusionConv { weight: draw(classes, classes * width), bias: draw(1, classes), width };
    let labels = LabelTable { weights: draw(classes, dim) };
    Ok((EncoderParams { token_embeddings, head, fusion }, labels))
}

#[derive(Debug, Clone)]
struct FusionTrace {
    /// Token rows `E_1..E_M`, `M × d`.
    tokens: Matrix,
    token_norms: Vec<f64>,
    label_norms: Vec<f64>,
    /// Cosine interaction matrix, `C × M`.
    interaction: Matrix,
    /// Winning output channel per token, `None` when every channel is inactive.
    winner: Vec<Option<usize>>,
    beta: Vec<f64>,
}

/// Everything the backward pass needs for one instance.
#[derive(Debug, Clone)]
pub struct InstanceTrace {
    token_ids: Vec<usize>,
    fusion: Option<FusionTrace>,
    head: HeadTrace,
    out_norm: f64,
    /// Unit-norm instance representation.
    pub repr: Vec<f64>,
}

impl InstanceTrace {
    /// Projection head output before normalization.
    pub fn head_output(&self) -> &[f64] {
        &self.head.output
    }

    pub fn head_output_norm(&self) -> f64 {
        self.out_norm
    }

    /// Attention weights over tokens (fusion mode only).
    pub fn attention(&self) -> Option<&[f64]> {
        self.fusion.as_ref().map(|f| f.beta.as_slice())
    }

    /// The vector fed to the projection head.
    pub fn pooled(&self) -> &[f64] {
        &self.head.input
    }
}

/// Unit-norm instance representation from the token-level outputs.
pub fn instance_repr(params: &EncoderParams, encoded: &Matrix, mode: EncoderMode, labels: &LabelTable) -> Result<Vec<f64>> {
    let tokens = Matrix::new(encoded.rows().saturating_sub(1), encoded.cols(), encoded.as_slice()[encoded.cols()..].to_vec())?;
    let summary = encoded.row(0).to_vec();
    Ok(forward_rows(params, &[], tokens, summary, mode, labels)?.repr)
}

/// Runs the encoder for one example, recording a trace for [`backward`].
pub fn forward(params: &EncoderParams, ex: &TokenizedExample, mode: EncoderMode, labels: &LabelTable) -> Result<InstanceTrace> {
    let encoded = encode_tokens(params, ex)?;
    let d = encoded.cols();
    let summary = encoded.row(0).to_vec();
    let tokens = Matrix::new(encoded.rows() - 1, d, encoded.into_vec().split_off(d))?;
    forward_rows(params, &ex.token_ids, tokens, summary, mode, labels)
}

fn forward_rows(
    params: &EncoderParams,
    token_ids: &[usize],
    tokens: Matrix,
    summary: Vec<f64>,
    mode: EncoderMode,
    labels: &LabelTable,
) -> Result<InstanceTrace> {
    let (pooled, fusion) = match mode {
        EncoderMode::Vanilla => (summary, None),
        EncoderMode::Fusion => {
            let trace = fuse(params, tokens, labels)?;
            let d = trace.tokens.cols();
            let mut z = vec![0.0; d];
            for (j, &b) in trace.beta.iter().enumerate() {
                for (zk, &e) in z.iter_mut().zip(trace.tokens.row(j)) {
                    *zk += b * e;
                }
            }
            (z, Some(trace))
        }
    };
    let head = params.head.forward(&pooled);
    let out_norm = math::norm(&head.output);
    if out_norm.is_nan() || out_norm < NORM_EPS {
        return Err(Error::NearZeroNorm(NormSite::Vector));
    }
    let repr = head.output.iter().map(|v| v / out_norm).collect();
    Ok(InstanceTrace { token_ids: token_ids.to_vec(), fusion, head, out_norm, repr })
}

fn fuse(params: &EncoderParams, tokens: Matrix, labels: &LabelTable) -> Result<FusionTrace> {
    let m = tokens.rows();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let classes = labels.classes();
    if params.fusion.channels() != classes || params.fusion.weight.cols() != classes * params.fusion.width {
        return Err(Error::ShapeMismatch(format!(
            "fusion kernel has {} channels, label table has {classes} classes",
            params.fusion.channels()
        )));
    }
    let token_norms: Vec<f64> = tokens.row_iter().map(math::norm).collect();
    if let Some(j) = token_norms.iter().position(|&n| n.is_nan() || n < NORM_EPS) {
        return Err(Error::NearZeroNorm(NormSite::Token(j)));
    }
    let label_norms: Vec<f64> = labels.weights.row_iter().map(math::norm).collect();
    if let Some(c) = label_norms.iter().position(|&n| n.is_nan() || n < NORM_EPS) {
        return Err(Error::NearZeroNorm(NormSite::LabelRow(c)));
    }
    let mut interaction = Matrix::zeros(classes, m);
    for i in 0..classes {
        for j in 0..m {
            let g = math::cosine_with_norms(labels.weights.row(i), tokens.row(j), label_norms[i], token_norms[j]);
            interaction.set(i, j, g);
        }
    }
    let conv_pre = params.fusion.forward(&interaction);
    let mut scores = vec![0.0; m];
    let mut winner = vec![None; m];
    for j in 0..m {
        for o in 0..classes {
            let a = conv_pre.get(o, j);
            if a > scores[j] {
                scores[j] = a;
                winner[j] = Some(o);
            }
        }
    }
    let beta = math::softmax(&scores);
    Ok(FusionTrace { tokens, token_norms, label_norms, interaction, winner, beta })
}

/// Backpropagates `dL/d(head output)` for one instance.
///
/// Gradients land in `grad` (encoder parameters) and `label_grad` (the raw
/// label table, reached through the fusion interaction matrix).
pub fn backward(
    params: &EncoderParams,
    labels: &LabelTable,
    trace: &InstanceTrace,
    d_head_out: &[f64],
    grad: &mut EncoderParams,
    label_grad: &mut LabelTable,
) {
    let d_pooled = params.head.backward(&trace.head, d_head_out, &mut grad.head);
    match &trace.fusion {
        None => {
            let inv = 1.0 / trace.token_ids.len() as f64;
            for &id in &trace.token_ids {
                for (g, &d) in grad.token_embeddings.row_mut(id).iter_mut().zip(&d_pooled) {
                    *g += d * inv;
                }
            }
        }
        Some(f) => fusion_backward(params, labels, &trace.token_ids, f, &d_pooled, grad, label_grad),
    }
}

/// Backpropagates `dL/d(unit representation)` for one instance.
pub fn backward_from_repr(
    params: &EncoderParams,
    labels: &LabelTable,
    trace: &InstanceTrace,
    d_repr: &[f64],
    grad: &mut EncoderParams,
    label_grad: &mut LabelTable,
) {
    let d_out = math::normalize_backward(&trace.repr, trace.out_norm, d_repr);
    backward(params, labels, trace, &d_out, grad, label_grad);
}

fn fusion_backward(
    params: &EncoderParams,
    labels: &LabelTable,
    token_ids: &[usize],
    f: &FusionTrace,
    d_z: &[f64],
    grad: &mut EncoderParams,
    label_grad: &mut LabelTable,
) {
    let m = f.tokens.rows();
    let d = f.tokens.cols();
    let classes = labels.classes();
    // d_tokens accumulates dL/dE_j from both the weighted sum and the cosine matrix
    let mut d_tokens = Matrix::zeros(m, d);
    let mut d_beta = vec![0.0; m];
    for j in 0..m {
        let row = f.tokens.row(j);
        d_beta[j] = math::dot(row, d_z);
        for (g, &dz) in d_tokens.row_mut(j).iter_mut().zip(d_z) {
            *g += f.beta[j] * dz;
        }
    }
    let weighted: f64 = f.beta.iter().zip(&d_beta).map(|(b, g)| b * g).sum();
    let mut d_pre = Matrix::zeros(classes, m);
    for j in 0..m {
        if let Some(o) = f.winner[j] {
            d_pre.set(o, j, f.beta[j] * (d_beta[j] - weighted));
        }
    }
    let d_g = params.fusion.backward(&f.interaction, &d_pre, &mut grad.fusion);
    for i in 0..classes {
        for j in 0..m {
            let up = d_g.get(i, j);
            if up == 0.0 {
                continue;
            }
            let (lw, tw) = (labels.weights.row(i), f.tokens.row(j));
            let (ln, tn) = (f.label_norms[i], f.token_norms[j]);
            let cos = f.interaction.get(i, j);
            let inv = 1.0 / (ln * tn);
            let lrow = label_grad.weights.row_mut(i);
            for k in 0..d {
                lrow[k] += up * (tw[k] * inv - cos * lw[k] / (ln * ln));
            }
            let trow = d_tokens.row_mut(j);
            for k in 0..d {
                trow[k] += up * (lw[k] * inv - cos * tw[k] / (tn * tn));
            }
        }
    }
    for (j, &id) in token_ids.iter().enumerate() {
        for (g, &v) in grad.token_embeddings.row_mut(id).iter_mut().zip(d_tokens.row(j)) {
            *g += v;
        }
    }
}
