//! Label-anchored contrastive objectives and their analytic gradients.
//!
//! * instance-centered loss: each instance is an anchor, the `C` label rows are
//!   the candidates (softmax over labels, positive included in the denominator);
//! * its multi-head variant, summed over contiguous `d / m` slices;
//! * label-centered loss: each label present in the batch is an anchor, its
//!   instances are positives, the denominator runs over other-class instances only;
//! * label regularizer: mean of `exp(1 + cos) - 1` over label pairs.
//!
//! Each term returns its value together with `dL/dH` and `dL/dL` (gradients
//! with respect to the instance and label rows it was given). [`total_loss`]
//! chains those through normalization and the encoder.

use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderMode, InstanceTrace, TokenizedExample};
use crate::error::{Error, NormSite, Result};
use crate::math::{self, Matrix, NORM_EPS};
use crate::model::Model;

/// Upper end of the admissible temperature range.
pub const MAX_TAU: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_reg: f64,
    pub heads: usize,
    pub enable_icl: bool,
    pub enable_lcl: bool,
    pub enable_ler: bool,
    /// When false the single-head instance loss replaces the multi-head one.
    pub multihead: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, lambda_reg: 0.5, heads: 4, enable_icl: true, enable_lcl: true, enable_ler: true, multihead: true }
    }
}

impl LossConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= MAX_TAU) {
            return Err(Error::ConfigInvalid(format!("tau must lie in (0, {MAX_TAU}], got {}", self.tau)));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::ConfigInvalid(format!("lambda must be finite and >= 0, got {}", self.lambda_reg)));
        }
        if self.heads == 0 {
            return Err(Error::ConfigInvalid("heads must be at least 1".into()));
        }
        if self.multihead && !dim.is_multiple_of(self.heads) {
            return Err(Error::ConfigInvalid(format!("dimension {dim} is not divisible by {} heads", self.heads)));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.enable_icl || self.enable_lcl || self.enable_ler
    }
}

/// A loss value with gradients with respect to its instance and label inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrad {
    pub value: f64,
    pub d_instances: Matrix,
    pub d_labels: Matrix,
}

/// Label-centered loss outcome; `skipped` marks a batch with no eligible label.
#[derive(Debug, Clone, PartialEq)]
pub struct LclTerm {
    pub grad: TermGrad,
    pub skipped: bool,
    /// Number of labels that had both positives and negatives.
    pub anchors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub icl: f64,
    pub lcl: f64,
    pub ler: f64,
    /// Cross-entropy value, non-zero only for the baseline objective.
    pub ce: f64,
    pub total: f64,
    pub lcl_skipped: bool,
    /// Gradient of `total` for every learnable parameter.
    pub grads: Model,
}

fn check_inputs(h: &Matrix, l: &Matrix, y: &[usize]) -> Result<()> {
    if h.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if h.cols() != l.cols() {
        return Err(Error::ShapeMismatch(format!("instance dim {} vs label dim {}", h.cols(), l.cols())));
    }
    if y.len() != h.rows() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} instances", y.len(), h.rows())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= l.rows()) {
        return Err(Error::IndexOutOfRange { index: bad, classes: l.rows() });
    }
    Ok(())
}

fn row_norms(m: &Matrix, site: impl Fn(usize) -> NormSite) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let n = math::norm(r);
            if n >= NORM_EPS {
                Ok(n)
            } else {
                Err(Error::NearZeroNorm(site(i)))
            }
        })
        .collect()
}

/// Single-head instance-centered loss.
pub fn icl_loss(h: &Matrix, l: &Matrix, y: &[usize], tau: f64) -> Result<f64> {
    Ok(icl_loss_grad(h, l, y, tau)?.value)
}

pub fn icl_loss_grad(h: &Matrix, l: &Matrix, y: &[usize], tau: f64) -> Result<TermGrad> {
    check_inputs(h, l, y)?;
    let (n, c) = (h.rows(), l.rows());
    let hn = row_norms(h, NormSite::Instance)?;
    let ln = row_norms(l, NormSite::LabelRow)?;
    let mut d_h = Matrix::zeros(n, h.cols());
    let mut d_l = Matrix::zeros(c, l.cols());
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let sims: Vec<f64> = (0..c).map(|p| math::cosine_with_norms(h.row(i), l.row(p), hn[i], ln[p])).collect();
        let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
        total += math::log_sum_exp(&logits)? - logits[y[i]];
        let probs = math::softmax(&logits);
        for p in 0..c {
            let indicator = if p == y[i] { 1.0 } else { 0.0 };
            let up = (probs[p] - indicator) * inv_n / tau;
            let mut gl = vec![0.0; l.cols()];
            math::cosine_backward(h.row(i), l.row(p), hn[i], ln[p], sims[p], up, d_h.row_mut(i), &mut gl);
            d_l.row_mut(p).iter_mut().zip(&gl).for_each(|(a, b)| *a += b);
        }
    }
    Ok(TermGrad { value: total * inv_n, d_instances: d_h, d_labels: d_l })
}

/// Multi-head instance-centered loss: summed over heads, averaged over instances.
pub fn icl_multihead_loss(h: &Matrix, l: &Matrix, y: &[usize], tau: f64, heads: usize) -> Result<f64> {
    Ok(icl_multihead_grad(h, l, y, tau, heads)?.value)
}

pub fn icl_multihead_grad(h: &Matrix, l: &Matrix, y: &[usize], tau: f64, heads: usize) -> Result<TermGrad> {
    check_inputs(h, l, y)?;
    let (n, c, d) = (h.rows(), l.rows(), h.cols());
    if heads == 0 || d % heads != 0 {
        return Err(Error::ConfigInvalid(format!("dimension {d} is not divisible by {heads} heads")));
    }
    let width = d / heads;
    let mut d_h = Matrix::zeros(n, d);
    let mut d_l = Matrix::zeros(c, d);
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for k in 0..heads {
        let span = k * width..(k + 1) * width;
        let label_norms: Vec<f64> = (0..c)
            .map(|p| {
                let nrm = math::norm(&l.row(p)[span.clone()]);
                if nrm >= NORM_EPS {
                    Ok(nrm)
                } else {
                    Err(Error::NearZeroNorm(NormSite::LabelHeadSlice { head: k, class: p }))
                }
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            let hs = &h.row(i)[span.clone()];
            let hn = math::norm(hs);
            if hn.is_nan() || hn < NORM_EPS {
                return Err(Error::NearZeroNorm(NormSite::HeadSlice { head: k, row: i }));
            }
            let sims: Vec<f64> = (0..c).map(|p| math::cosine_with_norms(hs, &l.row(p)[span.clone()], hn, label_norms[p])).collect();
            let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
            total += math::log_sum_exp(&logits)? - logits[y[i]];
            let probs = math::softmax(&logits);
            let mut gh = vec![0.0; width];
            for p in 0..c {
                let indicator = if p == y[i] { 1.0 } else { 0.0 };
                let up = (probs[p] - indicator) * inv_n / tau;
                let mut gl = vec![0.0; width];
                math::cosine_backward(hs, &l.row(p)[span.clone()], hn, label_norms[p], sims[p], up, &mut gh, &mut gl);
                d_l.row_mut(p)[span.clone()].iter_mut().zip(&gl).for_each(|(a, b)| *a += b);
            }
            d_h.row_mut(i)[span.clone()].iter_mut().zip(&gh).for_each(|(a, b)| *a += b);
        }
    }
    Ok(TermGrad { value: total * inv_n, d_instances: d_h, d_labels: d_l })
}

/// Label-centered loss value. Returns 0 when no label has both positives and negatives.
pub fn lcl_loss(h: &Matrix, l: &Matrix, y: &[usize], tau: f64) -> Result<f64> {
    Ok(lcl_loss_grad(h, l, y, tau)?.grad.value)
}

pub fn lcl_loss_grad(h: &Matrix, l: &Matrix, y: &[usize], tau: f64) -> Result<LclTerm> {
    check_inputs(h, l, y)?;
    let (n, c) = (h.rows(), l.rows());
    let mut d_h = Matrix::zeros(n, h.cols());
    let mut d_l = Matrix::zeros(c, l.cols());
    let eligible: Vec<usize> = (0..c).filter(|&p| y.contains(&p) && y.iter().any(|&yi| yi != p)).collect();
    if eligible.is_empty() {
        return Ok(LclTerm { grad: TermGrad { value: 0.0, d_instances: d_h, d_labels: d_l }, skipped: true, anchors: 0 });
    }
    let hn = row_norms(h, NormSite::Instance)?;
    let ln = row_norms(l, NormSite::LabelRow)?;
    let inv_p = 1.0 / eligible.len() as f64;
    let mut total = 0.0;
    for &p in &eligible {
        let sims: Vec<f64> = (0..n).map(|i| math::cosine_with_norms(l.row(p), h.row(i), ln[p], hn[i])).collect();
        let positives: Vec<usize> = (0..n).filter(|&i| y[i] == p).collect();
        let negatives: Vec<usize> = (0..n).filter(|&i| y[i] != p).collect();
        let neg_logits: Vec<f64> = negatives.iter().map(|&b| sims[b] / tau).collect();
        let lse = math::log_sum_exp(&neg_logits)?;
        let mut inner = 0.0;
        for &a in &positives {
            inner += sims[a] / tau - lse;
        }
        total -= inner * inv_p;

        // d/d sim for positives: -1/(|P| τ); for negatives: |A(p)| softmax_b / (|P| τ)
        let mut up = vec![0.0; n];
        for &a in &positives {
            up[a] = -inv_p / tau;
        }
        let probs = math::softmax(&neg_logits);
        let count = positives.len() as f64;
        for (&b, &pb) in negatives.iter().zip(&probs) {
            up[b] = count * pb * inv_p / tau;
        }
        let mut gl = vec![0.0; l.cols()];
        for i in 0..n {
            math::cosine_backward(l.row(p), h.row(i), ln[p], hn[i], sims[i], up[i], &mut gl, d_h.row_mut(i));
        }
        d_l.row_mut(p).iter_mut().zip(&gl).for_each(|(a, b)| *a += b);
    }
    Ok(LclTerm { grad: TermGrad { value: total, d_instances: d_h, d_labels: d_l }, skipped: false, anchors: eligible.len() })
}

/// Per-pair regularizer terms `exp(1 + cos(L_i, L_j)) - 1` for `i < j`, in row-major pair order.
pub fn ler_pair_terms(l: &Matrix) -> Result<Vec<f64>> {
    let ln = row_norms(l, NormSite::LabelRow)?;
    let c = l.rows();
    let mut out = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    for i in 0..c {
        for j in (i + 1)..c {
            out.push((1.0 + math::cosine_with_norms(l.row(i), l.row(j), ln[i], ln[j])).exp() - 1.0);
        }
    }
    Ok(out)
}

/// Label embedding regularizer over raw or normalized label rows.
pub fn ler_loss(l: &Matrix) -> Result<f64> {
    Ok(ler_loss_grad(l)?.value)
}

/// Regularizer value and `dL/dL`; `d_instances` is an empty `0 × d` matrix.
pub fn ler_loss_grad(l: &Matrix) -> Result<TermGrad> {
    let c = l.rows();
    if c < 2 {
        return Err(Error::SingleClass);
    }
    let ln = row_norms(l, NormSite::LabelRow)?;
    let pairs = (c * (c - 1) / 2) as f64;
    let mut d_l = Matrix::zeros(c, l.cols());
    let mut total = 0.0;
    for i in 0..c {
        for j in (i + 1)..c {
            let cos = math::cosine_with_norms(l.row(i), l.row(j), ln[i], ln[j]);
            let e = (1.0 + cos).exp();
            total += e - 1.0;
            let mut gi = vec![0.0; l.cols()];
            let mut gj = vec![0.0; l.cols()];
            math::cosine_backward(l.row(i), l.row(j), ln[i], ln[j], cos, e / pairs, &mut gi, &mut gj);
            d_l.row_mut(i).iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
            d_l.row_mut(j).iter_mut().zip(&gj).for_each(|(a, b)| *a += b);
        }
    }
    Ok(TermGrad { value: total / pairs, d_instances: Matrix::zeros(0, l.cols()), d_labels: d_l })
}

fn add_into(dst: &mut Matrix, src: &Matrix, scale: f64) {
    dst.as_mut_slice().iter_mut().zip(src.as_slice()).for_each(|(a, b)| *a += scale * b);
}

/// Encoder forward for a batch; degenerate head outputs are reported per instance.
pub(crate) fn encode_batch(model: &Model, batch: &[&TokenizedExample], mode: EncoderMode) -> Result<Vec<InstanceTrace>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            encoder::forward(&model.encoder, ex, mode, &model.labels).map_err(|e| match e {
                Error::NearZeroNorm(NormSite::Vector) => Error::NearZeroNorm(NormSite::Instance(i)),
                other => other,
            })
        })
        .collect()
}

fn stack_reprs(traces: &[InstanceTrace], dim: usize) -> Matrix {
    let data = traces.iter().flat_map(|t| t.repr.iter().copied()).collect();
    Matrix::new(traces.len(), dim, data).expect("finite representations")
}

/// The combined contrastive objective with gradients for every parameter.
///
/// `total = ICL' + LCL + λ·LER`, where each term honours its toggle and
/// `multihead = false` substitutes the single-head instance loss.
pub fn total_loss(model: &Model, batch: &[&TokenizedExample], mode: EncoderMode, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate(model.dim())?;
    let mut grads = model.zeros_like();
    if !cfg.any_enabled() {
        return Ok(LossBreakdown { icl: 0.0, lcl: 0.0, ler: 0.0, ce: 0.0, total: 0.0, lcl_skipped: false, grads });
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (labels, label_norms) = encoder::normalized_labels(&model.labels)?;
    let traces = encode_batch(model, batch, mode)?;
    let h = stack_reprs(&traces, model.dim());
    let y: Vec<usize> = batch.iter().map(|ex| ex.label).collect();

    let mut d_h = Matrix::zeros(h.rows(), h.cols());
    let mut d_l = Matrix::zeros(labels.rows(), labels.cols());
    let (mut icl, mut lcl, mut ler, mut lcl_skipped) = (0.0, 0.0, 0.0, false);

    if cfg.enable_icl {
        let term =
            if cfg.multihead { icl_multihead_grad(&h, &labels, &y, cfg.tau, cfg.heads)? } else { icl_loss_grad(&h, &labels, &y, cfg.tau)? };
        icl = term.value;
        add_into(&mut d_h, &term.d_instances, 1.0);
        add_into(&mut d_l, &term.d_labels, 1.0);
    }
    if cfg.enable_lcl {
        let term = lcl_loss_grad(&h, &labels, &y, cfg.tau)?;
        lcl = term.grad.value;
        lcl_skipped = term.skipped;
        if !term.skipped {
            add_into(&mut d_h, &term.grad.d_instances, 1.0);
            add_into(&mut d_l, &term.grad.d_labels, 1.0);
        }
    }
    if cfg.enable_ler {
        let term = ler_loss_grad(&labels)?;
        ler = term.value;
        if cfg.lambda_reg != 0.0 {
            add_into(&mut d_l, &term.d_labels, cfg.lambda_reg);
        }
    }
    let mut total = 0.0;
    if cfg.enable_icl {
        total += icl;
    }
    if cfg.enable_lcl {
        total += lcl;
    }
    if cfg.enable_ler {
        total += cfg.lambda_reg * ler;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }

    for c in 0..labels.rows() {
        let g = math::normalize_backward(labels.row(c), label_norms[c], d_l.row(c));
        grads.labels.weights.row_mut(c).iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    for (i, trace) in traces.iter().enumerate() {
        encoder::backward_from_repr(&model.encoder, &model.labels, trace, d_h.row(i), &mut grads.encoder, &mut grads.labels);
    }
    Ok(LossBreakdown { icl, lcl, ler, ce: 0.0, total, lcl_skipped, grads })
}

/// Softmax cross-entropy over a linear scoring layer on the projection head output.
pub fn cross_entropy_loss(model: &Model, batch: &[&TokenizedExample], mode: EncoderMode) -> Result<LossBreakdown> {
    let classifier =
        model.classifier.as_ref().ok_or_else(|| Error::ConfigInvalid("cross-entropy objective needs a classifier layer".into()))?;
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(ex) = batch.iter().find(|ex| ex.label >= model.classes()) {
        return Err(Error::IndexOutOfRange { index: ex.label, classes: model.classes() });
    }
    let traces = encode_batch(model, batch, mode)?;
    let mut grads = model.zeros_like();
    let inv_n = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (trace, ex) in traces.iter().zip(batch) {
        let logits = classifier.forward(trace.head_output());
        total += math::log_sum_exp(&logits)? - logits[ex.label];
        let mut d_logits = math::softmax(&logits);
        d_logits[ex.label] -= 1.0;
        d_logits.iter_mut().for_each(|g| *g *= inv_n);
        let grad_cls = grads.classifier.as_mut().expect("zeros_like keeps classifier");
        let d_out = classifier.backward(trace.head_output(), &d_logits, grad_cls);
        encoder::backward(&model.encoder, &model.labels, trace, &d_out, &mut grads.encoder, &mut grads.labels);
    }
    total *= inv_n;
    if !total.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok(LossBreakdown { icl: 0.0, lcl: 0.0, ler: 0.0, ce: total, total, lcl_skipped: false, grads })
}
