//! Matching-based prediction, task metrics, representation diagnostics and
//! embedding export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::TaskMetric;
use crate::encoder::{self, TokenizedExample};
use crate::error::{Error, NormSite, Result};
use crate::math::{self, Matrix, NORM_EPS};
use crate::model::Model;
use crate::trainer::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub matthews: f64,
    pub per_class_f1: Vec<f64>,
}

impl MetricSet {
    pub fn get(&self, metric: TaskMetric) -> f64 {
        match metric {
            TaskMetric::Accuracy => self.accuracy,
            TaskMetric::MacroF1 => self.macro_f1,
            TaskMetric::Matthews => self.matthews,
        }
    }
}

/// Predicted class and the cosine score against every label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Matches an instance against every label by cosine similarity; ties go to the lowest index.
pub fn predict(h: &[f64], l: &Matrix) -> Result<Prediction> {
    if l.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if h.len() != l.cols() {
        return Err(Error::ShapeMismatch(format!("instance dim {} vs label dim {}", h.len(), l.cols())));
    }
    let hn = math::norm(h);
    if hn < NORM_EPS {
        return Err(Error::NearZeroNorm(NormSite::Vector));
    }
    let scores = l
        .row_iter()
        .enumerate()
        .map(|(c, row)| {
            let ln = math::norm(row);
            if ln < NORM_EPS {
                return Err(Error::NearZeroNorm(NormSite::LabelRow(c)));
            }
            Ok((math::dot(h, row) / (hn * ln)).clamp(-1.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Prediction { class: argmax_lowest(&scores), scores })
}

/// Predictions for a batch of examples under the objective's decision rule:
/// cosine matching for the contrastive modes, arg-max of the scoring layer for the baseline.
pub fn predict_examples(model: &Model, mode: Mode, examples: &[TokenizedExample]) -> Result<Vec<Prediction>> {
    let enc_mode = mode.encoder_mode();
    match mode {
        Mode::CeBaseline => {
            let classifier =
                model.classifier.as_ref().ok_or_else(|| Error::CheckpointMismatch("baseline model has no scoring layer".into()))?;
            examples
                .iter()
                .map(|ex| {
                    let trace = encoder::forward(&model.encoder, ex, enc_mode, &model.labels)?;
                    let scores = classifier.forward(trace.head_output());
                    Ok(Prediction { class: argmax_lowest(&scores), scores })
                })
                .collect()
        }
        _ => {
            let labels = encoder::label_reprs(&model.labels)?;
            examples
                .iter()
                .map(|ex| {
                    let trace = encoder::forward(&model.encoder, ex, enc_mode, &model.labels)?;
                    predict(&trace.repr, &labels)
                })
                .collect()
        }
    }
}

/// Unit-norm instance representations stacked row-wise.
pub fn instance_matrix(model: &Model, mode: Mode, examples: &[TokenizedExample]) -> Result<Matrix> {
    let rows = examples
        .iter()
        .map(|ex| Ok(encoder::forward(&model.encoder, ex, mode.encoder_mode(), &model.labels)?.repr))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Matrix::from_rows(&rows)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Confusion matrix indexed `[gold][pred]`.
pub fn confusion(golds: &[usize], preds: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if golds.len() != preds.len() {
        return Err(Error::LengthMismatch(golds.len(), preds.len()));
    }
    if golds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&g, &p) in golds.iter().zip(preds) {
        if let Some(&bad) = [g, p].iter().find(|&&c| c >= classes) {
            return Err(Error::IndexOutOfRange { index: bad, classes });
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// Matthews correlation in the confusion-matrix correlation form, any number of classes.
pub fn matthews_multiclass(conf: &[Vec<usize>]) -> f64 {
    let c = conf.len();
    let s: f64 = conf.iter().flatten().sum::<usize>() as f64;
    let correct: f64 = (0..c).map(|k| conf[k][k] as f64).sum();
    let t: Vec<f64> = (0..c).map(|k| conf[k].iter().sum::<usize>() as f64).collect();
    let p: Vec<f64> = (0..c).map(|k| conf.iter().map(|row| row[k]).sum::<usize>() as f64).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    ratio(correct * s - pt, ((s * s - pp) * (s * s - tt)).sqrt())
}

/// Binary Matthews correlation with class index 1 as the positive class.
pub fn matthews_binary(tp: usize, tn: usize, fp: usize, fn_: usize) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    ratio(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt())
}

/// Accuracy, macro-F1, Matthews correlation and per-class F1 for zero-based labels.
pub fn compute_metrics(golds: &[usize], preds: &[usize], classes: usize) -> Result<MetricSet> {
    let conf = confusion(golds, preds, classes)?;
    let n = golds.len() as f64;
    let correct: usize = (0..classes).map(|k| conf[k][k]).sum();
    let per_class_f1: Vec<f64> = (0..classes)
        .map(|k| {
            let tp = conf[k][k] as f64;
            let fp = conf.iter().map(|row| row[k]).sum::<usize>() as f64 - tp;
            let fn_ = conf[k].iter().sum::<usize>() as f64 - tp;
            ratio(2.0 * tp, 2.0 * tp + fp + fn_)
        })
        .collect();
    let matthews = if classes == 2 { matthews_binary(conf[1][1], conf[0][0], conf[0][1], conf[1][0]) } else { matthews_multiclass(&conf) };
    Ok(MetricSet { accuracy: correct as f64 / n, macro_f1: per_class_f1.iter().sum::<f64>() / classes as f64, matthews, per_class_f1 })
}

/// Minority/majority F1 for a binary imbalanced evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceF1 {
    pub minority_class: usize,
    pub minority_f1: f64,
    pub majority_f1: f64,
}

/// Splits per-class F1 into minority and majority using the training class
/// counts (class 1 is the minority on ties).
pub fn imbalance_f1(metrics: &MetricSet, train_counts: &[usize]) -> Result<ImbalanceF1> {
    if metrics.per_class_f1.len() != 2 || train_counts.len() != 2 {
        return Err(Error::NotBinary(metrics.per_class_f1.len().max(train_counts.len())));
    }
    let minority_class = if train_counts[0] < train_counts[1] { 0 } else { 1 };
    Ok(ImbalanceF1 {
        minority_class,
        minority_f1: metrics.per_class_f1[minority_class],
        majority_f1: metrics.per_class_f1[1 - minority_class],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Singular values of `H·Lᵀ`, descending, `min(N, C)` of them.
    pub singular_values: Vec<f64>,
    pub entry_sum: f64,
    pub sigma_max: f64,
    /// Whether `entry_sum >= sigma_max` held for this input. Observational only.
    pub bound_held: bool,
    pub alignment: f64,
    /// `None` when fewer than two instances make the pair set empty.
    pub uniformity: Option<f64>,
    /// Label-centered loss with each anchor's positives averaged; `None` without an eligible anchor.
    pub lcl_per_positive: Option<f64>,
}

fn check_unit_rows(m: &Matrix, site: impl Fn(usize) -> NormSite) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if math::norm(row) < NORM_EPS {
            return Err(Error::NearZeroNorm(site(i)));
        }
    }
    Ok(())
}

fn lcl_per_positive(a: &Matrix, y: &[usize], tau: f64) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut anchors = 0usize;
    for p in 0..a.cols() {
        let pos: Vec<f64> = (0..a.rows()).filter(|&i| y[i] == p).map(|i| a.get(i, p) / tau).collect();
        let neg: Vec<f64> = (0..a.rows()).filter(|&i| y[i] != p).map(|i| a.get(i, p) / tau).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let lse = math::log_sum_exp(&neg)?;
        total += pos.iter().map(|s| s - lse).sum::<f64>() / pos.len() as f64;
        anchors += 1;
    }
    Ok((anchors > 0).then(|| -total / anchors as f64))
}

/// Spectrum, entry sum, alignment and uniformity of a set of representations.
pub fn diagnostics(h: &Matrix, l: &Matrix, y: &[usize], tau: f64) -> Result<DiagnosticsReport> {
    if h.rows() == 0 || l.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if h.cols() != l.cols() {
        return Err(Error::ShapeMismatch(format!("instance dim {} vs label dim {}", h.cols(), l.cols())));
    }
    if y.len() != h.rows() {
        return Err(Error::LengthMismatch(y.len(), h.rows()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= l.rows()) {
        return Err(Error::IndexOutOfRange { index: bad, classes: l.rows() });
    }
    check_unit_rows(h, NormSite::Instance)?;
    check_unit_rows(l, NormSite::LabelRow)?;

    let a = h.matmul(&l.transpose())?;
    let gram = a.transpose().matmul(&a)?;
    let keep = h.rows().min(l.rows());
    let singular_values: Vec<f64> = math::sym_eigenvalues(&gram)?.into_iter().take(keep).map(|e| e.max(0.0).sqrt()).collect();
    let entry_sum: f64 = a.as_slice().iter().sum();
    let sigma_max = singular_values[0];

    let n = h.rows();
    let alignment = (0..n).map(|i| h.row(i).iter().zip(l.row(y[i])).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).sum::<f64>() / n as f64;
    let uniformity = if n < 2 {
        None
    } else {
        let mut terms = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
                    terms.push(-2.0 * d2);
                }
            }
        }
        Some(math::log_sum_exp(&terms)? - ((n * (n - 1)) as f64).ln())
    };
    Ok(DiagnosticsReport {
        singular_values,
        entry_sum,
        sigma_max,
        bound_held: entry_sum >= sigma_max,
        alignment,
        uniformity,
        lcl_per_positive: lcl_per_positive(&a, y, tau)?,
    })
}

/// Instance and label embeddings as read back from an export.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub instances: Matrix,
    /// Zero-based class of every instance.
    pub classes: Vec<usize>,
    pub labels: Matrix,
}

/// Renders embeddings as CSV: `kind,id,class,d0..`, ids and classes one-based,
/// values in scientific notation with 9 significant digits.
pub fn export_embeddings(h: &Matrix, l: &Matrix, y: &[usize]) -> Result<String> {
    if h.cols() != l.cols() {
        return Err(Error::ShapeMismatch(format!("instance dim {} vs label dim {}", h.cols(), l.cols())));
    }
    if y.len() != h.rows() {
        return Err(Error::LengthMismatch(y.len(), h.rows()));
    }
    let mut out = String::from("kind,id,class");
    for k in 0..h.cols() {
        write!(out, ",d{k}").expect("writing to a String");
    }
    out.push('\n');
    let mut push_row = |kind: &str, id: usize, class: usize, row: &[f64]| {
        write!(out, "{kind},{id},{class}").expect("writing to a String");
        for v in row {
            write!(out, ",{v:.8e}").expect("writing to a String");
        }
        out.push('\n');
    };
    for (i, row) in h.row_iter().enumerate() {
        push_row("instance", i + 1, y[i] + 1, row);
    }
    for (c, row) in l.row_iter().enumerate() {
        push_row("label", c + 1, c + 1, row);
    }
    Ok(out)
}

/// Parses the CSV produced by [`export_embeddings`].
pub fn import_embeddings(csv: &str) -> Result<EmbeddingTable> {
    let mut lines = csv.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..3] != ["kind", "id", "class"] {
        return Err(Error::Parse { line: 1, message: "expected header kind,id,class,d0,...".into() });
    }
    let dim = cols.len() - 3;
    let (mut inst, mut classes, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::Parse { line: line_no, message: format!("expected {} fields, found {}", dim + 3, fields.len()) });
        }
        let parse_err = |what: &str| Error::Parse { line: line_no, message: format!("invalid {what}") };
        let class: usize = fields[2].parse().map_err(|_| parse_err("class"))?;
        if class == 0 {
            return Err(parse_err("class (classes are numbered from 1)"));
        }
        let row = fields[3..].iter().map(|v| v.parse::<f64>().map_err(|_| parse_err("value"))).collect::<Result<Vec<_>>>()?;
        match fields[0] {
            "instance" => {
                inst.push(row);
                classes.push(class - 1);
            }
            "label" => labels.push(row),
            other => return Err(parse_err(&format!("kind \"{other}\""))),
        }
    }
    if inst.is_empty() || labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(EmbeddingTable { instances: Matrix::from_rows(&inst)?, classes, labels: Matrix::from_rows(&labels)? })
}
