//! The full set of learnable parameters and a uniform, ordered view over them.

use crate::encoder::{self, EncoderParams, FusionConv, LabelTable, Linear, ProjectionHead};
use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub labels: LabelTable,
    /// Linear scoring layer, present only for the cross-entropy baseline.
    pub classifier: Option<Linear>,
}

impl Model {
    pub fn init(seed: u64, vocab: usize, dim: usize, classes: usize, width: usize) -> Result<Self> {
        let (encoder, labels) = encoder::init_params(seed, vocab, dim, classes, width)?;
        Ok(Self { encoder, labels, classifier: None })
    }

    /// Adds a `d → C` scoring layer, drawn from the same bounds as the encoder.
    pub fn with_classifier(mut self, seed: u64) -> Self {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let (dim, classes) = (self.dim(), self.classes());
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let weight = Matrix::new(classes, dim, draw(classes * dim)).expect("finite draws");
        let bias = Matrix::new(1, classes, draw(classes)).expect("finite draws");
        self.classifier = Some(Linear { weight, bias });
        self
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn classes(&self) -> usize {
        self.labels.classes()
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    pub fn kernel_width(&self) -> usize {
        self.encoder.fusion.width
    }

    /// A model of identical shape with every parameter zero.
    pub fn zeros_like(&self) -> Model {
        let zl = |l: &Linear| Linear::zeros(l.inputs(), l.outputs());
        Model {
            encoder: EncoderParams {
                token_embeddings: Matrix::zeros(self.vocab_size(), self.dim()),
                head: ProjectionHead {
                    layers: [zl(&self.encoder.head.layers[0]), zl(&self.encoder.head.layers[1]), zl(&self.encoder.head.layers[2])],
                },
                fusion: FusionConv::zeros(self.classes(), self.kernel_width()),
            },
            labels: LabelTable { weights: Matrix::zeros(self.classes(), self.dim()) },
            classifier: self.classifier.as_ref().map(zl),
        }
    }

    /// Parameter tensors in a fixed canonical order, with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("token_embeddings".to_string(), &self.encoder.token_embeddings)];
        for (i, l) in self.encoder.head.layers.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &l.weight));
            out.push((format!("head.{i}.bias"), &l.bias));
        }
        out.push(("fusion.weight".into(), &self.encoder.fusion.weight));
        out.push(("fusion.bias".into(), &self.encoder.fusion.bias));
        out.push(("label_embeddings".into(), &self.labels.weights));
        if let Some(c) = &self.classifier {
            out.push(("classifier.weight".into(), &c.weight));
            out.push(("classifier.bias".into(), &c.bias));
        }
        out
    }

    /// Mutable counterpart of [`Model::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.encoder.token_embeddings];
        for l in self.encoder.head.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.encoder.fusion.weight);
        out.push(&mut self.encoder.fusion.bias);
        out.push(&mut self.labels.weights);
        if let Some(c) = &mut self.classifier {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, m)| m.as_slice().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector produced by [`Model::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut offset = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, m)| m.as_slice()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.all_finite())
    }
}
