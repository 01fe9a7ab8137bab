//! The base classifier: a small feed-forward network whose parameters live in
//! one flat vector, so meta-learners can treat them as a single tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffNode, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize, activation: Activation) -> Self {
        MlpSpec { input_dim, hidden_dims, num_classes, activation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        let widths = self.widths();
        let mut layout = Vec::new();
        let mut offset = 0;
        for (l, pair) in widths.windows(2).enumerate() {
            for (name, shape) in [(format!("w{l}"), vec![pair[0], pair[1]]), (format!("b{l}"), vec![pair[1]])] {
                let size: usize = shape.iter().product();
                layout.push(LayoutEntry { name, shape, offset });
                offset += size;
            }
        }
        layout
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(LayoutEntry::size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter store with named, contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn new(data: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let mut expected = 0;
        for e in &layout {
            if e.offset != expected {
                return Err(Error::Invalid(format!("layout entry {} is not contiguous", e.name)));
            }
            expected += e.size();
        }
        if expected != data.len() {
            return Err(Error::Invalid(format!("layout covers {expected} values, data has {}", data.len())));
        }
        Ok(ParamVector { data, layout })
    }

    /// A single unnamed segment covering `data`.
    pub fn from_flat(data: Vec<f64>) -> Self {
        let layout = vec![LayoutEntry { name: "theta".into(), shape: vec![data.len()], offset: 0 }];
        ParamVector { data, layout }
    }

    pub fn zeros_like(&self) -> Self {
        self.with_data(vec![0.0; self.data.len()])
    }

    /// Same layout, new values. Panics on a length mismatch.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len(), "ParamVector::with_data length mismatch");
        ParamVector { data, layout: self.layout.clone() }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.iter().find(|e| e.name == name).map(|e| &self.data[e.offset..e.offset + e.size()])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.data.clone())
    }

    pub fn to_variable(&self) -> DiffNode {
        DiffNode::variable(self.to_tensor())
    }

    pub fn from_tensor(&self, t: &Tensor) -> Result<Self> {
        if t.len() != self.len() {
            return Err(Error::shape("param_vector", format!("{} values for layout of {}", t.len(), self.len())));
        }
        Ok(self.with_data(t.data().to_vec()))
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let mut data = Vec::with_capacity(spec.num_params());
    for entry in &layout {
        if entry.shape.len() == 2 {
            let (fan_in, fan_out) = (entry.shape[0] as f64, entry.shape[1] as f64);
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            data.extend((0..entry.size()).map(|_| rng.random_range(-limit..=limit)));
        } else {
            data.extend(std::iter::repeat_n(0.0, entry.size()));
        }
    }
    ParamVector { data, layout }
}

/// Logits `[batch, num_classes]` for `inputs`, differentiable in `params`.
///
/// `params` is the flat parameter vector laid out as `spec.layout()`.
pub fn forward(spec: &MlpSpec, params: &DiffNode, inputs: &DiffNode) -> Result<DiffNode> {
    if params.value().len() != spec.num_params() {
        return Err(Error::shape(
            "forward",
            format!("{} parameters for a spec needing {}", params.value().len(), spec.num_params()),
        ));
    }
    if inputs.value().rank() != 2 || inputs.shape()[1] != spec.input_dim {
        return Err(Error::shape(
            "forward",
            format!("inputs {:?}, expected [batch, {}]", inputs.shape(), spec.input_dim),
        ));
    }
    let flat = params.reshape(&[spec.num_params()])?;
    let layout = spec.layout();
    let num_layers = layout.len() / 2;
    let mut h = inputs.clone();
    for (l, pair) in layout.chunks(2).enumerate() {
        let (w, b) = (&pair[0], &pair[1]);
        let weight = flat.slice(0, w.offset, w.offset + w.size())?.reshape(&w.shape)?;
        let bias = flat.slice(0, b.offset, b.offset + b.size())?;
        h = h.matmul(&weight)?.add_row(&bias)?;
        if l + 1 < num_layers {
            h = match spec.activation {
                Activation::Relu => h.relu()?,
                Activation::Tanh => h.tanh()?,
            };
        }
    }
    Ok(h)
}

/// Mean cross-entropy of `logits` against `labels`.
pub fn xent_loss(logits: &DiffNode, labels: &[usize]) -> Result<DiffNode> {
    logits.softmax_xent(labels)
}

/// Fraction of rows whose argmax matches the label; ties go to the lowest index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (rows, cols) = logits.dims2();
    if labels.len() != rows || rows == 0 {
        return Err(Error::shape("accuracy", format!("{} labels for {} rows", labels.len(), rows)));
    }
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(Error::Invalid(format!("label {label} out of range for {cols} classes")));
        }
        let row = &logits.data()[r * cols..(r + 1) * cols];
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows as f64)
}
