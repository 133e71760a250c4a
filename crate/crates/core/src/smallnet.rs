//! Small feed-forward networks: interchange format, validation and a
//! full-precision forward pass with optional activation capture.
//!
//! Interchange documents are JSON:
//!
//! ```text
//! { "name": "fixture_mlp",
//!   "input_shape": [1, 8, 8],
//!   "layers": [
//!     { "kind": "flatten" },
//!     { "kind": "dense", "in_features": 64, "out_features": 32,
//!       "weights": [...], "bias": [...] },
//!     { "kind": "relu" },
//!     { "kind": "conv2d", "in_channels": 1, "out_channels": 4, "kernel": 3,
//!       "stride": 1, "padding": 1, "weights": [...], "bias": [...] },
//!     { "kind": "maxpool2d", "kernel": 2, "stride": 2 } ] }
//! ```
//!
//! Dense weights are `[out][in]` row-major, conv weights `[out][in][kh][kw]`.
//! Unknown fields are rejected.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerClass {
    Conv,
    Linear,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Layer {
    Dense {
        in_features: usize,
        out_features: usize,
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        weights: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Relu {},
    Maxpool2d {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Flatten {},
}

fn one() -> usize {
    1
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu {} => "relu",
            Layer::Maxpool2d { .. } => "maxpool2d",
            Layer::Flatten {} => "flatten",
        }
    }

    pub fn layer_class(&self) -> LayerClass {
        match self {
            Layer::Dense { .. } => LayerClass::Linear,
            Layer::Conv2d { .. } => LayerClass::Conv,
            _ => LayerClass::None,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.layer_class() != LayerClass::None
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            Layer::Dense { weights, .. } | Layer::Conv2d { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => bias.as_deref(),
            _ => None,
        }
    }

    /// Output shape for a given input shape, checking declared dims and
    /// tensor sizes along the way.
    fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        match self {
            Layer::Dense {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                let Shape::Flat(n) = input else {
                    return Err(format!("dense expects a flat input, got {input:?}"));
                };
                if n != *in_features {
                    return Err(format!("dense declares {in_features} inputs but receives {n}"));
                }
                check_len("weights", weights.len(), in_features * out_features)?;
                if let Some(b) = bias {
                    check_len("bias", b.len(), *out_features)?;
                }
                Ok(Shape::Flat(*out_features))
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => {
                let Shape::Spatial { c, h, w } = input else {
                    return Err(format!("conv2d expects a spatial input, got {input:?}"));
                };
                if c != *in_channels {
                    return Err(format!("conv2d declares {in_channels} channels but receives {c}"));
                }
                if *kernel == 0 || *stride == 0 {
                    return Err("conv2d kernel and stride must be positive".into());
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(format!("conv2d kernel {kernel} larger than padded input {h}x{w}"));
                }
                check_len("weights", weights.len(), out_channels * in_channels * kernel * kernel)?;
                if let Some(b) = bias {
                    check_len("bias", b.len(), *out_channels)?;
                }
                Ok(Shape::Spatial {
                    c: *out_channels,
                    h: (h + 2 * padding - kernel) / stride + 1,
                    w: (w + 2 * padding - kernel) / stride + 1,
                })
            }
            Layer::Relu {} => Ok(input),
            Layer::Maxpool2d { kernel, stride } => {
                let Shape::Spatial { c, h, w } = input else {
                    return Err(format!("maxpool2d expects a spatial input, got {input:?}"));
                };
                if *kernel == 0 || *stride == 0 || h < *kernel || w < *kernel {
                    return Err(format!("maxpool2d kernel {kernel} does not fit {h}x{w}"));
                }
                Ok(Shape::Spatial {
                    c,
                    h: (h - kernel) / stride + 1,
                    w: (w - kernel) / stride + 1,
                })
            }
            Layer::Flatten {} => Ok(Shape::Flat(input.numel())),
        }
    }

    fn apply(&self, input: &[f64], in_shape: Shape, out_shape: Shape) -> Vec<f64> {
        match self {
            Layer::Dense {
                in_features,
                out_features,
                weights,
                bias,
            } => (0..*out_features)
                .map(|o| {
                    let row = &weights[o * in_features..(o + 1) * in_features];
                    let acc: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
                    acc + bias.as_ref().map_or(0.0, |b| b[o])
                })
                .collect(),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
                bias,
            } => {
                let Shape::Spatial { h, w, .. } = in_shape else {
                    unreachable!("validated at load")
                };
                let Shape::Spatial { h: oh, w: ow, .. } = out_shape else {
                    unreachable!("validated at load")
                };
                let k = *kernel;
                let mut out = vec![0.0; out_channels * oh * ow];
                for oc in 0..*out_channels {
                    let b = bias.as_ref().map_or(0.0, |b| b[oc]);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b;
                            for ic in 0..*in_channels {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let wv = weights[((oc * in_channels + ic) * k + ky) * k + kx];
                                        acc += wv * input[(ic * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                            out[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                out
            }
            Layer::Relu {} => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Maxpool2d { kernel, stride } => {
                let Shape::Spatial { h, w, .. } = in_shape else {
                    unreachable!("validated at load")
                };
                let Shape::Spatial { c, h: oh, w: ow } = out_shape else {
                    unreachable!("validated at load")
                };
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let v = input[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                                    m = m.max(v);
                                }
                            }
                            out.push(m);
                        }
                    }
                }
                out
            }
            Layer::Flatten {} => input.to_vec(),
        }
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> std::result::Result<(), String> {
    if got == expected {
        Ok(())
    } else {
        Err(format!("{what} has {got} values, declared dims require {expected}"))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    name: &'a str,
    input_shape: [usize; 3],
    layers: &'a [Layer],
}

/// A validated network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

/// Per-parameterized-layer metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMeta {
    /// 1-based depth over parameterized layers.
    pub depth: usize,
    /// 0-based position in the full layer list.
    pub position: usize,
    pub layer_class: LayerClass,
    pub param_count: usize,
    pub mac_count: usize,
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<Vec<f64>>,
    /// `activations[layer][sample]`, recorded at each layer's output.
    pub activations: Option<Vec<Vec<Vec<f64>>>>,
}

impl Model {
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut shape = Shape::Spatial {
            c: input_shape[0],
            h: input_shape[1],
            w: input_shape[2],
        };
        if shape.numel() == 0 {
            return Err(Error::Shape("input_shape has a zero dimension".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|m| Error::Shape(format!("layer {i} ({}): {m}", layer.kind_name())))?;
            shapes.push(shape);
        }
        if !layers.iter().any(Layer::is_parameterized) {
            return Err(Error::NoParameterizedLayers);
        }
        for (i, layer) in layers.iter().enumerate() {
            let finite = layer
                .weights()
                .into_iter()
                .chain(layer.bias())
                .flatten()
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!(
                    "layer {i} ({}) parameters",
                    layer.kind_name()
                )));
            }
        }
        Ok(Model {
            name: name.into(),
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self, position: usize) -> Shape {
        self.shapes[position]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map_or(0, Shape::numel)
    }

    /// Positions of parameterized layers, in depth order.
    pub fn parameterized_positions(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_parameterized())
            .collect()
    }

    pub fn num_parameterized(&self) -> usize {
        self.layers.iter().filter(|l| l.is_parameterized()).count()
    }

    /// Copy of this model with the weights of the layer at `position` replaced.
    pub(crate) fn with_weights(&self, position: usize, weights: Vec<f64>) -> Model {
        let mut m = self.clone();
        let slot = m.layers[position].weights_mut().expect("parameterized layer");
        debug_assert_eq!(slot.len(), weights.len());
        *slot = weights;
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFileRef {
            name: &self.name,
            input_shape: self.input_shape,
            layers: &self.layers,
        })
        .expect("model serializes")
    }

    pub fn forward(&self, batch: &[Vec<f64>], capture: bool) -> Result<ForwardOutput> {
        self.forward_hooked(batch, capture, |_, _| {})
    }

    /// Forward pass that lets `hook(position, output)` rewrite each layer's
    /// output in place before it feeds the next layer.
    pub fn forward_hooked<F>(&self, batch: &[Vec<f64>], capture: bool, hook: F) -> Result<ForwardOutput>
    where
        F: Fn(usize, &mut [f64]),
    {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let in_len = self.input_len();
        if let Some(bad) = batch.iter().find(|x| x.len() != in_len) {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {in_len}",
                bad.len()
            )));
        }
        let mut activations = capture.then(|| vec![Vec::with_capacity(batch.len()); self.layers.len()]);
        let mut logits = Vec::with_capacity(batch.len());
        let input_shape = Shape::Spatial {
            c: self.input_shape[0],
            h: self.input_shape[1],
            w: self.input_shape[2],
        };
        for x in batch {
            let mut cur = x.clone();
            let mut shape = input_shape;
            for (i, layer) in self.layers.iter().enumerate() {
                let out_shape = self.shapes[i];
                cur = layer.apply(&cur, shape, out_shape);
                hook(i, &mut cur);
                shape = out_shape;
                if let Some(acts) = activations.as_mut() {
                    acts[i].push(cur.clone());
                }
            }
            logits.push(cur);
        }
        Ok(ForwardOutput { logits, activations })
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let out = self.forward(&data.inputs(), false)?;
        Ok(accuracy_of(&out.logits, data))
    }

    pub fn layer_inventory(&self) -> Vec<LayerMeta> {
        let mut depth = 0;
        let mut inventory = Vec::new();
        for (position, layer) in self.layers.iter().enumerate() {
            let (param_count, mac_count) = match layer {
                Layer::Dense {
                    in_features,
                    out_features,
                    bias,
                    ..
                } => (
                    in_features * out_features + bias.as_ref().map_or(0, Vec::len),
                    in_features * out_features,
                ),
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => {
                    let kernel_volume = in_channels * kernel * kernel;
                    let out_spatial = match self.shapes[position] {
                        Shape::Spatial { h, w, .. } => h * w,
                        Shape::Flat(_) => unreachable!("conv output is spatial"),
                    };
                    (
                        out_channels * kernel_volume + bias.as_ref().map_or(0, Vec::len),
                        out_spatial * kernel_volume * out_channels,
                    )
                }
                _ => continue,
            };
            depth += 1;
            inventory.push(LayerMeta {
                depth,
                position,
                layer_class: layer.layer_class(),
                param_count,
                mac_count,
            });
        }
        inventory
    }
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn accuracy_of(logits: &[Vec<f64>], data: &Dataset) -> f64 {
    let correct = logits
        .iter()
        .zip(&data.samples)
        .filter(|(row, s)| argmax(row) == s.label)
        .count();
    correct as f64 / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let d = Dataset { num_classes, samples };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Precondition("num_classes must be positive".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes {
                return Err(Error::Precondition(format!(
                    "sample {i}: label {} outside [0, {})",
                    s.label, self.num_classes
                )));
            }
            if s.input.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i} input")));
            }
        }
        Ok(())
    }

    /// Checks that every input matches `model`'s input shape and the label
    /// space fits its output.
    pub fn check_compatible(&self, model: &Model) -> Result<()> {
        let n = model.input_len();
        if let Some((i, s)) = self.samples.iter().enumerate().find(|(_, s)| s.input.len() != n) {
            return Err(Error::Shape(format!(
                "sample {i} has {} values, model expects {n}",
                s.input.len()
            )));
        }
        if self.num_classes > model.num_classes() {
            return Err(Error::Shape(format!(
                "dataset has {} classes, model outputs {}",
                self.num_classes,
                model.num_classes()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.input.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }
}

pub(crate) fn decode<T: DeserializeOwned>(label: &str, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Format {
        path: label.to_string(),
        context: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_model(label: &str, text: &str) -> Result<Model> {
    let file: ModelFile = decode(label, text)?;
    Model::new(file.name, file.input_shape, file.layers)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    parse_model(&path.display().to_string(), &read(path)?)
}

pub fn parse_dataset(label: &str, text: &str) -> Result<Dataset> {
    let d: Dataset = decode(label, text)?;
    d.validate()?;
    Ok(d)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&path.display().to_string(), &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(i: usize, o: usize, weights: Vec<f64>) -> Layer {
        Layer::Dense {
            in_features: i,
            out_features: o,
            weights,
            bias: Some(vec![0.0; o]),
        }
    }

    #[test]
    fn weight_count_mismatch_is_a_shape_error() {
        let text = format!(
            r#"{{"name":"bad","input_shape":[64,1,1],"layers":[{{"kind":"flatten"}},
            {{"kind":"dense","in_features":64,"out_features":32,"weights":{:?}}}]}}"#,
            vec![0.5; 100]
        );
        let err = parse_model("bad", &text).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.contains("100")), "{err}");
    }

    #[test]
    fn empty_layers_rejected() {
        let err = parse_model("e", r#"{"name":"e","input_shape":[1,2,2],"layers":[]}"#).unwrap_err();
        assert!(matches!(err, Error::NoParameterizedLayers));
        let err = parse_model(
            "e",
            r#"{"name":"e","input_shape":[1,2,2],"layers":[{"kind":"relu"},{"kind":"flatten"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoParameterizedLayers));
    }

    #[test]
    fn unknown_fields_report_their_path() {
        let err = parse_model(
            "m.json",
            r#"{"name":"x","input_shape":[1,1,2],"layers":[{"kind":"flatten","extra":1}]}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layers[0]"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
        let err = parse_model("m.json", r#"{"name":"x","input_shape":[1,1,2],"layers":[],"oops":2}"#).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn non_finite_weights_rejected() {
        let err = Model::new(
            "nf",
            [2, 1, 1],
            vec![Layer::Flatten {}, dense(2, 1, vec![1.0, f64::NAN])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::new("z", [1, 2, 2], vec![Layer::Flatten {}, dense(4, 3, vec![0.0; 12])]).unwrap();
        let out = m.forward(&[vec![1.0, -2.0, 3.0, 4.0]], false).unwrap();
        assert_eq!(out.logits, vec![vec![0.0; 3]]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let m = Model::new("id", [3, 1, 1], vec![Layer::Flatten {}, dense(3, 3, w)]).unwrap();
        let x = vec![0.25, -1.5, 7.0];
        assert_eq!(m.forward(std::slice::from_ref(&x), false).unwrap().logits[0], x);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        // Bias favours class 0 regardless of input.
        let mut bias = vec![0.0; 10];
        bias[0] = 1.0;
        let m = Model::new(
            "c0",
            [1, 1, 1],
            vec![
                Layer::Flatten {},
                Layer::Dense {
                    in_features: 1,
                    out_features: 10,
                    weights: vec![0.0; 10],
                    bias: Some(bias),
                },
            ],
        )
        .unwrap();
        let all_zero = Dataset::new(
            10,
            (0..5)
                .map(|_| Sample {
                    input: vec![1.0],
                    label: 0,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(m.accuracy(&all_zero).unwrap(), 1.0);
        let spread = Dataset::new(
            10,
            (0..10)
                .map(|l| Sample {
                    input: vec![1.0],
                    label: l,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(m.accuracy(&spread).unwrap(), 0.1);
        let empty = Dataset::new(10, vec![]).unwrap();
        assert!(matches!(m.accuracy(&empty), Err(Error::Empty(_))));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn inventory_counts_only_parameterized_layers() {
        let conv = Layer::Conv2d {
            in_channels: 3,
            out_channels: 8,
            kernel: 3,
            stride: 1,
            padding: 1,
            weights: vec![0.1; 8 * 3 * 9],
            bias: None,
        };
        let m = Model::new("c", [3, 8, 8], vec![conv, Layer::Relu {}, Layer::Flatten {}]).unwrap();
        let inv = m.layer_inventory();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv[0].mac_count, 8 * 8 * 8 * (3 * 3 * 3));
        assert_eq!(inv[0].param_count, 8 * 27);
        assert_eq!(inv[0].layer_class, LayerClass::Conv);
    }

    #[test]
    fn conv_and_pool_shapes_chain() {
        let m = Model::new(
            "cp",
            [1, 4, 4],
            vec![
                Layer::Conv2d {
                    in_channels: 1,
                    out_channels: 1,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    weights: vec![2.0],
                    bias: None,
                },
                Layer::Maxpool2d { kernel: 2, stride: 2 },
                Layer::Flatten {},
                dense(4, 1, vec![1.0; 4]),
            ],
        )
        .unwrap();
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        // maxima of the 2x2 blocks of 2*x: 10, 14, 26, 30
        let out = m.forward(&[x], true).unwrap();
        assert_eq!(out.logits[0], vec![80.0]);
        assert_eq!(out.activations.unwrap()[1][0], vec![10.0, 14.0, 26.0, 30.0]);
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let err = parse_dataset("d", r#"{"num_classes":2,"samples":[{"input":[1.0],"label":2}]}"#).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
