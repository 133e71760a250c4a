//! Uniform fake quantization, per-layer sensitivity probes and the cost model.
//!
//! Weights use symmetric per-tensor quantization; activations at the output
//! of every parameterized layer use affine per-tensor quantization over the
//! range observed on the calibration set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smallnet::{accuracy_of, Dataset, LayerClass, LayerMeta, Model};

/// Bit-widths at or above this are treated as "no quantization".
pub const FULL_PRECISION_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantMode {
    Symmetric,
    Affine { min: f64, max: f64 },
}

/// Allowed weight bit-widths per layer class, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMenus {
    pub conv: Vec<u32>,
    pub linear: Vec<u32>,
}

impl Default for BitMenus {
    fn default() -> Self {
        BitMenus {
            conv: vec![2, 4, 8],
            linear: vec![4, 8],
        }
    }
}

impl BitMenus {
    pub fn menu(&self, class: LayerClass) -> &[u32] {
        match class {
            LayerClass::Conv => &self.conv,
            LayerClass::Linear => &self.linear,
            LayerClass::None => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, menu) in [("conv", &self.conv), ("linear", &self.linear)] {
            if menu.is_empty() || menu.windows(2).any(|w| w[0] >= w[1]) || menu[0] < 2 {
                return Err(Error::Precondition(format!(
                    "{name} bit menu must be non-empty, strictly ascending and >= 2"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer weight bits plus a global activation bit-width.
///
/// Serialized as `{"activation_bits": 8, "layers": [{"index": 1, "bits": 4}, ...]}`
/// with 1-based layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "AssignmentWire", try_from = "AssignmentWire")]
pub struct BitAssignment {
    pub activation_bits: u32,
    pub weight_bits: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentWire {
    activation_bits: u32,
    layers: Vec<LayerBits>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerBits {
    index: usize,
    bits: u32,
}

impl From<BitAssignment> for AssignmentWire {
    fn from(a: BitAssignment) -> Self {
        AssignmentWire {
            activation_bits: a.activation_bits,
            layers: a
                .weight_bits
                .iter()
                .enumerate()
                .map(|(i, &bits)| LayerBits { index: i + 1, bits })
                .collect(),
        }
    }
}

impl TryFrom<AssignmentWire> for BitAssignment {
    type Error = String;

    fn try_from(w: AssignmentWire) -> std::result::Result<Self, String> {
        let mut layers = w.layers;
        layers.sort_by_key(|l| l.index);
        for (i, l) in layers.iter().enumerate() {
            if l.index != i + 1 {
                return Err(format!("layer indices must be 1..=L without gaps, found {}", l.index));
            }
        }
        Ok(BitAssignment {
            activation_bits: w.activation_bits,
            weight_bits: layers.into_iter().map(|l| l.bits).collect(),
        })
    }
}

impl BitAssignment {
    pub fn uniform(layers: usize, weight_bits: u32, activation_bits: u32) -> Self {
        BitAssignment {
            activation_bits,
            weight_bits: vec![weight_bits; layers],
        }
    }

    /// Test-mode override: every tensor left at full precision.
    pub fn full_precision(layers: usize) -> Self {
        Self::uniform(layers, FULL_PRECISION_BITS, FULL_PRECISION_BITS)
    }

    pub fn len(&self) -> usize {
        self.weight_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight_bits.is_empty()
    }
}

/// Precomputed quantize/dequantize parameters for one tensor.
#[derive(Debug, Clone, Copy)]
struct Quantizer {
    scale: f64,
    zero_point: f64,
    qmin: f64,
    qmax: f64,
    /// Degenerate range: every value maps to this constant.
    constant: Option<f64>,
}

impl Quantizer {
    fn symmetric(max_abs: f64, bits: u32) -> Self {
        let qmax = (2f64).powi(bits as i32 - 1) - 1.0;
        if max_abs == 0.0 {
            return Quantizer {
                scale: 0.0,
                zero_point: 0.0,
                qmin: -qmax,
                qmax,
                constant: Some(0.0),
            };
        }
        Quantizer {
            scale: max_abs / qmax,
            zero_point: 0.0,
            qmin: -qmax,
            qmax,
            constant: None,
        }
    }

    fn affine(min: f64, max: f64, bits: u32) -> Self {
        let levels = (2f64).powi(bits as i32) - 1.0;
        if max == min {
            return Quantizer {
                scale: 0.0,
                zero_point: 0.0,
                qmin: 0.0,
                qmax: levels,
                constant: Some(min),
            };
        }
        let scale = (max - min) / levels;
        Quantizer {
            scale,
            zero_point: (-min / scale).round(),
            qmin: 0.0,
            qmax: levels,
            constant: None,
        }
    }

    #[inline]
    fn apply(&self, v: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let q = ((v / self.scale).round() + self.zero_point).clamp(self.qmin, self.qmax);
        (q - self.zero_point) * self.scale
    }
}

/// Quantize then dequantize `values`. Bit-widths of [`FULL_PRECISION_BITS`]
/// or more return the input unchanged.
pub fn quantize_tensor(values: &[f64], bits: u32, mode: QuantMode) -> Result<Vec<f64>> {
    if bits < 2 {
        return Err(Error::InvalidBits(bits));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tensor to quantize".into()));
    }
    if bits >= FULL_PRECISION_BITS {
        return Ok(values.to_vec());
    }
    let quantizer = match mode {
        QuantMode::Symmetric => Quantizer::symmetric(max_abs(values), bits),
        QuantMode::Affine { min, max } => {
            if !(min.is_finite() && max.is_finite()) || min > max {
                return Err(Error::Precondition(format!("invalid affine range ({min}, {max})")));
            }
            Quantizer::affine(min, max, bits)
        }
    };
    Ok(values.iter().map(|&v| quantizer.apply(v)).collect())
}

/// Quantization step that [`quantize_tensor`] would use.
pub fn step_size(values: &[f64], bits: u32, mode: QuantMode) -> f64 {
    match mode {
        QuantMode::Symmetric => max_abs(values) / ((2f64).powi(bits as i32 - 1) - 1.0),
        QuantMode::Affine { min, max } => (max - min) / ((2f64).powi(bits as i32) - 1.0),
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Observed `(min, max)` of each layer's full-precision output, indexed by
/// layer position (all layers, not only parameterized ones).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibRanges {
    pub ranges: Vec<(f64, f64)>,
}

pub fn calibrate_activation_ranges(model: &Model, calib: &Dataset) -> Result<CalibRanges> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let out = model.forward(&calib.inputs(), true)?;
    let acts = out.activations.expect("captured");
    let ranges = acts
        .iter()
        .map(|per_sample| {
            per_sample
                .iter()
                .flatten()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    Ok(CalibRanges { ranges })
}

fn check_assignment_len(model: &Model, assignment: &BitAssignment) -> Result<()> {
    let layers = model.num_parameterized();
    if assignment.len() != layers {
        return Err(Error::LengthMismatch {
            expected: layers,
            got: assignment.len(),
        });
    }
    Ok(())
}

fn quantized_weights(model: &Model, assignment: &BitAssignment) -> Result<Model> {
    let mut q = model.clone();
    for (&pos, &bits) in model.parameterized_positions().iter().zip(&assignment.weight_bits) {
        let w = model.layers()[pos].weights().expect("parameterized");
        q = q.with_weights(pos, quantize_tensor(w, bits, QuantMode::Symmetric)?);
    }
    Ok(q)
}

pub fn fake_quant_forward(
    model: &Model,
    assignment: &BitAssignment,
    ranges: &CalibRanges,
    batch: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    check_assignment_len(model, assignment)?;
    if ranges.ranges.len() != model.layers().len() {
        return Err(Error::LengthMismatch {
            expected: model.layers().len(),
            got: ranges.ranges.len(),
        });
    }
    if assignment.activation_bits < 2 {
        return Err(Error::InvalidBits(assignment.activation_bits));
    }
    let qmodel = quantized_weights(model, assignment)?;
    let act_bits = assignment.activation_bits;
    let mut act_quant: Vec<Option<Quantizer>> = vec![None; model.layers().len()];
    if act_bits < FULL_PRECISION_BITS {
        for pos in model.parameterized_positions() {
            let (lo, hi) = ranges.ranges[pos];
            act_quant[pos] = Some(Quantizer::affine(lo, hi, act_bits));
        }
    }
    let out = qmodel.forward_hooked(batch, false, |pos, values| {
        if let Some(q) = act_quant[pos] {
            for v in values.iter_mut() {
                *v = q.apply(*v);
            }
        }
    })?;
    Ok(out.logits)
}

pub fn quantized_accuracy(
    model: &Model,
    assignment: &BitAssignment,
    ranges: &CalibRanges,
    data: &Dataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let logits = fake_quant_forward(model, assignment, ranges, &data.inputs())?;
    Ok(accuracy_of(&logits, data))
}

fn logit_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    sum / count as f64
}

/// Empirical sensitivity of one layer: mean squared logit error when only
/// that layer's weights are quantized to `probe_bits` (1-based `depth`).
pub fn layer_quant_error(model: &Model, depth: usize, probe_bits: u32, calib: &Dataset) -> Result<f64> {
    let positions = model.parameterized_positions();
    if depth == 0 || depth > positions.len() {
        return Err(Error::LayerIndex {
            index: depth,
            layers: positions.len(),
        });
    }
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let inputs = calib.inputs();
    let reference = model.forward(&inputs, false)?.logits;
    probe_one(model, positions[depth - 1], probe_bits, &inputs, &reference)
}

/// [`layer_quant_error`] for every parameterized layer, in depth order.
pub fn layer_quant_errors(model: &Model, probe_bits: u32, calib: &Dataset) -> Result<Vec<f64>> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let inputs = calib.inputs();
    let reference = model.forward(&inputs, false)?.logits;
    model
        .parameterized_positions()
        .into_iter()
        .map(|pos| probe_one(model, pos, probe_bits, &inputs, &reference))
        .collect()
}

fn probe_one(model: &Model, pos: usize, bits: u32, inputs: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    let w = model.layers()[pos].weights().expect("parameterized");
    let probed = model.with_weights(pos, quantize_tensor(w, bits, QuantMode::Symmetric)?);
    let logits = probed.forward(inputs, false)?.logits;
    Ok(logit_mse(reference, &logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub param_bits: f64,
    pub bops: f64,
    /// `1 - param_bits / (32 * total_params)`, as a fraction.
    pub compression_ratio: f64,
}

pub fn compression_ratio(inventory: &[LayerMeta], weight_bits: &[u32]) -> f64 {
    let total: f64 = inventory.iter().map(|m| m.param_count as f64).sum();
    let bits: f64 = inventory
        .iter()
        .zip(weight_bits)
        .map(|(m, &b)| m.param_count as f64 * f64::from(b))
        .sum();
    1.0 - bits / (32.0 * total)
}

pub fn cost(inventory: &[LayerMeta], assignment: &BitAssignment) -> Result<CostReport> {
    if assignment.len() != inventory.len() {
        return Err(Error::LengthMismatch {
            expected: inventory.len(),
            got: assignment.len(),
        });
    }
    let param_bits = inventory
        .iter()
        .zip(&assignment.weight_bits)
        .map(|(m, &b)| m.param_count as f64 * f64::from(b))
        .sum();
    let bops = inventory
        .iter()
        .zip(&assignment.weight_bits)
        .map(|(m, &b)| m.mac_count as f64 * f64::from(b) * f64::from(assignment.activation_bits))
        .sum();
    Ok(CostReport {
        param_bits,
        bops,
        compression_ratio: compression_ratio(inventory, &assignment.weight_bits),
    })
}
