use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Feature;
use crate::error::{Error, Result};
use crate::smallnet::{decode, read, Dataset, LayerClass, Model};

pub const ENTROPY_BINS: usize = 256;

/// Feature vector of one parameterized layer, consumed by proxy expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerStats {
    pub w_l2: f64,
    pub w_l1_mean: f64,
    pub w_std: f64,
    pub w_max_abs: f64,
    pub n_params: usize,
    pub a_entropy: f64,
    pub a_mean_abs: f64,
    pub a_std: f64,
    pub a_max_abs: f64,
    pub depth: usize,
    pub total_layers: usize,
    pub layer_class: LayerClass,
}

impl LayerStats {
    pub fn feature(&self, f: Feature) -> f64 {
        match f {
            Feature::WL2 => self.w_l2,
            Feature::WL1Mean => self.w_l1_mean,
            Feature::WStd => self.w_std,
            Feature::WMaxAbs => self.w_max_abs,
            Feature::NParams => self.n_params as f64,
            Feature::AEntropy => self.a_entropy,
            Feature::AMeanAbs => self.a_mean_abs,
            Feature::AStd => self.a_std,
            Feature::AMaxAbs => self.a_max_abs,
            Feature::Depth => self.depth as f64,
            Feature::TotalLayers => self.total_layers as f64,
            Feature::LayerClass => match self.layer_class {
                LayerClass::Conv => 1.0,
                _ => 0.0,
            },
        }
    }
}

/// On-disk per-layer statistics, as produced by external exporters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub layers: Vec<LayerStats>,
}

impl StatsFile {
    pub fn validate(&self) -> Result<()> {
        let total = self.layers.len();
        if total == 0 {
            return Err(Error::NoParameterizedLayers);
        }
        for (i, s) in self.layers.iter().enumerate() {
            if s.depth != i + 1 || s.total_layers != total {
                return Err(Error::Precondition(format!(
                    "stats entry {i}: depth {} / total_layers {} must be {} / {total}",
                    s.depth,
                    s.total_layers,
                    i + 1
                )));
            }
            if s.layer_class == LayerClass::None {
                return Err(Error::Precondition(format!(
                    "stats entry {i}: layer_class must be conv or linear"
                )));
            }
            let values = [
                s.w_l2,
                s.w_l1_mean,
                s.w_std,
                s.w_max_abs,
                s.a_entropy,
                s.a_mean_abs,
                s.a_std,
                s.a_max_abs,
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("stats entry {i}")));
            }
        }
        Ok(())
    }
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<StatsFile> {
    let path = path.as_ref();
    let file: StatsFile = decode(&path.display().to_string(), &read(path)?)?;
    file.validate()?;
    Ok(file)
}

/// Base-2 Shannon entropy of a histogram over `[min, max]` of `values`.
pub fn entropy_bits(values: &[f64], bins: usize) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if values.is_empty() || !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    let width = hi - lo;
    for &v in values {
        let b = (((v - lo) / width) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn compute_layer_stats(model: &Model, calib: &Dataset) -> Result<Vec<LayerStats>> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let inventory = model.layer_inventory();
    if inventory.is_empty() {
        return Err(Error::NoParameterizedLayers);
    }
    let acts = model.forward(&calib.inputs(), true)?.activations.expect("captured");
    let total = inventory.len();
    Ok(inventory
        .iter()
        .map(|meta| {
            let w = model.layers()[meta.position].weights().expect("parameterized");
            let a: Vec<f64> = acts[meta.position].iter().flatten().copied().collect();
            let (_, w_std) = mean_std(w);
            let (_, a_std) = mean_std(&a);
            LayerStats {
                w_l2: w.iter().map(|v| v * v).sum::<f64>().sqrt(),
                w_l1_mean: w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64,
                w_std,
                w_max_abs: w.iter().fold(0.0, |m, v| m.max(v.abs())),
                n_params: meta.param_count,
                a_entropy: entropy_bits(&a, ENTROPY_BINS),
                a_mean_abs: a.iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64,
                a_std,
                a_max_abs: a.iter().fold(0.0, |m, v| m.max(v.abs())),
                depth: meta.depth,
                total_layers: total,
                layer_class: meta.layer_class,
            }
        })
        .collect())
}

/// Orthogonality score per layer: `Σ_{j≠i} (z_jᵀz_i)² / (‖z_i‖² ‖z_j‖²)`.
/// Pairs involving an all-zero vector contribute 0.
pub fn ompq_scores(z: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: z.len(),
        });
    }
    let len = z[0].len();
    if let Some(bad) = z.iter().find(|v| v.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            got: bad.len(),
        });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norms: Vec<f64> = z.iter().map(|v| dot(v, v)).collect();
    Ok((0..z.len())
        .map(|i| {
            (0..z.len())
                .filter(|&j| j != i && norms[i] > 0.0 && norms[j] > 0.0)
                .map(|j| {
                    let d = dot(&z[j], &z[i]);
                    d * d / (norms[i] * norms[j])
                })
                .sum()
        })
        .collect())
}

/// Mean-pools `values` into `bins` contiguous chunks.
fn adaptive_mean_pool(values: &[f64], bins: usize) -> impl Iterator<Item = f64> + '_ {
    let n = values.len();
    (0..bins).map(move |b| {
        let (start, end) = (b * n / bins, (b + 1) * n / bins);
        values[start..end].iter().sum::<f64>() / (end - start) as f64
    })
}

/// OMPQ baseline: each layer's per-sample output is mean-pooled to the
/// smallest parameterized-layer width, concatenated over the calibration
/// set, and scored with [`ompq_scores`].
pub fn builtin_ompq(model: &Model, calib: &Dataset) -> Result<Vec<f64>> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let positions = model.parameterized_positions();
    if positions.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: positions.len(),
        });
    }
    let acts = model.forward(&calib.inputs(), true)?.activations.expect("captured");
    let width = positions
        .iter()
        .map(|&p| model.output_shape(p).numel())
        .min()
        .expect("non-empty");
    let z: Vec<Vec<f64>> = positions
        .iter()
        .map(|&p| {
            acts[p]
                .iter()
                .flat_map(|sample| adaptive_mean_pool(sample, width))
                .collect()
        })
        .collect();
    ompq_scores(&z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_activations_have_zero_entropy() {
        assert_eq!(entropy_bits(&[3.0; 100], ENTROPY_BINS), 0.0);
        assert_eq!(entropy_bits(&[], ENTROPY_BINS), 0.0);
    }

    #[test]
    fn uniform_over_bin_centres_is_eight_bits() {
        let width = 0.5;
        let values: Vec<f64> = (0..256).map(|i| -3.0 + (i as f64 + 0.5) * width).collect();
        assert!((entropy_bits(&values, ENTROPY_BINS) - 8.0).abs() < 1e-12);
        let doubled: Vec<f64> = values.iter().chain(&values).copied().collect();
        assert!((entropy_bits(&doubled, ENTROPY_BINS) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_equal_halves_are_one_bit() {
        let v = [0.0, 0.0, 1.0, 1.0];
        assert!((entropy_bits(&v, ENTROPY_BINS) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ompq_orthogonal_and_identical() {
        let z = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, -1.0]];
        assert_eq!(ompq_scores(&z).unwrap(), vec![0.0; 3]);
        let same = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let s = ompq_scores(&same).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(ompq_scores(&same[..1]).is_err());
    }

    #[test]
    fn mean_pool_chunks() {
        let v: Vec<f64> = adaptive_mean_pool(&[1.0, 3.0, 5.0, 7.0, 9.0], 2).collect();
        assert_eq!(v, vec![2.0, 7.0]);
    }
}
