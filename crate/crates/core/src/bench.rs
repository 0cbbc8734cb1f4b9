//! Synthetic shifted streams, static memory accounting and bit/group sweeps.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{DType, FeatureStream, TensorRecord};
use crate::quant::{quantize_tensor_with_error, QuantConfig, QuantMode};
use crate::select::Modality;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub sigma: f64,
    pub delta: f64,
    pub rho: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.samples < 1 || self.classes < 1 {
            return Err(Error::InvalidConfig("synthetic stream needs dim >= 2, samples >= 1, classes >= 1".into()));
        }
        for (name, v) in [("sigma", self.sigma), ("delta", self.delta), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    v.iter().map(|x| x / n).collect()
}

/// Centroids uniform on the unit sphere, prototypes `normalize(c + rho g)`,
/// samples `normalize(c_y + sigma g_t + delta u)` for one fixed unit shift `u`.
/// Every `g` has independent standard normal coordinates. Labels cycle `0..C`.
pub fn synth_stream(spec: &SynthSpec) -> Result<FeatureStream> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<Vec<f64>> = (0..c).map(|_| normalized(&gaussian(&mut rng, d))).collect();
    let shift = normalized(&gaussian(&mut rng, d));

    let mut prototypes = Vec::with_capacity(c * d);
    for centroid in &centroids {
        let g = gaussian(&mut rng, d);
        let row: Vec<f64> = centroid.iter().zip(&g).map(|(x, n)| x + spec.rho * n).collect();
        prototypes.extend(normalized(&row).into_iter().map(|x| x as f32));
    }

    let mut features = Vec::with_capacity(spec.samples * d);
    let mut labels = Vec::with_capacity(spec.samples);
    for t in 0..spec.samples {
        let y = t % c;
        let g = gaussian(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|j| centroids[y][j] + spec.sigma * g[j] + spec.delta * shift[j]).collect();
        features.extend(normalized(&x).into_iter().map(|v| v as f32));
        labels.push(y as u32);
    }
    FeatureStream::new(d, c, prototypes, features, labels)
}

/// Shape of a toy two-tower model used to exercise planning and accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub width: usize,
    pub depth: usize,
    pub embed: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { width: 256, depth: 2, embed: 128, seed: 0 }
    }
}

/// Gaussian weights with `vision.` / `text.` names: a patch embedding,
/// `depth` attention and MLP matrices per tower, final norms and the two
/// projections. A few projection weights are scaled up to mimic outlier
/// channels.
pub fn synth_model(spec: &ModelSpec) -> Result<Vec<(String, Tensor)>> {
    if spec.width == 0 || spec.embed == 0 {
        return Err(Error::InvalidConfig("model width and embed must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = 1.0 / libm::sqrt(spec.width as f64);
    let mut matrix = |rows: usize, cols: usize, mean: f64, std: f64| -> Result<Tensor> {
        let data = (0..rows * cols).map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (mean + std * g) as f32
        }).collect();
        Tensor::new(alloc::vec![rows, cols], data)
    };
    let w = spec.width;
    let mut layers = Vec::new();
    layers.push(("vision.conv1".to_string(), matrix(w, 48, 0.0, std)?));
    for tower in ["vision", "text"] {
        if tower == "text" {
            layers.push(("text.token_embedding".to_string(), matrix(64, w, 0.0, std)?));
        }
        for i in 0..spec.depth {
            layers.push((alloc::format!("{tower}.blocks.{i}.attn"), matrix(w, w, 0.0, std)?));
            layers.push((alloc::format!("{tower}.blocks.{i}.mlp"), matrix(w, w, 0.0, std)?));
        }
        let norm = if tower == "vision" { "vision.ln_post" } else { "text.ln_final" };
        layers.push((norm.to_string(), Tensor::from_vec(matrix(1, w, 1.0, 0.1)?.into_data())?));
        let mut proj = matrix(spec.embed, w, 0.0, std)?.into_data();
        for i in (0..proj.len()).step_by(997) {
            proj[i] *= 20.0;
        }
        layers.push((alloc::format!("{tower}.proj"), Tensor::new(alloc::vec![spec.embed, w], proj)?));
    }
    Ok(layers)
}

/// `count` seeded standard normal tensors of `numel` elements each, named `gauss.{i}`.
pub fn gaussian_tensors(count: usize, numel: usize, seed: u64) -> Result<Vec<(String, Tensor)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let data = (0..numel)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g as f32
                })
                .collect();
            Ok((alloc::format!("gauss.{i}"), Tensor::from_vec(data)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFootprint {
    pub name: String,
    pub modality: Option<Modality>,
    pub dtype: String,
    pub params: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub layers: Vec<LayerFootprint>,
    pub vision_bytes: u64,
    pub text_bytes: u64,
    /// Layers without a modality tag.
    pub other_bytes: u64,
    pub total_bytes: u64,
    pub params: u64,
    pub bits_per_weight: f64,
    /// fp32 bytes over actual bytes.
    pub fp32_ratio: f64,
}

/// Static byte accounting. Packed records count their codes plus 4 bytes of
/// fp16 metadata per group, which is exactly their payload length.
pub fn memory_footprint(records: &[TensorRecord]) -> Result<Footprint> {
    let mut fp = Footprint {
        layers: Vec::with_capacity(records.len()),
        vision_bytes: 0,
        text_bytes: 0,
        other_bytes: 0,
        total_bytes: 0,
        params: 0,
        bits_per_weight: 0.0,
        fp32_ratio: 0.0,
    };
    for r in records {
        let bytes = r.expected_payload_len()?;
        let modality = Modality::of(&r.name).ok();
        match modality {
            Some(Modality::Vision) => fp.vision_bytes += bytes,
            Some(Modality::Text) => fp.text_bytes += bytes,
            None => fp.other_bytes += bytes,
        }
        fp.total_bytes += bytes;
        fp.params += r.numel();
        fp.layers.push(LayerFootprint { name: r.name.clone(), modality, dtype: r.dtype.to_string(), params: r.numel(), bytes });
    }
    if fp.params > 0 {
        fp.bits_per_weight = 8.0 * fp.total_bytes as f64 / fp.params as f64;
        fp.fp32_ratio = 32.0 / fp.bits_per_weight;
    }
    Ok(fp)
}

/// Bits per weight of a packed layout, ignoring tail groups.
pub fn nominal_bits_per_weight(bits: u8, group_size: usize) -> f64 {
    f64::from(bits) + 32.0 / group_size as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: u8,
    pub group_size: usize,
    /// Mean over layers of the relative Frobenius error.
    pub rel_error: f64,
    /// Mean squared error over all weights.
    pub mse: f64,
    pub bytes: u64,
}

pub fn sweep_row(layers: &[(&str, &Tensor)], bits: u8, group_size: usize, mode: QuantMode) -> Result<SweepRow> {
    let cfg = QuantConfig::new(bits, group_size, mode)?;
    let (mut rel, mut sse, mut n, mut bytes) = (0.0, 0.0, 0usize, 0u64);
    for &(name, w) in layers {
        let (qt, err) = quantize_tensor_with_error(w, &cfg)?;
        rel += err.rel_frobenius;
        sse += err.sse;
        n += w.numel();
        bytes += TensorRecord::from_quantized(name, &qt).payload.len() as u64;
    }
    let count = layers.len().max(1) as f64;
    Ok(SweepRow { bits, group_size, rel_error: rel / count, mse: sse / n.max(1) as f64, bytes })
}

/// One row per `(bits, group)`, bits outer and groups inner, in the given order.
pub fn sweep(layers: &[(&str, &Tensor)], bits: &[u8], groups: &[usize], mode: QuantMode) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(bits.len() * groups.len());
    for &b in bits {
        for &g in groups {
            rows.push(sweep_row(layers, b, g, mode)?);
        }
    }
    Ok(rows)
}

/// Layers of a container as dense tensors, for sweeping or re-planning.
pub fn decode_layers(records: &[TensorRecord]) -> Result<Vec<(String, Tensor)>> {
    records.iter().map(|r| Ok((r.name.clone(), r.to_tensor()?))).collect()
}

/// True when every record is stored as fp32.
pub fn is_dense_fp32(records: &[TensorRecord]) -> bool {
    records.iter().all(|r| r.dtype == DType::F32)
}
