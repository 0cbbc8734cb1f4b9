//! Forward-path primitives: quantized matvec, normalization, cosine logits,
//! softmax and normalized entropy. Accumulation is in f64.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quant::QuantizedTensor;

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// Tolerance on prototype row norms.
const UNIT_TOL: f64 = 1e-6;

/// `y = W~ x` with each group dequantized on the fly.
pub fn qmatvec(qt: &QuantizedTensor, x: &[f32]) -> Result<Vec<f32>> {
    let &[rows, cols] = qt.shape() else {
        return Err(Error::UnsupportedRank(qt.shape().len()));
    };
    if x.len() != cols {
        return Err(Error::DimensionMismatch { expected: cols, found: x.len() });
    }
    let layout = qt.layout();
    let per_row = layout.groups_per_row();
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut acc = 0.0f64;
        for k in 0..per_row {
            let g = r * per_row + k;
            let scale = qt.scale(g);
            let offset = qt.code_offset(g);
            let cols_k = layout.column_range(k);
            let base = r * cols;
            for j in cols_k {
                // Same f32 expression as `dequantize_tensor`, so the two paths agree on every weight.
                let w = scale * (f32::from(qt.stored_code(base + j)) - offset);
                acc += f64::from(w) * f64::from(x[j]);
            }
        }
        y.push(acc as f32);
    }
    Ok(y)
}

/// Returns the unit vector and `false`, or the input unchanged and `true` when it has zero norm.
pub fn l2_normalize(v: &[f32]) -> (Vec<f32>, bool) {
    let norm = libm::sqrt(v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return (v.to_vec(), true);
    }
    (v.iter().map(|&x| (f64::from(x) / norm) as f32).collect(), false)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Frozen unit-norm class prototypes with their logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    dim: usize,
    rows: Vec<f32>,
    logit_scale: f64,
}

impl Prototypes {
    /// `rows` is `classes x dim` row-major; every row must already be unit-norm.
    pub fn new(dim: usize, rows: Vec<f32>, logit_scale: f64) -> Result<Self> {
        if dim == 0 || rows.is_empty() || !rows.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: rows.len() });
        }
        if !(logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("logit scale must be positive, got {logit_scale}")));
        }
        for (c, row) in rows.chunks_exact(dim).enumerate() {
            let norm = libm::sqrt(dot(row, row));
            if libm::fabs(norm - 1.0) > UNIT_TOL {
                return Err(Error::InvalidTensor {
                    name: alloc::format!("prototype {c}"),
                    reason: alloc::format!("row norm {norm} is not 1"),
                });
            }
        }
        Ok(Self { dim, rows, logit_scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, c: usize) -> &[f32] {
        &self.rows[c * self.dim..(c + 1) * self.dim]
    }
}

/// `l0_c = scale * (f . P_c)`.
pub fn cosine_logits(f: &[f32], protos: &Prototypes) -> Result<Vec<f64>> {
    if f.len() != protos.dim {
        return Err(Error::DimensionMismatch { expected: protos.dim, found: f.len() });
    }
    Ok(protos.rows.chunks_exact(protos.dim).map(|p| protos.logit_scale * dot(f, p)).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `H(p) / ln C`, with `0 ln 0 = 0`. A single class has entropy 0.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * libm::log(x)).sum();
    (h / libm::log(p.len() as f64)).clamp(0.0, 1.0)
}
