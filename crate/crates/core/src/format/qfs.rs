//! QFS: class prototypes followed by a labelled stream of feature vectors.
//!
//! ```text
//! "QFS1" | d u32 | C u32 | N u64 | prototypes f32 * C*d | N * (f32 * d | label u32)
//! ```

use alloc::vec::Vec;

use super::bytes::Reader;
use crate::error::{Error, Result};

pub const QFS_MAGIC: [u8; 4] = *b"QFS1";

/// Prototype rows whose norm is further than this from 1 are renormalized on read.
const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    dim: usize,
    classes: usize,
    /// `classes x dim`, row-major.
    prototypes: Vec<f32>,
    /// `len x dim`, row-major.
    features: Vec<f32>,
    labels: Vec<u32>,
}

impl FeatureStream {
    pub fn new(dim: usize, classes: usize, prototypes: Vec<f32>, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::InvalidHeader("dimension and class count must be positive".into()));
        }
        if dim > u32::MAX as usize || classes > u32::MAX as usize {
            return Err(Error::InvalidHeader("dimension or class count exceeds u32".into()));
        }
        if prototypes.len() != classes * dim {
            return Err(Error::DimensionMismatch { expected: classes * dim, found: prototypes.len() });
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * dim, found: features.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(Error::LabelOutOfRange { index, label, classes: classes as u32 });
        }
        Ok(Self { dim, classes, prototypes, features, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn prototypes(&self) -> &[f32] {
        &self.prototypes
    }

    pub fn prototype(&self, c: usize) -> &[f32] {
        &self.prototypes[c * self.dim..(c + 1) * self.dim]
    }

    pub fn feature(&self, t: usize) -> &[f32] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], u32)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub stream: FeatureStream,
    /// Set when at least one prototype row had to be renormalized.
    pub renormalized: bool,
}

pub fn encode_stream(stream: &FeatureStream) -> Vec<u8> {
    let d = stream.dim;
    let mut out = Vec::with_capacity(20 + 4 * stream.prototypes.len() + stream.len() * (4 * d + 4));
    out.extend_from_slice(&QFS_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(stream.classes as u32).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    out.extend(stream.prototypes.iter().flat_map(|v| v.to_le_bytes()));
    for (f, label) in stream.iter() {
        out.extend(f.iter().flat_map(|v| v.to_le_bytes()));
        out.extend_from_slice(&label.to_le_bytes());
    }
    out
}

pub fn decode_stream(bytes: &[u8]) -> Result<DecodedStream> {
    let mut rd = Reader::new(bytes, Error::TruncatedHeader);
    if rd.take(4)? != QFS_MAGIC {
        return Err(Error::BadMagic);
    }
    let dim = rd.u32()? as usize;
    let classes = rd.u32()? as usize;
    let n = rd.u64()?;
    if dim == 0 || classes == 0 {
        return Err(Error::InvalidHeader("dimension and class count must be positive".into()));
    }

    rd.set_short(Error::TruncatedPayload);
    let mut prototypes = Vec::with_capacity(classes.saturating_mul(dim).min(rd.remaining() / 4));
    for _ in 0..classes * dim {
        prototypes.push(rd.f32()?);
    }

    let record = 4 * dim as u64 + 4;
    let available = rd.remaining() as u64;
    if available != n.saturating_mul(record) {
        if !available.is_multiple_of(record) && available < n.saturating_mul(record) {
            return Err(Error::TruncatedPayload);
        }
        return Err(Error::SampleCountMismatch { header: n, found: available / record });
    }
    let n = n as usize;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for index in 0..n {
        for _ in 0..dim {
            features.push(rd.f32()?);
        }
        let label = rd.u32()?;
        if label as usize >= classes {
            return Err(Error::LabelOutOfRange { index, label, classes: classes as u32 });
        }
        labels.push(label);
    }

    let mut renormalized = false;
    for (c, row) in prototypes.chunks_exact_mut(dim).enumerate() {
        let norm = libm::sqrt(row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>());
        if libm::fabs(norm - 1.0) > NORM_TOL {
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidTensor {
                    name: alloc::format!("prototype {c}"),
                    reason: "row cannot be normalized".into(),
                });
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
            renormalized = true;
        }
    }

    Ok(DecodedStream { stream: FeatureStream::new(dim, classes, prototypes, features, labels)?, renormalized })
}
