use alloc::vec::Vec;
use core::ops::Range;

use half::f16;

use super::fit::{fit_asymmetric_with, fit_symmetric_with, SCALE_FLOOR};
use super::metrics::{reconstruction_error, ReconstructionError};
use super::pack::{code_at, pack_codes, packed_len};
use super::{BitWidth, QuantConfig, QuantMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-contiguous grouping of a `rows x cols` matrix. The last group of each
/// row is shorter when `group_size` does not divide `cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub rows: usize,
    pub cols: usize,
    pub group_size: usize,
}

impl GroupLayout {
    pub fn for_shape(shape: &[usize], group_size: usize) -> Result<Self> {
        let (rows, cols) = match shape {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(Error::UnsupportedRank(shape.len())),
        };
        Ok(Self { rows, cols, group_size })
    }

    pub fn groups_per_row(&self) -> usize {
        self.cols.div_ceil(self.group_size)
    }

    pub fn group_count(&self) -> usize {
        self.rows * self.groups_per_row()
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    /// Flat element range of group `g`.
    pub fn group_range(&self, g: usize) -> Range<usize> {
        let gpr = self.groups_per_row();
        let (row, k) = (g / gpr, g % gpr);
        let start = row * self.cols + k * self.group_size;
        let end = row * self.cols + ((k + 1) * self.group_size).min(self.cols);
        start..end
    }

    /// Column range of the `k`-th group within a row.
    pub fn column_range(&self, k: usize) -> Range<usize> {
        k * self.group_size..((k + 1) * self.group_size).min(self.cols)
    }
}

/// Packed integer codes plus per-group fp16 scale and zero-point.
///
/// Symmetric codes are stored offset by `+q_max` so every stored code is
/// unsigned; their zero-points are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    mode: QuantMode,
    bits: BitWidth,
    group_size: usize,
    packed: Vec<u8>,
    scales: Vec<f16>,
    zero_points: Vec<f16>,
}

impl QuantizedTensor {
    pub fn from_parts(
        shape: Vec<usize>,
        mode: QuantMode,
        bits: BitWidth,
        group_size: usize,
        packed: Vec<u8>,
        scales: Vec<f16>,
        zero_points: Vec<f16>,
    ) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::UnsupportedGroupSize(0));
        }
        let layout = GroupLayout::for_shape(&shape, group_size)?;
        let expected = packed_len(layout.numel(), bits);
        if packed.len() != expected {
            return Err(Error::CorruptPacked { expected, found: packed.len() });
        }
        let groups = layout.group_count();
        if scales.len() != groups || zero_points.len() != groups {
            return Err(Error::CorruptPacked { expected: groups, found: scales.len().min(zero_points.len()) });
        }
        Ok(Self { shape, mode, bits, group_size, packed, scales, zero_points })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn bits(&self) -> BitWidth {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn scales(&self) -> &[f16] {
        &self.scales
    }

    pub fn zero_points(&self) -> &[f16] {
        &self.zero_points
    }

    pub fn layout(&self) -> GroupLayout {
        // Shape and group size were validated on construction.
        GroupLayout::for_shape(&self.shape, self.group_size).expect("validated layout")
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Offset subtracted from a stored code before scaling: the zero-point for
    /// asymmetric groups, `q_max` for symmetric ones.
    #[inline]
    pub fn code_offset(&self, group: usize) -> f32 {
        match self.mode {
            QuantMode::Asymmetric => self.zero_points[group].to_f32(),
            QuantMode::Symmetric => self.bits.symmetric_max() as f32,
        }
    }

    #[inline]
    pub fn scale(&self, group: usize) -> f32 {
        self.scales[group].to_f32()
    }

    #[inline]
    pub fn stored_code(&self, i: usize) -> u8 {
        code_at(&self.packed, self.bits, i)
    }

    /// Bytes of packed codes plus fp16 scale and zero-point per group.
    pub fn storage_bytes(&self) -> usize {
        self.packed.len() + 4 * self.scales.len()
    }
}

/// Nearest positive fp16 scale.
fn storage_scale(s: f64) -> f16 {
    let h = f16::from_f64(s);
    if h.is_finite() && h.to_f64() > 0.0 {
        h
    } else if h.is_infinite() {
        f16::MAX
    } else {
        f16::from_f64(SCALE_FLOOR)
    }
}

pub fn quantize_tensor(w: &Tensor, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let layout = GroupLayout::for_shape(w.shape(), cfg.group_size)?;
    let opts = cfg.fit_options();
    let data = w.data();
    let bits = cfg.bits;
    let qmax = bits.symmetric_max() as f64;
    let max_code = f64::from(bits.max_code());

    let groups = layout.group_count();
    let mut stored = Vec::with_capacity(layout.numel());
    let mut scales = Vec::with_capacity(groups);
    let mut zero_points = Vec::with_capacity(groups);

    for g in 0..groups {
        let group = &data[layout.group_range(g)];
        match cfg.mode {
            QuantMode::Asymmetric => {
                let fit = fit_asymmetric_with(group, bits, opts);
                let s = storage_scale(fit.scale);
                let (sf, z) = (s.to_f64(), f64::from(fit.zero_point));
                // Codes are re-rounded against the scale that is actually stored.
                stored.extend(group.iter().map(|&x| libm::round(f64::from(x) / sf + z).clamp(0.0, max_code) as u8));
                scales.push(s);
                zero_points.push(f16::from_f64(z));
            }
            QuantMode::Symmetric => {
                let fit = fit_symmetric_with(group, bits, opts);
                let s = storage_scale(fit.scale);
                let sf = s.to_f64();
                stored.extend(group.iter().map(|&x| (libm::round(f64::from(x) / sf).clamp(-qmax, qmax) + qmax) as u8));
                scales.push(s);
                zero_points.push(f16::ZERO);
            }
        }
    }

    let packed = pack_codes(&stored, bits)?;
    QuantizedTensor::from_parts(w.shape().into(), cfg.mode, bits, cfg.group_size, packed, scales, zero_points)
}

/// Quantizes and reports the error of the stored representation, measured
/// through the same dequantization path used on load.
pub fn quantize_tensor_with_error(w: &Tensor, cfg: &QuantConfig) -> Result<(QuantizedTensor, ReconstructionError)> {
    let qt = quantize_tensor(w, cfg)?;
    let err = reconstruction_error(w, &dequantize_tensor(&qt)?)?;
    Ok((qt, err))
}

pub fn dequantize_tensor(qt: &QuantizedTensor) -> Result<Tensor> {
    let layout = qt.layout();
    let expected = packed_len(layout.numel(), qt.bits);
    if qt.packed.len() != expected {
        return Err(Error::CorruptPacked { expected, found: qt.packed.len() });
    }
    let mut out = alloc::vec![0.0f32; layout.numel()];
    for g in 0..layout.group_count() {
        let (s, off) = (qt.scale(g), qt.code_offset(g));
        for i in layout.group_range(g) {
            out[i] = s * (f32::from(qt.stored_code(i)) - off);
        }
    }
    Tensor::new(qt.shape.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_full_groups() {
        let w = Tensor::new(alloc::vec![1, 128], (0..128).map(|i| i as f32 / 64.0 - 1.0).collect()).unwrap();
        let qt = quantize_tensor(&w, &QuantConfig::asymmetric(4, 64).unwrap()).unwrap();
        assert_eq!(qt.scales().len(), 2);
        assert_eq!(qt.zero_points().len(), 2);
        assert_eq!(qt.packed().len(), 64);
        assert_eq!(qt.storage_bytes(), 72);
    }

    #[test]
    fn tail_group() {
        let layout = GroupLayout::for_shape(&[100], 64).unwrap();
        assert_eq!(layout.group_count(), 2);
        assert_eq!(layout.group_range(0), 0..64);
        assert_eq!(layout.group_range(1), 64..100);
        let layout = GroupLayout::for_shape(&[3, 100], 64).unwrap();
        assert_eq!(layout.group_count(), 6);
        assert_eq!(layout.group_range(3), 164..200);
    }

    #[test]
    fn rank_three_rejected() {
        let w = Tensor::zeros(alloc::vec![2, 2, 2]).unwrap();
        let cfg = QuantConfig::asymmetric(4, 8).unwrap();
        assert_eq!(quantize_tensor(&w, &cfg), Err(Error::UnsupportedRank(3)));
    }

    #[test]
    fn representable_grid_roundtrips_exactly() {
        // Every group spans exactly the 4-bit grid with a power-of-two step.
        let asym: Vec<f32> = (0..64).map(|i| ((i % 16) as f32 - 8.0) * 0.125).collect();
        let sym: Vec<f32> = (0..64).map(|i| ((i % 16) as f32 - 8.0).clamp(-7.0, 7.0) * 0.125).collect();
        for (data, cfg) in [(asym, QuantConfig::asymmetric(4, 16).unwrap()), (sym, QuantConfig::symmetric(4, 16).unwrap())] {
            let w = Tensor::new(alloc::vec![4, 16], data).unwrap();
            let (qt, err) = quantize_tensor_with_error(&w, &cfg).unwrap();
            assert_eq!(dequantize_tensor(&qt).unwrap(), w);
            assert_eq!(err.mse, 0.0);
        }
    }

    #[test]
    fn symmetric_codes_stored_offset() {
        let w = Tensor::from_vec(alloc::vec![0.25, -0.25, 0.0, 0.5, -0.5, 0.25, 0.0, 0.0]).unwrap();
        let qt = quantize_tensor(&w, &QuantConfig::symmetric(4, 8).unwrap()).unwrap();
        // Stored codes carry a +q_max offset, so zero sits at 7 and signs mirror around it.
        assert_eq!(qt.stored_code(2), 7);
        assert_eq!(qt.stored_code(3) + qt.stored_code(4), 14);
        assert!(qt.stored_code(3) > qt.stored_code(0));
        assert_eq!(qt.zero_points()[0], f16::ZERO);
        assert_eq!(dequantize_tensor(&qt).unwrap(), w);
    }

    #[test]
    fn error_at_fit_matches_roundtrip_bit_exactly() {
        let data: Vec<f32> = (0..300).map(|i| libm::sinf(i as f32 * 0.37) * (1.0 + (i % 7) as f32)).collect();
        let w = Tensor::new(alloc::vec![3, 100], data).unwrap();
        for cfg in [QuantConfig::asymmetric(3, 32).unwrap(), QuantConfig::symmetric(4, 64).unwrap()] {
            let (qt, at_fit) = quantize_tensor_with_error(&w, &cfg).unwrap();
            let again = reconstruction_error(&w, &dequantize_tensor(&qt).unwrap()).unwrap();
            assert_eq!(at_fit.mse.to_bits(), again.mse.to_bits());
            assert_eq!(at_fit.rel_frobenius.to_bits(), again.rel_frobenius.to_bits());
        }
    }

    #[test]
    fn from_parts_rejects_bad_lengths() {
        let b = BitWidth::try_from(4).unwrap();
        let err = QuantizedTensor::from_parts(alloc::vec![16], QuantMode::Asymmetric, b, 8, alloc::vec![0; 7], alloc::vec![f16::ONE; 2], alloc::vec![f16::ZERO; 2]);
        assert_eq!(err, Err(Error::CorruptPacked { expected: 8, found: 7 }));
    }
}
