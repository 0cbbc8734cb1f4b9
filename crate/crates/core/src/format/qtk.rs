//! QTK: a flat container of named weight tensors.
//!
//! ```text
//! "QTK1" | version u16 | tensor_count u32
//! per tensor: name_len u16 | name | dtype u8 | bits u8 | group_size u32 |
//!             rank u8 | dims u64 * rank | payload_offset u64 | payload_len u64
//! payloads, in table order
//! ```
//!
//! All integers are little-endian and offsets are absolute.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use half::f16;

use super::bytes::Reader;
use crate::error::{Error, Result};
use crate::quant::{packed_len, BitWidth, GroupLayout, QuantMode, QuantizedTensor};
use crate::tensor::Tensor;

pub const QTK_MAGIC: [u8; 4] = *b"QTK1";
pub const QTK_VERSION: u16 = 1;

/// Element encoding of a record payload.
///
/// Packed records carry their quantizer family in the dtype byte because
/// symmetric codes are stored offset by `q_max` while their zero-points are
/// written as 0; the two are otherwise indistinguishable on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    QPacked(QuantMode),
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
            DType::QPacked(QuantMode::Asymmetric) => 2,
            DType::QPacked(QuantMode::Symmetric) => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F32,
            1 => DType::F16,
            2 => DType::QPacked(QuantMode::Asymmetric),
            3 => DType::QPacked(QuantMode::Symmetric),
            _ => return None,
        })
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "FP32",
            DType::F16 => "FP16",
            DType::QPacked(QuantMode::Asymmetric) => "QPACKED-ASYM",
            DType::QPacked(QuantMode::Symmetric) => "QPACKED-SYM",
        })
    }
}

/// One named tensor as stored in a QTK container.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    /// Code width for packed records, 0 otherwise.
    pub bits: u8,
    /// Group size for packed records, 0 otherwise.
    pub group_size: u32,
    pub shape: Vec<u64>,
    pub payload: Vec<u8>,
}

impl TensorRecord {
    pub fn from_f32(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F32,
            bits: 0,
            group_size: 0,
            shape: t.shape().iter().map(|&d| d as u64).collect(),
            payload: t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_f16(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dtype: DType::F16,
            bits: 0,
            group_size: 0,
            shape: t.shape().iter().map(|&d| d as u64).collect(),
            payload: t.data().iter().flat_map(|&v| f16::from_f32(v).to_le_bytes()).collect(),
        }
    }

    pub fn from_quantized(name: impl Into<String>, qt: &QuantizedTensor) -> Self {
        let mut payload = Vec::with_capacity(qt.storage_bytes());
        payload.extend_from_slice(qt.packed());
        payload.extend(qt.scales().iter().flat_map(|s| s.to_le_bytes()));
        payload.extend(qt.zero_points().iter().flat_map(|z| z.to_le_bytes()));
        Self {
            name: name.into(),
            dtype: DType::QPacked(qt.mode()),
            bits: qt.bits().get(),
            group_size: qt.group_size() as u32,
            shape: qt.shape().iter().map(|&d| d as u64).collect(),
            payload,
        }
    }

    pub fn numel(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn shape_usize(&self) -> Vec<usize> {
        self.shape.iter().map(|&d| d as usize).collect()
    }

    fn invalid(&self, reason: impl ToString) -> Error {
        Error::InvalidTensor { name: self.name.clone(), reason: reason.to_string() }
    }

    /// Payload length implied by dtype, shape and (for packed records) bits
    /// and group size.
    pub fn expected_payload_len(&self) -> Result<u64> {
        if self.shape.is_empty() || self.numel() == 0 {
            return Err(self.invalid("shape product must be positive"));
        }
        match self.dtype {
            DType::F32 => Ok(4 * self.numel()),
            DType::F16 => Ok(2 * self.numel()),
            DType::QPacked(_) => {
                let bits = BitWidth::try_from(self.bits)?;
                if self.group_size == 0 {
                    return Err(self.invalid("packed record needs a group size"));
                }
                let layout = GroupLayout::for_shape(&self.shape_usize(), self.group_size as usize)?;
                Ok((packed_len(layout.numel(), bits) + 4 * layout.group_count()) as u64)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.len() > usize::from(u16::MAX) {
            return Err(self.invalid("name must be 1..=65535 bytes"));
        }
        if self.shape.len() > usize::from(u8::MAX) {
            return Err(self.invalid("rank exceeds 255"));
        }
        if !matches!(self.dtype, DType::QPacked(_)) && (self.bits != 0 || self.group_size != 0) {
            return Err(self.invalid("bits and group size are only meaningful for packed records"));
        }
        let expected = self.expected_payload_len()?;
        if self.payload.len() as u64 != expected {
            return Err(self.invalid(alloc::format!("payload is {} bytes, layout needs {expected}", self.payload.len())));
        }
        Ok(())
    }

    pub fn to_quantized(&self) -> Result<QuantizedTensor> {
        let DType::QPacked(mode) = self.dtype else {
            return Err(self.invalid("not a packed record"));
        };
        let bits = BitWidth::try_from(self.bits)?;
        let shape = self.shape_usize();
        let layout = GroupLayout::for_shape(&shape, self.group_size as usize)?;
        let codes = packed_len(layout.numel(), bits);
        let groups = layout.group_count();
        if self.payload.len() != codes + 4 * groups {
            return Err(Error::CorruptPacked { expected: codes + 4 * groups, found: self.payload.len() });
        }
        let halves = |bytes: &[u8]| bytes.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]])).collect::<Vec<_>>();
        let scales = halves(&self.payload[codes..codes + 2 * groups]);
        let zeros = halves(&self.payload[codes + 2 * groups..]);
        QuantizedTensor::from_parts(shape, mode, bits, self.group_size as usize, self.payload[..codes].to_vec(), scales, zeros)
    }

    /// Decodes the payload to fp32, dequantizing packed records.
    pub fn to_tensor(&self) -> Result<Tensor> {
        self.validate()?;
        let data = match self.dtype {
            DType::F32 => self.payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            DType::F16 => self.payload.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
            DType::QPacked(_) => return crate::quant::dequantize_tensor(&self.to_quantized()?),
        };
        Tensor::new(self.shape_usize(), data)
    }
}

fn entry_len(r: &TensorRecord) -> usize {
    2 + r.name.len() + 1 + 1 + 4 + 1 + 8 * r.shape.len() + 8 + 8
}

pub fn encode_container(records: &[TensorRecord]) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::EmptyContainer);
    }
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::DuplicateName(r.name.clone()));
        }
        if matches!(r.dtype, DType::QPacked(_)) {
            BitWidth::try_from(r.bits)?;
        }
        r.validate()?;
    }
    if records.len() > u32::MAX as usize {
        return Err(Error::InvalidHeader("too many tensors".into()));
    }

    let table_end = 4 + 2 + 4 + records.iter().map(entry_len).sum::<usize>();
    let total = table_end + records.iter().map(|r| r.payload.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&QTK_MAGIC);
    out.extend_from_slice(&QTK_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());

    let mut offset = table_end as u64;
    for r in records {
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype.code());
        out.push(r.bits);
        out.extend_from_slice(&r.group_size.to_le_bytes());
        out.push(r.shape.len() as u8);
        for d in &r.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u64).to_le_bytes());
        offset += r.payload.len() as u64;
    }
    debug_assert_eq!(out.len(), table_end);
    for r in records {
        out.extend_from_slice(&r.payload);
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut rd = Reader::new(bytes, Error::TruncatedHeader);
    if rd.take(4)? != QTK_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = rd.u16()?;
    if version != QTK_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: QTK_VERSION });
    }
    let count = rd.u32()? as usize;
    if count == 0 {
        return Err(Error::EmptyContainer);
    }

    struct Entry {
        record: TensorRecord,
        offset: u64,
        len: u64,
    }
    // Every entry is at least 33 bytes; bound the allocation by the file size.
    let mut entries = Vec::with_capacity(count.min(bytes.len() / 33 + 1));
    for _ in 0..count {
        let name_len = usize::from(rd.u16()?);
        let name = core::str::from_utf8(rd.take(name_len)?)
            .map_err(|_| Error::InvalidHeader("tensor name is not UTF-8".into()))?
            .into();
        let dtype_code = rd.u8()?;
        let dtype = DType::from_code(dtype_code).ok_or_else(|| Error::InvalidHeader(alloc::format!("unknown dtype {dtype_code}")))?;
        let bits = rd.u8()?;
        let group_size = rd.u32()?;
        let rank = usize::from(rd.u8()?);
        let shape = (0..rank).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
        let offset = rd.u64()?;
        let len = rd.u64()?;
        entries.push(Entry { record: TensorRecord { name, dtype, bits, group_size, shape, payload: Vec::new() }, offset, len });
    }

    let table_end = rd.position() as u64;
    let mut cursor = table_end;
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(entries.len());
    for Entry { mut record, offset, len } in entries {
        if !seen.insert(record.name.clone()) {
            return Err(Error::DuplicateName(record.name));
        }
        if offset < cursor {
            return Err(Error::InvalidHeader(alloc::format!("payload of `{}` overlaps earlier data", record.name)));
        }
        let end = offset.checked_add(len).ok_or_else(|| Error::InvalidHeader("payload offset overflows".into()))?;
        if end > bytes.len() as u64 {
            return Err(Error::TruncatedPayload);
        }
        if len != record.expected_payload_len()? {
            return Err(Error::InvalidTensor { name: record.name, reason: alloc::format!("payload length {len} does not match layout") });
        }
        record.payload = bytes[offset as usize..end as usize].to_vec();
        record.validate()?;
        cursor = end;
        records.push(record);
    }
    Ok(records)
}
