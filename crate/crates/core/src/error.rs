use alloc::string::String;

/// Errors raised by the core quantization, container and adaptation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty container")]
    EmptyContainer,
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("unsupported bits value {0} (expected 1, 2, 3, 4 or 8)")]
    UnsupportedBits(u8),
    #[error("unsupported group size {0} (expected 8..=512)")]
    UnsupportedGroupSize(usize),
    #[error("unsupported tensor rank {0} (expected 1 or 2)")]
    UnsupportedRank(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("label {label} at record {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: u32, classes: u32 },
    #[error("sample count mismatch: header says {header}, found {found}")]
    SampleCountMismatch { header: u64, found: u64 },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: alloc::vec::Vec<usize>, right: alloc::vec::Vec<usize> },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("code {code} out of range for {bits}-bit packing")]
    CodeOutOfRange { code: i64, bits: u8 },
    #[error("corrupt packed length: expected {expected} bytes, found {found}")]
    CorruptPacked { expected: usize, found: usize },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` has no modality tag (expected `vision.` or `text.` prefix)")]
    UntaggedLayer(String),
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
