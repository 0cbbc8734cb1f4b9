//! Binary containers: QTK for named weight tensors, QFS for feature streams.

mod bytes;
mod qfs;
mod qtk;

pub use qfs::{decode_stream, encode_stream, DecodedStream, FeatureStream, QFS_MAGIC};
pub use qtk::{decode_container, encode_container, DType, TensorRecord, QTK_MAGIC, QTK_VERSION};
