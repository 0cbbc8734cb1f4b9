//! File wrappers around the byte-level container codecs.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use qtta_core::format::{decode_container, decode_stream, encode_container, encode_stream, DecodedStream, FeatureStream, TensorRecord};

use crate::error::{CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| match source.kind() {
        ErrorKind::NotFound => CliError::NotFound(path.to_path_buf()),
        _ => CliError::Read { path: path.to_path_buf(), source },
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

/// Writes a QTK container and returns the number of bytes written.
pub fn write_container(records: &[TensorRecord], path: &Path) -> Result<usize> {
    let bytes = encode_container(records)?;
    write_bytes(path, &bytes)?;
    Ok(bytes.len())
}

pub fn read_container(path: &Path) -> Result<Vec<TensorRecord>> {
    decode_container(&read_bytes(path)?).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}

pub fn write_stream(stream: &FeatureStream, path: &Path) -> Result<usize> {
    let bytes = encode_stream(stream);
    write_bytes(path, &bytes)?;
    Ok(bytes.len())
}

pub fn read_stream(path: &Path) -> Result<DecodedStream> {
    decode_stream(&read_bytes(path)?).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}
