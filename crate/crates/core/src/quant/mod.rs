//! Group-wise weight quantization.
//!
//! Two quantizer families share one storage layout:
//!
//! * **asymmetric** – codes in `[0, 2^b - 1]` with a per-group scale `s` and
//!   integer zero-point `z`, reconstructed as `s * (q - z)`;
//! * **symmetric** – codes in `[-q_max, q_max]` with `q_max = 2^(b-1) - 1`,
//!   zero-point fixed at zero, reconstructed as `s * q`.
//!
//! Scale and zero-point are fitted per group by alternating exact
//! least-squares updates, which needs no calibration data.

mod fit;
mod metrics;
mod pack;
mod quantized;

pub use fit::{fit_asymmetric, fit_asymmetric_with, fit_symmetric, fit_symmetric_with, GroupFit, SCALE_FLOOR};
pub use metrics::{reconstruction_error, ReconstructionError};
pub use pack::{code_at, pack_codes, packed_len, unpack_codes};
pub use quantized::{dequantize_tensor, quantize_tensor, quantize_tensor_with_error, GroupLayout, QuantizedTensor};

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A supported code width: 1, 2, 3, 4 or 8 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitWidth(u8);

impl BitWidth {
    pub const ALL: [BitWidth; 5] = [BitWidth(1), BitWidth(2), BitWidth(3), BitWidth(4), BitWidth(8)];

    pub const fn get(self) -> u8 {
        self.0
    }

    /// Largest unsigned code, `2^b - 1`.
    pub const fn max_code(self) -> u32 {
        (1u32 << self.0) - 1
    }

    /// Largest symmetric magnitude, `2^(b-1) - 1`. Zero at one bit.
    pub const fn symmetric_max(self) -> u32 {
        (1u32 << (self.0 - 1)) - 1
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = Error;

    fn try_from(bits: u8) -> Result<Self, Error> {
        match bits {
            1 | 2 | 3 | 4 | 8 => Ok(BitWidth(bits)),
            other => Err(Error::UnsupportedBits(other)),
        }
    }
}

impl From<BitWidth> for u8 {
    fn from(b: BitWidth) -> u8 {
        b.0
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Asymmetric,
    Symmetric,
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantMode::Asymmetric => "asymmetric",
            QuantMode::Symmetric => "symmetric",
        })
    }
}

impl core::str::FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "asymmetric" | "asym" => Ok(QuantMode::Asymmetric),
            "symmetric" | "sym" => Ok(QuantMode::Symmetric),
            other => Err(Error::InvalidConfig(alloc::format!("unknown quantization mode `{other}`"))),
        }
    }
}

pub const MIN_GROUP_SIZE: usize = 8;
pub const MAX_GROUP_SIZE: usize = 512;

/// Stopping rule for the alternating scale/zero-point refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: u32,
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 20, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: BitWidth,
    pub group_size: usize,
    pub mode: QuantMode,
    #[serde(default = "default_max_iters")]
    pub max_iters: u32,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_max_iters() -> u32 {
    FitOptions::default().max_iters
}

fn default_rel_tol() -> f64 {
    FitOptions::default().rel_tol
}

impl QuantConfig {
    pub fn new(bits: u8, group_size: usize, mode: QuantMode) -> Result<Self, Error> {
        let cfg = Self {
            bits: BitWidth::try_from(bits)?,
            group_size,
            mode,
            max_iters: default_max_iters(),
            rel_tol: default_rel_tol(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn asymmetric(bits: u8, group_size: usize) -> Result<Self, Error> {
        Self::new(bits, group_size, QuantMode::Asymmetric)
    }

    pub fn symmetric(bits: u8, group_size: usize) -> Result<Self, Error> {
        Self::new(bits, group_size, QuantMode::Symmetric)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(MIN_GROUP_SIZE..=MAX_GROUP_SIZE).contains(&self.group_size) {
            return Err(Error::UnsupportedGroupSize(self.group_size));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::InvalidConfig(alloc::format!("rel_tol must be >= 0, got {}", self.rel_tol)));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { max_iters: self.max_iters, rel_tol: self.rel_tol }
    }
}
