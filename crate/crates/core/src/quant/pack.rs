//! LSB-first bit packing of unsigned codes.
//!
//! Code `i` occupies bits `[i*b, (i+1)*b)` of a little-endian bit stream, so
//! 4-bit codes are nibble pairs and 3-bit codes pack 8 codes into 3 bytes.

use alloc::vec::Vec;

use super::BitWidth;
use crate::error::{Error, Result};

pub fn packed_len(n: usize, bits: BitWidth) -> usize {
    (n * usize::from(bits.get())).div_ceil(8)
}

pub fn pack_codes(codes: &[u8], bits: BitWidth) -> Result<Vec<u8>> {
    let b = usize::from(bits.get());
    let max = bits.max_code();
    let mut out = alloc::vec![0u8; packed_len(codes.len(), bits)];
    for (i, &code) in codes.iter().enumerate() {
        if u32::from(code) > max {
            return Err(Error::CodeOutOfRange { code: i64::from(code), bits: bits.get() });
        }
        let pos = i * b;
        let (byte, off) = (pos / 8, pos % 8);
        let wide = u16::from(code) << off;
        out[byte] |= wide as u8;
        if off + b > 8 {
            out[byte + 1] |= (wide >> 8) as u8;
        }
    }
    Ok(out)
}

/// Reads code `i` from a packed stream. The caller guarantees `i` is in range.
#[inline]
pub fn code_at(packed: &[u8], bits: BitWidth, i: usize) -> u8 {
    let b = usize::from(bits.get());
    let pos = i * b;
    let (byte, off) = (pos / 8, pos % 8);
    let mut wide = u16::from(packed[byte]);
    if off + b > 8 {
        wide |= u16::from(packed[byte + 1]) << 8;
    }
    ((wide >> off) & ((1u16 << b) - 1)) as u8
}

pub fn unpack_codes(packed: &[u8], bits: BitWidth, n: usize) -> Result<Vec<u8>> {
    let expected = packed_len(n, bits);
    if packed.len() != expected {
        return Err(Error::CorruptPacked { expected, found: packed.len() });
    }
    Ok((0..n).map(|i| code_at(packed, bits, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(b: u8) -> BitWidth {
        BitWidth::try_from(b).unwrap()
    }

    #[test]
    fn nibbles_are_lsb_first() {
        assert_eq!(pack_codes(&[1, 2, 3], bits(4)).unwrap(), [0x21, 0x03]);
    }

    #[test]
    fn three_bit_all_ones_block() {
        assert_eq!(pack_codes(&[7; 8], bits(3)).unwrap(), [0xFF, 0xFF, 0xFF]);
    }

    #[test]
    fn three_bit_straddles_bytes() {
        let codes = [5u8, 2, 7, 0, 1, 6, 3, 4, 2];
        let packed = pack_codes(&codes, bits(3)).unwrap();
        assert_eq!(packed.len(), 4);
        assert_eq!(unpack_codes(&packed, bits(3), codes.len()).unwrap(), codes);
    }

    #[test]
    fn lengths() {
        assert_eq!(packed_len(128, bits(4)), 64);
        assert_eq!(packed_len(8, bits(3)), 3);
        assert_eq!(packed_len(9, bits(3)), 4);
        assert_eq!(packed_len(9, bits(1)), 2);
        assert_eq!(packed_len(0, bits(8)), 0);
    }

    #[test]
    fn out_of_range_code_rejected() {
        assert_eq!(pack_codes(&[4], bits(2)), Err(Error::CodeOutOfRange { code: 4, bits: 2 }));
        assert_eq!(pack_codes(&[2], bits(1)), Err(Error::CodeOutOfRange { code: 2, bits: 1 }));
    }

    #[test]
    fn wrong_packed_length_rejected() {
        assert_eq!(unpack_codes(&[0, 0], bits(4), 5), Err(Error::CorruptPacked { expected: 3, found: 2 }));
    }
}
