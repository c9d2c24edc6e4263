//! CRC-32/MPEG-2 (ITU-T H.222.0 / ISO 13818-1 Annex A).
//!
//! Polynomial 0x04C11DB7, initial value 0xFFFFFFFF, no bit reflection, no
//! final XOR. Not the zlib/ISO 3309 CRC-32.

const POLY: u32 = 0x04C1_1DB7;

const CRC_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0u32;
    while i < 256 {
        let mut crc = i << 24;
        let mut j = 0;
        while j < 8 {
            crc = if crc & 0x8000_0000 != 0 {
                (crc << 1) ^ POLY
            } else {
                crc << 1
            };
            j += 1;
        }
        table[i as usize] = crc;
        i += 1;
    }
    table
};

/// CRC-32/MPEG-2 over a byte slice.
pub fn crc32_mpeg(data: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &byte in data {
        crc = (crc << 8) ^ CRC_TABLE[((crc >> 24) ^ byte as u32) as usize];
    }
    crc
}

/// A PSI section is intact when the CRC over all of its bytes, including the
/// stored 4-byte trailer, comes out zero.
pub fn section_crc_ok(section: &[u8]) -> bool {
    crc32_mpeg(section) == 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Independent bit-by-bit polynomial long division.
    fn crc32_bitwise(data: &[u8]) -> u32 {
        let mut crc: u32 = 0xFFFF_FFFF;
        for &byte in data {
            crc ^= (byte as u32) << 24;
            for _ in 0..8 {
                crc = if crc & 0x8000_0000 != 0 {
                    (crc << 1) ^ POLY
                } else {
                    crc << 1
                };
            }
        }
        crc
    }

    #[test]
    fn check_value() {
        assert_eq!(crc32_bitwise(b"123456789"), 0x0376_E6E7);
        assert_eq!(crc32_mpeg(b"123456789"), 0x0376_E6E7);
    }

    #[test]
    fn empty_input_is_initial_value() {
        assert_eq!(crc32_mpeg(b""), 0xFFFF_FFFF);
    }

    #[test]
    fn table_matches_bitwise_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6372_6333_32);
        for _ in 0..200 {
            let len = rng.gen_range(0..512);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(crc32_mpeg(&data), crc32_bitwise(&data));
        }
    }

    #[test]
    fn appended_crc_verifies_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let len = rng.gen_range(1..256);
            let mut data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let crc = crc32_mpeg(&data);
            data.extend_from_slice(&crc.to_be_bytes());
            assert!(section_crc_ok(&data));
            assert_eq!(crc32_bitwise(&data), 0);
            data[0] ^= 0x01;
            assert!(!section_crc_ok(&data));
        }
    }
}
