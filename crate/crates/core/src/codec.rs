//! Bit-exact vector encoding: base64 of little-endian `f32`s.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn encode_f32_le(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32_le(encoded: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(encoded.trim()).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(encoded: &str) -> Result<Vec<u8>, String> {
    STANDARD.decode(encoded.trim()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(v in proptest::collection::vec(proptest::num::f32::ANY, 0..64)) {
            let back = decode_f32_le(&encode_f32_le(&v)).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in v.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn ragged_payload_rejected() {
        assert!(decode_f32_le(&STANDARD.encode([1u8, 2, 3])).is_err());
        assert!(decode_f32_le("not base64!").is_err());
    }
}
