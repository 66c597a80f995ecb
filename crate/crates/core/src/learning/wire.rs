//! Binary model format.
//!
//! ```text
//! "GDFL"            4 bytes
//! version           u16 LE (= 1)
//! layer count L     u16 LE
//! L x (rows, cols, bias_len) as u32 LE
//! P x f32 LE        all values in layer order
//! ```
//!
//! Total length is `8 + 12 L + 4 P`.

use super::{LayerShape, ModelParams};

pub const MAGIC: [u8; 4] = *b"GDFL";
pub const WIRE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported wire version {0}")]
    VersionMismatch(u16),
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid model in payload: {0}")]
    InvalidModel(String),
}

pub fn serialized_len(layers: usize, params: usize) -> usize {
    8 + 12 * layers + 4 * params
}

pub fn serialize_model(params: &ModelParams) -> Vec<u8> {
    let layers = params.layers();
    let mut out = Vec::with_capacity(serialized_len(layers.len(), params.param_count()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u16).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&l.rows.to_le_bytes());
        out.extend_from_slice(&l.cols.to_le_bytes());
        out.extend_from_slice(&l.bias.to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ModelParams, WireError> {
    if bytes.len() < 8 {
        return Err(WireError::LengthMismatch {
            expected: 8,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic(bytes[..4].to_vec()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != WIRE_VERSION {
        return Err(WireError::VersionMismatch(version));
    }
    let layer_count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header_len = 8 + 12 * layer_count;
    if bytes.len() < header_len {
        return Err(WireError::LengthMismatch {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let layers: Vec<LayerShape> = (0..layer_count)
        .map(|l| {
            let at = 8 + 12 * l;
            LayerShape {
                rows: u32_at(at),
                cols: u32_at(at + 4),
                bias: u32_at(at + 8),
            }
        })
        .collect();
    let param_count: usize = layers.iter().map(LayerShape::param_count).sum();
    let expected = serialized_len(layer_count, param_count);
    if bytes.len() != expected {
        return Err(WireError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    ModelParams::new(layers, values).map_err(|e| WireError::InvalidModel(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn mlp_2_4_2() -> ModelParams {
        let mut r = rng::from_seed(1);
        ModelParams::random_uniform(ModelParams::architecture(2, &[4], 2), 0.1, &mut r)
    }

    #[test]
    fn length_of_2_4_2() {
        let bytes = serialize_model(&mlp_2_4_2());
        assert_eq!(bytes.len(), 8 + 24 + 88);
        assert_eq!(bytes.len(), 120);
        assert_eq!(&bytes[..4], b"GDFL");
        assert_eq!(&bytes[4..8], &[1, 0, 2, 0]);
        assert_eq!(&bytes[8..20], &[2, 0, 0, 0, 4, 0, 0, 0, 4, 0, 0, 0]);
    }

    #[test]
    fn equal_models_serialize_identically() {
        assert_eq!(serialize_model(&mlp_2_4_2()), serialize_model(&mlp_2_4_2()));
    }

    #[test]
    fn rejects_corrupt_payloads() {
        let good = serialize_model(&mlp_2_4_2());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            deserialize_model(&bad),
            Err(WireError::BadMagic(_))
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(deserialize_model(&bad), Err(WireError::VersionMismatch(2)));
        assert_eq!(
            deserialize_model(&good[..good.len() - 1]),
            Err(WireError::LengthMismatch {
                expected: 120,
                actual: 119
            })
        );
        assert!(matches!(
            deserialize_model(&good[..3]),
            Err(WireError::LengthMismatch { .. })
        ));
        let mut long = good;
        long.push(0);
        assert!(matches!(
            deserialize_model(&long),
            Err(WireError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(
            inputs in 1usize..6,
            hidden in proptest::collection::vec(1usize..6, 0..3),
            outputs in 1usize..5,
            seed: u64,
        ) {
            let mut r = rng::from_seed(seed);
            let m = ModelParams::random_uniform(ModelParams::architecture(inputs, &hidden, outputs), 3.0, &mut r);
            let bytes = serialize_model(&m);
            prop_assert_eq!(bytes.len(), serialized_len(m.layers().len(), m.param_count()));
            prop_assert_eq!(deserialize_model(&bytes).unwrap(), m);
        }
    }
}
