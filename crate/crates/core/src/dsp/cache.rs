//! Per-utterance feature cache files.
//!
//! Layout: magic `FCACHE1\0`, then little-endian u32 `frames`, `dim`,
//! `valid_frames`, kind code (0 = mfcc13, 1 = logmel26), then
//! `frames * dim` little-endian f32 values, row-major.

use std::fs;
use std::path::Path;

use crate::dsp::features::{FeatureKind, FeatureMatrix};
use crate::error::{Result, SerError};

pub const MAGIC: &[u8; 8] = b"FCACHE1\0";
const HEADER_LEN: usize = 8 + 16;

pub fn encode_feature_cache(fm: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + fm.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [fm.frames as u32, fm.dim as u32, fm.valid_frames as u32, fm.kind.code()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &fm.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_cache(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(SerError::Malformed("not a feature cache file".into()));
    }
    let field = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
    };
    let (frames, dim, valid_frames) = (field(0) as usize, field(1) as usize, field(2) as usize);
    let kind = FeatureKind::from_code(field(3))
        .ok_or_else(|| SerError::Malformed(format!("unknown feature kind {}", field(3))))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * dim * 4 || valid_frames > frames {
        return Err(SerError::Malformed(format!(
            "cache body of {} bytes does not match {frames}x{dim}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(FeatureMatrix {
        frames,
        dim,
        data,
        valid_frames,
        kind,
    })
}

pub fn write_feature_cache(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SerError::io(parent, e))?;
    }
    fs::write(path, encode_feature_cache(fm)).map_err(|e| SerError::io(path, e))
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| SerError::io(path, e))?;
    decode_feature_cache(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let fm = FeatureMatrix {
            frames: 2,
            dim: 1,
            data: vec![1.0, -2.5],
            valid_frames: 1,
            kind: FeatureKind::Logmel26,
        };
        let bytes = encode_feature_cache(&fm);
        let expected: Vec<u8> = [
            b"FCACHE1\0".as_slice(),
            &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0],
            &1.0f32.to_le_bytes(),
            &(-2.5f32).to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        assert!(decode_feature_cache(b"FCACHE2\0").is_err());
        let mut bytes = encode_feature_cache(&FeatureMatrix {
            frames: 1,
            dim: 2,
            data: vec![0.0, 0.0],
            valid_frames: 1,
            kind: FeatureKind::Mfcc13,
        });
        bytes.pop();
        assert!(decode_feature_cache(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_at_f32_precision(
            frames in 0usize..6,
            dim in 1usize..5,
            seed in prop::collection::vec(-1e3f32..1e3, 30),
            logmel in any::<bool>(),
        ) {
            let data: Vec<f64> = seed.iter().cycle().take(frames * dim).map(|&v| v as f64).collect();
            let fm = FeatureMatrix {
                frames,
                dim,
                data,
                valid_frames: frames / 2,
                kind: if logmel { FeatureKind::Logmel26 } else { FeatureKind::Mfcc13 },
            };
            prop_assert_eq!(decode_feature_cache(&encode_feature_cache(&fm)).unwrap(), fm);
        }
    }
}
