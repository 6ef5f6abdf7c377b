//! Binary feature files.
//!
//! Layout (little-endian): `"WFLT"`, version `u32`, `n_frames u32`,
//! `dim u32`, the speech mask packed LSB-first into `⌈n_frames/8⌉` bytes,
//! then `n_frames × dim` row-major `f64`.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::sad::FrameMask;

use super::atomic_write;

pub const FEATURES_MAGIC: &[u8; 4] = b"WFLT";
pub const FEATURES_VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_features(fm: &FeatureMatrix) -> Result<Vec<u8>> {
    let (n, d) = fm.vectors.dim();
    if fm.mask.n_frames() != n {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} frames, matrix {n}",
            fm.mask.n_frames()
        )));
    }
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER + n.div_ceil(8) + 8 * n * d);
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
    out.extend_from_slice(&as_u32(n, "n_frames")?.to_le_bytes());
    out.extend_from_slice(&as_u32(d, "dim")?.to_le_bytes());
    let mut bits = vec![0u8; n.div_ceil(8)];
    for i in fm.mask.selected() {
        bits[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bits);
    for v in fm.vectors.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Validates the whole buffer before building anything.
pub fn decode_features(bytes: &[u8], utterance_id: &str) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER {
        return Err(Error::Truncated(format!("feature header needs {HEADER} bytes, got {}", bytes.len())));
    }
    if &bytes[..4] != FEATURES_MAGIC {
        return Err(Error::Format(format!("bad feature magic {:?}", &bytes[..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURES_VERSION {
        return Err(Error::UnsupportedVersion(version as u64));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    let mask_len = n.div_ceil(8);
    let want = HEADER + mask_len + 8 * n * d;
    if bytes.len() != want {
        return Err(Error::Truncated(format!(
            "{n} frames × {d} dims needs {want} bytes, file has {}",
            bytes.len()
        )));
    }
    let bits = &bytes[HEADER..HEADER + mask_len];
    let flags = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let values = bytes[HEADER + mask_len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(FeatureMatrix {
        utterance_id: utterance_id.to_string(),
        vectors: Array2::from_shape_vec((n, d), values).expect("length checked"),
        mask: FrameMask { flags },
    })
}

pub fn write_features(fm: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = encode_features(fm)?;
    atomic_write(path, |w| Ok(w.write_all(&bytes)?))
}

/// Reads a feature file; the utterance id is the file stem.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&bytes, &id).map_err(|e| match e {
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix {
            utterance_id: "u1".into(),
            vectors: Array2::from_shape_fn((11, 3), |(i, j)| (i * 3 + j) as f64 / 7.0 - 1e-300),
            mask: FrameMask {
                flags: (0..11).map(|i| i % 3 != 1).collect(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u1.wflt");
        let fm = sample();
        write_features(&fm, &p).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back, fm);
        assert!(back.vectors.iter().zip(fm.vectors.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_matrix() {
        let fm = FeatureMatrix {
            utterance_id: "e".into(),
            vectors: Array2::zeros((0, 57)),
            mask: FrameMask { flags: vec![] },
        };
        let b = encode_features(&fm).unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(decode_features(&b, "e").unwrap(), fm);
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = encode_features(&sample()).unwrap();
        let short = &b[..b.len() - 1];
        assert!(matches!(decode_features(short, "x"), Err(Error::Truncated(_))));
        b[4] = 2;
        assert!(matches!(decode_features(&b, "x"), Err(Error::UnsupportedVersion(2))));
        b[0] = b'X';
        assert!(matches!(decode_features(&b, "x"), Err(Error::Format(_))));
    }
}
