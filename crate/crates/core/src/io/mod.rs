//! On-disk formats: audio, model documents, feature files, trial and score
//! lists, corpus manifests.

mod features_file;
mod manifest;
mod model;
mod trials;
mod wav;

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

pub use features_file::{decode_features, encode_features, read_features, write_features, FEATURES_MAGIC, FEATURES_VERSION};
pub use manifest::{CorpusManifest, ManifestEntry};
pub use model::{
    load_filterbank, load_gmm, load_model, load_scale, save_model, ModelDocument, ModelKind, Payload, Provenance,
    SCHEMA_VERSION,
};
pub use trials::{read_scores, read_trials, write_scores, Trial};
pub use wav::{load_wav, write_wav_f32, write_wav_pcm16};

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
