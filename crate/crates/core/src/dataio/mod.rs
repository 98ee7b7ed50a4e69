//! Text file formats for skeletons, motion sequences, gloss annotations,
//! sentence embeddings and dataset manifests.
//!
//! Floats are written in scientific notation with 17 significant digits, which
//! parses back to the identical double, so save/load/save is byte-stable.
//! Every writer replaces its target atomically.

mod annotations;
mod manifest;
mod sequences;
mod skeleton_file;

pub use annotations::{
    load_embeddings, load_gloss_annotations, load_vectors, EmbeddingTable, GlossAnnotations, Vocabulary,
};
pub use manifest::{DatasetManifest, ManifestSample};
pub use sequences::{
    load_pose_sequence, load_rotation_sequence, pose_sequence_to_string, rotation_sequence_to_string,
    save_pose_sequence, save_rotation_sequence,
};
pub use skeleton_file::{load_skeleton, parse_skeleton, save_skeleton, skeleton_to_string};

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Canonical decimal form of a double: lossless, fixed width mantissa.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn format_triple(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| format_f64(x)).collect();
    format!("[{}]", parts.join(", "))
}

pub(crate) fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn schema(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn float_format_is_lossless(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = format_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
            let json: f64 = serde_json::from_str(&format_f64(x)).unwrap();
            prop_assert_eq!(json.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
