//! Flat little-endian f64 volumes with a JSON sidecar (`<name>.f64` plus
//! `<name>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub dtype: String,
    /// `image`, `motion` or `sensor-data`.
    pub kind: String,
    pub units: String,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Sidecar {
    pub fn new(kind: &str, units: &str, shape: &[usize], axes: &[&str], provenance: serde_json::Value) -> Self {
        Sidecar {
            shape: shape.to_vec(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            dtype: DTYPE.into(),
            kind: kind.into(),
            units: units.into(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Writes `values` to `path` (conventionally `*.f64`) and its sidecar next to it.
pub fn write_volume(path: &Path, values: &[f64], meta: &Sidecar) -> CliResult<()> {
    if values.len() != meta.len() {
        return Err(CliError::Io(format!(
            "volume {} has {} values but shape {:?}",
            path.display(),
            values.len(),
            meta.shape
        )));
    }
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta).expect("sidecar serializes"))?;
    Ok(())
}

/// Reads a volume and its sidecar. Missing or inconsistent files are config
/// errors: they are inputs named by the user.
pub fn read_volume(path: &Path) -> CliResult<(Vec<f64>, Sidecar)> {
    let side = sidecar_path(path);
    let meta: Sidecar = serde_json::from_str(
        &fs::read_to_string(&side).map_err(|e| CliError::config(format!("{}: {e}", side.display())))?,
    )
    .map_err(|e| CliError::config(format!("{}: {e}", side.display())))?;
    if meta.dtype != DTYPE {
        return Err(CliError::config(format!("{}: unsupported dtype {}", side.display(), meta.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if bytes.len() != meta.len() * 8 {
        return Err(CliError::config(format!(
            "{}: {} bytes, sidecar shape {:?} needs {}",
            path.display(),
            bytes.len(),
            meta.shape,
            meta.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        let vals = vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300, -3.25, 0.1];
        let meta = Sidecar::new("image", "a.u.", &[1, 2, 3], &["frame", "y", "x"], serde_json::json!({"seed": 1}));
        write_volume(&p, &vals, &meta).unwrap();
        let (back, m) = read_volume(&p).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // little-endian on disk
        let raw = fs::read(&p).unwrap();
        assert_eq!(&raw[..8], &1.5f64.to_le_bytes());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        let meta = Sidecar::new("image", "a.u.", &[2, 2], &["y", "x"], serde_json::Value::Null);
        assert!(write_volume(&p, &[1.0; 3], &meta).is_err());
        write_volume(&p, &[1.0; 4], &meta).unwrap();
        fs::write(&p, [0u8; 24]).unwrap();
        assert!(matches!(read_volume(&p), Err(CliError::Config(_))));
        assert!(matches!(read_volume(&dir.path().join("missing.f64")), Err(CliError::Config(_))));
    }
}
