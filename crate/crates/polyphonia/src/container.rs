//! Self-describing binary tensor container.
//!
//! Layout: one UTF-8 JSON header line terminated by `\n`, then the raw
//! payload. The header is
//!
//! ```json
//! {"dtype":"f32","shape":[4,8],"order":"row-major","endian":"little","kind":"irm_mel"}
//! ```
//!
//! and the payload is exactly `prod(shape)` IEEE-754 binary32 values,
//! row-major, little-endian. `kind` is an optional free-form tag (prior kind,
//! logit block, ...). Write-then-read is bitwise lossless.

use crate::error::{PolyError, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
    endian: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

/// An n-dimensional f32 tensor plus its metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    shape: Vec<usize>,
    kind: Option<String>,
    data: Vec<f32>,
}

impl TensorContainer {
    pub fn new(shape: Vec<usize>, data: Vec<f32>, kind: Option<String>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(PolyError::Format(format!(
                "tensor shape must be nonempty with positive dims, got {shape:?}"
            )));
        }
        if data.len() != expect {
            return Err(PolyError::Format(format!(
                "payload holds {} values but shape {:?} needs {}",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Self { shape, kind, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn kind(&self) -> Option<&str> {
        self.kind.as_deref()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Serialize to the on-disk byte layout (header line + payload).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: "f32".to_string(),
            shape: self.shape.clone(),
            order: "row-major".to_string(),
            endian: "little".to_string(),
            kind: self.kind.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        Self::read(&mut reader)
    }

    fn read<R: BufRead>(reader: &mut R) -> Result<Self> {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if !line.ends_with('\n') {
            return Err(PolyError::Format("missing newline after header".into()));
        }
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.dtype != "f32" {
            return Err(PolyError::Format(format!(
                "unsupported dtype {:?}",
                header.dtype
            )));
        }
        if header.order != "row-major" {
            return Err(PolyError::Format(format!(
                "unsupported order {:?}",
                header.order
            )));
        }
        if header.endian != "little" {
            return Err(PolyError::Format(format!(
                "unsupported endian {:?}",
                header.endian
            )));
        }
        let count: usize = header.shape.iter().product();
        let mut payload = vec![0u8; count * 4];
        reader.read_exact(&mut payload)?;
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing)? != 0 {
            return Err(PolyError::Format("trailing bytes after payload".into()));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(header.shape, data, header.kind)
    }

    /// Write atomically (temp file + rename in the target directory).
    pub fn write_to(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        Self::read(&mut reader)
    }
}

/// Write `bytes` to `path` via a temp file in the same directory plus rename,
/// so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "tensor".to_string())
        )),
        None => std::path::PathBuf::from(format!(".{}.tmp", path.display())),
    };
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_preserves_bits() {
        let data = vec![0.0f32, -1.5, 3.25, f32::MIN_POSITIVE, 1e30];
        let t = TensorContainer::new(vec![5], data.clone(), Some("irm".into())).unwrap();
        let back = TensorContainer::from_bytes(&t.to_bytes().unwrap()).unwrap();
        assert_eq!(back.kind(), Some("irm"));
        for (a, b) in data.iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_payload_shape_disagreement() {
        assert!(TensorContainer::new(vec![2, 3], vec![0.0; 5], None).is_err());
        assert!(TensorContainer::new(vec![0], vec![], None).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let t = TensorContainer::new(vec![4], vec![1.0; 4], None).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(TensorContainer::from_bytes(&bytes).is_err());
    }

    #[test]
    fn rejects_trailing_garbage() {
        let t = TensorContainer::new(vec![2], vec![1.0, 2.0], None).unwrap();
        let mut bytes = t.to_bytes().unwrap();
        bytes.push(0xAB);
        assert!(TensorContainer::from_bytes(&bytes).is_err());
    }

    #[test]
    fn file_round_trip_is_atomic_and_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tns");
        let t = TensorContainer::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0], None).unwrap();
        t.write_to(&path).unwrap();
        let back = TensorContainer::read_from(&path).unwrap();
        assert_eq!(t, back);
        // no temp file left behind
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn prop_round_trip(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let n = rows * cols;
            let data: Vec<f32> = (0..n)
                .map(|i| ((seed as f32 + i as f32) * 0.37).sin() * 1e3)
                .collect();
            let t = TensorContainer::new(vec![rows, cols], data, Some("x".into())).unwrap();
            let back = TensorContainer::from_bytes(&t.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
