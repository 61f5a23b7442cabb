//! Self-describing binary container for operators, kernels, tables, and path
//! ensembles.
//!
//! Layout: 4-byte magic `NLB1`, a little-endian `u32` header length, a UTF-8
//! JSON header, then the raw little-endian payload. The header carries enough
//! metadata (object name, dtype, shape, grid, producing-spec hash, run-config
//! hash, free-form notes) to interpret the payload without the producing
//! code, and the config hash lets consumers refuse to mix artifacts from
//! different runs.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"NLB1";

/// JSON header preceding the payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContainerHeader {
    /// What the payload is, e.g. "operator-matrix", "heat-kernel",
    /// "pair-potential", "path-ensemble".
    pub object: String,
    /// Scalar encoding: "f64le" or "u32le".
    pub dtype: String,
    /// Semantic shape; product of entries equals the payload length.
    pub shape: Vec<usize>,
    /// Memory order of the payload relative to `shape`: "column-major" for
    /// matrices (nalgebra native), "row-major" otherwise.
    pub order: String,
    /// Lattice the object lives on, when applicable.
    pub grid: Option<Grid>,
    /// Content hash of the coefficient specification that produced the
    /// object; empty when not derived from one.
    #[serde(default)]
    pub spec_hash: String,
    /// Canonical hash of the producing run configuration; empty for direct
    /// library use.
    #[serde(default)]
    pub config_hash: String,
    /// Free-form annotations: Fourier and kernel conventions, seeds, column
    /// meanings. Sorted map so serialization is canonical.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl ContainerHeader {
    pub fn new(object: &str, shape: Vec<usize>) -> Self {
        ContainerHeader {
            object: object.to_string(),
            dtype: String::new(),
            shape,
            order: "row-major".to_string(),
            grid: None,
            spec_hash: String::new(),
            config_hash: String::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn with_hashes(mut self, spec_hash: &str, config_hash: &str) -> Self {
        self.spec_hash = spec_hash.to_string();
        self.config_hash = config_hash.to_string();
        self
    }

    pub fn with_order(mut self, order: &str) -> Self {
        self.order = order.to_string();
        self
    }

    pub fn with_note(mut self, key: &str, value: &str) -> Self {
        self.notes.insert(key.to_string(), value.to_string());
        self
    }

    fn expected_len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Raw payload scalars.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            Payload::F64(_) => "f64le",
            Payload::U32(_) => "u32le",
        }
    }

    /// The floats, or an error naming the actual dtype.
    pub fn as_f64(&self) -> Result<&[f64]> {
        match self {
            Payload::F64(v) => Ok(v),
            Payload::U32(_) => Err(Error::Container("expected f64le payload, found u32le".into())),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match self {
            Payload::U32(v) => Ok(v),
            Payload::F64(_) => Err(Error::Container("expected u32le payload, found f64le".into())),
        }
    }
}

/// Serialize header + payload to `path`. The header's dtype is overwritten
/// from the payload so the two can never disagree on disk.
pub fn write_container(path: &Path, header: &ContainerHeader, payload: &Payload) -> Result<()> {
    if header.expected_len() != payload.len() {
        return Err(Error::Container(format!(
            "shape {:?} wants {} scalars, payload has {}",
            header.shape,
            header.expected_len(),
            payload.len()
        )));
    }
    let mut header = header.clone();
    header.dtype = payload.dtype().to_string();
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Container(format!("header encode: {e}")))?;
    let header_len = u32::try_from(header_bytes.len())
        .map_err(|_| Error::Container("header exceeds u32 length".into()))?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&header_len.to_le_bytes())?;
    file.write_all(&header_bytes)?;
    match payload {
        Payload::F64(values) => {
            for v in values {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Payload::U32(values) => {
            for v in values {
                file.write_all(&v.to_le_bytes())?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

/// Read a container back; verifies magic, header form, dtype, and that the
/// payload length matches the declared shape exactly.
pub fn read_container(path: &Path) -> Result<(ContainerHeader, Payload)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container(format!("bad magic {magic:?}")));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: ContainerHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Container(format!("header decode: {e}")))?;

    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let want = header.expected_len();
    let payload = match header.dtype.as_str() {
        "f64le" => {
            if rest.len() != want * 8 {
                return Err(Error::Container(format!(
                    "payload has {} bytes, shape {:?} wants {}",
                    rest.len(),
                    header.shape,
                    want * 8
                )));
            }
            Payload::F64(
                rest.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "u32le" => {
            if rest.len() != want * 4 {
                return Err(Error::Container(format!(
                    "payload has {} bytes, shape {:?} wants {}",
                    rest.len(),
                    header.shape,
                    want * 4
                )));
            }
            Payload::U32(
                rest.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        other => return Err(Error::Container(format!("unknown dtype {other:?}"))),
    };
    Ok((header, payload))
}

/// Read a container and refuse it unless its recorded config hash matches
/// `expected` — the guard against mixing artifacts from different runs.
pub fn read_expecting(path: &Path, expected: &str) -> Result<(ContainerHeader, Payload)> {
    let (header, payload) = read_container(path)?;
    if header.config_hash != expected {
        return Err(Error::HashMismatch {
            found: header.config_hash,
            expected: expected.to_string(),
        });
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("nlb1-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn matrix_roundtrip_preserves_everything() {
        let grid = Grid::dirichlet(2, 1.5, 5).unwrap();
        let header = ContainerHeader::new("operator-matrix", vec![3, 2])
            .with_grid(grid)
            .with_order("column-major")
            .with_hashes("spec123", "cfg456")
            .with_note("kernel_convention", "matrix");
        let payload = Payload::F64(vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 6.0]);
        let path = tmp("roundtrip.nlb1");
        write_container(&path, &header, &payload).unwrap();
        let (back_header, back_payload) = read_container(&path).unwrap();
        assert_eq!(back_header.object, "operator-matrix");
        assert_eq!(back_header.dtype, "f64le");
        assert_eq!(back_header.shape, vec![3, 2]);
        assert_eq!(back_header.order, "column-major");
        assert_eq!(back_header.grid, Some(grid));
        assert_eq!(back_header.spec_hash, "spec123");
        assert_eq!(back_header.config_hash, "cfg456");
        assert_eq!(back_header.notes["kernel_convention"], "matrix");
        assert_eq!(back_payload, payload);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn index_payload_roundtrips() {
        let header = ContainerHeader::new("path-ensemble", vec![2, 3]);
        let payload = Payload::U32(vec![0, 7, 3, 1, 2, 4]);
        let path = tmp("indices.nlb1");
        write_container(&path, &header, &payload).unwrap();
        let (h, p) = read_container(&path).unwrap();
        assert_eq!(h.dtype, "u32le");
        assert_eq!(p.as_u32().unwrap(), &[0, 7, 3, 1, 2, 4]);
        assert!(p.as_f64().is_err());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn shape_payload_mismatch_is_refused_on_write() {
        let header = ContainerHeader::new("x", vec![4]);
        let payload = Payload::F64(vec![1.0; 3]);
        match write_container(&tmp("mismatch.nlb1"), &header, &payload) {
            Err(Error::Container(msg)) => assert!(msg.contains("wants 4")),
            other => panic!("expected container error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_and_truncation_are_refused() {
        let header = ContainerHeader::new("x", vec![2]);
        let payload = Payload::F64(vec![1.0, 2.0]);
        let path = tmp("corrupt.nlb1");
        write_container(&path, &header, &payload).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::Container(_))));

        bytes[0] = b'N';
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_container(&path).is_err());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn config_hash_gate_refuses_foreign_artifacts() {
        let header = ContainerHeader::new("x", vec![1]).with_hashes("", "run-a");
        let payload = Payload::F64(vec![42.0]);
        let path = tmp("hashgate.nlb1");
        write_container(&path, &header, &payload).unwrap();
        assert!(read_expecting(&path, "run-a").is_ok());
        match read_expecting(&path, "run-b") {
            Err(Error::HashMismatch { found, expected }) => {
                assert_eq!(found, "run-a");
                assert_eq!(expected, "run-b");
            }
            other => panic!("expected hash mismatch, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
