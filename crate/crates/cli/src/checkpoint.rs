//! Binary checkpoints.
//!
//! Layout: the 4 bytes `DMU1`, a little-endian `u32` metadata length, that
//! many bytes of JSON metadata, then every tensor as little-endian `f64` in
//! the order the metadata lists them.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use dmu_core::{Network, Parameters, Topology};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"DMU1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: magic {found:?}, expected \"DMU1\"")]
    BadMagic { found: [u8; 4] },
    #[error("checkpoint format version {found}, this build reads {FORMAT_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("tensor {index} is {found}, topology needs {expected}")]
    ShapeMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("checkpoint truncated: {expected} payload bytes declared, {available} present")]
    Truncated { expected: usize, available: usize },
    #[error("{0} trailing bytes after the payload")]
    TrailingBytes(usize),
    #[error("checkpoint metadata: {0}")]
    Metadata(#[from] serde_json::Error),
    #[error("invalid topology in checkpoint: {0}")]
    Topology(#[from] dmu_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub topology: Topology,
    /// Free-form echo of the run that produced the weights.
    pub config: serde_json::Value,
    pub tensors: Vec<TensorShape>,
}

impl Metadata {
    pub fn payload_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum()
    }
}

fn shapes(network: &Network) -> Vec<TensorShape> {
    network
        .tensors()
        .into_iter()
        .map(|t| TensorShape {
            name: t.name,
            shape: [t.rows, t.cols],
        })
        .collect()
}

pub fn encode(network: &Network, config: serde_json::Value) -> Result<Vec<u8>, CheckpointError> {
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        topology: network.topology.clone(),
        config,
        tensors: shapes(network),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * meta.payload_scalars());
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(json.len() as u32)?;
    out.extend_from_slice(&json);
    for t in network.tensors() {
        for &v in t.data {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Network, Metadata), CheckpointError> {
    let mut r = bytes;
    let mut found = [0u8; 4];
    if r.len() < 8 {
        return Err(CheckpointError::Truncated {
            expected: 8,
            available: r.len(),
        });
    }
    r.read_exact(&mut found)?;
    if &found != MAGIC {
        return Err(CheckpointError::BadMagic { found });
    }
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    if r.len() < meta_len {
        return Err(CheckpointError::Truncated {
            expected: meta_len,
            available: r.len(),
        });
    }
    let (json, mut payload) = r.split_at(meta_len);
    let version: VersionOnly = serde_json::from_slice(json)?;
    if version.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version.format_version,
        });
    }
    let meta: Metadata = serde_json::from_slice(json)?;

    let mut network = Network::new(meta.topology.clone(), 0)?;
    let expected = shapes(&network);
    if expected.len() != meta.tensors.len() {
        return Err(CheckpointError::ShapeMismatch {
            index: expected.len().min(meta.tensors.len()),
            expected: format!("{} tensors", expected.len()),
            found: format!("{} tensors", meta.tensors.len()),
        });
    }
    for (index, (e, f)) in expected.iter().zip(&meta.tensors).enumerate() {
        if e != f {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected: format!("{} {:?}", e.name, e.shape),
                found: format!("{} {:?}", f.name, f.shape),
            });
        }
    }
    let needed = 8 * meta.payload_scalars();
    if payload.len() < needed {
        return Err(CheckpointError::Truncated {
            expected: needed,
            available: payload.len(),
        });
    }
    if payload.len() > needed {
        return Err(CheckpointError::TrailingBytes(payload.len() - needed));
    }
    for t in network.tensors_mut() {
        payload.read_f64_into::<LittleEndian>(t)?;
    }
    Ok((network, meta))
}

#[derive(Deserialize)]
struct VersionOnly {
    format_version: u32,
}

pub fn save(path: &Path, network: &Network, config: serde_json::Value) -> Result<(), CheckpointError> {
    let bytes = encode(network, config)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Network, Metadata), CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmu_core::{CellKind, LayerSpec};

    fn net(kind: CellKind, m: usize, n: usize, delays: usize) -> Network {
        Network::new(Topology::single(m, 3, LayerSpec::new(kind, n, delays)), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_idempotent() {
        for kind in CellKind::ALL {
            let original = net(kind, 3, 5, 4);
            let bytes = encode(&original, serde_json::json!({"seed": 11})).unwrap();
            let (back, meta) = decode(&bytes).unwrap();
            assert_eq!(meta.config["seed"], 11);
            let a: Vec<u64> = original.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{kind:?}");
            assert_eq!(encode(&back, meta.config).unwrap(), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dmu");
        let original = net(CellKind::Dmu, 2, 4, 3);
        save(&path, &original, serde_json::Value::Null).unwrap();
        let (back, _) = load(&path).unwrap();
        assert_eq!(back, original);
        save(&path, &back, serde_json::Value::Null).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            encode(&original, serde_json::Value::Null).unwrap()
        );
    }

    #[test]
    fn cell_payload_matches_parameter_formula() {
        let network = net(CellKind::Dmu, 40, 64, 20);
        let bytes = encode(&network, serde_json::Value::Null).unwrap();
        let (_, meta) = decode(&bytes).unwrap();
        let cell: usize = meta
            .tensors
            .iter()
            .filter(|t| t.name.starts_with("layer0."))
            .map(|t| t.shape[0] * t.shape[1])
            .sum();
        assert_eq!(cell, 7940);
        assert_eq!(cell, dmu_core::count_params(CellKind::Dmu, 40, 64, 20));
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let network = net(CellKind::Gru, 2, 3, 0);
        let bytes = encode(&network, serde_json::Value::Null).unwrap();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"DMU2");
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic { .. })));

        let mut bad = bytes.clone();
        let at = bad.windows(18).position(|w| w == b"\"format_version\":1").unwrap();
        bad[at + 17] = b'7';
        assert!(matches!(
            decode(&bad),
            Err(CheckpointError::VersionMismatch { found: 7 })
        ));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        assert!(matches!(decode(&bytes[..6]), Err(CheckpointError::Truncated { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CheckpointError::TrailingBytes(1))));

        // Same byte length, different split of hidden units across tensors.
        let mut meta: Metadata = {
            let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
            serde_json::from_slice(&bytes[8..8 + len]).unwrap()
        };
        meta.tensors[0].shape.swap(0, 1);
        let json = serde_json::to_vec(&meta).unwrap();
        let old_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut swapped = MAGIC.to_vec();
        swapped.extend_from_slice(&(json.len() as u32).to_le_bytes());
        swapped.extend_from_slice(&json);
        swapped.extend_from_slice(&bytes[8 + old_len..]);
        assert!(matches!(
            decode(&swapped),
            Err(CheckpointError::ShapeMismatch { index: 0, .. })
        ));
    }
}
