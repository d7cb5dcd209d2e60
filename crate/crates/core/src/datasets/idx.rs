use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{SequenceBatch, Target};
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};

/// Unsigned-byte, 3-dimensional (count × rows × cols).
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 1-dimensional.
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Images with pixels scaled from bytes to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// One row-major image per entry, `rows * cols` values each.
    pub pixels: Vec<Vec<f64>>,
}

fn read_header(cursor: &mut Cursor<&[u8]>, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let available = cursor.get_ref().len();
    let found = cursor.read_u32::<BigEndian>().map_err(|_| Error::Truncated {
        declared: 4 + 4 * dims,
        available,
    })?;
    if found != magic {
        return Err(Error::BadMagic { found, expected: magic });
    }
    (0..dims)
        .map(|_| {
            cursor
                .read_u32::<BigEndian>()
                .map(|d| d as usize)
                .map_err(|_| Error::Truncated {
                    declared: 4 + 4 * dims,
                    available,
                })
        })
        .collect()
}

fn read_payload(cursor: &mut Cursor<&[u8]>, dims: &[usize]) -> Result<Vec<u8>> {
    let size = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
    let header = cursor.position() as usize;
    let available = cursor.get_ref().len() - header;
    if available != size {
        return Err(Error::Truncated {
            declared: size,
            available,
        });
    }
    let mut payload = vec![0u8; size];
    cursor.read_exact(&mut payload)?;
    Ok(payload)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut cursor = Cursor::new(bytes);
    let dims = read_header(&mut cursor, IDX_IMAGE_MAGIC, 3)?;
    let payload = read_payload(&mut cursor, &dims)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = if rows * cols == 0 {
        vec![Vec::new(); count]
    } else {
        payload
            .chunks(rows * cols)
            .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
            .collect()
    };
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(bytes);
    let dims = read_header(&mut cursor, IDX_LABEL_MAGIC, 1)?;
    read_payload(&mut cursor, &dims)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Writes `images` in IDX form, mapping each pixel back to `round(255 · p)`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.count * images.rows * images.cols);
    out.write_u32::<BigEndian>(IDX_IMAGE_MAGIC)?;
    for d in [images.count, images.rows, images.cols] {
        out.write_u32::<BigEndian>(dim_u32(d)?)?;
    }
    for img in &images.pixels {
        out.extend(img.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_LABEL_MAGIC)?;
    out.write_u32::<BigEndian>(dim_u32(labels.len())?)?;
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::DimensionOverflow(format!("{d} does not fit in u32")))
}

/// A fixed reordering of flattened pixel positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub length: usize,
    pub seed: u64,
    /// Step `t` of the emitted sequence shows pixel `permutation[t]`.
    pub permutation: Vec<usize>,
}

impl PermutationSpec {
    pub fn new(length: usize, seed: u64) -> Self {
        let permutation = SeededRng::new(seed).permutation(length);
        Self {
            length,
            seed,
            permutation,
        }
    }

    pub fn identity(length: usize) -> Self {
        Self {
            length,
            seed: 0,
            permutation: (0..length).collect(),
        }
    }

    pub fn from_vec(permutation: Vec<usize>) -> Result<Self> {
        let spec = Self {
            length: permutation.len(),
            seed: 0,
            permutation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that the vector hits every index in `0..length` exactly once.
    pub fn validate(&self) -> Result<()> {
        if self.permutation.len() != self.length {
            return Err(Error::InvalidConfig(format!(
                "permutation has {} entries for length {}",
                self.permutation.len(),
                self.length
            )));
        }
        let mut seen = vec![false; self.length];
        for &p in &self.permutation {
            if p >= self.length || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidConfig(format!(
                    "permutation entry {p} is out of range or repeated"
                )));
            }
        }
        Ok(())
    }

    pub fn inverse(&self) -> PermutationSpec {
        let mut inv = vec![0; self.length];
        for (t, &p) in self.permutation.iter().enumerate() {
            inv[p] = t;
        }
        PermutationSpec {
            length: self.length,
            seed: self.seed,
            permutation: inv,
        }
    }

    pub fn apply<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.permutation.iter().map(|&p| values[p]).collect()
    }
}

/// Flattens each image row-major, reorders it by `spec` and emits one pixel
/// per step. `labels` become sequence-level class targets (10 classes).
pub fn permute_sequence(images: &IdxImages, labels: &[u8], spec: &PermutationSpec) -> Result<SequenceBatch> {
    spec.validate()?;
    if spec.length != images.rows * images.cols {
        return Err(Error::InvalidConfig(format!(
            "permutation length {} does not match {}x{} images",
            spec.length, images.rows, images.cols
        )));
    }
    if labels.len() != images.count {
        return Err(Error::InvalidConfig(format!(
            "{} labels for {} images",
            labels.len(),
            images.count
        )));
    }
    let num_classes = 10.max(labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0));
    let inputs = images
        .pixels
        .iter()
        .map(|img| spec.apply(img).into_iter().map(|p| Vector::from(vec![p])).collect())
        .collect();
    Ok(SequenceBatch {
        inputs,
        targets: labels.iter().map(|&l| Target::Class(l as usize)).collect(),
        lengths: vec![spec.length; images.count],
        input_dim: 1,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Vec<u8> {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 51, 102, 255, 255, 0, 204, 153]);
        bytes
    }

    #[test]
    fn parses_constructed_fixture() {
        let imgs = parse_idx_images(&fixture()).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 2, 2));
        assert_eq!(imgs.pixels[0], vec![0.0, 0.2, 0.4, 1.0]);
        assert_eq!(imgs.pixels[1], vec![1.0, 0.0, 0.8, 0.6]);
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = fixture();
        bytes.pop();
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(Error::Truncated {
                declared: 8,
                available: 7
            })
        ));
        assert!(matches!(parse_idx_images(&bytes[..6]), Err(Error::Truncated { .. })));
        let mut bad = fixture();
        bad[3] = 1;
        assert!(matches!(
            parse_idx_images(&bad),
            Err(Error::BadMagic { found: 0x801, .. })
        ));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        let r = parse_idx_images(&huge);
        if usize::BITS <= 64 {
            assert!(matches!(r, Err(Error::DimensionOverflow(_))), "{r:?}");
        }
        let labels = [0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 9];
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7, 2, 9]);
        assert!(matches!(parse_idx_labels(&labels[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = parse_idx_images(&fixture()).unwrap();
        let path = dir.path().join("imgs.idx");
        write_idx_images(&path, &imgs).unwrap();
        assert_eq!(load_idx_images(&path).unwrap(), imgs);
        assert_eq!(fs::read(&path).unwrap(), fixture());
        let lpath = dir.path().join("labels.idx");
        write_idx_labels(&lpath, &[3, 1]).unwrap();
        assert_eq!(load_idx_labels(&lpath).unwrap(), vec![3, 1]);
    }

    #[test]
    fn identity_and_inverse() {
        let imgs = parse_idx_images(&fixture()).unwrap();
        let b = permute_sequence(&imgs, &[1, 0], &PermutationSpec::identity(4)).unwrap();
        let flat: Vec<f64> = b.inputs[0].iter().map(|x| x[0]).collect();
        assert_eq!(flat, imgs.pixels[0]);
        assert_eq!(b.targets[1], Target::Class(0));

        let spec = PermutationSpec::new(4, 17);
        let b = permute_sequence(&imgs, &[1, 0], &spec).unwrap();
        for (img, seq) in imgs.pixels.iter().zip(&b.inputs) {
            let permuted: Vec<f64> = seq.iter().map(|x| x[0]).collect();
            assert_eq!(&spec.inverse().apply(&permuted), img);
        }
        assert!(permute_sequence(&imgs, &[1, 0], &PermutationSpec::identity(5)).is_err());
    }

    #[test]
    fn same_seed_same_permutation() {
        assert_eq!(PermutationSpec::new(784, 42), PermutationSpec::new(784, 42));
        assert!(PermutationSpec::from_vec(vec![0, 2, 2]).is_err());
        assert!(PermutationSpec::from_vec(vec![0, 3, 1]).is_err());
    }

    proptest! {
        #[test]
        fn permutations_are_bijections(len in 1usize..300, seed in any::<u64>()) {
            let spec = PermutationSpec::new(len, seed);
            prop_assert!(spec.validate().is_ok());
            let values: Vec<usize> = (0..len).collect();
            prop_assert_eq!(spec.inverse().apply(&spec.apply(&values)), values);
        }
    }
}
