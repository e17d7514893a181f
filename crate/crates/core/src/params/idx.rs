//! IDX image/label container reading and writing. Pixels are unsigned bytes
//! on disk and load as features scaled into [0, 1].

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{Dataset, ParamsError};

const IDX_TYPE_U8: u8 = 0x08;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad IDX magic at byte {offset}")]
    BadMagic { path: String, offset: u64 },
    #[error("{path}: unsupported element type 0x{ty:02x} at byte 2")]
    UnsupportedType { path: String, ty: u8 },
    #[error("{path}: expected {expected} dimensions, found {found} at byte 3")]
    WrongRank { path: String, expected: u8, found: u8 },
    #[error("{path}: truncated at byte {offset}, need {need} more bytes")]
    Truncated { path: String, offset: u64, need: usize },
    #[error("{path}: {extra} trailing bytes at byte {offset}")]
    Trailing { path: String, offset: u64, extra: usize },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Dataset(#[from] ParamsError),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdxError> {
        if self.pos + n > self.bytes.len() {
            return Err(IdxError::Truncated {
                path: self.path.to_string(),
                offset: self.bytes.len() as u64,
                need: self.pos + n - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32, IdxError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    /// Parses the 4-byte magic and returns the dimension sizes.
    fn header(&mut self, expected_rank: u8) -> Result<Vec<usize>, IdxError> {
        let magic = self.take(4)?;
        if magic[0] != 0 || magic[1] != 0 {
            return Err(IdxError::BadMagic { path: self.path.to_string(), offset: 0 });
        }
        if magic[2] != IDX_TYPE_U8 {
            return Err(IdxError::UnsupportedType { path: self.path.to_string(), ty: magic[2] });
        }
        if magic[3] != expected_rank {
            return Err(IdxError::WrongRank {
                path: self.path.to_string(),
                expected: expected_rank,
                found: magic[3],
            });
        }
        let mut dims = Vec::with_capacity(expected_rank as usize);
        for _ in 0..expected_rank {
            dims.push(self.u32_be()? as usize);
        }
        Ok(dims)
    }

    fn finish(&self) -> Result<(), IdxError> {
        if self.pos != self.bytes.len() {
            return Err(IdxError::Trailing {
                path: self.path.to_string(),
                offset: self.pos as u64,
                extra: self.bytes.len() - self.pos,
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io { path: path.display().to_string(), source })
}

/// Loads an IDX image file and its matching label file into a dataset.
/// Images are flattened row-major; pixel values are scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path, cluster_id: u32) -> Result<Dataset, IdxError> {
    let img_bytes = read_file(images)?;
    let img_path = images.display().to_string();
    let mut r = Reader { bytes: &img_bytes, pos: 0, path: &img_path };
    let dims = r.header(3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = r.take(n * rows * cols)?;
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    r.finish()?;

    let lbl_bytes = read_file(labels)?;
    let lbl_path = labels.display().to_string();
    let mut r = Reader { bytes: &lbl_bytes, pos: 0, path: &lbl_path };
    let dims = r.header(1)?;
    let n_labels = dims[0];
    let label_bytes = r.take(n_labels)?;
    r.finish()?;
    if n_labels != n {
        return Err(IdxError::CountMismatch { images: n, labels: n_labels });
    }
    let labels: Vec<u32> = label_bytes.iter().map(|&b| b as u32).collect();

    Ok(Dataset::new(features, labels, rows * cols, cluster_id)?)
}

/// Writes an IDX image file: `n` items of `rows` x `cols` unsigned bytes.
pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<(), IdxError> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel buffer shape");
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&[0, 0, IDX_TYPE_U8, 3]);
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|source| IdxError::Io { path: path.display().to_string(), source })
}

/// Writes an IDX label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), IdxError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&[0, 0, IDX_TYPE_U8, 1]);
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|source| IdxError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        write_idx_images(&img, &[0, 0, 0, 0, 255, 255, 255, 255], 2, 2, 2).unwrap();
        write_idx_labels(&lbl, &[0, 1]).unwrap();
        let ds = load_idx(&img, &lbl, 3).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.cluster_id(), 3);
        assert_eq!(ds.row(0), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.row(1), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(ds.labels(), &[0, 1]);
    }

    #[test]
    fn truncated_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        std::fs::write(&img, [0, 0, IDX_TYPE_U8]).unwrap();
        write_idx_labels(&lbl, &[0]).unwrap();
        assert!(matches!(load_idx(&img, &lbl, 0), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        std::fs::write(&img, [9, 9, IDX_TYPE_U8, 3, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        write_idx_labels(&lbl, &[0]).unwrap();
        assert!(matches!(load_idx(&img, &lbl, 0), Err(IdxError::BadMagic { offset: 0, .. })));
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        write_idx_images(&img, &[0, 0, 0, 0, 255, 255, 255, 255], 2, 2, 2).unwrap();
        write_idx_labels(&lbl, &[0, 1, 1]).unwrap();
        assert!(matches!(
            load_idx(&img, &lbl, 0),
            Err(IdxError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lbl = dir.path().join("lbl.idx");
        write_idx_images(&img, &[7, 7, 7, 7], 1, 2, 2).unwrap();
        let mut bytes = std::fs::read(&img).unwrap();
        bytes.push(0xEE);
        std::fs::write(&img, bytes).unwrap();
        write_idx_labels(&lbl, &[1]).unwrap();
        assert!(matches!(load_idx(&img, &lbl, 0), Err(IdxError::Trailing { .. })));
    }
}
