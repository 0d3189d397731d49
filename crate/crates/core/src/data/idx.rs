//! IDX (MNIST distribution format) reading and writing.
//!
//! Only unsigned-byte payloads are supported: magic `0x00000803` for `N×H×W`
//! image files and `0x00000801` for `N` label files. Header integers are big-endian.

use std::fs;
use std::path::Path;

use super::{Dataset, Image};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(
                format!("{}:{field}", self.file),
                "file truncated inside the header",
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an image file into `(count, rows, cols, raw bytes)`.
pub fn parse_images(bytes: &[u8], file: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        file,
    };
    let magic = c.u32("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            format!("{file}:magic"),
            format!("expected {IMAGES_MAGIC:#010x} for an image file, found {magic:#010x}"),
        ));
    }
    let n = c.u32("count")? as usize;
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let want = n * rows * cols;
    let data = c.rest();
    if data.len() != want {
        return Err(Error::format(
            format!("{file}:pixels"),
            format!(
                "header declares {n}x{rows}x{cols} = {want} bytes, payload has {}",
                data.len()
            ),
        ));
    }
    Ok((n, rows, cols, data.to_vec()))
}

pub fn parse_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        file,
    };
    let magic = c.u32("magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            format!("{file}:magic"),
            format!("expected {LABELS_MAGIC:#010x} for a label file, found {magic:#010x}"),
        ));
    }
    let n = c.u32("count")? as usize;
    let data = c.rest();
    if data.len() != n {
        return Err(Error::format(
            format!("{file}:labels"),
            format!("header declares {n} labels, payload has {}", data.len()),
        ));
    }
    Ok(data.to_vec())
}

/// Loads an IDX image file (and optionally its labels), scaling pixels by 1/255.
pub fn load_idx(images: &Path, labels: Option<&Path>, num_classes: usize) -> Result<Dataset> {
    let name = images.display().to_string();
    let (n, rows, cols, raw) = parse_images(&read(images)?, &name)?;
    let shape = [rows, cols, 1];
    let px = rows * cols;
    let imgs = (0..n)
        .map(|i| {
            Image::from_trusted(
                shape,
                raw[i * px..(i + 1) * px]
                    .iter()
                    .map(|&b| b as f64 / 255.0)
                    .collect(),
            )
        })
        .collect();
    let labels = match labels {
        None => None,
        Some(path) => {
            let lname = path.display().to_string();
            let raw = parse_labels(&read(path)?, &lname)?;
            if raw.len() != n {
                return Err(Error::format(
                    format!("{lname}:count"),
                    format!("{} labels for {n} images", raw.len()),
                ));
            }
            if let Some(&bad) = raw.iter().find(|&&l| l as usize >= num_classes) {
                return Err(Error::format(
                    format!("{lname}:labels"),
                    format!("label {bad} out of range for {num_classes} classes"),
                ));
            }
            Some(raw.into_iter().map(usize::from).collect())
        }
    };
    Dataset::new(name, shape, imgs, labels, num_classes)
}

pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for im in images {
        out.extend_from_slice(im);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_fixture() {
        // three 2x2 images written byte by byte
        let bytes: Vec<u8> = vec![
            0, 0, 8, 3, // magic
            0, 0, 0, 3, // count
            0, 0, 0, 2, // rows
            0, 0, 0, 2, // cols
            0, 255, 128, 1, //
            10, 20, 30, 40, //
            255, 255, 0, 0,
        ];
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, &bytes).unwrap();
        fs::write(&lp, [0u8, 0, 8, 1, 0, 0, 0, 3, 2, 0, 1]).unwrap();
        let ds = load_idx(&ip, Some(&lp), 3).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.shape(), [2, 2, 1]);
        for (i, im) in ds.images().iter().enumerate() {
            for (j, &p) in im.pixels().iter().enumerate() {
                assert_eq!(p, bytes[16 + i * 4 + j] as f64 / 255.0);
            }
        }
        assert_eq!(ds.labels().unwrap(), &[2, 0, 1]);
    }

    #[test]
    fn label_file_as_images_is_format_error() {
        let labels = encode_labels(&[1, 2, 3]);
        match parse_images(&labels, "labels.idx") {
            Err(Error::Format { field, .. }) => assert_eq!(field, "labels.idx:magic"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn images_file_as_labels_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        fs::write(&ip, encode_images(1, 1, &[vec![7]])).unwrap();
        let r = load_idx(&ip, Some(&ip), 10);
        assert!(matches!(r, Err(Error::Format { ref field, .. }) if field.ends_with(":magic")));
    }

    #[test]
    fn truncated_payload_names_field() {
        let mut bytes = encode_images(2, 2, &[vec![1, 2, 3, 4], vec![5, 6, 7, 8]]);
        bytes.pop();
        assert!(matches!(
            parse_images(&bytes, "f"),
            Err(Error::Format { ref field, .. }) if field == "f:pixels"
        ));
        assert!(matches!(
            parse_images(&bytes[..10], "f"),
            Err(Error::Format { ref field, .. }) if field == "f:rows"
        ));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, encode_images(1, 1, &[vec![1], vec![2]])).unwrap();
        fs::write(&lp, encode_labels(&[0])).unwrap();
        assert!(matches!(
            load_idx(&ip, Some(&lp), 10),
            Err(Error::Format { ref field, .. }) if field.ends_with(":count")
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_idx(Path::new("/nonexistent/images.idx"), None, 10);
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
