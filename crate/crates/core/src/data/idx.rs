//! IDX archives: big-endian magic, dimension words, then raw bytes.
//! Gzip-compressed files are detected by their `1f 8b` header.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn word(bytes: &[u8], index: usize, field: &str) -> Result<u32> {
    bytes
        .get(index * 4..index * 4 + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(field, "file ends inside the header"))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = word(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format("image magic", format!("expected 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = word(bytes, 1, "image count")? as usize;
    let rows = word(bytes, 2, "image rows")? as usize;
    let cols = word(bytes, 3, "image cols")? as usize;
    let payload = &bytes[16..];
    let want = n * rows * cols;
    if payload.len() != want {
        return Err(Error::format(
            "image payload",
            format!("{n} images of {rows}x{cols} need {want} bytes, found {}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = word(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format("label magic", format!("expected 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let n = word(bytes, 1, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::format("label payload", format!("{n} labels declared, {} bytes present", payload.len())));
    }
    Ok(payload)
}

/// Loads an image/label archive pair. The class count is one past the largest label.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<ImageDataset> {
    let image_bytes = read_maybe_gzip(images)?;
    let label_bytes = read_maybe_gzip(labels)?;
    let (n, rows, cols, pixels) = parse_images(&image_bytes)?;
    let labels = parse_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(Error::format("count", format!("{n} images but {} labels", labels.len())));
    }
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let name = images
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("idx")
        .to_string();
    ImageDataset::new(name, split, rows, cols, pixels.to_vec(), labels.to_vec(), classes)
}

pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for w in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn fixture(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let (pi, pl) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
        std::fs::write(&pi, images).unwrap();
        std::fs::write(&pl, labels).unwrap();
        (pi, pl)
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 1, 2, 3, 255, 254, 253, 252];
        // Hand-written header bytes, independent of the encoder.
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&pixels);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
        assert_eq!(images, encode_images(2, 2, 2, &pixels));
        assert_eq!(labels, encode_labels(&[7, 1]));
        let (pi, pl) = fixture(dir.path(), &images, &labels);
        let ds = load_idx(&pi, &pl, Split::Train).unwrap();
        assert_eq!((ds.len(), ds.height, ds.width), (2, 2, 2));
        assert_eq!(ds.images, pixels);
        assert_eq!(ds.labels, vec![7, 1]);
        assert_eq!(ds.classes, 8);
    }

    #[test]
    fn gzip_detected_by_magic() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        let (pi, pl) = fixture(dir.path(), &gz(&encode_images(1, 1, 3, &[9, 8, 7])), &gz(&encode_labels(&[4])));
        let ds = load_idx(&pi, &pl, Split::Test).unwrap();
        assert_eq!(ds.images, vec![9, 8, 7]);
        assert_eq!(ds.labels, vec![4]);
    }

    #[test]
    fn errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let field = |images: Vec<u8>, labels: Vec<u8>| {
            let (pi, pl) = fixture(dir.path(), &images, &labels);
            match load_idx(&pi, &pl, Split::Train) {
                Err(Error::Format { field, .. }) => field,
                other => panic!("expected a format error, got {other:?}"),
            }
        };
        assert_eq!(field(encode_images(3, 1, 1, &[1, 2, 3]), encode_labels(&[0, 1])), "count");
        let mut bad = encode_images(1, 1, 1, &[1]);
        bad[3] = 0x04;
        assert_eq!(field(bad, encode_labels(&[0])), "image magic");
        assert_eq!(field(encode_images(2, 2, 2, &[0; 5]), encode_labels(&[0, 1])), "image payload");
        assert_eq!(field(encode_images(1, 1, 1, &[1]), encode_labels(&[0])[..6].to_vec()), "label count");
    }
}
