//! MNIST (IDX) and CIFAR-10 (binary batch) readers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Labelled `u8` images stored `count × H × W × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        num_classes: usize,
        images: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(Error::Dataset("image dimensions must be non-zero".into()));
        }
        if images.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} image bytes for {} labels of {per} bytes each",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Dataset {
            height,
            width,
            channels,
            num_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.height * self.width * self.channels;
        &self.images[i * per..(i + 1) * per]
    }

    /// First `n` samples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per = self.height * self.width * self.channels;
        Dataset {
            images: self.images[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Dataset(format!("{}: truncated IDX header", path.display())))
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read(ip)?;
    let lb = read(lp)?;

    let magic = be_u32(&ib, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            ip.display()
        )));
    }
    let count = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    let pixels = &ib[16..];
    if pixels.len() != count * rows * cols {
        return Err(Error::Dataset(format!(
            "{}: {} pixel bytes for {count} images of {rows}x{cols}",
            ip.display(),
            pixels.len()
        )));
    }

    let magic = be_u32(&lb, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            lp.display()
        )));
    }
    let label_count = be_u32(&lb, 4, lp)? as usize;
    let labels = &lb[8..];
    if labels.len() != label_count || label_count != count {
        return Err(Error::Dataset(format!(
            "{count} images but {label_count} labels ({} bytes)",
            labels.len()
        )));
    }
    Dataset::new(rows, cols, 1, 10, pixels.to_vec(), labels.to_vec())
}

/// Reads and concatenates CIFAR-10 binary batches. Records are planar RGB and
/// are converted to interleaved `H × W × C`.
pub fn load_cifar10<P: AsRef<Path>>(batches: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in batches {
        let p = p.as_ref();
        let bytes = read(p)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Dataset(format!(
                "{}: size {} is not a multiple of {CIFAR_RECORD_LEN}",
                p.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            labels.push(rec[0]);
            let planes = &rec[1..];
            for px in 0..1024 {
                for c in 0..3 {
                    images.push(planes[c * 1024 + px]);
                }
            }
        }
    }
    Dataset::new(32, 32, 3, 10, images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for x in [count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn mnist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 7])).unwrap();
        fs::write(&lp, idx_labels(&[3, 9])).unwrap();
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.height, ds.width, ds.channels), (2, 2, 2, 1));
        assert_eq!(ds.image(1), &[4, 5, 6, 7]);
        assert_eq!(ds.labels, vec![3, 9]);
    }

    #[test]
    fn mnist_bad_magic_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_images(1, 1, 1, &[0])).unwrap();
        fs::write(&lp, idx_labels(&[1, 2])).unwrap();
        assert!(load_mnist(&ip, &lp).is_err());
        fs::write(&lp, idx_images(1, 1, 1, &[0])).unwrap();
        assert!(load_mnist(&ip, &lp).is_err());
        fs::write(&lp, idx_labels(&[10])).unwrap();
        assert!(load_mnist(&ip, &lp).is_err());
    }

    #[test]
    fn cifar_planar_to_interleaved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat_n(10, 1024));
        rec.extend(std::iter::repeat_n(20, 1024));
        rec.extend(std::iter::repeat_n(30, 1024));
        fs::write(&p, &rec).unwrap();
        let ds = load_cifar10(&[&p]).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(&ds.image(0)[..6], &[10, 20, 30, 10, 20, 30]);
        fs::write(&p, &rec[..100]).unwrap();
        assert!(load_cifar10(&[&p]).is_err());
    }
}
