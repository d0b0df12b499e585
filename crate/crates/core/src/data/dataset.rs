//! In-memory image dataset and its `BAGD` binary container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BAGD" | version u8 = 1 | count u32 | size u16 | num_classes u8
//! | class names: (len u8, UTF-8 bytes) × num_classes
//! | labels: count × u8
//! | images: count × 3 × size × size u8, planar RGB, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::arch::InputNorm;
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"BAGD";
pub const DATASET_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub size: usize,
    pub class_names: Vec<String>,
    pub labels: Vec<u8>,
    /// `count × 3 × size × size` bytes.
    pub images: Vec<u8>,
}

impl Dataset {
    pub fn new(size: usize, class_names: Vec<String>, labels: Vec<u8>, images: Vec<u8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one image".into()));
        }
        if class_names.is_empty() || class_names.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("{} classes unsupported", class_names.len())));
        }
        if size == 0 || size > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("image size {size} unsupported")));
        }
        if images.len() != labels.len() * 3 * size * size {
            return Err(Error::InvalidArgument("image payload does not match count and size".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= class_names.len()) {
            return Err(FormatError::LabelOutOfRange { index, label, num_classes: class_names.len() as u8 }.into());
        }
        Ok(Dataset { size, class_names, labels, images })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn image_len(&self) -> usize {
        3 * self.size * self.size
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset::new(self.size, self.class_names.clone(), indices.iter().map(|&i| self.labels[i]).collect(), images)
    }

    /// Per-channel mean and standard deviation of `[0, 1]`-scaled pixels.
    pub fn channel_stats(&self) -> InputNorm {
        let plane = self.size * self.size;
        let mut norm = InputNorm::default();
        for ch in 0..3 {
            let (mut s, mut ss, mut n) = (0.0f64, 0.0f64, 0usize);
            for i in 0..self.len() {
                for &v in &self.image(i)[ch * plane..(ch + 1) * plane] {
                    let x = v as f64 / 255.0;
                    s += x;
                    ss += x * x;
                    n += 1;
                }
            }
            let mean = s / n as f64;
            let var = (ss / n as f64 - mean * mean).max(0.0);
            norm.mean[ch] = mean as f32;
            norm.std[ch] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
        norm
    }

    /// Standardized `[3, size, size]` tensor of one image.
    pub fn image_tensor(&self, index: usize, norm: &InputNorm) -> Tensor {
        let plane = self.size * self.size;
        let img = self.image(index);
        Tensor::new(
            &[3, self.size, self.size],
            img.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = i / plane;
                    ((v as f64 / 255.0 - norm.mean[ch] as f64) / norm.std[ch] as f64) as f32
                })
                .collect(),
        )
        .expect("image payload has 3 planes")
    }

    /// Standardized `[N, 3, size, size]` batch.
    pub fn batch_tensor(&self, indices: &[usize], norm: &InputNorm) -> Result<Tensor> {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.image_tensor(i, norm)).collect();
        Tensor::stack(&items)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.labels.len() + self.images.len());
        out.extend_from_slice(&DATASET_MAGIC);
        out.push(DATASET_VERSION);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.size as u16).to_le_bytes());
        out.push(self.num_classes() as u8);
        for name in &self.class_names {
            let bytes = name.as_bytes();
            let n = bytes.len().min(u8::MAX as usize);
            out.push(n as u8);
            out.extend_from_slice(&bytes[..n]);
        }
        out.extend_from_slice(&self.labels);
        out.extend_from_slice(&self.images);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != DATASET_MAGIC {
            return Err(FormatError::BadMagic { expected: DATASET_MAGIC, found: magic });
        }
        let version = r.u8()?;
        if version != DATASET_VERSION {
            return Err(FormatError::Version { expected: DATASET_VERSION, found: version });
        }
        let count_at = r.offset();
        let count = r.u32()? as usize;
        let size = r.u16()? as usize;
        let num_classes = r.u8()?;
        if count == 0 || size == 0 || num_classes == 0 {
            return Err(FormatError::Corrupt { offset: count_at, reason: "count, size and class count must be positive".into() });
        }
        let mut class_names = Vec::with_capacity(num_classes as usize);
        for _ in 0..num_classes {
            let len = r.u8()? as usize;
            let at = r.offset();
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| FormatError::Corrupt { offset: at, reason: format!("class name is not UTF-8: {e}") })?;
            class_names.push(name.to_string());
        }
        let labels = r.take(count)?.to_vec();
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(FormatError::LabelOutOfRange { index, label, num_classes });
        }
        let images = r.take(count * 3 * size * size)?.to_vec();
        if r.remaining() != 0 {
            return Err(FormatError::Corrupt { offset: r.offset(), reason: format!("{} trailing bytes", r.remaining()) });
        }
        Ok(Dataset { size, class_names, labels, images })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Read and validate a `BAGD` file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    Ok(Dataset::from_bytes(&bytes)?)
}

/// Cursor over a byte slice that reports truncation with offsets.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated { offset: self.pos, needed: n, available: self.remaining() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images: Vec<u8> = (0..2 * 3 * 2 * 2).map(|v| v as u8 * 10).collect();
        Dataset::new(2, vec!["dark".into(), "bright".into()], vec![0, 1], images).unwrap()
    }

    #[test]
    fn handcrafted_bytes_round_trip() {
        let mut bytes = b"BAGD".to_vec();
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.push(2);
        bytes.extend_from_slice(&[4, b'd', b'a', b'r', b'k', 6, b'b', b'r', b'i', b'g', b'h', b't']);
        bytes.extend_from_slice(&[0, 1]);
        bytes.extend((0..24).map(|v| v as u8 * 10));
        let d = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(d, tiny());
        assert_eq!(d.to_bytes(), bytes);
    }

    #[test]
    fn distinct_errors_for_distinct_corruptions() {
        let good = tiny().to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad_magic), Err(FormatError::BadMagic { .. })));
        assert!(matches!(Dataset::from_bytes(&good[..good.len() - 1]), Err(FormatError::Truncated { .. })));
        let mut bad_label = good.clone();
        let label_at = 4 + 1 + 4 + 2 + 1 + 5 + 7;
        bad_label[label_at + 1] = 9;
        assert!(matches!(Dataset::from_bytes(&bad_label), Err(FormatError::LabelOutOfRange { index: 1, label: 9, .. })));
        let mut bad_version = good;
        bad_version[4] = 2;
        assert!(matches!(Dataset::from_bytes(&bad_version), Err(FormatError::Version { found: 2, .. })));
    }

    #[test]
    fn normalization_uses_channel_statistics() {
        let d = tiny();
        let norm = d.channel_stats();
        let t = d.batch_tensor(&[0, 1], &norm).unwrap();
        let plane = 4;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|n| (0..plane).map(move |p| (n, p))).map(|(n, p)| t.data()[(n * 3 + ch) * plane + p] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
        }
    }
}
