//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 bytes of planar RGB (1024 red, 1024 green, 1024 blue) for a 32×32
//! image, exactly the planar layout used by [`Dataset`].

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{FormatError, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

/// Parse concatenated CIFAR-10 records.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(FormatError::Truncated {
            offset: bytes.len() / CIFAR_RECORD * CIFAR_RECORD,
            needed: CIFAR_RECORD,
            available: bytes.len() % CIFAR_RECORD,
        }
        .into());
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(count);
    let mut images = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    for (index, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if record[0] as usize >= CIFAR10_CLASSES.len() {
            return Err(FormatError::LabelOutOfRange { index, label: record[0], num_classes: CIFAR10_CLASSES.len() as u8 }.into());
        }
        labels.push(record[0]);
        images.extend_from_slice(&record[1..]);
    }
    Dataset::new(CIFAR_SIDE, CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(), labels, images)
}

/// Read and concatenate CIFAR-10 batch files in the order given.
pub fn convert_cifar10<P: AsRef<Path>>(files: &[P]) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for f in files {
        bytes.extend(std::fs::read(f)?);
    }
    parse_cifar10(&bytes)
}
