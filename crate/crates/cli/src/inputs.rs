use std::{fs, io};
use std::path::Path;

use bagnet::data::Dataset;
use bagnet::train::Checkpoint;
use bagnet::Result;

use crate::manifest::Manifest;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

/// Load a dataset file and record its hash in `manifest`.
pub fn dataset(manifest: &mut Manifest, role: &str, path: &Path) -> Result<Dataset> {
    let bytes = read(path)?;
    manifest.input(role, path, &bytes);
    Ok(Dataset::from_bytes(&bytes)?)
}

/// Load a checkpoint file and record its hash in `manifest`.
pub fn checkpoint(manifest: &mut Manifest, role: &str, path: &Path) -> Result<Checkpoint> {
    let bytes = read(path)?;
    manifest.input(role, path, &bytes);
    Checkpoint::from_bytes(&bytes)
}
