//! `BAGC` checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "BAGC" | version u8
//! | config: name (u16 len + UTF-8) | q, input_size, num_classes, feature_dim u32
//! |   stem kernel, stride, pad, channels u32 | block count u32
//! |   per block: in, mid, out, kernel, stride u32
//! | tensor count u32
//! |   per tensor: name (u16 len + UTF-8) | rank u8 | dims u32 × rank | f32 payload
//! | epoch u32 | seed u64 | rng epoch u64
//! | train config text (u32 len + UTF-8) | metrics CSV (u32 len + UTF-8)
//! ```
//!
//! Tensors are parameters under their own names, momentum buffers as
//! `momentum/<name>`, batch-norm statistics as `<layer>.running_mean` and
//! `<layer>.running_var`, and the input standardization as `input.mean` and
//! `input.std`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::metrics::{metrics_csv, parse_metrics_csv, EpochMetrics};
use crate::arch::{BagNetConfig, BlockSpec, InputNorm, Mode, ModelState, StemSpec};
use crate::data::ByteReader;
use crate::error::{FormatError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BAGC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Model, optimizer state and training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    /// Epoch index that keys the next shuffle and augmentation streams.
    pub rng_epoch: u64,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&u16::try_from(s.len()).expect("name fits in u16").to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str16(out, name);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_str16(r: &mut ByteReader<'_>) -> Result<String, FormatError> {
    let len = r.u16()? as usize;
    let at = r.offset();
    String::from_utf8(r.take(len)?.to_vec()).map_err(|_| FormatError::Corrupt { offset: at, reason: "invalid UTF-8".into() })
}

fn read_str32(r: &mut ByteReader<'_>) -> Result<String, FormatError> {
    let len = r.u32()? as usize;
    let at = r.offset();
    String::from_utf8(r.take(len)?.to_vec()).map_err(|_| FormatError::Corrupt { offset: at, reason: "invalid UTF-8".into() })
}

fn read_usize(r: &mut ByteReader<'_>) -> Result<usize, FormatError> {
    Ok(r.u32()? as usize)
}

pub fn encode_config(out: &mut Vec<u8>, c: &BagNetConfig) {
    put_str16(out, &c.name);
    for v in [c.q, c.input_size, c.num_classes, c.feature_dim, c.stem.kernel, c.stem.stride, c.stem.pad, c.stem.channels, c.blocks.len()] {
        put_u32(out, v);
    }
    for b in &c.blocks {
        for v in [b.in_channels, b.mid_channels, b.out_channels, b.kernel, b.stride] {
            put_u32(out, v);
        }
    }
}

fn decode_config(r: &mut ByteReader<'_>) -> Result<BagNetConfig, FormatError> {
    let name = read_str16(r)?;
    let mut f = [0usize; 9];
    for v in f.iter_mut() {
        *v = read_usize(r)?;
    }
    let [q, input_size, num_classes, feature_dim, kernel, stride, pad, channels, nblocks] = f;
    if nblocks > 4096 {
        return Err(FormatError::Corrupt { offset: r.offset(), reason: format!("{nblocks} blocks") });
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        blocks.push(BlockSpec {
            in_channels: read_usize(r)?,
            mid_channels: read_usize(r)?,
            out_channels: read_usize(r)?,
            kernel: read_usize(r)?,
            stride: read_usize(r)?,
        });
    }
    Ok(BagNetConfig { name, q, input_size, num_classes, feature_dim, stem: StemSpec { kernel, stride, pad, channels }, blocks })
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, Tensor)> {
        let m = &self.model;
        let mut out: Vec<(String, Tensor)> = m.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        out.extend(m.params.iter().map(|p| (format!("momentum/{}", p.name), p.momentum.clone())));
        for bn in &m.bn {
            let n = bn.running_mean.len();
            out.push((format!("{}.running_mean", bn.name), Tensor::new(&[n], bn.running_mean.clone()).expect("length matches")));
            out.push((format!("{}.running_var", bn.name), Tensor::new(&[n], bn.running_var.clone()).expect("length matches")));
        }
        out.push(("input.mean".into(), Tensor::new(&[3], m.input_norm.mean.to_vec()).expect("3 values")));
        out.push(("input.std".into(), Tensor::new(&[3], m.input_norm.std.to_vec()).expect("3 values")));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.push(CHECKPOINT_VERSION);
        encode_config(&mut out, &self.model.config);
        let tensors = self.tensors();
        put_u32(&mut out, tensors.len());
        for (name, t) in &tensors {
            put_tensor(&mut out, name, t);
        }
        put_u32(&mut out, self.epoch);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.rng_epoch.to_le_bytes());
        put_str32(&mut out, &self.config.to_text());
        put_str32(&mut out, &metrics_csv(&self.history));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic }.into());
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version { expected: CHECKPOINT_VERSION, found: version }.into());
        }
        let config_at = r.offset();
        let config = decode_config(&mut r)?;
        let mut model = ModelState::zeroed(config)
            .map_err(|e| FormatError::Corrupt { offset: config_at, reason: format!("invalid configuration: {e}") })?;

        let count = read_usize(&mut r)?;
        let mut table: BTreeMap<String, (usize, Tensor)> = BTreeMap::new();
        for _ in 0..count {
            let at = r.offset();
            let name = read_str16(&mut r)?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_usize(&mut r)?);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= r.remaining() / 4);
            let n = n.ok_or(FormatError::Truncated { offset: r.offset(), needed: usize::MAX, available: r.remaining() })?;
            let payload = r.take(4 * n)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(&dims, data).expect("length checked");
            if table.insert(name.clone(), (at, t)).is_some() {
                return Err(FormatError::Corrupt { offset: at, reason: format!("duplicate tensor {name}") }.into());
            }
        }
        let end_of_table = r.offset();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor, FormatError> {
            let (at, t) = table
                .remove(name)
                .ok_or_else(|| FormatError::Corrupt { offset: end_of_table, reason: format!("missing tensor {name}") })?;
            if t.shape() != shape {
                return Err(FormatError::Corrupt { offset: at, reason: format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), shape) });
            }
            Ok(t)
        };
        for slot in 0..model.params.len() {
            let name = model.params.get(slot).name.clone();
            let shape = model.params.get(slot).value.shape().to_vec();
            let value = take(&name, &shape)?;
            let momentum = take(&format!("momentum/{name}"), &shape)?;
            let p = model.params.get_mut(slot);
            p.value = value;
            p.momentum = momentum;
        }
        for bn in model.bn.iter_mut() {
            let n = bn.running_mean.len();
            bn.running_mean = take(&format!("{}.running_mean", bn.name), &[n])?.into_data();
            bn.running_var = take(&format!("{}.running_var", bn.name), &[n])?.into_data();
        }
        let mean = take("input.mean", &[3])?.into_data();
        let std = take("input.std", &[3])?.into_data();
        model.input_norm = InputNorm { mean: [mean[0], mean[1], mean[2]], std: [std[0], std[1], std[2]] };
        if let Some((name, (at, _))) = table.into_iter().next() {
            return Err(FormatError::Corrupt { offset: at, reason: format!("unexpected tensor {name}") }.into());
        }
        model.mode = Mode::Eval;

        let epoch = read_usize(&mut r)?;
        let seed = r.u64()?;
        let rng_epoch = r.u64()?;
        let text_at = r.offset();
        let config = TrainConfig::from_text(&read_str32(&mut r)?)
            .map_err(|e| FormatError::Corrupt { offset: text_at, reason: e.to_string() })?;
        let csv_at = r.offset();
        let history = parse_metrics_csv(&read_str32(&mut r)?)
            .map_err(|e| FormatError::Corrupt { offset: csv_at, reason: e.to_string() })?;
        if r.remaining() != 0 {
            return Err(FormatError::Corrupt { offset: r.offset(), reason: format!("{} trailing bytes", r.remaining()) }.into());
        }
        Ok(Checkpoint { model, epoch, seed, rng_epoch, config, history })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
