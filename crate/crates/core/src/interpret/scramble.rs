use rand::seq::SliceRandom;

use crate::arch::{argmax, ModelState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::try_map;
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ScrambleResult {
    pub clean_accuracy: f64,
    pub scrambled_accuracy: f64,
    pub max_logit_delta: f64,
    pub images: usize,
}

/// Rearrange the `block × block` tiles of a `[3, H, W]` image: output tile
/// `t` is input tile `permutation[t]`, tiles numbered row-major.
pub fn permute_blocks(image: &Tensor, block: usize, permutation: &[usize]) -> Result<Tensor> {
    let (h, w) = match image.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::Shape(format!("expected [3, H, W] image, got {s:?}"))),
    };
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(Error::InvalidArgument(format!("{block}-pixel blocks do not tile a {h}x{w} image")));
    }
    let (rows, cols) = (h / block, w / block);
    let mut check = permutation.to_vec();
    check.sort_unstable();
    if check != (0..rows * cols).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!("not a permutation of {} tiles", rows * cols)));
    }
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for (dst_tile, &src_tile) in permutation.iter().enumerate() {
        let (dr, dc) = (dst_tile / cols * block, dst_tile % cols * block);
        let (sr, sc) = (src_tile / cols * block, src_tile % cols * block);
        for ch in 0..3 {
            for y in 0..block {
                let d = (ch * h + dr + y) * w + dc;
                let s = (ch * h + sr + y) * w + sc;
                out[d..d + block].copy_from_slice(&src[s..s + block]);
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Classify every image before and after a seeded random permutation of its
/// non-overlapping `q × q` tiles. Requires a configuration whose windows tile
/// the image exactly.
pub fn scramble_test(model: &ModelState, dataset: &Dataset, seed: u64) -> Result<ScrambleResult> {
    model.ensure_eval()?;
    let cfg = &model.config;
    if !cfg.tiles_exactly(dataset.size) {
        return Err(Error::Precondition(format!(
            "{} does not tile {}x{} images with non-overlapping {}x{} windows",
            cfg.name, dataset.size, dataset.size, cfg.q, cfg.q
        )));
    }
    let tiles = (dataset.size / cfg.q).pow(2);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let outcomes = try_map(&indices, |&i| {
        let image = dataset.image_tensor(i, &model.input_norm);
        let mut perm: Vec<usize> = (0..tiles).collect();
        perm.shuffle(&mut rng_for(seed, Stream::Scramble, i as u64));
        let scrambled = permute_blocks(&image, cfg.q, &perm)?;
        let logits = model.image_logits_batch(&Tensor::stack(&[image, scrambled])?)?;
        let k = model.num_classes();
        let (a, b) = logits.data().split_at(k);
        let delta = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max);
        let label = dataset.label(i);
        Ok((argmax(a) == label, argmax(b) == label, delta))
    })?;
    let n = outcomes.len() as f64;
    Ok(ScrambleResult {
        clean_accuracy: outcomes.iter().filter(|o| o.0).count() as f64 / n,
        scrambled_accuracy: outcomes.iter().filter(|o| o.1).count() as f64 / n,
        max_logit_delta: outcomes.iter().map(|o| o.2).fold(0.0, f64::max),
        images: outcomes.len(),
    })
}
