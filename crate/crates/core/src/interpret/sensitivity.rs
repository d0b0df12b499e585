//! Probability of the leading class as the highest-ranked cells are masked.

use rand::Rng;

use super::attribution::{integrated_gradients, saliency};
use super::classifier::ImageClassifier;
use super::mask::{apply_mask, MaskSpec};
use crate::arch::{argmax, softmax, ModelState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::try_map;
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;

/// Where per-cell importance scores come from.
#[derive(Clone, Copy, Debug)]
pub enum RankingSource<'a> {
    /// BagNet evidence, each window weighted by the number of its pixels inside the cell.
    BagNet(&'a ModelState),
    /// Sum of the target's saliency over the cell.
    Saliency,
    /// Sum of the target's integrated-gradients attribution over the cell.
    IntegratedGradients { steps: usize },
    /// Uniform random scores from a seeded stream per image.
    Random { seed: u64 },
}

impl RankingSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            RankingSource::BagNet(_) => "bagnet",
            RankingSource::Saliency => "saliency",
            RankingSource::IntegratedGradients { .. } => "ig",
            RankingSource::Random { .. } => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityCurve {
    pub source: String,
    /// `0..=n_max`
    pub n: Vec<usize>,
    pub mean_prob: Vec<f64>,
    /// `per_image[i][n]`: leading-class probability of image `i` after masking `n` cells.
    pub per_image: Vec<Vec<f64>>,
    pub image_indices: Vec<usize>,
}

fn sum_over_cells(map: &Tensor, spec: &MaskSpec, rows: usize, cols: usize) -> Vec<f64> {
    let w = map.shape()[1];
    let p = spec.p;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (top, left) = spec.cell_origin((r, c));
            let mut s = 0.0;
            for y in top..top + p {
                for x in left..left + p {
                    s += map.data()[y * w + x] as f64;
                }
            }
            out.push(s);
        }
    }
    out
}

/// Row-major scores of every grid cell of `image` for `class`.
pub fn cell_scores(
    source: RankingSource<'_>,
    target: &dyn ImageClassifier,
    image: &Tensor,
    class: usize,
    p: usize,
    image_index: usize,
) -> Result<Vec<f64>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let spec = MaskSpec::every_second(p);
    let (rows, cols) = spec.grid(h, w)?;
    match source {
        RankingSource::BagNet(model) => {
            let evidence = model.forward_evidence(image)?;
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let (top, left) = spec.cell_origin((r, c));
                    let mut s = 0.0;
                    for i in 0..evidence.height() {
                        for j in 0..evidence.width() {
                            let overlap = evidence.window_overlap(i, j, top, left, p, p);
                            s += evidence.get(class, i, j) as f64 * overlap as f64;
                        }
                    }
                    out.push(s);
                }
            }
            Ok(out)
        }
        RankingSource::Saliency => Ok(sum_over_cells(&saliency(target, image, class)?, &spec, rows, cols)),
        RankingSource::IntegratedGradients { steps } => {
            Ok(sum_over_cells(&integrated_gradients(target, image, class, steps, None)?.map, &spec, rows, cols))
        }
        RankingSource::Random { seed } => {
            let mut rng = rng_for(seed, Stream::MaskRandom, image_index as u64);
            Ok((0..rows * cols).map(|_| rng.random::<f64>()).collect())
        }
    }
}

/// Cells ordered by descending score; equal scores keep grid order.
pub fn rank_cells(scores: &[f64], cols: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| (i / cols, i % cols)).collect()
}

/// Leading-class probability trajectory of one image.
fn trajectory(
    target: &ModelState,
    source: RankingSource<'_>,
    image: &Tensor,
    image_index: usize,
    p: usize,
    n_max: usize,
) -> Result<Vec<f64>> {
    let base = target.logits(&Tensor::stack(std::slice::from_ref(image))?)?;
    let leading = argmax(base.data());
    let scores = cell_scores(source, target, image, leading, p, image_index)?;
    let cols = MaskSpec::every_second(p).grid(image.shape()[1], image.shape()[2])?.1;
    let ranked = rank_cells(&scores, cols);
    let masked = (0..=n_max)
        .map(|n| Ok(apply_mask(image, &MaskSpec::cells(p, ranked[..n].to_vec()))?.0))
        .collect::<Result<Vec<_>>>()?;
    let logits = target.logits(&Tensor::stack(&masked)?)?;
    let k = target.num_classes();
    Ok(logits.data().chunks_exact(k).map(|row| softmax(row)[leading]).collect())
}

/// Masking curves of `target` for every ranking source over the images `indices`.
pub fn masking_sensitivity(
    target: &ModelState,
    sources: &[RankingSource<'_>],
    dataset: &Dataset,
    indices: &[usize],
    p: usize,
    n_max: usize,
) -> Result<Vec<SensitivityCurve>> {
    target.ensure_eval()?;
    let (rows, cols) = MaskSpec::every_second(p).grid(dataset.size, dataset.size)?;
    if n_max > rows * cols {
        return Err(Error::InvalidArgument(format!("n_max {n_max} exceeds the {} available cells", rows * cols)));
    }
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no images selected".into()));
    }
    sources
        .iter()
        .map(|&source| {
            let per_image = try_map(indices, |&i| {
                let image = dataset.image_tensor(i, &target.input_norm);
                trajectory(target, source, &image, i, p, n_max)
            })?;
            let mean_prob = (0..=n_max)
                .map(|n| per_image.iter().map(|t| t[n]).sum::<f64>() / per_image.len() as f64)
                .collect();
            Ok(SensitivityCurve {
                source: source.name().to_string(),
                n: (0..=n_max).collect(),
                mean_prob,
                per_image,
                image_indices: indices.to_vec(),
            })
        })
        .collect()
}
