//! Joint versus summed single-cell logit changes.
//!
//! For a classifier `ℓ` and masked cells with modifications `δ_i`, compare
//!
//! ```text
//! lhs = ℓ(x) − ℓ(x + Σ_i δ_i)
//! rhs = Σ_i (ℓ(x) − ℓ(x + δ_i))
//! ```
//!
//! A bag-of-local-features model has `lhs == rhs` whenever no receptive
//! field touches two modified cells.

use super::classifier::ImageClassifier;
use super::mask::{apply_mask, MaskPattern, MaskSpec};
use super::stats::{pearson, Correlation};
use crate::arch::{argmax, image_logits};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::try_map;
use crate::tensor::Tensor;

/// Which class logit the experiment tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassChoice {
    GroundTruth,
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionPair {
    pub image_index: usize,
    pub class: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl InteractionPair {
    /// `|lhs − rhs| / max(1, |lhs|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionResult {
    pub p: usize,
    pub class_choice: ClassChoice,
    pub pairs: Vec<InteractionPair>,
    pub correlation: Correlation,
}

impl InteractionResult {
    pub fn max_relative_gap(&self) -> f64 {
        self.pairs.iter().map(InteractionPair::relative_gap).fold(0.0, f64::max)
    }
}

/// Per-image `(lhs, rhs)` for one image and one mask.
pub fn interaction_pair(model: &dyn ImageClassifier, image: &Tensor, spec: &MaskSpec, class: usize) -> Result<(f64, f64)> {
    let (joint, deltas) = apply_mask(image, spec)?;
    let mut batch = vec![image.clone(), joint];
    for d in &deltas {
        let single = MaskSpec { pattern: MaskPattern::Cells(vec![d.cell]), ..spec.clone() };
        batch.push(apply_mask(image, &single)?.0);
    }
    let logits = model.logits(&Tensor::stack(&batch)?)?;
    let k = model.num_classes();
    let at = |n: usize| logits.data()[n * k + class] as f64;
    let base = at(0);
    let lhs = base - at(1);
    let rhs: f64 = (0..deltas.len()).map(|i| base - at(2 + i)).sum();
    if !lhs.is_finite() || !rhs.is_finite() {
        return Err(Error::NonFinite { op: "interaction_experiment", index: 0 });
    }
    Ok((lhs, rhs))
}

/// Run the experiment over standardized `[3, H, W]` images with given classes.
pub fn interaction_on_images(
    model: &dyn ImageClassifier,
    images: &[(usize, Tensor, usize)],
    spec: &MaskSpec,
    class_choice: ClassChoice,
) -> Result<InteractionResult> {
    let pairs = try_map(images, |(index, image, class)| {
        let (lhs, rhs) = interaction_pair(model, image, spec, *class)?;
        Ok(InteractionPair { image_index: *index, class: *class, lhs, rhs })
    })?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.lhs).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.rhs).collect();
    Ok(InteractionResult { p: spec.p, class_choice, correlation: pearson(&lhs, &rhs)?, pairs })
}

/// Run the experiment on the first `limit` images of `dataset` (all when `None`).
pub fn interaction_experiment(
    model: &crate::arch::ModelState,
    dataset: &Dataset,
    spec: &MaskSpec,
    class_choice: ClassChoice,
    limit: Option<usize>,
) -> Result<InteractionResult> {
    model.ensure_eval()?;
    let n = limit.unwrap_or(dataset.len()).min(dataset.len());
    let items = (0..n)
        .map(|i| {
            let image = dataset.image_tensor(i, &model.input_norm);
            let class = match class_choice {
                ClassChoice::GroundTruth => dataset.label(i),
                ClassChoice::Predicted => argmax(image_logits(&model.forward_evidence(&image)?).data()),
            };
            Ok((i, image, class))
        })
        .collect::<Result<Vec<_>>>()?;
    interaction_on_images(model, &items, spec, class_choice)
}
