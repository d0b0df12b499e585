use crate::arch::{image_logits, EvidenceMap, ModelState};
use crate::data::Dataset;
use crate::error::Result;
use crate::parallel::try_map;
use crate::tensor::Tensor;
use crate::train::score_logits;

/// How evidence is transformed before spatial averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Values below the threshold are raised to it.
    Clamp,
    /// Values above the threshold become 1, all others 0.
    Binarize,
}

impl ThresholdMode {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdMode::Clamp => "clamp",
            ThresholdMode::Binarize => "binarize",
        }
    }

    pub fn apply(self, value: f32, threshold: f32) -> f32 {
        match self {
            ThresholdMode::Clamp => value.max(threshold),
            ThresholdMode::Binarize => {
                if value > threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdPoint {
    pub mode: ThresholdMode,
    pub threshold: f32,
    pub k: usize,
    pub accuracy: f64,
}

/// Evidence maps of every image in dataset order.
pub fn dataset_evidence(model: &ModelState, dataset: &Dataset) -> Result<Vec<EvidenceMap>> {
    model.ensure_eval()?;
    let chunks: Vec<Vec<usize>> = (0..dataset.len()).collect::<Vec<_>>().chunks(128).map(<[usize]>::to_vec).collect();
    let parts = try_map(&chunks, |idx| model.forward_evidence_batch(&dataset.batch_tensor(idx, &model.input_norm)?))?;
    Ok(parts.into_iter().flatten().collect())
}

/// Top-k accuracy after transforming each evidence value, per threshold.
pub fn threshold_sweep_maps(
    maps: &[EvidenceMap],
    labels: &[usize],
    thresholds: &[f32],
    mode: ThresholdMode,
    k: usize,
) -> Result<Vec<ThresholdPoint>> {
    thresholds
        .iter()
        .map(|&t| {
            let rows: Vec<Tensor> = maps.iter().map(|m| image_logits(&m.map_logits(|v| mode.apply(v, t)))).collect();
            let report = score_logits(&Tensor::stack(&rows)?.reshape(&[maps.len(), maps[0].num_classes()])?, labels, k)?;
            Ok(ThresholdPoint { mode, threshold: t, k, accuracy: report.topk_accuracy })
        })
        .collect()
}

pub fn threshold_sweep(model: &ModelState, dataset: &Dataset, thresholds: &[f32], mode: ThresholdMode, k: usize) -> Result<Vec<ThresholdPoint>> {
    let maps = dataset_evidence(model, dataset)?;
    let labels: Vec<usize> = (0..dataset.len()).map(|i| dataset.label(i)).collect();
    threshold_sweep_maps(&maps, &labels, thresholds, mode, k)
}

/// `count` evenly spaced thresholds spanning the observed evidence range.
pub fn evidence_grid(maps: &[EvidenceMap], count: usize) -> Vec<f32> {
    let (lo, hi) = maps
        .iter()
        .flat_map(|m| m.logits.data().iter().copied())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if count < 2 || !lo.is_finite() {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f32 / (count - 1) as f32).collect()
}
