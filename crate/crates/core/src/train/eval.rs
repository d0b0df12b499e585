use crate::arch::ModelState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel::try_map;
use crate::tape::softmax_row;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

/// Accuracy report of one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub topk_accuracy: f64,
    /// Top-k accuracy restricted to each class; `NaN` for absent classes.
    pub per_class: Vec<f64>,
    /// `[count, num_classes]` image logits.
    pub logits: Tensor,
    /// Mean cross-entropy of the logits.
    pub loss: f64,
}

/// Whether `label` ranks among the `k` largest entries of `row`. Equal
/// values rank the lower class index higher.
pub fn in_top_k(row: &[f32], label: usize, k: usize) -> bool {
    let target = row[label];
    let rank = row.iter().enumerate().filter(|&(j, &v)| v > target || (v == target && j < label)).count();
    rank < k
}

/// Top-k accuracy, per-class accuracy and cross-entropy of precomputed logits.
pub fn score_logits(logits: &Tensor, labels: &[usize], k: usize) -> Result<EvalReport> {
    let (n, classes) = match logits.shape() {
        &[n, c] => (n, c),
        s => return Err(Error::Shape(format!("expected [N, K] logits, got {s:?}"))),
    };
    if k == 0 || k > classes {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={classes}")));
    }
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        totals[label] += 1;
        if in_top_k(row, label, k) {
            hits[label] += 1;
        }
        let (probs, _) = softmax_row(&row.iter().map(|&v| v as f64).collect::<Vec<_>>());
        loss -= probs[label].max(f64::MIN_POSITIVE).ln();
    }
    let per_class = hits.iter().zip(&totals).map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 }).collect();
    Ok(EvalReport {
        k,
        topk_accuracy: hits.iter().sum::<usize>() as f64 / n as f64,
        per_class,
        logits: logits.clone(),
        loss: loss / n as f64,
    })
}

/// Image logits of every image, in dataset order, computed as the mean of the
/// per-location evidence. Batches run in parallel; results are order-fixed.
pub fn dataset_logits(model: &ModelState, dataset: &Dataset) -> Result<Tensor> {
    model.ensure_eval()?;
    let chunks: Vec<Vec<usize>> = (0..dataset.len()).collect::<Vec<_>>().chunks(EVAL_BATCH).map(<[usize]>::to_vec).collect();
    let parts = try_map(&chunks, |idx| model.image_logits_batch(&dataset.batch_tensor(idx, &model.input_norm)?))?;
    let k = model.num_classes();
    let data: Vec<f32> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(&[dataset.len(), k], data)
}

/// Evaluate `model` on `dataset` at top-`k`.
pub fn evaluate(model: &ModelState, dataset: &Dataset, k: usize) -> Result<EvalReport> {
    model.ensure_eval()?;
    if dataset.num_classes() != model.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model {}",
            dataset.num_classes(),
            model.num_classes()
        )));
    }
    if k == 0 || k > model.num_classes() {
        return Err(Error::InvalidArgument(format!("k = {k} must be in 1..={}", model.num_classes())));
    }
    let labels: Vec<usize> = (0..dataset.len()).map(|i| dataset.label(i)).collect();
    score_logits(&dataset_logits(model, dataset)?, &labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_top2() {
        let logits = Tensor::new(&[3, 3], vec![3.0, 2.0, 1.0, 0.0, 5.0, 4.0, 1.0, 1.0, 1.0]).unwrap();
        // In the all-tied last row class 2 ranks behind classes 0 and 1.
        let r = score_logits(&logits, &[2, 2, 2], 2).unwrap();
        assert!((r.topk_accuracy - 1.0 / 3.0).abs() < 1e-12);
        let r = score_logits(&logits, &[1, 2, 1], 2).unwrap();
        assert!((r.topk_accuracy - 1.0).abs() < 1e-12);
        let r = score_logits(&logits, &[2, 0, 0], 2).unwrap();
        assert!((r.topk_accuracy - 1.0 / 3.0).abs() < 1e-12);
        let r = score_logits(&logits, &[0, 2, 0], 2).unwrap();
        assert!((r.topk_accuracy - 1.0).abs() < 1e-12);
        let r = score_logits(&logits, &[1, 1, 2], 2).unwrap();
        assert!((r.topk_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_classes_is_perfect_and_oracle_logits_are_perfect() {
        let logits = Tensor::new(&[2, 2], vec![0.3, -1.0, 0.0, 2.0]).unwrap();
        assert_eq!(score_logits(&logits, &[1, 0], 2).unwrap().topk_accuracy, 1.0);
        assert_eq!(score_logits(&logits, &[0, 1], 1).unwrap().topk_accuracy, 1.0);
        assert!(score_logits(&logits, &[0, 1], 3).is_err());
    }
}
