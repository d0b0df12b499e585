use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::{random_resized_crop, AugmentSpec};
use super::dataset::Dataset;
use crate::arch::InputNorm;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::tensor::Tensor;

/// Sample order for one epoch: a permutation keyed by `(seed, epoch)`.
pub fn epoch_order(count: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng_for(seed, Stream::Shuffle, epoch));
    order
}

/// Consecutive chunks of `order`; the last one may be short.
pub fn chunk_order(order: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Standardized `[N, 3, S, S]` images.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Deterministic stream of standardized batches.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    norm: InputNorm,
    batches: std::vec::IntoIter<Vec<usize>>,
    augment: Option<(AugmentSpec, u64)>,
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }
}

/// Shuffled batches for `epoch`, standardized with `norm`.
pub fn batch_iterator<'a>(dataset: &'a Dataset, batch_size: usize, shuffle_seed: u64, epoch: u64, norm: InputNorm) -> Result<BatchIter<'a>> {
    let batches = chunk_order(&epoch_order(dataset.len(), shuffle_seed, epoch), batch_size)?;
    Ok(BatchIter { dataset, norm, batches: batches.into_iter(), augment: None })
}

/// Like [`batch_iterator`], with each sample augmented by a generator keyed
/// on `(augment.seed, epoch, sample index)`.
pub fn augmented_batches<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
    norm: InputNorm,
    augment: &AugmentSpec,
) -> Result<BatchIter<'a>> {
    augment.validate()?;
    let mut it = batch_iterator(dataset, batch_size, shuffle_seed, epoch, norm)?;
    if !augment.is_identity(dataset.size) {
        it.augment = Some((augment.clone(), epoch));
    }
    Ok(it)
}

/// Unshuffled batches in dataset order, for evaluation.
pub fn sequential_batches(dataset: &Dataset, batch_size: usize, norm: InputNorm) -> Result<BatchIter<'_>> {
    let order: Vec<usize> = (0..dataset.len()).collect();
    Ok(BatchIter { dataset, norm, batches: chunk_order(&order, batch_size)?.into_iter(), augment: None })
}

fn standardize(t: &mut Tensor, norm: &InputNorm) {
    let plane = t.len() / 3;
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        let ch = i / plane;
        *v = ((*v as f64 - norm.mean[ch] as f64) / norm.std[ch] as f64) as f32;
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let indices = self.batches.next()?;
        let labels = indices.iter().map(|&i| self.dataset.label(i)).collect();
        let images = match &self.augment {
            None => self.dataset.batch_tensor(&indices, &self.norm),
            Some((spec, epoch)) => indices
                .par_iter()
                .map(|&i| {
                    let mut rng = rng_for(spec.seed, Stream::Augment, (epoch << 32) | i as u64);
                    let mut t = random_resized_crop(self.dataset.image(i), self.dataset.size, spec, &mut rng)?;
                    standardize(&mut t, &self.norm);
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()
                .and_then(|items| Tensor::stack(&items)),
        };
        Some(images.map(|images| Batch { images, labels, indices }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_texture_dataset, SynthSpec};

    #[test]
    fn batches_cover_dataset_once() {
        let d = synth_texture_dataset(&SynthSpec::new(3, 7, 8, 2, 1)).unwrap();
        let mut seen: Vec<usize> = batch_iterator(&d, 4, 9, 2, InputNorm::default())
            .unwrap()
            .flat_map(|b| b.unwrap().indices)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn order_depends_on_seed_and_epoch_only() {
        assert_eq!(epoch_order(50, 1, 3), epoch_order(50, 1, 3));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 1, 4));
        assert_ne!(epoch_order(50, 1, 3), epoch_order(50, 2, 3));
    }

    #[test]
    fn full_batch_is_one_batch() {
        let d = synth_texture_dataset(&SynthSpec::new(2, 5, 8, 2, 1)).unwrap();
        let it = batch_iterator(&d, d.len(), 0, 0, InputNorm::default()).unwrap();
        assert_eq!(it.num_batches(), 1);
    }

    #[test]
    fn identity_augmentation_matches_plain_batches() {
        let d = synth_texture_dataset(&SynthSpec::new(2, 4, 8, 2, 1)).unwrap();
        let norm = d.channel_stats();
        let spec = AugmentSpec::identity(8, 5);
        let a: Vec<_> = batch_iterator(&d, 3, 0, 1, norm).unwrap().map(|b| b.unwrap().images).collect();
        let b: Vec<_> = augmented_batches(&d, 3, 0, 1, norm, &spec).unwrap().map(|b| b.unwrap().images).collect();
        assert_eq!(a, b);
    }
}
