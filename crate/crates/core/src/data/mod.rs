//! Datasets, augmentation, batching and the synthetic texture generator.

mod augment;
mod batches;
mod cifar;
mod dataset;
mod synth;

pub use augment::{random_resized_crop, resize_bilinear, AugmentSpec};
pub use batches::{augmented_batches, batch_iterator, chunk_order, epoch_order, sequential_batches, Batch, BatchIter};
pub use cifar::{convert_cifar10, parse_cifar10, CIFAR10_CLASSES, CIFAR_RECORD};
pub(crate) use dataset::ByteReader;
pub use dataset::{load_dataset, Dataset, DATASET_MAGIC, DATASET_VERSION};
pub use synth::{class_offset, decidable_window, synth_texture_dataset, SynthSpec, TextureStyle, BLUR_RADIUS};
