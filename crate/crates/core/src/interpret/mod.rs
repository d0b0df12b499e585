//! Analyses of trained BagNets: heatmaps, patch mining, the interaction
//! experiment, masking sensitivity with attribution baselines, error and
//! logit correlations, evidence thresholding and tile scrambling.

mod attribution;
mod classifier;
mod csv;
mod heatmap;
mod interaction;
mod mask;
mod patches;
mod scramble;
mod sensitivity;
mod stats;
mod threshold;

pub use attribution::{integrated_gradients, saliency, IntegratedGradients};
pub use classifier::{ImageClassifier, LinearPixelModel, ProductOfRegions};
pub use csv::{class_scatter_csv, interaction_csv, sensitivity_csv, threshold_csv};
pub use heatmap::{diverging, encode_ppm, export_heatmap, heatmap_csv, parse_heatmap_csv, planar_to_rgb, render_heatmap};
pub use interaction::{interaction_experiment, interaction_on_images, interaction_pair, ClassChoice, InteractionPair, InteractionResult};
pub use mask::{apply_mask, masked_fraction, CellDelta, Fill, MaskPattern, MaskSpec};
pub use patches::{top_patches, write_patches, PatchRecord, TopPatches};
pub use scramble::{permute_blocks, scramble_test, ScrambleResult};
pub use sensitivity::{cell_scores, masking_sensitivity, rank_cells, RankingSource, SensitivityCurve};
pub use stats::{logit_correlation, pearson, per_class_scatter, permuted_logit_correlation, ClassScatter, Correlation};
pub use threshold::{dataset_evidence, evidence_grid, threshold_sweep, threshold_sweep_maps, ThresholdMode, ThresholdPoint};
