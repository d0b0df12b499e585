//! BagNet architecture: configuration, model, evidence maps and locality checks.

pub mod config;
pub mod evidence;
pub mod model;
pub mod oracle;

pub use config::{receptive_field, BagNetConfig, BlockSpec, LayerGeom, StemSpec};
pub use evidence::{argmax, image_logits, softmax, EvidenceMap};
pub use model::{InputNorm, LossOutput, Mode, ModelState};
pub use oracle::{certify_receptive_field, patch_oracle_evidence, Certificate, Leak};
