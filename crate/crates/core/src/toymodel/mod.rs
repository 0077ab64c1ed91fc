//! The desk-scale stand-in for a pretrained latent diffusion model:
//! a procedural two-object scene dataset, a small conditional
//! convolutional denoiser, its training loop, and checkpoint persistence.

mod checkpoint;
mod net;
mod scene;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TensorEntry, TrainingMeta, CHECKPOINT_VERSION,
};
pub use net::{DenoiserConfig, ParamVisitor, SceneModel, Tape, ToyDenoiser};
pub use scene::{
    object_bbox, render_scene, render_scene_sized, sample_dataset_item,
    sample_dataset_item_sized, scene_vocabulary, Color, DatasetItem,
    ObjectSpec, SceneSpec, Shape, Side, CANVAS_SIZE,
};
pub use train::{train, Adam, TrainConfig, TrainOutcome};
