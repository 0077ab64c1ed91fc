//! Desk-scale two-stage ("global layout" / "focus") diffusion framework.
//!
//! The crate provides the numerical core of a prompt-conditioned DDIM
//! sampler whose text conditioning switches mid-trajectory, a procedural
//! scene dataset with a small trainable convolutional denoiser, and the
//! focus metrics (variance of Laplacian, Brenner score) used to quantify
//! the resulting sharpening/bokeh behaviour.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`schedule`] — noise schedules and DDIM timestep subsequences
//! * [`diffusion`] — forward noising, DDIM step, guidance, training loss
//! * [`conditioning`] — prompt encoding and the stage conditioning plan
//! * [`sampler`] — two-stage text-to-image / image-to-image generation
//! * [`toymodel`] — scene renderer, toy denoiser, training, checkpoints
//! * [`metrics`] — Laplacian/Brenner focus measures and blur maps

pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod toymodel;

pub use error::{Error, Result};
