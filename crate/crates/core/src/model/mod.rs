//! The dual-path network: kernel-predicting branch, detail branch and
//! refinement, plus parameter storage and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;

pub use checkpoint::{checkpoint_load, checkpoint_load_for, checkpoint_save};
pub use config::{Ablation, ModelConfig};
pub use forward::{cdm_forward, ddet_forward, down4, gsat_forward, post_refine, residual_block, up4, Model};
pub use params::{param_count, param_shapes, ModelParams, ParamCount, ParamVars};
