//! Two-stage universal fixed-rate lossy coding with joint identification
//! of parametric i.i.d. sources.

pub mod bitio;
pub mod estimator;
pub mod harness;
pub mod param_codec;
pub mod seed;
pub mod sources;
pub mod two_stage;
pub mod vq;
