//! Stabilize, decompose and denoise grayscale fluoroscopy-style video.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`stabilize`]: estimate the dominant background translation between
//!    consecutive frames from dense [`flow`] and place each frame on a
//!    world-view canvas.
//! 2. [`rpca`]: split each canvas-positioned frame into a low-rank background
//!    and a sparse foreground with masked incremental principal component
//!    pursuit.
//! 3. [`denoise`] and [`fusion`]: denoise both parts with a blind-spot
//!    self-supervised filter, average the foregrounds over time with a
//!    flow-guided bilateral filter and recompose.
//!
//! [`phantom`] and [`noise`] generate test videos with known ground truth and
//! [`metrics`] scores the results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod config;
pub mod denoise;
pub mod error;
pub mod filters;
pub mod flow;
pub mod frame;
pub mod fusion;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod pipeline;
pub mod rpca;
pub mod stabilize;

pub use error::{Error, Result};
pub use frame::{Frame, Mask, VideoSequence};
