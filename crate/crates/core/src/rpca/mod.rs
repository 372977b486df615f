//! Masked incremental robust PCA.
//!
//! Each canvas-positioned frame is a column over canvas pixels. Before it is
//! split, rows the background model knows but the frame does not observe are
//! predicted from the model ([`fill_frame`]) and rows the frame reveals for
//! the first time are added to the basis ([`fill_subspace`]). The column is
//! then split into a low-rank background and a sparse foreground
//! ([`decompose_frame`]) and the background enters the sliding window.

mod fill;
mod jacobi;
mod pcp;
mod svd;

pub use fill::{fill_frame, fill_subspace};
pub use pcp::{
    decompose_frame, soft_threshold, soft_threshold_slice, ColumnSplit, Decomposition, MaskedIncPcp, PcpParams,
};
pub use svd::{pseudo_inverse, SubspaceModel};
