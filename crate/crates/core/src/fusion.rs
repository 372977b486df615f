//! Temporal fusion of denoised foregrounds and recomposition of the output.
//!
//! Neighbouring foregrounds are warped onto frame `t` and averaged with
//! per-pixel weights `exp(-|warped_k - S_t| / rho)`, normalized to sum to one.

use crate::error::{Error, Result};
use crate::flow::{warp, FlowField};
use crate::frame::Frame;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Temporal radius `K`; the window holds up to `2K + 1` frames.
    pub temporal_radius: usize,
    pub rho: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            temporal_radius: 2,
            rho: 0.02,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    /// Frame indices `[lo, hi)` of the window around `t`, truncated to `0..len`.
    pub fn window(&self, t: usize, len: usize) -> (usize, usize) {
        let k = self.temporal_radius;
        (t.saturating_sub(k), (t + k + 1).min(len))
    }
}

/// Per-pixel normalized weights, one frame per stack entry.
pub fn bilateral_weights(warped: &[Frame], reference: &Frame, rho: f64) -> Result<Vec<Frame>> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if warped.is_empty() {
        return Err(Error::InvalidArgument("empty fusion stack".into()));
    }
    for f in warped {
        f.check_same_dims(reference)?;
    }
    let (h, w) = reference.dims();
    let mut weights: Vec<Vec<f64>> = vec![vec![0.0; h * w]; warped.len()];
    let mut dist = vec![0.0; warped.len()];
    for i in 0..h * w {
        let r = reference.data()[i];
        for (d, f) in dist.iter_mut().zip(warped) {
            *d = (f.data()[i] - r).abs();
        }
        // shifting by the nearest distance leaves the normalized weights unchanged
        let nearest = dist.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (k, d) in dist.iter().enumerate() {
            let e = (-(d - nearest) / rho).exp();
            weights[k][i] = e;
            total += e;
        }
        for wk in weights.iter_mut() {
            wk[i] /= total;
        }
    }
    weights
        .into_iter()
        .map(|data| Frame::new(h, w, data))
        .collect()
}

/// Fuses `foregrounds[center]` with the neighbours inside `cfg.window`.
/// `flows[k]` maps frame `center`'s grid into frame `k`
/// (`S_center(p) ≈ S_k(p + flows[k](p))`); the centre entry and entries
/// outside the window are never read and may be `None`.
pub fn fuse_foreground(
    foregrounds: &[Frame],
    center: usize,
    flows: &[Option<FlowField>],
    cfg: &FusionConfig,
) -> Result<Frame> {
    cfg.validate()?;
    if center >= foregrounds.len() {
        return Err(Error::InvalidArgument(format!(
            "centre index {center} outside a stack of {}",
            foregrounds.len()
        )));
    }
    if flows.len() != foregrounds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} foregrounds but {} flows",
            foregrounds.len(),
            flows.len()
        )));
    }
    let reference = &foregrounds[center];
    let (lo, hi) = cfg.window(center, foregrounds.len());
    let warped = (lo..hi)
        .map(|k| (k, &foregrounds[k], &flows[k]))
        .map(|(k, s, flow)| match (k == center, flow) {
            (true, _) => Ok(s.clone()),
            (false, Some(flow)) => warp(s, flow),
            (false, None) => Err(Error::InvalidArgument(format!("missing flow for stack entry {k}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = bilateral_weights(&warped, reference, cfg.rho)?;
    let (h, w) = reference.dims();
    Ok(Frame::from_fn(h, w, |r, c| {
        let i = r * w + c;
        let mut acc = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (f, b) in warped.iter().zip(&weights) {
            let v = f.data()[i];
            acc += b.data()[i] * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        // rounding can leave a convex sum an ulp outside its hull
        acc.clamp(lo, hi)
    }))
}

/// `clamp(L + S, 0, 1)` over the frame region.
pub fn recompose(background: &Frame, foreground: &Frame) -> Result<Frame> {
    Ok(background.zip_map(foreground, |l, s| l + s)?.clamped_unit())
}
