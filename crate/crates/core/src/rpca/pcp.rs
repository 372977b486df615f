use nalgebra::{DMatrix, DVector};

use super::fill::{fill_frame, fill_subspace};
use super::svd::SubspaceModel;
use crate::error::{Error, Result};
use crate::frame::{Frame, Mask};
use crate::noise::estimate_noise_std;
use crate::stabilize::{PanoFrame, Rect};

/// `sign(x) * max(|x| - lambda, 0)`.
#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

pub fn soft_threshold_slice(values: &mut [f64], lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative threshold {lambda}")));
    }
    values.iter_mut().for_each(|x| *x = soft_threshold(*x, lambda));
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcpParams {
    /// Shrinkage threshold; `None` means
    /// `max(1 / sqrt(max(pixels, window)), noise_factor * sigma)` with `sigma`
    /// estimated from each frame.
    pub lambda: Option<f64>,
    /// Multiple of the estimated noise level the automatic threshold never
    /// drops below, so that dense noise stays in the background. 0 disables.
    pub noise_factor: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub rank: usize,
    pub window_size: usize,
}

impl Default for PcpParams {
    fn default() -> Self {
        Self {
            lambda: None,
            noise_factor: 1.5,
            max_iters: 5,
            tol: 1e-6,
            rank: 1,
            window_size: 30,
        }
    }
}

impl PcpParams {
    pub fn lambda_for(&self, pixels: usize, noise_std: f64) -> f64 {
        self.lambda.unwrap_or_else(|| {
            let scaled = 1.0 / (pixels.max(self.window_size) as f64).sqrt();
            scaled.max(self.noise_factor * noise_std)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.window_size < 2 {
            return Err(Error::InvalidArgument("PCP needs rank >= 1 and window >= 2".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(Error::InvalidArgument(format!("negative lambda {l}")));
            }
        }
        if !(self.noise_factor >= 0.0) || !self.noise_factor.is_finite() {
            return Err(Error::InvalidArgument("noise factor must be finite and >= 0".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument("negative PCP tolerance".into()));
        }
        Ok(())
    }
}

/// Split of one column into `low_rank + sparse` (exactly, on every row).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSplit {
    pub low_rank: DVector<f64>,
    pub sparse: DVector<f64>,
    pub iterations: usize,
}

/// Alternating shrinkage/projection for one column, followed by the window
/// update with the background part.
///
/// `active` marks rows where a foreground may exist; elsewhere the sparse part
/// is pinned to zero and the whole value is assigned to the background.
pub fn decompose_frame(
    model: &mut SubspaceModel,
    y: &DVector<f64>,
    active: &[bool],
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<ColumnSplit> {
    if y.len() != model.rows() || active.len() != model.rows() {
        return Err(Error::Subspace("decompose_frame: length mismatch".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decompose_frame input"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative lambda {lambda}")));
    }
    let basis = model.basis();
    let mut sparse = DVector::zeros(y.len());
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let residual = y - &sparse;
        let projected = project(&basis, &residual);
        let mut delta = 0.0f64;
        for i in 0..y.len() {
            let s = if active[i] {
                soft_threshold(y[i] - projected[i], lambda)
            } else {
                0.0
            };
            delta = delta.max((s - sparse[i]).abs());
            sparse[i] = s;
        }
        if delta <= tol {
            break;
        }
    }
    let low_rank = y - &sparse;
    model.push_window(&low_rank)?;
    Ok(ColumnSplit {
        low_rank,
        sparse,
        iterations,
    })
}

fn project(basis: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return DVector::zeros(x.len());
    }
    basis * basis.tr_mul(x)
}

/// Frame-shaped result of decomposing one placed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Background `L`.
    pub low_rank: Frame,
    /// Signed foreground `S`; exactly zero off the support.
    pub sparse: Frame,
    pub support: Mask,
    /// Pixels the model had never seen before this frame.
    pub fresh: Mask,
    pub region: Rect,
}

/// Streaming masked incremental PCP over canvas-positioned frames.
#[derive(Debug, Clone)]
pub struct MaskedIncPcp {
    canvas_height: usize,
    canvas_width: usize,
    params: PcpParams,
    model: Option<SubspaceModel>,
    last_background: Option<DVector<f64>>,
}

impl MaskedIncPcp {
    pub fn new(canvas_height: usize, canvas_width: usize, params: PcpParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            canvas_height,
            canvas_width,
            params,
            model: None,
            last_background: None,
        })
    }

    pub fn model(&self) -> Option<&SubspaceModel> {
        self.model.as_ref()
    }

    pub fn params(&self) -> &PcpParams {
        &self.params
    }

    /// Background of the most recent column over the whole canvas, including
    /// rows completed from the model.
    pub fn background_panorama(&self) -> Option<Frame> {
        self.last_background.as_ref().map(|b| {
            Frame::new(self.canvas_height, self.canvas_width, b.as_slice().to_vec())
                .expect("canvas dims")
        })
    }

    pub fn process(&mut self, pano: &PanoFrame) -> Result<Decomposition> {
        let (ch, cw) = (self.canvas_height, self.canvas_width);
        let region = pano.region;
        if region.row + region.height > ch || region.col + region.width > cw {
            return Err(Error::CanvasOverflow {
                required_h: region.row + region.height,
                required_w: region.col + region.width,
            });
        }
        let n = ch * cw;
        let mut y = DVector::zeros(n);
        let mut observed = vec![false; n];
        for r in 0..region.height {
            for c in 0..region.width {
                let i = (region.row + r) * cw + region.col + c;
                y[i] = pano.frame.get(r, c);
                observed[i] = true;
            }
        }
        if y.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite("frame"));
        }
        let noise_std = if self.params.lambda.is_none() && self.params.noise_factor > 0.0 {
            estimate_noise_std(&pano.frame)
        } else {
            0.0
        };
        let lambda = self.params.lambda_for(region.area(), noise_std);

        let (split, fresh_rows) = match self.model.as_mut() {
            None => {
                let column = DMatrix::from_column_slice(n, 1, y.as_slice());
                let model = SubspaceModel::partial_svd(&column, 1)?;
                let model = SubspaceModel::from_parts(
                    model.full_u().clone(),
                    model.full_sigma().clone(),
                    model.full_v().clone(),
                    self.params.rank,
                )?
                .with_window(self.params.window_size)
                .with_known(observed.clone());
                self.model = Some(model);
                let split = ColumnSplit {
                    low_rank: y.clone(),
                    sparse: DVector::zeros(n),
                    iterations: 0,
                };
                (split, vec![false; n])
            }
            Some(model) => {
                let fresh: Vec<bool> = observed
                    .iter()
                    .zip(model.known())
                    .map(|(&o, &k)| o && !k)
                    .collect();
                let filled = fill_frame(&y, &observed, model)?;
                fill_subspace(model, &y, &observed)?;
                let active: Vec<bool> = observed.iter().zip(&fresh).map(|(&o, &f)| o && !f).collect();
                let split = decompose_frame(model, &filled, &active, lambda, self.params.max_iters, self.params.tol)?;
                (split, fresh)
            }
        };

        let crop = |v: &DVector<f64>| {
            Frame::from_fn(region.height, region.width, |r, c| v[(region.row + r) * cw + region.col + c])
        };
        let sparse = crop(&split.sparse);
        let support = Mask::from_fn(region.height, region.width, |r, c| sparse.get(r, c) != 0.0);
        let fresh = Mask::from_fn(region.height, region.width, |r, c| {
            fresh_rows[(region.row + r) * cw + region.col + c]
        });
        let out = Decomposition {
            low_rank: crop(&split.low_rank),
            sparse,
            support,
            fresh,
            region,
        };
        self.last_background = Some(split.low_rank);
        Ok(out)
    }
}
