//! Dense optical flow (coarse-to-fine local least squares) and bilinear warping.
//!
//! Convention: a field estimated from `(prev, cur)` lives on `cur`'s pixel
//! grid and maps each pixel `p` of `cur` to its location `p + (u, v)` in
//! `prev`, i.e. `cur(p) ≈ prev(p + d(p))`. [`warp`] with that field therefore
//! resamples `prev` into `cur`'s geometry.

use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::{gaussian_blur, separable, Integral};
use crate::frame::{Frame, Mask};
use crate::io::{write_frame, BitDepth};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimatorConfig {
    pub pyramid_levels: usize,
    pub window_radius: usize,
    pub iterations_per_level: usize,
    /// Smallest eigenvalue of the window-averaged structure tensor for a pixel
    /// to count as textured.
    pub min_eigen_threshold: f64,
    /// Gaussian pre-smoothing applied to both inputs; 0 disables it.
    pub presmooth_sigma: f64,
}

impl Default for FlowEstimatorConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            window_radius: 7,
            iterations_per_level: 3,
            min_eigen_threshold: 1e-6,
            presmooth_sigma: 1.0,
        }
    }
}

impl FlowEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 || self.window_radius == 0 {
            return Err(Error::InvalidArgument(
                "flow needs pyramid_levels >= 1 and window_radius >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn min_side(&self) -> usize {
        (1usize << (self.pyramid_levels - 1)) * 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    confident: Vec<bool>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            u: vec![0.0; n],
            v: vec![0.0; n],
            confident: vec![true; n],
        }
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            u: vec![u; n],
            v: vec![v; n],
            confident: vec![true; n],
        }
    }

    pub fn from_parts(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>, confident: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if u.len() != n || v.len() != n || confident.len() != n {
            return Err(Error::InvalidArgument("flow component lengths do not match dims".into()));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(Self {
            height,
            width,
            u,
            v,
            confident,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        (self.u[i], self.v[i])
    }

    pub fn confident(&self) -> &[bool] {
        &self.confident
    }

    pub fn confidence_mask(&self) -> Mask {
        Mask::new(self.height, self.width, self.confident.clone()).expect("dims checked at construction")
    }

    pub fn confident_fraction(&self) -> f64 {
        self.confident.iter().filter(|&&c| c).count() as f64 / self.confident.len() as f64
    }

    /// True when no pixel had enough texture to estimate motion.
    pub fn is_low_confidence(&self) -> bool {
        !self.confident.iter().any(|&c| c)
    }

    /// Writes `u` and `v` as 8-bit PGMs, mapping `[-range, range]` px to `[0, 1]`.
    pub fn dump(&self, u_path: &Path, v_path: &Path, range: f64) -> Result<()> {
        let enc = |x: f64| (0.5 + x / (2.0 * range)).clamp(0.0, 1.0);
        let u = Frame::new(self.height, self.width, self.u.iter().map(|&x| enc(x)).collect())?;
        let v = Frame::new(self.height, self.width, self.v.iter().map(|&x| enc(x)).collect())?;
        write_frame(&u, u_path, BitDepth::Eight)?;
        write_frame(&v, v_path, BitDepth::Eight)
    }
}

/// `output(p) = frame(p + flow(p))`, bilinear with replicate border.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    if frame.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected_h: frame.height(),
            expected_w: frame.width(),
            got_h: flow.height(),
            got_w: flow.width(),
        });
    }
    Ok(Frame::from_fn(frame.height(), frame.width(), |r, c| {
        let (u, v) = flow.at(r, c);
        if u == 0.0 && v == 0.0 {
            frame.get(r, c)
        } else {
            frame.sample_bilinear(r as f64 + v, c as f64 + u)
        }
    }))
}

fn downsample(frame: &Frame) -> Frame {
    const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let blurred = separable(frame, &BINOMIAL);
    let h = frame.height().div_ceil(2);
    let w = frame.width().div_ceil(2);
    Frame::from_fn(h, w, |r, c| blurred.get(2 * r, 2 * c))
}

fn pyramid(frame: &Frame, levels: usize) -> Vec<Frame> {
    let mut out = vec![frame.clone()];
    for _ in 1..levels {
        let next = downsample(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Bilinear upsampling of a coarse field onto a `2x` grid, scaling vectors by 2.
fn upsample(field: &FlowField, height: usize, width: usize) -> FlowField {
    let u = Frame::new(field.height, field.width, field.u.clone()).expect("valid dims");
    let v = Frame::new(field.height, field.width, field.v.clone()).expect("valid dims");
    let mut out = FlowField::zeros(height, width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / 2.0, c as f64 / 2.0);
            let i = r * width + c;
            out.u[i] = 2.0 * u.sample_bilinear(y, x);
            out.v[i] = 2.0 * v.sample_bilinear(y, x);
        }
    }
    out
}

fn central_gradients(frame: &Frame) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = frame.dims();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            gx[r * w + c] = 0.5 * (frame.get_clamped(ri, ci + 1) - frame.get_clamped(ri, ci - 1));
            gy[r * w + c] = 0.5 * (frame.get_clamped(ri + 1, ci) - frame.get_clamped(ri - 1, ci));
        }
    }
    (gx, gy)
}

#[inline]
fn min_eigen(a: f64, b: f64, d: f64) -> f64 {
    // symmetric [[a, b], [b, d]]
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    tr - disc
}

/// One Gauss-Newton refinement of `flow` at a single pyramid level.
/// Returns the per-pixel confidence of the solve.
fn refine(prev: &Frame, cur: &Frame, flow: &mut FlowField, cfg: &FlowEstimatorConfig) -> Vec<bool> {
    let (h, w) = cur.dims();
    let warped = warp(prev, flow).expect("dims match");
    let (gx, gy) = central_gradients(&warped);
    let it: Vec<f64> = cur.data().iter().zip(warped.data()).map(|(a, b)| a - b).collect();

    let xx = Integral::new(h, w, |i| gx[i] * gx[i]);
    let xy = Integral::new(h, w, |i| gx[i] * gy[i]);
    let yy = Integral::new(h, w, |i| gy[i] * gy[i]);
    let xt = Integral::new(h, w, |i| gx[i] * it[i]);
    let yt = Integral::new(h, w, |i| gy[i] * it[i]);

    let rad = cfg.window_radius;
    let mut confident = vec![false; h * w];
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(rad), (r + rad + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(rad), (c + rad + 1).min(w));
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            let a = xx.sum(r0, c0, r1, c1) / n;
            let b = xy.sum(r0, c0, r1, c1) / n;
            let d = yy.sum(r0, c0, r1, c1) / n;
            if min_eigen(a, b, d) < cfg.min_eigen_threshold {
                continue;
            }
            let ex = xt.sum(r0, c0, r1, c1) / n;
            let ey = yt.sum(r0, c0, r1, c1) / n;
            let det = a * d - b * b;
            let du = (d * ex - b * ey) / det;
            let dv = (a * ey - b * ex) / det;
            let i = r * w + c;
            flow.u[i] += du;
            flow.v[i] += dv;
            confident[i] = true;
        }
    }
    confident
}

/// Estimates the flow field mapping `cur` pixels to their location in `prev`.
///
/// Pixels whose neighbourhood lacks texture at the finest level get zero flow
/// and are marked not confident; constant inputs yield an all-zero,
/// all-unconfident field.
pub fn estimate_flow(prev: &Frame, cur: &Frame, cfg: &FlowEstimatorConfig) -> Result<FlowField> {
    cfg.validate()?;
    prev.check_same_dims(cur)?;
    let (h, w) = cur.dims();
    let min_side = cfg.min_side();
    if h < min_side || w < min_side {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} frames are too small for {} pyramid levels (need {min_side})",
            cfg.pyramid_levels
        )));
    }
    if prev.data().iter().chain(cur.data()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("flow input"));
    }
    let prev_s = gaussian_blur(prev, cfg.presmooth_sigma);
    let cur_s = gaussian_blur(cur, cfg.presmooth_sigma);
    let prev_pyr = pyramid(&prev_s, cfg.pyramid_levels);
    let cur_pyr = pyramid(&cur_s, cfg.pyramid_levels);

    let coarsest = &cur_pyr[cfg.pyramid_levels - 1];
    let mut flow = FlowField::zeros(coarsest.height(), coarsest.width());
    let mut confident = Vec::new();
    for level in (0..cfg.pyramid_levels).rev() {
        let (p, c) = (&prev_pyr[level], &cur_pyr[level]);
        if flow.dims() != c.dims() {
            flow = upsample(&flow, c.height(), c.width());
        }
        for _ in 0..cfg.iterations_per_level.max(1) {
            confident = refine(p, c, &mut flow, cfg);
        }
    }
    for (i, ok) in confident.iter().enumerate() {
        if !ok {
            flow.u[i] = 0.0;
            flow.v[i] = 0.0;
        }
    }
    flow.confident = confident;
    if flow.u.iter().chain(&flow.v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("flow estimate"));
    }
    Ok(flow)
}
