//! PSNR, SSIM and image entropy for frames with peak intensity 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::Integral;
use crate::frame::Frame;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const ENTROPY_BINS: usize = 256;

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / MSE)`; identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Mean SSIM over all `window x window` positions with uniform weights and
/// population statistics.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_C1, SSIM_C2)
}

pub fn ssim_with(a: &Frame, b: &Frame, window: usize, c1: f64, c2: f64) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    if window == 0 || h < window || w < window {
        return Err(Error::InvalidArgument(format!(
            "SSIM window {window} does not fit a {h}x{w} frame"
        )));
    }
    if a == b {
        return Ok(1.0);
    }
    let (x, y) = (a.data(), b.data());
    let sx = Integral::new(h, w, |i| x[i]);
    let sy = Integral::new(h, w, |i| y[i]);
    let sxx = Integral::new(h, w, |i| x[i] * x[i]);
    let syy = Integral::new(h, w, |i| y[i] * y[i]);
    let sxy = Integral::new(h, w, |i| x[i] * y[i]);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let (r1, c1b) = (r + window, c + window);
            let mx = sx.sum(r, c, r1, c1b) / n;
            let my = sy.sum(r, c, r1, c1b) / n;
            let vx = (sxx.sum(r, c, r1, c1b) / n - mx * mx).max(0.0);
            let vy = (syy.sum(r, c, r1, c1b) / n - my * my).max(0.0);
            let cov = sxy.sum(r, c, r1, c1b) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Shannon entropy in bits of the 256-bin histogram of `round(clamp(v) * 255)`.
pub fn image_entropy(a: &Frame) -> f64 {
    let mut hist = [0usize; ENTROPY_BINS];
    for &v in a.data() {
        let bin = (v.clamp(0.0, 1.0) * (ENTROPY_BINS - 1) as f64).round() as usize;
        hist[bin] += 1;
    }
    let n = a.len() as f64;
    hist.iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub entropy: f64,
}

/// Per-frame scores of an output sequence against a reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
}

/// Mean that tolerates the infinite PSNR of exact frames (finite frames only,
/// infinity if every frame is exact).
fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n, mut any) = (0.0, 0usize, false);
    for v in values {
        any = true;
        if v.is_finite() {
            sum += v;
            n += 1;
        }
    }
    match (any, n) {
        (false, _) => f64::NAN,
        (true, 0) => f64::INFINITY,
        _ => sum / n as f64,
    }
}

impl MetricReport {
    pub fn evaluate(output: &[Frame], reference: &[Frame]) -> Result<Self> {
        if output.len() != reference.len() {
            return Err(Error::InvalidArgument(format!(
                "{} output frames vs {} reference frames",
                output.len(),
                reference.len()
            )));
        }
        let frames = output
            .iter()
            .zip(reference)
            .map(|(o, r)| {
                Ok(FrameMetrics {
                    psnr: psnr(o, r)?,
                    ssim: ssim(o, r)?,
                    entropy: image_entropy(o),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }

    pub fn mean_psnr(&self) -> f64 {
        finite_mean(self.frames.iter().map(|m| m.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        finite_mean(self.frames.iter().map(|m| m.ssim))
    }

    pub fn mean_entropy(&self) -> f64 {
        finite_mean(self.frames.iter().map(|m| m.entropy))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,ssim,entropy\n");
        for (i, m) in self.frames.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{}", m.psnr, m.ssim, m.entropy);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        format!(
            "frames={} psnr={:.3} dB ssim={:.4} entropy={:.4} bits",
            self.frames.len(),
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_entropy()
        )
    }
}
