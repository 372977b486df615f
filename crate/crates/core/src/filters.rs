//! Small separable filters shared by the phantom generator and flow estimator.

use crate::frame::Frame;

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable correlation with an odd-length kernel, replicate border.
pub fn separable(frame: &Frame, kernel: &[f64]) -> Frame {
    debug_assert!(kernel.len() % 2 == 1);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = frame.dims();
    let horizontal = Frame::from_fn(h, w, |row, col| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * frame.get_clamped(row as isize, col as isize + i as isize - r))
            .sum()
    });
    Frame::from_fn(h, w, |row, col| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * horizontal.get_clamped(row as isize + i as isize - r, col as isize))
            .sum()
    })
}

pub fn gaussian_blur(frame: &Frame, sigma: f64) -> Frame {
    if sigma <= 0.0 {
        return frame.clone();
    }
    separable(frame, &gaussian_kernel(sigma))
}

/// Summed-area table with a zero first row and column: `(h+1) x (w+1)`.
pub struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub fn new(height: usize, width: usize, values: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; (height + 1) * stride];
        for r in 0..height {
            let mut row_sum = 0.0;
            for c in 0..width {
                row_sum += values(r * width + c);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row_sum;
            }
        }
        Self { width, sums }
    }

    /// Sum over rows `r0..r1` and columns `c0..c1` (half-open).
    #[inline]
    pub fn sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[r1 * s + c1] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0] + self.sums[r0 * s + c0]
    }
}
