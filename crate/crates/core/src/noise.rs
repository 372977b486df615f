use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};

/// Adds i.i.d. `N(0, variance)` noise to every pixel and clamps to `[0, 1]`.
///
/// The generator is seeded once per call and walks frames in order, so the
/// result is a pure function of `(seq, variance, seed)`.
pub fn add_gaussian_noise(seq: &VideoSequence, variance: f64, seed: u64) -> Result<VideoSequence> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {variance}"
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = seq
        .iter()
        .map(|f| f.map(|x| (x + normal.sample(&mut rng)).clamp(0.0, 1.0)))
        .collect::<Vec<Frame>>();
    VideoSequence::new(frames)
}

/// Robust estimate of the standard deviation of additive white noise.
///
/// Applies the 3x3 mask `[1 -2 1; -2 4 -2; 1 -2 1]`, which cancels locally
/// planar structure and scales white noise by 6, and takes the normalized
/// median absolute response so sparse edges do not bias the estimate.
/// Frames smaller than 3x3 give 0.
pub fn estimate_noise_std(frame: &Frame) -> f64 {
    let (h, w) = frame.dims();
    if h < 3 || w < 3 {
        return 0.0;
    }
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut responses = Vec::with_capacity((h - 2) * (w - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut acc = 0.0;
            for (dr, row) in MASK.iter().enumerate() {
                for (dc, m) in row.iter().enumerate() {
                    acc += m * frame.get(r + dr - 1, c + dc - 1);
                }
            }
            responses.push(acc.abs());
        }
    }
    let mid = responses.len() / 2;
    let (_, median, _) = responses.select_nth_unstable_by(mid, f64::total_cmp);
    // median |N(0,1)| = 0.6745
    *median / (0.674_489_750_196_081_7 * 6.0)
}
