//! Background-motion compensation on a world-view canvas.
//!
//! Each frame's dominant (background) displacement relative to its
//! predecessor is taken as the mode of a Gaussian kernel density estimate over
//! the confident flow vectors. Frames are then placed on a canvas twice the
//! frame size, anchored at the centre by the first frame, so that background
//! content keeps the same canvas coordinates over time.

use std::fmt;

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowEstimatorConfig, FlowField};
use crate::frame::{Frame, Mask, VideoSequence};

/// Integer background displacement of a frame relative to its predecessor.
///
/// For frames `m-1, m`, `Offset(u, v)` means content at pixel `p` of frame `m`
/// sits at `p + (u, v)` in frame `m-1`; the frame's canvas position moves by
/// `(u, v)` to keep that content in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Offset {
    pub u: i32,
    pub v: i32,
}

impl Offset {
    pub const ZERO: Offset = Offset { u: 0, v: 0 };

    pub const fn new(u: i32, v: i32) -> Self {
        Self { u, v }
    }

    fn norm_sq(self) -> i64 {
        (self.u as i64).pow(2) + (self.v as i64).pow(2)
    }
}

impl std::ops::Add for Offset {
    type Output = Offset;

    fn add(self, rhs: Offset) -> Offset {
        Offset::new(self.u + rhs.u, self.v + rhs.v)
    }
}

impl std::ops::Sub for Offset {
    type Output = Offset;

    fn sub(self, rhs: Offset) -> Offset {
        Offset::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeConfig {
    /// Gaussian kernel bandwidth in pixels.
    pub bandwidth: f64,
    /// Votes with `|u|` or `|v|` above this are ignored.
    pub search_radius: i32,
    pub min_confident_fraction: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            search_radius: 16,
            min_confident_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasConfig {
    /// Canvas side length as a multiple of the frame side.
    pub scale: f64,
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self { scale: 2.0 }
    }
}

/// Axis-aligned rectangle in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r0 = self.row.max(other.row);
        let c0 = self.col.max(other.col);
        let r1 = (self.row + self.height).min(other.row + other.height);
        let c1 = (self.col + self.width).min(other.col + other.width);
        (r0 < r1 && c0 < c1).then(|| Rect {
            row: r0,
            col: c0,
            height: r1 - r0,
            width: c1 - c0,
        })
    }
}

/// Overlap/fresh split of the current frame's pixels against the previous placement.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMasks {
    /// Pixels also covered by the previous placement.
    pub overlap: Mask,
    /// Newly revealed pixels.
    pub fresh: Mask,
}

impl OverlapMasks {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            overlap: Mask::filled(height, width, true),
            fresh: Mask::filled(height, width, false),
        }
    }
}

/// A frame together with its placement on the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoFrame {
    pub region: Rect,
    pub frame: Frame,
}

impl PanoFrame {
    /// Writes the frame into `canvas` at its region.
    pub fn paint(&self, canvas: &mut Frame) {
        for r in 0..self.region.height {
            for c in 0..self.region.width {
                canvas.set(self.region.row + r, self.region.col + c, self.frame.get(r, c));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasState {
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Top-left corner of the first frame.
    pub anchor: (usize, usize),
    pub cumulative_offset: Offset,
    pub current_region: Rect,
}

impl CanvasState {
    pub fn new(frame_height: usize, frame_width: usize, cfg: &CanvasConfig) -> Result<Self> {
        if !(cfg.scale >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "canvas scale must be >= 1, got {}",
                cfg.scale
            )));
        }
        let canvas_height = (frame_height as f64 * cfg.scale).round() as usize;
        let canvas_width = (frame_width as f64 * cfg.scale).round() as usize;
        let anchor = ((canvas_height - frame_height) / 2, (canvas_width - frame_width) / 2);
        Ok(Self {
            canvas_height,
            canvas_width,
            frame_height,
            frame_width,
            anchor,
            cumulative_offset: Offset::ZERO,
            current_region: Rect {
                row: anchor.0,
                col: anchor.1,
                height: frame_height,
                width: frame_width,
            },
        })
    }

    pub fn canvas_len(&self) -> usize {
        self.canvas_height * self.canvas_width
    }

    fn region_for(&self, cumulative: Offset) -> Result<Rect> {
        let row = self.anchor.0 as i64 + cumulative.v as i64;
        let col = self.anchor.1 as i64 + cumulative.u as i64;
        let fits = row >= 0
            && col >= 0
            && row as usize + self.frame_height <= self.canvas_height
            && col as usize + self.frame_width <= self.canvas_width;
        if !fits {
            return Err(Error::CanvasOverflow {
                required_h: self.frame_height + 2 * cumulative.v.unsigned_abs() as usize,
                required_w: self.frame_width + 2 * cumulative.u.unsigned_abs() as usize,
            });
        }
        Ok(Rect {
            row: row as usize,
            col: col as usize,
            height: self.frame_height,
            width: self.frame_width,
        })
    }
}

/// Mode of the Gaussian KDE of confident flow vectors, searched on the integer grid.
pub fn estimate_offset(flow: &FlowField, confidence: &Mask, cfg: &KdeConfig) -> Result<Offset> {
    if !(cfg.bandwidth > 0.0) {
        return Err(Error::InvalidArgument("KDE bandwidth must be positive".into()));
    }
    if confidence.dims() != flow.dims() {
        return Err(Error::DimensionMismatch {
            expected_h: flow.height(),
            expected_w: flow.width(),
            got_h: confidence.height(),
            got_w: confidence.width(),
        });
    }
    let fraction = confidence.count() as f64 / (flow.height() * flow.width()) as f64;
    if fraction < cfg.min_confident_fraction {
        return Err(Error::DegenerateFlow {
            confident_fraction: fraction,
        });
    }

    let radius = cfg.search_radius.max(0);
    let side = (2 * radius + 1) as usize;
    let mut hist = vec![0.0f64; side * side];
    for ((&u, &v), &ok) in flow.u().iter().zip(flow.v()).zip(confidence.data()) {
        if !ok {
            continue;
        }
        let (bu, bv) = (u.round(), v.round());
        if bu.abs() > radius as f64 || bv.abs() > radius as f64 {
            continue;
        }
        hist[(bv as i32 + radius) as usize * side + (bu as i32 + radius) as usize] += 1.0;
    }

    let reach = (4.0 * cfg.bandwidth).ceil() as i32;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|d| (-(d * d) as f64 / (2.0 * cfg.bandwidth * cfg.bandwidth)).exp())
        .collect();
    let smooth_axis = |src: &[f64], along_u: bool| -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for bv in 0..side as i32 {
            for bu in 0..side as i32 {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let d = k as i32 - reach;
                    let (su, sv) = if along_u { (bu + d, bv) } else { (bu, bv + d) };
                    if (0..side as i32).contains(&su) && (0..side as i32).contains(&sv) {
                        acc += w * src[sv as usize * side + su as usize];
                    }
                }
                out[bv as usize * side + bu as usize] = acc;
            }
        }
        out
    };
    let density = smooth_axis(&smooth_axis(&hist, true), false);

    let mut best: Option<(f64, Offset)> = None;
    for bv in 0..side {
        for bu in 0..side {
            let d = density[bv * side + bu];
            let cand = Offset::new(bu as i32 - radius, bv as i32 - radius);
            best = match best {
                None => Some((d, cand)),
                Some((bd, bo)) => {
                    let better = d > bd
                        || (d == bd
                            && (cand.norm_sq(), cand.u, cand.v) < (bo.norm_sq(), bo.u, bo.v));
                    Some(if better { (d, cand) } else { (bd, bo) })
                }
            };
        }
    }
    let (peak, offset) = best.expect("grid is non-empty");
    if peak <= 0.0 {
        return Err(Error::DegenerateFlow {
            confident_fraction: fraction,
        });
    }
    Ok(offset)
}

/// Places `frame` on the canvas after compensating `offset`.
pub fn place_frame(
    state: &CanvasState,
    frame: &Frame,
    offset: Offset,
) -> Result<(PanoFrame, OverlapMasks, CanvasState)> {
    if frame.dims() != (state.frame_height, state.frame_width) {
        return Err(Error::DimensionMismatch {
            expected_h: state.frame_height,
            expected_w: state.frame_width,
            got_h: frame.height(),
            got_w: frame.width(),
        });
    }
    let cumulative = state.cumulative_offset + offset;
    let region = state.region_for(cumulative)?;
    let prev = state.current_region;
    let overlap = Mask::from_fn(region.height, region.width, |r, c| {
        prev.contains(region.row + r, region.col + c)
    });
    let fresh = overlap.not();
    let next = CanvasState {
        cumulative_offset: cumulative,
        current_region: region,
        ..state.clone()
    };
    Ok((
        PanoFrame {
            region,
            frame: frame.clone(),
        },
        OverlapMasks { overlap, fresh },
        next,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedFrame {
    pub pano: PanoFrame,
    pub offset: Offset,
    pub masks: OverlapMasks,
}

/// Streaming stabilizer: feed frames in order.
#[derive(Debug, Clone)]
pub struct Stabilizer {
    flow_cfg: FlowEstimatorConfig,
    kde_cfg: KdeConfig,
    /// When false every offset is forced to zero (the no-stabilize ablation).
    enabled: bool,
    state: CanvasState,
    previous: Option<Frame>,
    last_flow: Option<FlowField>,
}

impl Stabilizer {
    pub fn new(
        frame_height: usize,
        frame_width: usize,
        flow_cfg: FlowEstimatorConfig,
        kde_cfg: KdeConfig,
        canvas_cfg: &CanvasConfig,
    ) -> Result<Self> {
        Ok(Self {
            flow_cfg,
            kde_cfg,
            enabled: true,
            state: CanvasState::new(frame_height, frame_width, canvas_cfg)?,
            previous: None,
            last_flow: None,
        })
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }

    pub fn state(&self) -> &CanvasState {
        &self.state
    }

    /// Flow between the two most recent frames, if it was estimated.
    pub fn last_flow(&self) -> Option<&FlowField> {
        self.last_flow.as_ref()
    }

    pub fn push(&mut self, frame: &Frame) -> Result<StabilizedFrame> {
        self.last_flow = None;
        let offset = match (&self.previous, self.enabled) {
            (Some(prev), true) => {
                let flow = estimate_flow(prev, frame, &self.flow_cfg)?;
                let offset = estimate_offset(&flow, &flow.confidence_mask(), &self.kde_cfg)?;
                self.last_flow = Some(flow);
                offset
            }
            _ => Offset::ZERO,
        };
        let (pano, masks, next) = place_frame(&self.state, frame, offset)?;
        self.state = next;
        self.previous = Some(frame.clone());
        Ok(StabilizedFrame { pano, offset, masks })
    }
}

pub fn stabilize_sequence(
    seq: &VideoSequence,
    flow_cfg: &FlowEstimatorConfig,
    kde_cfg: &KdeConfig,
    canvas_cfg: &CanvasConfig,
) -> Result<Vec<StabilizedFrame>> {
    let (h, w) = seq.dims();
    let mut stab = Stabilizer::new(h, w, flow_cfg.clone(), kde_cfg.clone(), canvas_cfg)?;
    seq.iter().map(|f| stab.push(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow_from_votes(votes: &[(f64, f64)], h: usize, w: usize) -> FlowField {
        FlowField::from_parts(
            h,
            w,
            votes.iter().map(|v| v.0).collect(),
            votes.iter().map(|v| v.1).collect(),
            vec![true; h * w],
        )
        .unwrap()
    }

    #[test]
    fn constant_flow_mode() {
        let flow = FlowField::uniform(16, 16, 2.0, -1.0);
        let off = estimate_offset(&flow, &flow.confidence_mask(), &KdeConfig::default()).unwrap();
        assert_eq!(off, Offset::new(2, -1));
    }

    #[test]
    fn dominant_mode_beats_uniform_clutter() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w) = (40, 40);
        let votes: Vec<(f64, f64)> = (0..h * w)
            .map(|i| {
                if i % 10 < 7 {
                    (0.0, 0.0)
                } else {
                    (rng.gen_range(-5.0..=5.0), rng.gen_range(-5.0..=5.0))
                }
            })
            .collect();
        // oracle: mode of the 2-D integer histogram
        let mut counts = std::collections::HashMap::new();
        for &(u, v) in &votes {
            *counts.entry((u.round() as i32, v.round() as i32)).or_insert(0) += 1;
        }
        let mode = counts.iter().max_by_key(|(_, &n)| n).map(|(&k, _)| k).unwrap();
        assert_eq!(mode, (0, 0));
        let flow = flow_from_votes(&votes, h, w);
        let off = estimate_offset(&flow, &flow.confidence_mask(), &KdeConfig::default()).unwrap();
        assert_eq!((off.u, off.v), mode);
    }

    #[test]
    fn too_few_confident_pixels() {
        let flow = FlowField::zeros(10, 10);
        let mask = Mask::from_fn(10, 10, |r, _| r == 0);
        assert!(matches!(
            estimate_offset(&flow, &mask, &KdeConfig::default()),
            Err(Error::DegenerateFlow { .. })
        ));
    }

    #[test]
    fn ties_prefer_smallest_offset() {
        let votes: Vec<(f64, f64)> = (0..64).map(|i| if i % 2 == 0 { (3.0, 0.0) } else { (-3.0, 0.0) }).collect();
        let flow = flow_from_votes(&votes, 8, 8);
        let cfg = KdeConfig {
            bandwidth: 0.3,
            ..KdeConfig::default()
        };
        // symmetric bimodal density: tie between (-3,0) and (3,0), lexicographic picks u = -3
        assert_eq!(estimate_offset(&flow, &flow.confidence_mask(), &cfg).unwrap(), Offset::new(-3, 0));
    }

    #[test]
    fn placement_full_overlap() {
        let state = CanvasState::new(4, 4, &CanvasConfig::default()).unwrap();
        let (pano, masks, next) = place_frame(&state, &Frame::zeros(4, 4), Offset::ZERO).unwrap();
        assert_eq!(pano.region, state.current_region);
        assert_eq!(masks.overlap.count(), 16);
        assert_eq!(masks.fresh.count(), 0);
        assert_eq!(next.cumulative_offset, Offset::ZERO);
    }

    #[test]
    fn placement_one_column_shift() {
        let state = CanvasState::new(4, 4, &CanvasConfig::default()).unwrap();
        let (pano, masks, _) = place_frame(&state, &Frame::zeros(4, 4), Offset::new(1, 0)).unwrap();
        assert_eq!(pano.region.col, state.current_region.col + 1);
        let shared = state.current_region.intersect(&pano.region).unwrap();
        assert_eq!((shared.height, shared.width), (4, 3));
        assert_eq!(masks.overlap.count(), 12);
        assert_eq!(masks.fresh.count(), 4);
        assert!((0..4).all(|r| masks.fresh.get(r, 3)));
    }

    #[test]
    fn canvas_overflow_reports_size() {
        let mut state = CanvasState::new(8, 8, &CanvasConfig::default()).unwrap();
        for _ in 0..4 {
            state = place_frame(&state, &Frame::zeros(8, 8), Offset::new(1, 0)).unwrap().2;
        }
        match place_frame(&state, &Frame::zeros(8, 8), Offset::new(1, 0)) {
            Err(Error::CanvasOverflow { required_w, .. }) => assert_eq!(required_w, 18),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn moving_phantom_offsets_and_zero_stack_variance() {
        let spec = PhantomSpec::still(64, 64, 6).with_step(Offset::new(1, 0));
        let (seq, _) = generate_phantom(&spec, 2).unwrap();
        let out = stabilize_sequence(&seq, &FlowEstimatorConfig::default(), &KdeConfig::default(), &CanvasConfig::default())
            .unwrap();
        assert_eq!(out[0].offset, Offset::ZERO);
        assert!(out[1..].iter().all(|s| s.offset == Offset::new(1, 0)));
        let total = out.iter().fold(Offset::ZERO, |acc, s| acc + s.offset);
        assert_eq!(total, Offset::new(5, 0));

        // canvas pixel -> list of observed values
        let stack_variance = |frames: &[PanoFrame]| -> f64 {
            let mut acc = std::collections::HashMap::<(usize, usize), Vec<f64>>::new();
            for p in frames {
                for r in 0..p.region.height {
                    for c in 0..p.region.width {
                        acc.entry((p.region.row + r, p.region.col + c)).or_default().push(p.frame.get(r, c));
                    }
                }
            }
            acc.values()
                .filter(|v| v.len() > 1)
                .map(|v| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
                })
                .fold(0.0, f64::max)
        };
        let stabilized: Vec<PanoFrame> = out.iter().map(|s| s.pano.clone()).collect();
        assert!(stack_variance(&stabilized) <= 1e-10);
        let fixed: Vec<PanoFrame> = seq
            .iter()
            .map(|f| PanoFrame {
                region: out[0].pano.region,
                frame: f.clone(),
            })
            .collect();
        assert!(stack_variance(&fixed) > 0.0);
    }

    #[test]
    fn single_frame_sequence() {
        let (seq, _) = generate_phantom(&PhantomSpec::still(32, 32, 1), 0).unwrap();
        let out = stabilize_sequence(&seq, &FlowEstimatorConfig::default(), &KdeConfig::default(), &CanvasConfig::default())
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].offset, Offset::ZERO);
    }

    proptest::proptest! {
        #[test]
        fn masks_partition_the_frame(du in -3i32..=3, dv in -3i32..=3) {
            let state = CanvasState::new(8, 8, &CanvasConfig::default()).unwrap();
            let (_, m, _) = place_frame(&state, &Frame::zeros(8, 8), Offset::new(du, dv)).unwrap();
            for (o, f) in m.overlap.data().iter().zip(m.fresh.data()) {
                proptest::prop_assert!(o ^ f);
            }
            let expected = (8 - du.unsigned_abs() as usize) * (8 - dv.unsigned_abs() as usize);
            proptest::prop_assert_eq!(m.overlap.count(), expected);
        }
    }
}
