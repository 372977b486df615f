//! End-to-end streaming orchestration of stabilize, decompose, denoise and fuse.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use crate::config::{Mode, PipelineConfig};
use crate::denoise::{ComponentDenoiser, ComponentKind};
use crate::error::Error;
use crate::flow::{estimate_flow, warp, FlowField};
use crate::frame::{Frame, VideoSequence};
use crate::fusion::{fuse_foreground, recompose};
use crate::io::{frame_file_name, write_frame, BitDepth};
use crate::rpca::MaskedIncPcp;
use crate::stabilize::{CanvasState, Offset, Rect, Stabilizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Noise,
    Stabilize,
    Decompose,
    Denoise,
    Fuse,
    Write,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Noise => "noise",
            Stage::Stabilize => "stabilize",
            Stage::Decompose => "decompose",
            Stage::Denoise => "denoise",
            Stage::Fuse => "fuse",
            Stage::Write => "write",
            Stage::Metrics => "metrics",
        })
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        self.stage == Stage::Config || matches!(self.source, Error::Config(_))
    }
}

pub type StageResult<T> = std::result::Result<T, PipelineError>;

pub(crate) trait Tag<T> {
    fn stage(self, stage: Stage) -> StageResult<T>;
}

impl<T> Tag<T> for crate::Result<T> {
    fn stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

/// Per-frame intermediate products, kept only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    /// Background over the whole canvas after this frame.
    pub panorama: Frame,
    pub background: Frame,
    pub foreground: Frame,
    pub background_denoised: Frame,
    pub foreground_denoised: Frame,
    pub foreground_fused: Frame,
    /// Flow between this frame and the previous one used for stabilization.
    pub stabilization_flow: Option<FlowField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub index: usize,
    pub frame: Frame,
    pub offset: Offset,
    pub intermediates: Option<Intermediates>,
}

struct Pending {
    index: usize,
    raw: Frame,
    region: Rect,
    offset: Offset,
    background: Frame,
    background_denoised: Frame,
    foreground: Frame,
    foreground_denoised: Frame,
    panorama: Option<Frame>,
    flow: Option<FlowField>,
}

/// Streaming pipeline: push frames in order, collect outputs as they become ready.
///
/// Full and no-stabilize modes lag by the temporal fusion radius; call
/// [`finish`](Self::finish) to drain the tail.
pub struct Pipeline {
    cfg: PipelineConfig,
    stabilizer: Option<Stabilizer>,
    pcp: Option<MaskedIncPcp>,
    background_denoiser: ComponentDenoiser,
    foreground_denoiser: ComponentDenoiser,
    buffer: VecDeque<Pending>,
    pushed: usize,
    emitted: usize,
    keep_intermediates: bool,
}

impl Pipeline {
    pub fn new(height: usize, width: usize, cfg: &PipelineConfig, keep_intermediates: bool) -> StageResult<Self> {
        cfg.validate_for(height, width).stage(Stage::Config)?;
        let (stabilizer, pcp) = if cfg.mode == Mode::DenoiseOnly {
            (None, None)
        } else {
            let mut stab = Stabilizer::new(height, width, cfg.flow.clone(), cfg.kde.clone(), &cfg.canvas)
                .stage(Stage::Config)?;
            if cfg.mode == Mode::NoStabilize {
                stab = stab.disabled();
            }
            let canvas = CanvasState::new(height, width, &cfg.canvas).stage(Stage::Config)?;
            let pcp = MaskedIncPcp::new(canvas.canvas_height, canvas.canvas_width, cfg.pcp.clone())
                .stage(Stage::Config)?;
            (Some(stab), Some(pcp))
        };
        let denoiser = |kind| ComponentDenoiser::new(cfg.denoise.clone(), kind).stage(Stage::Config);
        Ok(Self {
            cfg: cfg.clone(),
            stabilizer,
            pcp,
            background_denoiser: denoiser(ComponentKind::Background)?,
            foreground_denoiser: denoiser(ComponentKind::Foreground)?,
            buffer: VecDeque::new(),
            pushed: 0,
            emitted: 0,
            keep_intermediates,
        })
    }

    /// Flow the stabilizer estimated for the most recently pushed frame.
    pub fn last_stabilization_flow(&self) -> Option<&FlowField> {
        self.stabilizer.as_ref().and_then(|s| s.last_flow())
    }

    pub fn push(&mut self, frame: &Frame) -> StageResult<Vec<FrameOutput>> {
        let index = self.pushed;
        self.pushed += 1;
        let (Some(stab), Some(pcp)) = (self.stabilizer.as_mut(), self.pcp.as_mut()) else {
            let out = self.background_denoiser.denoise(frame).stage(Stage::Denoise)?;
            self.emitted += 1;
            return Ok(vec![FrameOutput {
                index,
                frame: out,
                offset: Offset::ZERO,
                intermediates: None,
            }]);
        };
        let placed = stab.push(frame).stage(Stage::Stabilize)?;
        let flow = if self.keep_intermediates { stab.last_flow().cloned() } else { None };
        let dec = pcp.process(&placed.pano).stage(Stage::Decompose)?;
        let panorama = if self.keep_intermediates { pcp.background_panorama() } else { None };

        if self.cfg.mode == Mode::DecomposeOnly {
            let out = recompose(&dec.low_rank, &dec.sparse).stage(Stage::Fuse)?;
            self.emitted += 1;
            let intermediates = panorama.map(|panorama| Intermediates {
                panorama,
                background: dec.low_rank.clone(),
                foreground: dec.sparse.clone(),
                background_denoised: dec.low_rank.clone(),
                foreground_denoised: dec.sparse.clone(),
                foreground_fused: dec.sparse.clone(),
                stabilization_flow: flow,
            });
            return Ok(vec![FrameOutput {
                index,
                frame: out,
                offset: placed.offset,
                intermediates,
            }]);
        }

        let background_denoised = self.background_denoiser.denoise(&dec.low_rank).stage(Stage::Denoise)?;
        let foreground_denoised = self.foreground_denoiser.denoise(&dec.sparse).stage(Stage::Denoise)?;
        self.buffer.push_back(Pending {
            index,
            raw: frame.clone(),
            region: dec.region,
            offset: placed.offset,
            background: dec.low_rank,
            background_denoised,
            foreground: dec.sparse,
            foreground_denoised,
            panorama,
            flow,
        });
        let k = self.cfg.fusion.temporal_radius;
        let mut out = Vec::new();
        while self.emitted + k < self.pushed {
            out.push(self.emit()?);
        }
        Ok(out)
    }

    /// Emits every frame still waiting for future neighbours.
    pub fn finish(&mut self) -> StageResult<Vec<FrameOutput>> {
        let mut out = Vec::new();
        while self.emitted < self.pushed {
            out.push(self.emit()?);
        }
        Ok(out)
    }

    fn emit(&mut self) -> StageResult<FrameOutput> {
        let t = self.emitted;
        let (lo, hi) = self.cfg.fusion.window(t, self.pushed);
        let first = self.buffer.front().map_or(t, |p| p.index);
        let entries: Vec<&Pending> = self.buffer.iter().filter(|p| p.index >= lo && p.index < hi).collect();
        debug_assert!(first <= lo);
        let center = entries.iter().position(|p| p.index == t).expect("centre frame buffered");
        let cur = entries[center];
        let mut flows = Vec::with_capacity(entries.len());
        for (i, p) in entries.iter().enumerate() {
            flows.push(if i == center {
                None
            } else {
                Some(self.neighbour_flow(cur, p).stage(Stage::Fuse)?)
            });
        }
        let stack: Vec<Frame> = entries.iter().map(|p| p.foreground_denoised.clone()).collect();
        let fused = fuse_foreground(&stack, center, &flows, &self.cfg.fusion).stage(Stage::Fuse)?;
        let frame = recompose(&cur.background_denoised, &fused).stage(Stage::Fuse)?;
        let intermediates = cur.panorama.clone().map(|panorama| Intermediates {
            panorama,
            background: cur.background.clone(),
            foreground: cur.foreground.clone(),
            background_denoised: cur.background_denoised.clone(),
            foreground_denoised: cur.foreground_denoised.clone(),
            foreground_fused: fused,
            stabilization_flow: cur.flow.clone(),
        });
        let out = FrameOutput {
            index: t,
            frame,
            offset: cur.offset,
            intermediates,
        };
        self.emitted += 1;
        let keep_from = self.emitted.saturating_sub(self.cfg.fusion.temporal_radius);
        while self.buffer.front().is_some_and(|p| p.index < keep_from) {
            self.buffer.pop_front();
        }
        Ok(out)
    }

    /// Flow on `cur`'s grid into `other`'s raw frame, measured after aligning
    /// `other` to `cur`'s canvas position.
    fn neighbour_flow(&self, cur: &Pending, other: &Pending) -> crate::Result<FlowField> {
        let (h, w) = cur.raw.dims();
        let du = cur.region.col as f64 - other.region.col as f64;
        let dv = cur.region.row as f64 - other.region.row as f64;
        let shift = FlowField::uniform(h, w, du, dv);
        let aligned = warp(&other.raw, &shift)?;
        let residual = estimate_flow(&aligned, &cur.raw, &self.cfg.flow)?;
        let u = residual.u().iter().map(|r| r + du).collect();
        let v = residual.v().iter().map(|r| r + dv).collect();
        FlowField::from_parts(h, w, u, v, residual.confident().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub frames: Vec<Frame>,
    pub offsets: Vec<Offset>,
    pub intermediates: Vec<Intermediates>,
}

/// Runs the whole sequence through the configured mode. Noise is added first
/// when `cfg.noise_variance` is set.
pub fn run_pipeline(seq: &VideoSequence, cfg: &PipelineConfig, keep_intermediates: bool) -> StageResult<PipelineOutput> {
    let noisy;
    let input = match cfg.noise_variance {
        Some(var) => {
            noisy = crate::noise::add_gaussian_noise(seq, var, cfg.seed).stage(Stage::Noise)?;
            &noisy
        }
        None => seq,
    };
    let (h, w) = input.dims();
    let mut pipeline = Pipeline::new(h, w, cfg, keep_intermediates)?;
    let mut outputs = Vec::with_capacity(input.frame_count());
    for f in input.iter() {
        outputs.extend(pipeline.push(f)?);
    }
    outputs.extend(pipeline.finish()?);
    let mut result = PipelineOutput {
        frames: Vec::with_capacity(outputs.len()),
        offsets: Vec::with_capacity(outputs.len()),
        intermediates: Vec::new(),
    };
    for o in outputs {
        result.frames.push(o.frame);
        result.offsets.push(o.offset);
        result.intermediates.extend(o.intermediates);
    }
    Ok(result)
}

fn signed_to_unit(f: &Frame) -> Frame {
    f.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Writes one frame's intermediates under `dir`, one subdirectory per product.
/// Signed foregrounds are stored as `(s + 1) / 2`.
pub fn write_intermediates(dir: &Path, index: usize, im: &Intermediates, depth: BitDepth) -> crate::Result<()> {
    let name = frame_file_name(index);
    let products = [
        ("panorama", im.panorama.clamped_unit()),
        ("background", im.background.clamped_unit()),
        ("background_denoised", im.background_denoised.clamped_unit()),
        ("foreground", signed_to_unit(&im.foreground)),
        ("foreground_denoised", signed_to_unit(&im.foreground_denoised)),
        ("foreground_fused", signed_to_unit(&im.foreground_fused)),
    ];
    for (sub, frame) in products {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        write_frame(&frame, &d.join(&name), depth)?;
    }
    Ok(())
}

/// Writes `u` and `v` of a stabilization flow as images mapping `[-range, range]` to `[0, 1]`.
pub fn write_flow(dir: &Path, index: usize, flow: &FlowField, range: f64) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    flow.dump(
        &dir.join(format!("u_{index:05}.pgm")),
        &dir.join(format!("v_{index:05}.pgm")),
        range,
    )
}
