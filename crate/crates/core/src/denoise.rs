//! Self-supervised denoising with linear shift-invariant filters.
//!
//! The teacher is a blind-spot kernel: its centre tap is structurally zero, so
//! the prediction at a pixel never reads that pixel. It is fitted by least
//! squares on Bernoulli-masked replicas of a single noisy frame, regressing
//! each dropped pixel on its kept neighbours. The student is an unconstrained
//! kernel distilled from the teacher's outputs for cheap inference.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::kv::{parse_list, KvFile};

/// Per-pixel keep/drop pattern of one Bernoulli replica.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliMask {
    pub height: usize,
    pub width: usize,
    /// `true` = kept (b = 1), `false` = dropped (b = 0).
    pub keep: Vec<bool>,
    pub drop_probability: f64,
    pub seed: u64,
    pub stream: u64,
}

impl BernoulliMask {
    pub fn generate(height: usize, width: usize, p: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Bernoulli drop probability must be in (0, 1), got {p}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let keep = (0..height * width).map(|_| rng.gen::<f64>() >= p).collect();
        Ok(Self {
            height,
            width,
            keep,
            drop_probability: p,
            seed,
            stream,
        })
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| !k).count() as f64 / self.keep.len() as f64
    }
}

/// Splits `frame` into the kept part `b ⊙ x` and the held-out part `(1 - b) ⊙ x`.
pub fn bernoulli_sample(frame: &Frame, p: f64, seed: u64) -> Result<(Frame, Frame, BernoulliMask)> {
    bernoulli_replica(frame, p, seed, 0)
}

fn bernoulli_replica(frame: &Frame, p: f64, seed: u64, stream: u64) -> Result<(Frame, Frame, BernoulliMask)> {
    let mask = BernoulliMask::generate(frame.height(), frame.width(), p, seed, stream)?;
    let (h, w) = frame.dims();
    let kept = Frame::from_fn(h, w, |r, c| if mask.keep[r * w + c] { frame.get(r, c) } else { 0.0 });
    let held = Frame::from_fn(h, w, |r, c| if mask.keep[r * w + c] { 0.0 } else { frame.get(r, c) });
    Ok((kept, held, mask))
}

/// A `(2r+1) x (2r+1)` correlation kernel plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub radius: usize,
    /// Row-major taps; `kernel[(dy + r) * (2r+1) + (dx + r)]` weighs `x(p + (dy, dx))`.
    pub kernel: Vec<f64>,
    pub bias: f64,
    /// Blind-spot model: centre tap fixed at zero, missing border neighbours
    /// renormalized instead of replicated.
    pub center_tap_zero: bool,
}

impl FilterModel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn identity(radius: usize) -> Self {
        let side = 2 * radius + 1;
        let mut kernel = vec![0.0; side * side];
        kernel[radius * side + radius] = 1.0;
        Self {
            radius,
            kernel,
            bias: 0.0,
            center_tap_zero: false,
        }
    }

    pub fn zero(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            radius,
            kernel: vec![0.0; side * side],
            bias: 0.0,
            center_tap_zero: false,
        }
    }

    pub fn tap(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.kernel[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("radius", self.radius);
        kv.push("center_tap_zero", self.center_tap_zero);
        kv.push("bias", self.bias);
        let taps: Vec<String> = self.kernel.iter().map(|v| v.to_string()).collect();
        kv.push("kernel", taps.join(" "));
        kv
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let radius: usize = kv
            .parse_value("radius")?
            .ok_or_else(|| Error::Config("filter model needs `radius`".into()))?;
        let kernel = parse_list::<f64>(kv.get("kernel").unwrap_or(""))?;
        let side = 2 * radius + 1;
        if kernel.len() != side * side {
            return Err(Error::Config(format!(
                "filter kernel has {} taps, expected {}",
                kernel.len(),
                side * side
            )));
        }
        let model = Self {
            radius,
            kernel,
            bias: kv.parse_or("bias", 0.0)?,
            center_tap_zero: kv.parse_or("center_tap_zero", false)?,
        };
        if model.center_tap_zero && model.tap(0, 0) != 0.0 {
            return Err(Error::Config("blind-spot model with non-zero centre tap".into()));
        }
        if model.kernel.iter().any(|v| !v.is_finite()) || !model.bias.is_finite() {
            return Err(Error::NonFinite("filter model"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv().to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::load(path)?)
    }
}

/// Neighbour offsets of the blind-spot footprint (centre excluded), row-major.
fn blind_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&o| o != (0, 0))
        .collect()
}

fn full_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).collect()
}

fn in_bounds(frame: &Frame, row: isize, col: isize) -> bool {
    row >= 0 && col >= 0 && (row as usize) < frame.height() && (col as usize) < frame.width()
}

/// Normalized blind-spot features of pixel `(row, col)`: kept neighbour values
/// divided by the kept fraction of the footprint. `None` if nothing is kept.
fn blind_features(
    frame: &Frame,
    keep: Option<&[bool]>,
    row: usize,
    col: usize,
    offsets: &[(isize, isize)],
    out: &mut [f64],
) -> Option<()> {
    let w = frame.width();
    let mut kept = 0usize;
    for (slot, &(dy, dx)) in out.iter_mut().zip(offsets) {
        let (r, c) = (row as isize + dy, col as isize + dx);
        let present = in_bounds(frame, r, c) && keep.is_none_or(|k| k[r as usize * w + c as usize]);
        if present {
            *slot = frame.get(r as usize, c as usize);
            kept += 1;
        } else {
            *slot = 0.0;
        }
    }
    if kept == 0 {
        return None;
    }
    let density = kept as f64 / offsets.len() as f64;
    out.iter_mut().for_each(|v| *v /= density);
    Some(())
}

/// Ridge-stabilized least squares on accumulated normal equations.
fn solve_normal(mut ata: DMatrix<f64>, atb: DVector<f64>) -> Result<DVector<f64>> {
    symmetrize(&mut ata);
    let d = ata.nrows();
    let well_posed = ata.clone().cholesky().filter(|ch| {
        let diag = ch.l_dirty().diagonal();
        let (min, max) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x.abs()), b.max(x.abs())));
        max > 0.0 && (min / max).powi(2) > 1e-12
    });
    let solution = match well_posed {
        Some(ch) => ch.solve(&atb),
        None => {
            let scale = (ata.trace() / d as f64).max(1.0);
            for i in 0..d {
                ata[(i, i)] += 1e-8 * scale;
            }
            ata.cholesky()
                .ok_or_else(|| Error::InvalidArgument("normal equations not solvable".into()))?
                .solve(&atb)
        }
    };
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("filter fit"));
    }
    Ok(solution)
}

fn check_kernel_fits(frame: &Frame, radius: usize) -> Result<()> {
    let side = 2 * radius + 1;
    if frame.height() < side || frame.width() < side {
        return Err(Error::InvalidArgument(format!(
            "{}x{} frame too small for a {side}x{side} kernel",
            frame.height(),
            frame.width()
        )));
    }
    Ok(())
}

/// Fits the blind-spot kernel minimizing the masked-replica loss
/// `Σ_m Σ_{p dropped} (F(b_m ⊙ x)(p) - x(p))²`.
pub fn fit_teacher(frame: &Frame, p: f64, replicas: usize, radius: usize, seed: u64) -> Result<FilterModel> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    check_kernel_fits(frame, radius)?;
    let offsets = blind_offsets(radius);
    let d = offsets.len() + 1;
    let mut ata = DMatrix::<f64>::zeros(d, d);
    let mut atb = DVector::<f64>::zeros(d);
    let mut feat = vec![0.0; d];
    let (h, w) = frame.dims();
    for m in 0..replicas {
        let mask = BernoulliMask::generate(h, w, p, seed, m as u64)?;
        for row in 0..h {
            for col in 0..w {
                if mask.keep[row * w + col] {
                    continue;
                }
                if blind_features(frame, Some(&mask.keep), row, col, &offsets, &mut feat[..d - 1]).is_none() {
                    continue;
                }
                feat[d - 1] = 1.0;
                let target = frame.get(row, col);
                accumulate(&mut ata, &mut atb, &feat, target);
            }
        }
    }
    let sol = solve_normal(ata, atb)?;
    Ok(blind_model(radius, &offsets, &sol))
}

/// Adds one sample to the upper triangle of the normal equations.
fn accumulate(ata: &mut DMatrix<f64>, atb: &mut DVector<f64>, feat: &[f64], target: f64) {
    let d = feat.len();
    for i in 0..d {
        let fi = feat[i];
        if fi == 0.0 {
            continue;
        }
        atb[i] += fi * target;
        for j in i..d {
            ata[(i, j)] += fi * feat[j];
        }
    }
}

/// Copies the accumulated upper triangle into the lower one.
fn symmetrize(ata: &mut DMatrix<f64>) {
    for i in 0..ata.nrows() {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
}

fn blind_model(radius: usize, offsets: &[(isize, isize)], sol: &DVector<f64>) -> FilterModel {
    let side = 2 * radius + 1;
    let mut kernel = vec![0.0; side * side];
    for (k, &(dy, dx)) in offsets.iter().enumerate() {
        kernel[(dy + radius as isize) as usize * side + (dx + radius as isize) as usize] = sol[k];
    }
    FilterModel {
        radius,
        kernel,
        bias: sol[offsets.len()],
        center_tap_zero: true,
    }
}

/// Value of the masked-replica objective for `model` on replicas `0..replicas`.
pub fn teacher_loss(model: &FilterModel, frame: &Frame, p: f64, replicas: usize, seed: u64) -> Result<f64> {
    if !model.center_tap_zero {
        return Err(Error::InvalidArgument("teacher loss needs a blind-spot model".into()));
    }
    let offsets = blind_offsets(model.radius);
    let weights: Vec<f64> = offsets.iter().map(|&(dy, dx)| model.tap(dy, dx)).collect();
    let mut feat = vec![0.0; offsets.len()];
    let (h, w) = frame.dims();
    let mut loss = 0.0;
    for m in 0..replicas {
        let mask = BernoulliMask::generate(h, w, p, seed, m as u64)?;
        for row in 0..h {
            for col in 0..w {
                if mask.keep[row * w + col] {
                    continue;
                }
                if blind_features(frame, Some(&mask.keep), row, col, &offsets, &mut feat).is_none() {
                    continue;
                }
                let pred: f64 = feat.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + model.bias;
                loss += (pred - frame.get(row, col)).powi(2);
            }
        }
    }
    Ok(loss)
}

/// Applies the filter. Blind-spot models skip out-of-frame neighbours and
/// rescale by the present fraction; other models replicate the border.
/// The output is not clamped.
pub fn predict(model: &FilterModel, frame: &Frame) -> Frame {
    let (h, w) = frame.dims();
    if model.center_tap_zero {
        let offsets = blind_offsets(model.radius);
        let weights: Vec<f64> = offsets.iter().map(|&(dy, dx)| model.tap(dy, dx)).collect();
        let mut feat = vec![0.0; offsets.len()];
        Frame::from_fn(h, w, |row, col| {
            match blind_features(frame, None, row, col, &offsets, &mut feat) {
                Some(()) => feat.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + model.bias,
                None => model.bias,
            }
        })
    } else {
        let r = model.radius as isize;
        Frame::from_fn(h, w, |row, col| {
            let mut acc = model.bias;
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += model.kernel[k] * frame.get_clamped(row as isize + dy, col as isize + dx);
                    k += 1;
                }
            }
            acc
        })
    }
}

/// Distils a full kernel (centre tap free) reproducing `teacher_outputs` from `frames`.
pub fn fit_student(frames: &[Frame], teacher_outputs: &[Frame], radius: usize) -> Result<FilterModel> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("student needs at least one frame".into()));
    }
    if frames.len() != teacher_outputs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but {} teacher outputs",
            frames.len(),
            teacher_outputs.len()
        )));
    }
    let offsets = full_offsets(radius);
    let d = offsets.len() + 1;
    let mut ata = DMatrix::<f64>::zeros(d, d);
    let mut atb = DVector::<f64>::zeros(d);
    let mut feat = vec![0.0; d];
    for (x, target) in frames.iter().zip(teacher_outputs) {
        x.check_same_dims(target)?;
        check_kernel_fits(x, radius)?;
        for row in 0..x.height() {
            for col in 0..x.width() {
                for (slot, &(dy, dx)) in feat.iter_mut().zip(&offsets) {
                    *slot = x.get_clamped(row as isize + dy, col as isize + dx);
                }
                feat[d - 1] = 1.0;
                accumulate(&mut ata, &mut atb, &feat, target.get(row, col));
            }
        }
    }
    let sol = solve_normal(ata, atb)?;
    Ok(FilterModel {
        radius,
        kernel: sol.rows(0, d - 1).iter().cloned().collect(),
        bias: sol[d - 1],
        center_tap_zero: false,
    })
}

/// Mean squared deviation of `model`'s outputs from `targets`.
pub fn distillation_residual(model: &FilterModel, frames: &[Frame], targets: &[Frame]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, t) in frames.iter().zip(targets) {
        let y = predict(model, x);
        sum += y.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += x.len();
    }
    sum / n.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    /// Intensity-valued; predictions are clamped to `[0, 1]`.
    Background,
    /// Signed; predictions are left unclamped.
    Foreground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub drop_probability: f64,
    pub replicas: usize,
    pub kernel_radius: usize,
    pub use_student: bool,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            drop_probability: 0.3,
            replicas: 20,
            kernel_radius: 2,
            use_student: true,
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_probability > 0.0 && self.drop_probability < 1.0) {
            return Err(Error::InvalidArgument("bernoulli-p must be in (0, 1)".into()));
        }
        if self.replicas == 0 || self.kernel_radius == 0 {
            return Err(Error::InvalidArgument("replicas and kernel radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Streaming denoiser for one component (background or foreground sequence).
///
/// The teacher is fitted on the first frame carrying any signal (an all-zero
/// foreground has nothing to learn from); frames before that pass through
/// unchanged. With `use_student` a student is distilled on the same frame and
/// used for every prediction.
#[derive(Debug, Clone)]
pub struct ComponentDenoiser {
    cfg: DenoiseConfig,
    kind: ComponentKind,
    teacher: Option<FilterModel>,
    student: Option<FilterModel>,
}

impl ComponentDenoiser {
    pub fn new(cfg: DenoiseConfig, kind: ComponentKind) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            kind,
            teacher: None,
            student: None,
        })
    }

    /// Reuses previously fitted models instead of fitting on the input.
    pub fn with_models(mut self, teacher: FilterModel, student: Option<FilterModel>) -> Self {
        self.teacher = Some(teacher);
        self.student = student;
        self
    }

    pub fn teacher(&self) -> Option<&FilterModel> {
        self.teacher.as_ref()
    }

    pub fn student(&self) -> Option<&FilterModel> {
        self.student.as_ref()
    }

    fn has_signal(frame: &Frame) -> bool {
        let first = frame.data()[0];
        frame.data().iter().any(|&v| v != first) || first != 0.0
    }

    pub fn denoise(&mut self, frame: &Frame) -> Result<Frame> {
        if self.teacher.is_none() {
            if !Self::has_signal(frame) {
                return Ok(frame.clone());
            }
            let c = &self.cfg;
            let teacher = fit_teacher(frame, c.drop_probability, c.replicas, c.kernel_radius, c.seed)?;
            if c.use_student {
                let target = predict(&teacher, frame);
                self.student = Some(fit_student(
                    std::slice::from_ref(frame),
                    std::slice::from_ref(&target),
                    c.kernel_radius,
                )?);
            }
            self.teacher = Some(teacher);
        }
        let model = match (&self.student, self.cfg.use_student) {
            (Some(s), true) => s,
            _ => self.teacher.as_ref().expect("fitted above"),
        };
        let out = predict(model, frame);
        Ok(match self.kind {
            ComponentKind::Background => out.clamped_unit(),
            ComponentKind::Foreground => out,
        })
    }
}

/// Denoises a whole component sequence in order.
pub fn denoise_component(frames: &[Frame], cfg: &DenoiseConfig, kind: ComponentKind) -> Result<Vec<Frame>> {
    let mut den = ComponentDenoiser::new(cfg.clone(), kind)?;
    frames.iter().map(|f| den.denoise(f)).collect()
}
