//! Mode comparison over noise levels and seeds on a synthetic phantom.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::{Mode, PipelineConfig};
use crate::error::{Error, Result};
use crate::kv::{parse_list, KvFile};
use crate::metrics::{image_entropy, MetricReport};
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::pipeline::{run_pipeline, Stage, StageResult, Tag};

const KEYS: &[&str] = &["variances", "seeds", "modes"];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// Shared settings; `mode`, `noise_variance` and `seed` are set per run.
    pub pipeline: PipelineConfig,
    pub phantom: PhantomSpec,
    pub variances: Vec<f64>,
    /// Each seed drives the phantom texture, the noise and the denoiser.
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            phantom: PhantomSpec::still(128, 128, 16),
            variances: vec![0.001, 0.003, 0.005],
            seeds: vec![0, 1, 2],
            modes: vec![Mode::Full, Mode::NoStabilize, Mode::DenoiseOnly],
        }
    }
}

impl AblationConfig {
    /// One file holds pipeline keys, phantom keys and `variances`, `seeds`,
    /// `modes` (comma-separated lists). Any other key is an error.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        for key in kv.keys() {
            if !(PipelineConfig::KEYS.contains(&key) || PhantomSpec::KEYS.contains(&key) || KEYS.contains(&key)) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        let mut cfg = Self::default();
        let pipeline_only: Vec<&str> = PhantomSpec::KEYS.iter().chain(KEYS).copied().collect();
        cfg.pipeline.apply_kv_allowing(kv, &pipeline_only)?;
        cfg.phantom = PhantomSpec::from_kv(kv).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(v) = kv.get("variances") {
            cfg.variances = parse_list(v)?;
        }
        if let Some(v) = kv.get("seeds") {
            cfg.seeds = parse_list(v)?;
        }
        if let Some(v) = kv.get("modes") {
            cfg.modes = v.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variances.is_empty() || self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("variances, seeds and modes must be non-empty".into()));
        }
        if let Some(v) = self.variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("noise variance must be positive, got {v}")));
        }
        self.pipeline.validate_for(self.phantom.height, self.phantom.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    pub variance: f64,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean entropy of the output frames.
    pub entropy: f64,
    /// Mean entropy of the decomposed backgrounds; NaN for denoise-only.
    pub background_entropy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean over seeds of `(psnr, ssim, entropy)` for one cell.
    pub fn mean(&self, mode: Mode, variance: f64) -> Option<(f64, f64, f64)> {
        let cell: Vec<&AblationRow> =
            self.rows.iter().filter(|r| r.mode == mode && r.variance == variance).collect();
        if cell.is_empty() {
            return None;
        }
        let n = cell.len() as f64;
        let sum = |f: fn(&AblationRow) -> f64| cell.iter().map(|r| f(r)).sum::<f64>() / n;
        Some((sum(|r| r.psnr), sum(|r| r.ssim), sum(|r| r.entropy)))
    }

    /// Per-run rows followed by one `mean` row per (mode, variance).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,variance,seed,psnr,ssim,entropy,background_entropy,seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
                r.mode, r.variance, r.seed, r.psnr, r.ssim, r.entropy, r.background_entropy, r.seconds
            );
        }
        let mut cells: Vec<(Mode, f64)> = Vec::new();
        for r in &self.rows {
            if !cells.contains(&(r.mode, r.variance)) {
                cells.push((r.mode, r.variance));
            }
        }
        for (mode, variance) in cells {
            let cell: Vec<&AblationRow> =
                self.rows.iter().filter(|r| r.mode == mode && r.variance == variance).collect();
            let n = cell.len() as f64;
            let avg = |f: fn(&AblationRow) -> f64| cell.iter().map(|r| f(r)).sum::<f64>() / n;
            let _ = writeln!(
                out,
                "{mode},{variance},mean,{:.6},{:.6},{:.6},{:.6},{:.3}",
                avg(|r| r.psnr),
                avg(|r| r.ssim),
                avg(|r| r.entropy),
                avg(|r| r.background_entropy),
                avg(|r| r.seconds)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs every (mode, variance, seed) combination against the clean phantom.
pub fn run_ablation_suite(cfg: &AblationConfig) -> StageResult<AblationTable> {
    cfg.validate().stage(Stage::Config)?;
    let mut table = AblationTable::default();
    for &seed in &cfg.seeds {
        let (clean, _) = generate_phantom(&cfg.phantom, seed).stage(Stage::Load)?;
        for &variance in &cfg.variances {
            for &mode in &cfg.modes {
                let run_cfg = PipelineConfig {
                    mode,
                    noise_variance: Some(variance),
                    seed,
                    ..cfg.pipeline.clone()
                };
                let start = Instant::now();
                let out = run_pipeline(&clean, &run_cfg, mode != Mode::DenoiseOnly)?;
                let seconds = start.elapsed().as_secs_f64();
                let report = MetricReport::evaluate(&out.frames, clean.frames()).stage(Stage::Metrics)?;
                let background_entropy = if out.intermediates.is_empty() {
                    f64::NAN
                } else {
                    out.intermediates.iter().map(|im| image_entropy(&im.background)).sum::<f64>()
                        / out.intermediates.len() as f64
                };
                table.rows.push(AblationRow {
                    mode,
                    variance,
                    seed,
                    psnr: report.mean_psnr(),
                    ssim: report.mean_ssim(),
                    entropy: report.mean_entropy(),
                    background_entropy,
                    seconds,
                });
            }
        }
    }
    Ok(table)
}
