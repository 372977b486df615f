//! Flat `key = value` pipeline configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::denoise::DenoiseConfig;
use crate::error::{Error, Result};
use crate::flow::FlowEstimatorConfig;
use crate::fusion::FusionConfig;
use crate::kv::KvFile;
use crate::rpca::PcpParams;
use crate::stabilize::{CanvasConfig, CanvasState, KdeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    /// Full pipeline with every offset forced to zero.
    NoStabilize,
    /// Denoise raw frames directly, no decomposition.
    DenoiseOnly,
    /// Stabilize and decompose, recompose without denoising.
    DecomposeOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoStabilize, Mode::DenoiseOnly, Mode::DecomposeOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoStabilize => "no-stabilize",
            Mode::DenoiseOnly => "denoise-only",
            Mode::DecomposeOnly => "decompose-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub flow: FlowEstimatorConfig,
    pub kde: KdeConfig,
    pub canvas: CanvasConfig,
    pub pcp: PcpParams,
    pub denoise: DenoiseConfig,
    pub fusion: FusionConfig,
    /// Gaussian noise added to the input before processing.
    pub noise_variance: Option<f64>,
    pub seed: u64,
    pub bit_depth: u32,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub dump_intermediates: bool,
    pub dump_flow: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            flow: FlowEstimatorConfig::default(),
            kde: KdeConfig::default(),
            canvas: CanvasConfig::default(),
            pcp: PcpParams::default(),
            denoise: DenoiseConfig::default(),
            fusion: FusionConfig::default(),
            noise_variance: None,
            seed: 0,
            bit_depth: 16,
            input: None,
            output: None,
            clean: None,
            dump_intermediates: false,
            dump_flow: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for `{key}`"))),
    }
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "flow_levels",
        "flow_window_radius",
        "flow_iterations",
        "flow_min_eigen",
        "flow_presmooth",
        "kde_bandwidth",
        "kde_search_radius",
        "min_confident_fraction",
        "canvas_scale",
        "rank",
        "window",
        "lambda",
        "lambda_noise_factor",
        "pcp_max_iters",
        "pcp_tol",
        "bernoulli_p",
        "replicas",
        "kernel_radius",
        "student",
        "temporal_radius",
        "rho",
        "noise_var",
        "seed",
        "bit_depth",
        "input",
        "output",
        "clean",
        "dump_intermediates",
        "dump_flow",
    ];

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(&KvFile::load(path)?)?;
        Ok(cfg)
    }

    /// Overrides fields named in `kv`, later entries winning. Unknown keys are rejected.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        self.apply_kv_allowing(kv, &[])
    }

    /// As [`apply_kv`](Self::apply_kv), ignoring the extra `allowed` keys.
    pub fn apply_kv_allowing(&mut self, kv: &KvFile, allowed: &[&str]) -> Result<()> {
        for key in kv.keys() {
            if allowed.contains(&key) {
                continue;
            }
            let value = kv.get(key).unwrap_or_default();
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| Some(PathBuf::from(v.trim()));
        match key {
            "mode" => self.mode = value.trim().parse()?,
            "flow_levels" => self.flow.pyramid_levels = parse(key, value)?,
            "flow_window_radius" => self.flow.window_radius = parse(key, value)?,
            "flow_iterations" => self.flow.iterations_per_level = parse(key, value)?,
            "flow_min_eigen" => self.flow.min_eigen_threshold = parse(key, value)?,
            "flow_presmooth" => self.flow.presmooth_sigma = parse(key, value)?,
            "kde_bandwidth" => self.kde.bandwidth = parse(key, value)?,
            "kde_search_radius" => self.kde.search_radius = parse(key, value)?,
            "min_confident_fraction" => self.kde.min_confident_fraction = parse(key, value)?,
            "canvas_scale" => self.canvas.scale = parse(key, value)?,
            "rank" => self.pcp.rank = parse(key, value)?,
            "window" => self.pcp.window_size = parse(key, value)?,
            "lambda" => {
                self.pcp.lambda = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "lambda_noise_factor" => self.pcp.noise_factor = parse(key, value)?,
            "pcp_max_iters" => self.pcp.max_iters = parse(key, value)?,
            "pcp_tol" => self.pcp.tol = parse(key, value)?,
            "bernoulli_p" => self.denoise.drop_probability = parse(key, value)?,
            "replicas" => self.denoise.replicas = parse(key, value)?,
            "kernel_radius" => self.denoise.kernel_radius = parse(key, value)?,
            "student" => self.denoise.use_student = parse_bool(key, value)?,
            "temporal_radius" => self.fusion.temporal_radius = parse(key, value)?,
            "rho" => self.fusion.rho = parse(key, value)?,
            "noise_var" => {
                self.noise_variance = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => {
                self.seed = parse(key, value)?;
                self.denoise.seed = self.seed;
            }
            "bit_depth" => self.bit_depth = parse(key, value)?,
            "input" => self.input = path(value),
            "output" => self.output = path(value),
            "clean" => self.clean = path(value),
            "dump_intermediates" => self.dump_intermediates = parse_bool(key, value)?,
            "dump_flow" => self.dump_flow = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("mode", self.mode);
        kv.push("flow_levels", self.flow.pyramid_levels);
        kv.push("flow_window_radius", self.flow.window_radius);
        kv.push("flow_iterations", self.flow.iterations_per_level);
        kv.push("flow_min_eigen", self.flow.min_eigen_threshold);
        kv.push("flow_presmooth", self.flow.presmooth_sigma);
        kv.push("kde_bandwidth", self.kde.bandwidth);
        kv.push("kde_search_radius", self.kde.search_radius);
        kv.push("min_confident_fraction", self.kde.min_confident_fraction);
        kv.push("canvas_scale", self.canvas.scale);
        kv.push("rank", self.pcp.rank);
        kv.push("window", self.pcp.window_size);
        kv.push("lambda", self.pcp.lambda.map_or("auto".to_string(), |l| l.to_string()));
        kv.push("lambda_noise_factor", self.pcp.noise_factor);
        kv.push("pcp_max_iters", self.pcp.max_iters);
        kv.push("pcp_tol", self.pcp.tol);
        kv.push("bernoulli_p", self.denoise.drop_probability);
        kv.push("replicas", self.denoise.replicas);
        kv.push("kernel_radius", self.denoise.kernel_radius);
        kv.push("student", self.denoise.use_student);
        kv.push("temporal_radius", self.fusion.temporal_radius);
        kv.push("rho", self.fusion.rho);
        kv.push("noise_var", self.noise_variance.map_or("none".to_string(), |v| v.to_string()));
        kv.push("seed", self.seed);
        kv.push("bit_depth", self.bit_depth);
        for (key, p) in [("input", &self.input), ("output", &self.output), ("clean", &self.clean)] {
            if let Some(p) = p {
                kv.push(key, p.display());
            }
        }
        kv.push("dump_intermediates", self.dump_intermediates);
        kv.push("dump_flow", self.dump_flow);
        kv
    }

    /// Field-level checks that do not depend on the input size.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.flow.validate().map_err(cfg_err)?;
        self.pcp.validate().map_err(cfg_err)?;
        self.denoise.validate().map_err(cfg_err)?;
        self.fusion.validate().map_err(cfg_err)?;
        if !(self.kde.bandwidth > 0.0) || self.kde.search_radius < 1 {
            return Err(Error::Config("kde bandwidth and search radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kde.min_confident_fraction) {
            return Err(Error::Config("min_confident_fraction must be in [0, 1]".into()));
        }
        if !(self.canvas.scale >= 1.0) {
            return Err(Error::Config("canvas_scale must be at least 1".into()));
        }
        if let Some(v) = self.noise_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise variance must be positive, got {v}")));
            }
        }
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(Error::Config(format!("bit_depth must be 8 or 16, got {}", self.bit_depth)));
        }
        Ok(())
    }

    /// Checks that depend on the frame size: flow pyramid, kernel and canvas fit.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        let side = height.min(width);
        if self.mode != Mode::DenoiseOnly && side < self.flow.min_side() {
            return Err(Error::Config(format!(
                "{height}x{width} frames are too small for {} pyramid levels",
                self.flow.pyramid_levels
            )));
        }
        if side < 2 * self.denoise.kernel_radius + 1 {
            return Err(Error::Config("frames smaller than the denoising kernel".into()));
        }
        CanvasState::new(height, width, &self.canvas).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.pcp.rank, 1);
        assert_eq!(cfg.pcp.window_size, 30);
        assert_eq!(cfg.fusion.rho, 0.02);
        assert_eq!(cfg.denoise.drop_probability, 0.3);
        assert_eq!(cfg.canvas.scale, 2.0);
        cfg.validate_for(64, 64).unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = PipelineConfig {
            mode: Mode::NoStabilize,
            ..PipelineConfig::default()
        };
        cfg.pcp.lambda = Some(0.05);
        cfg.noise_variance = Some(0.003);
        cfg.output = Some(PathBuf::from("out"));
        let mut back = PipelineConfig::default();
        back.apply_kv(&KvFile::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn later_values_win_and_unknown_keys_fail() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_kv(&KvFile::parse("rho = 0.1\nrho = 0.05\n").unwrap()).unwrap();
        assert_eq!(cfg.fusion.rho, 0.05);
        assert!(cfg.apply_kv(&KvFile::parse("rhoo = 1").unwrap()).is_err());
        assert!(cfg.set("mode", "sideways").is_err());
        assert!(cfg.set("student", "maybe").is_err());
    }

    #[test]
    fn cross_field_checks() {
        let mut cfg = PipelineConfig::default();
        cfg.pcp.window_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.canvas.scale = 0.5;
        assert!(cfg.validate_for(64, 64).is_err());
        let cfg = PipelineConfig::default();
        assert!(cfg.validate_for(16, 16).is_err());
        let cfg = PipelineConfig {
            bit_depth: 12,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
