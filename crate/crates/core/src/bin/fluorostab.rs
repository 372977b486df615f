use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fluorostab::ablation::{run_ablation_suite, AblationConfig};
use fluorostab::config::PipelineConfig;
use fluorostab::io::{frame_file_name, read_sequence, write_frame, write_sequence, BitDepth};
use fluorostab::kv::KvFile;
use fluorostab::metrics::MetricReport;
use fluorostab::noise::add_gaussian_noise;
use fluorostab::phantom::{generate_phantom, PhantomSpec};
use fluorostab::pipeline::{write_flow, write_intermediates, Pipeline, PipelineError, Stage};
use fluorostab::Error;

/// Flow images map `[-FLOW_RANGE, FLOW_RANGE]` pixels to the full gray range.
const FLOW_RANGE: f64 = 8.0;

#[derive(Parser)]
#[command(name = "fluorostab", version, about = "Stabilize, decompose and denoise grayscale video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Process a directory of PGM frames.
    Run(RunArgs),
    /// Render a synthetic phantom and its ground truth.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare pipeline modes over noise levels and seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// `key = value` file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Add Gaussian noise of this variance before processing.
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Clean reference frames; enables the metric report.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    dump_intermediates: bool,
    #[arg(long)]
    dump_flow: bool,
    #[arg(long)]
    canvas_scale: Option<f64>,
    #[arg(long)]
    kde_bandwidth: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Shrinkage threshold, or `auto`.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    pcp_iters: Option<usize>,
    #[arg(long)]
    pcp_tol: Option<f64>,
    #[arg(long)]
    bernoulli_p: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    kernel_radius: Option<usize>,
    #[arg(long, overrides_with = "no_student")]
    student: bool,
    #[arg(long, overrides_with = "student")]
    no_student: bool,
    #[arg(long)]
    temporal_radius: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    bit_depth: Option<u32>,
}

impl RunArgs {
    fn overrides(&self) -> KvFile {
        let mut kv = KvFile::default();
        let path = |p: &Path| p.display().to_string();
        let mut opt = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                kv.push(key, v);
            }
        };
        opt("input", self.input.as_deref().map(path));
        opt("output", self.output.as_deref().map(path));
        opt("clean", self.clean.as_deref().map(path));
        opt("mode", self.mode.clone());
        opt("noise_var", self.noise_var.map(|v| v.to_string()));
        opt("seed", self.seed.map(|v| v.to_string()));
        opt("canvas_scale", self.canvas_scale.map(|v| v.to_string()));
        opt("kde_bandwidth", self.kde_bandwidth.map(|v| v.to_string()));
        opt("rank", self.rank.map(|v| v.to_string()));
        opt("window", self.window.map(|v| v.to_string()));
        opt("lambda", self.lambda.clone());
        opt("pcp_max_iters", self.pcp_iters.map(|v| v.to_string()));
        opt("pcp_tol", self.pcp_tol.map(|v| v.to_string()));
        opt("bernoulli_p", self.bernoulli_p.map(|v| v.to_string()));
        opt("replicas", self.replicas.map(|v| v.to_string()));
        opt("kernel_radius", self.kernel_radius.map(|v| v.to_string()));
        opt("temporal_radius", self.temporal_radius.map(|v| v.to_string()));
        opt("rho", self.rho.map(|v| v.to_string()));
        opt("bit_depth", self.bit_depth.map(|v| v.to_string()));
        opt("student", (self.student || self.no_student).then(|| self.student.to_string()));
        opt("dump_intermediates", self.dump_intermediates.then(|| "true".to_string()));
        opt("dump_flow", self.dump_flow.then(|| "true".to_string()));
        kv
    }
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Stage(e.to_string())
        }
    }
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Failure {
    move |source| PipelineError { stage, source }.into()
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(config_err)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_kv(&args.overrides()).map_err(config_err)?;
    cfg.validate().map_err(config_err)?;
    let input = cfg.input.clone().ok_or_else(|| Failure::Config("no input directory given".into()))?;
    let output = cfg.output.clone().ok_or_else(|| Failure::Config("no output directory given".into()))?;
    let depth = BitDepth::from_bits(cfg.bit_depth).map_err(config_err)?;

    let mut seq = read_sequence(&input).map_err(stage_err(Stage::Load))?;
    let (h, w) = seq.dims();
    if let Some(var) = cfg.noise_variance {
        seq = add_gaussian_noise(&seq, var, cfg.seed).map_err(stage_err(Stage::Noise))?;
    }
    let mut pipeline = Pipeline::new(h, w, &cfg, cfg.dump_intermediates)?;
    std::fs::create_dir_all(&output).map_err(|e| stage_err(Stage::Write)(Error::io(&output, e)))?;

    let mut frames = Vec::with_capacity(seq.frame_count());
    let mut emit = |outs: Vec<fluorostab::pipeline::FrameOutput>| -> Result<(), Failure> {
        for out in outs {
            write_frame(&out.frame, &output.join(frame_file_name(out.index)), depth)
                .map_err(stage_err(Stage::Write))?;
            if let Some(im) = &out.intermediates {
                write_intermediates(&output.join("intermediates"), out.index, im, depth)
                    .map_err(stage_err(Stage::Write))?;
            }
            frames.push(out.frame);
        }
        Ok(())
    };
    for (index, frame) in seq.iter().enumerate() {
        let outs = pipeline.push(frame)?;
        if let Some(flow) = pipeline.last_stabilization_flow().filter(|_| cfg.dump_flow) {
            write_flow(&output.join("flow"), index, flow, FLOW_RANGE).map_err(stage_err(Stage::Write))?;
        }
        emit(outs)?;
    }
    emit(pipeline.finish()?)?;

    if let Some(clean_dir) = &cfg.clean {
        let clean = read_sequence(clean_dir).map_err(stage_err(Stage::Load))?;
        let report = MetricReport::evaluate(&frames, clean.frames()).map_err(stage_err(Stage::Metrics))?;
        report.write_csv(&output.join("metrics.csv")).map_err(stage_err(Stage::Write))?;
        println!("{}", report.summary());
    }
    Ok(())
}

fn phantom(spec: &Path, output: &Path, seed: u64) -> Result<(), Failure> {
    let kv = KvFile::load(spec).map_err(config_err)?;
    if let Some(key) = kv.keys().find(|k| !PhantomSpec::KEYS.contains(k)) {
        return Err(Failure::Config(format!("unknown key `{key}`")));
    }
    let spec = PhantomSpec::from_kv(&kv).map_err(config_err)?;
    let (clean, truth) = generate_phantom(&spec, seed).map_err(stage_err(Stage::Load))?;
    let write = |seq, dir: &Path| write_sequence(seq, dir, 16).map_err(stage_err(Stage::Write));
    write(&clean, &output.join("clean"))?;
    write(&truth.background, &output.join("background"))?;
    let masks = truth
        .foreground
        .iter()
        .map(|m| fluorostab::Frame::from_fn(m.height(), m.width(), |r, c| if m.get(r, c) { 1.0 } else { 0.0 }))
        .collect();
    let masks = fluorostab::VideoSequence::new(masks).map_err(stage_err(Stage::Write))?;
    write_sequence(&masks, &output.join("masks"), 8).map_err(stage_err(Stage::Write))?;
    let offsets: String = truth.offsets.iter().enumerate().map(|(i, o)| format!("{i},{},{}\n", o.u, o.v)).collect();
    let path = output.join("offsets.csv");
    std::fs::write(&path, format!("frame,u,v\n{offsets}"))
        .map_err(|e| stage_err(Stage::Write)(Error::io(&path, e)))?;
    Ok(())
}

fn ablate(config: &Path, report: &Path) -> Result<(), Failure> {
    let cfg = AblationConfig::load(config).map_err(config_err)?;
    let table = run_ablation_suite(&cfg)?;
    table.write_csv(report).map_err(stage_err(Stage::Write))?;
    for &variance in &cfg.variances {
        for &mode in &cfg.modes {
            if let Some((psnr, ssim, entropy)) = table.mean(mode, variance) {
                println!("variance={variance} mode={mode} psnr={psnr:.3} dB ssim={ssim:.4} entropy={entropy:.4} bits");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Phantom { spec, output, seed } => phantom(spec, output, *seed),
        Command::Ablate { config, report } => ablate(config, report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
