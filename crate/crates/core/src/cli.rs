//! The `metastyle` command line.
//!
//! Every subcommand is a thin wrapper over library calls; [`run`] maps
//! errors onto exit codes (0 ok, 2 usage, 3 format, 4 numeric).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::load_dir;
use crate::error::{bail, Error, Result};
use crate::explore::{self, HiddenStats, InterpolationSpec};
use crate::io::config::{csv_string, RunConfig};
use crate::io::{read_image, write_image, WeightFile};
use crate::metanet::{hidden_of, meta_forward, meta_forward_calls, HiddenState};
use crate::perceptual::{LossWeights, PerceptualEncoder};
use crate::tensor::Tensor;
use crate::toylab;
use crate::trainer::{self, MetaModel, MetaTrainer, OwnedNetwork, TrainConfig};
use crate::transformnet::{transform_forward, FixedWeights, TransformArch};

/// Name of the hidden-state tensor in files written by `encode`.
pub const HIDDEN_TENSOR: &str = "hidden";

#[derive(Debug, Parser)]
#[command(name = "metastyle", version, about = "Meta networks that generate style transfer networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the meta network and the shared layers.
    Train(TrainArgs),
    /// Generate a transformation network for one style image.
    Encode(EncodeArgs),
    /// Apply a transformation network to a content image.
    Transfer(TransferArgs),
    /// Stylise by gradient descent on pixels.
    Gatys(GatysArgs),
    /// Train a single-style transformation network.
    PerStyle(PerStyleArgs),
    /// Apply networks interpolated between two styles.
    Interpolate(InterpolateArgs),
    /// Render a network's texture from noise.
    Texture(TextureArgs),
    /// Render textures from random hidden states.
    Generate(GenerateArgs),
    /// Run the closed-form toy suites.
    Toylab(ToylabArgs),
    /// Time encoding and transfer and report artefact sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ArchArg {
    /// Architecture preset; inferred from the weight file when omitted.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub content_dir: Option<PathBuf>,
    #[arg(long)]
    pub style_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchArg,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub arch: ArchArg,
}

#[derive(Debug, Args)]
pub struct GatysArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub step_size: f32,
    /// Total-variation weight; off by default.
    #[arg(long, default_value_t = 0.0)]
    pub tv: f64,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerStyleArgs {
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub content_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "desk-64")]
    pub arch: String,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub style_a: PathBuf,
    #[arg(long)]
    pub style_b: PathBuf,
    /// Image to stylise; noise from `--seed` when omitted.
    #[arg(long)]
    pub content: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
    pub alphas: Vec<f32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub arch: ArchArg,
}

#[derive(Debug, Args)]
pub struct TextureArgs {
    /// Network written by `encode` or `per-style`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length; the architecture's input size when omitted.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub arch: ArchArg,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Styles whose hidden states define the sampling distribution.
    #[arg(long)]
    pub style_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f32,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub arch: ArchArg,
}

#[derive(Debug, Args)]
pub struct ToylabArgs {
    #[arg(long, default_value = "identity")]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    /// Per-style training time to compare against, in milliseconds. When
    /// omitted, `--per-style-iterations` updates are timed here.
    #[arg(long)]
    pub per_style_ms: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub per_style_iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArg,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("metastyle: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Transfer(a) => transfer(a),
        Command::Gatys(a) => gatys(a),
        Command::PerStyle(a) => per_style(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Texture(a) => texture(a),
        Command::Generate(a) => generate(a),
        Command::Toylab(a) => toylab_cmd(a),
        Command::Bench(a) => bench(a),
    }
}

/// The preset named by `arch`, or the first preset whose fixed layers fit
/// the file.
pub fn resolve_arch(arch: &Option<String>, file: &WeightFile) -> Result<TransformArch> {
    if let Some(name) = arch {
        return TransformArch::preset(name);
    }
    for name in TransformArch::PRESETS {
        let a = TransformArch::preset(name)?;
        if FixedWeights::read_from(&a, file).is_ok() {
            return Ok(a);
        }
    }
    bail!(Structural, "weight file matches no architecture preset; pass --arch")
}

fn load_model(path: &Path, arch: &Option<String>) -> Result<(TransformArch, MetaModel)> {
    let file = WeightFile::load(path)?;
    let arch = resolve_arch(arch, &file)?;
    let model = MetaModel::from_weights(&arch, &file)?;
    Ok((arch, model))
}

fn load_network(path: &Path, arch: &Option<String>) -> Result<(TransformArch, OwnedNetwork)> {
    let file = WeightFile::load(path)?;
    let arch = resolve_arch(arch, &file)?;
    let net = OwnedNetwork::from_weights(&arch, &file)?;
    Ok((arch, net))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.content_dir {
        rc.train.content_dir = Some(v);
    }
    if let Some(v) = a.style_dir {
        rc.train.style_dir = Some(v);
    }
    if let Some(v) = a.output_dir {
        rc.output_dir = v;
    }
    if let Some(v) = a.iterations {
        rc.train.iterations = v;
    }
    if let Some(v) = a.seed {
        rc.train.seed = v;
    }
    let (Some(cdir), Some(sdir)) = (&rc.train.content_dir, &rc.train.style_dir) else {
        bail!(Usage, "train needs content_dir and style_dir");
    };
    let contents = load_dir(cdir)?;
    let styles = load_dir(sdir)?;
    let arch = TransformArch::preset(&rc.arch)?;
    let encoder = PerceptualEncoder::builtin();
    let mut trainer = match &a.resume {
        Some(dir) => MetaTrainer::resume(rc.train.clone(), dir, &arch, &encoder, &contents, &styles)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(rc.train.seed);
            let model = MetaModel::init(&arch, &encoder, &styles, rc.group, &mut rng)?;
            MetaTrainer::new(rc.train.clone(), &model, &arch, &encoder, &contents, &styles)?
        }
    };
    trainer.run()?;
    fs::create_dir_all(&rc.output_dir)?;
    trainer.model()?.to_weights(&arch)?.save(rc.output_dir.join("model.mnw"))?;
    trainer.state.trace.write_csv(rc.output_dir.join("trace.csv"))?;
    fs::write(rc.output_dir.join("run.cfg"), rc.to_text())?;
    Ok(())
}

/// Runs the meta network once and bundles its output with the shared layers.
pub fn encode_to_file(model: &MetaModel, arch: &TransformArch, encoder: &PerceptualEncoder, style: &Tensor<f32>) -> Result<WeightFile> {
    let (gen, hidden) = meta_forward(&model.params, arch, encoder, style)?;
    let mut f = WeightFile::new();
    model.fixed.write_into(arch, &mut f)?;
    gen.write_into(arch, &mut f)?;
    f.insert(HIDDEN_TENSOR, hidden.0)?;
    Ok(f)
}

fn encode(a: EncodeArgs) -> Result<()> {
    let (arch, model) = load_model(&a.model, &a.arch.arch)?;
    let style = read_image(&a.style)?;
    encode_to_file(&model, &arch, &PerceptualEncoder::builtin(), &style)?.save(&a.out)
}

fn transfer(a: TransferArgs) -> Result<()> {
    let (arch, net) = load_network(&a.weights, &a.arch.arch)?;
    let content = read_image(&a.content)?;
    write_image(&transform_forward(&arch, &net.fixed, &net.generated, &content)?, &a.out)
}

fn gatys(a: GatysArgs) -> Result<()> {
    let content = read_image(&a.content)?;
    let style = read_image(&a.style)?;
    let weights = LossWeights { tv: a.tv, ..LossWeights::default() };
    let (img, trace) = trainer::gatys_descent(&PerceptualEncoder::builtin(), &content, &style, a.steps, a.step_size, &weights)?;
    if let Some(p) = a.trace {
        trace.write_csv(p)?;
    }
    write_image(&img.map(|v| v.clamp(0.0, 1.0)), &a.out)
}

fn per_style(a: PerStyleArgs) -> Result<()> {
    let arch = TransformArch::preset(&a.arch)?;
    let style = read_image(&a.style)?;
    let contents = load_dir(&a.content_dir)?;
    let config = TrainConfig { iterations: a.iterations, m: a.m, lr: a.lr, seed: a.seed, ..TrainConfig::default() };
    let init = OwnedNetwork::init(&arch, &mut ChaCha8Rng::seed_from_u64(a.seed));
    let (net, trace) = trainer::train_per_style(&config, &init, &arch, &PerceptualEncoder::builtin(), &style, &contents)?;
    if let Some(p) = a.trace {
        trace.write_csv(p)?;
    }
    net.to_weights(&arch)?.save(&a.out)
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    let (arch, model) = load_model(&a.model, &a.arch.arch)?;
    let encoder = PerceptualEncoder::builtin();
    let spec = InterpolationSpec {
        h1: hidden_of(&model.params, &encoder, &read_image(&a.style_a)?)?,
        h2: hidden_of(&model.params, &encoder, &read_image(&a.style_b)?)?,
        alphas: a.alphas.clone(),
    };
    let input = match &a.content {
        Some(p) => read_image(p)?,
        None => explore::noise_image(a.seed, arch.input_size),
    };
    fs::create_dir_all(&a.out_dir)?;
    for (alpha, w) in a.alphas.iter().zip(explore::interpolate(&model.params, &arch, &spec)?) {
        let img = transform_forward(&arch, &model.fixed, &w, &input)?;
        write_image(&img, a.out_dir.join(explore::output_name("interpolate", alpha)))?;
    }
    Ok(())
}

fn texture(a: TextureArgs) -> Result<()> {
    let (arch, net) = load_network(&a.weights, &a.arch.arch)?;
    let size = a.size.unwrap_or(arch.input_size);
    let img = explore::texture_visualize(&arch, &net.fixed, &net.generated, a.seed, size)?;
    fs::create_dir_all(&a.out_dir)?;
    write_image(&img, a.out_dir.join(explore::output_name("texture", a.seed)))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (arch, model) = load_model(&a.model, &a.arch.arch)?;
    let stats = HiddenStats::from_styles(&model.params, &PerceptualEncoder::builtin(), &load_dir(&a.style_dir)?)?;
    let size = a.size.unwrap_or(arch.input_size);
    fs::create_dir_all(&a.out_dir)?;
    for seed in a.seed..a.seed + a.count {
        let (_, _, img) = explore::random_texture(&model.params, &arch, &model.fixed, &stats, seed, a.scale, size)?;
        write_image(&img, a.out_dir.join(explore::output_name("generate", seed)))?;
    }
    Ok(())
}

fn toylab_cmd(a: ToylabArgs) -> Result<()> {
    let results = match a.suite.as_str() {
        "identity" => toylab::identity_suite(a.seed)?,
        other => bail!(Usage, "unknown toylab suite {other:?}; available: identity"),
    };
    let csv = toylab::results_csv(&results);
    match &a.out {
        Some(p) => fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.case.as_str()).collect();
    if !failed.is_empty() {
        bail!(Numeric, "toylab checks failed: {}", failed.join(", "));
    }
    Ok(())
}

/// Encoding versus per-style training, in the shape of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub encode: Duration,
    pub transfer: Duration,
    pub per_style_ms: f64,
    /// Bytes of one generated network as written by `encode` (shared layers,
    /// generated layers and hidden state).
    pub weight_file_bytes: usize,
    pub model_file_bytes: usize,
    pub meta_forward_calls: usize,
    /// `None`: any style image can be encoded.
    pub styles_supported: Option<usize>,
}

impl BenchReport {
    pub fn encode_ratio(&self) -> f64 {
        self.encode.as_secs_f64() * 1e3 / self.per_style_ms
    }

    pub fn to_csv(&self) -> String {
        let row = |k: &str, v: String| vec![k.to_string(), v];
        csv_string(
            &["metric", "value"],
            &[
                row("encode_ms", format!("{:.3}", self.encode.as_secs_f64() * 1e3)),
                row("transfer_ms", format!("{:.3}", self.transfer.as_secs_f64() * 1e3)),
                row("per_style_training_ms", format!("{:.3}", self.per_style_ms)),
                row("encode_over_per_style", format!("{:.6}", self.encode_ratio())),
                row("weight_file_bytes", self.weight_file_bytes.to_string()),
                row("model_file_bytes", self.model_file_bytes.to_string()),
                row("styles_supported", self.styles_supported.map_or("unbounded".into(), |n| n.to_string())),
                row("meta_forward_calls_per_encode", self.meta_forward_calls.to_string()),
            ],
        )
    }
}

/// Times one encode (a single meta forward pass) and one transfer. The
/// per-style figure is either supplied or measured by training for
/// `per_style_iterations` updates.
pub fn bench_report(
    model: &MetaModel,
    arch: &TransformArch,
    encoder: &PerceptualEncoder,
    style: &Tensor<f32>,
    content: &Tensor<f32>,
    per_style_ms: Option<f64>,
    per_style_iterations: usize,
) -> Result<BenchReport> {
    let calls = meta_forward_calls();
    let t0 = Instant::now();
    let file = encode_to_file(model, arch, encoder, style)?;
    let encode = t0.elapsed();
    let meta_forward_calls = meta_forward_calls() - calls;
    let net = OwnedNetwork::from_weights(arch, &file)?;
    let t1 = Instant::now();
    transform_forward(arch, &net.fixed, &net.generated, content)?;
    let transfer = t1.elapsed();
    let per_style_ms = match per_style_ms {
        Some(ms) => ms,
        None => {
            let config = TrainConfig { iterations: per_style_iterations, ..TrainConfig::default() };
            let init = OwnedNetwork::init(arch, &mut ChaCha8Rng::seed_from_u64(0));
            let t = Instant::now();
            trainer::train_per_style(&config, &init, arch, encoder, style, std::slice::from_ref(content))?;
            t.elapsed().as_secs_f64() * 1e3
        }
    };
    if !(per_style_ms > 0.0) {
        bail!(Usage, "per-style time must be positive");
    }
    Ok(BenchReport {
        encode,
        transfer,
        per_style_ms,
        weight_file_bytes: file.serialized_len(),
        model_file_bytes: model.to_weights(arch)?.serialized_len(),
        meta_forward_calls,
        styles_supported: None,
    })
}

fn bench(a: BenchArgs) -> Result<()> {
    let (arch, model) = load_model(&a.model, &a.arch.arch)?;
    let report = bench_report(
        &model,
        &arch,
        &PerceptualEncoder::builtin(),
        &read_image(&a.style)?,
        &read_image(&a.content)?,
        a.per_style_ms,
        a.per_style_iterations,
    )?;
    match &a.out {
        Some(p) => fs::write(p, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

/// Reads the hidden state stored by `encode`.
pub fn stored_hidden(file: &WeightFile) -> Result<HiddenState> {
    match file.get(HIDDEN_TENSOR) {
        Some(t) => Ok(HiddenState(t.clone())),
        None => Err(Error::Structural(format!("no {HIDDEN_TENSOR:?} tensor in weight file"))),
    }
}

